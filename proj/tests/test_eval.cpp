#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "apo/errors.hpp"
#include "apo/eval.hpp"
#include "support/oracles.hpp"

namespace apo {
namespace {

ScoredPixels make(std::vector<double> s, std::vector<int> l) { return {std::move(s), std::move(l)}; }

TEST(Auroc, Examples) {
    EXPECT_EQ(auroc(make({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0})), 1.0);
    EXPECT_EQ(auroc(make({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0})), 0.5);
    EXPECT_EQ(auroc(make({0.1, 0.2, 0.9, 0.8}, {1, 1, 0, 0})), 0.0);
    try {
        auroc(make({0.1, 0.2}, {1, 1}));
        FAIL() << "expected an exception";
    } catch (const std::invalid_argument& e) {
        EXPECT_EQ(std::string(e.what()).rfind("undefined AUROC", 0), 0u);
    }
}

TEST(Auroc, ComplementUnderNegationWithoutTies) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (int k = 0; k < 50; ++k) {
        ScoredPixels sp = testing::random_instance(rng, 30);
        for (double& v : sp.scores) v = n(rng);
        ScoredPixels neg = sp;
        for (double& v : neg.scores) v = -v;
        EXPECT_NEAR(auroc(sp) + auroc(neg), 1.0, 1e-12);
    }
}

TEST(AveragePrecision, Examples) {
    EXPECT_EQ(average_precision(make({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0})), 1.0);
    // Positives ranked last in n=4: precision 1/3 at recall 1/2, 2/4 at recall 1.
    EXPECT_NEAR(average_precision(make({0.1, 0.2, 0.9, 0.8}, {1, 1, 0, 0})), 0.5 * (1.0 / 3.0) + 0.5 * 0.5, 1e-15);
    EXPECT_THROW(average_precision(make({0.1, 0.2}, {0, 0})), std::invalid_argument);
}

TEST(F1Max, Examples) {
    EXPECT_EQ(f1_max(make({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0})), 1.0);
    // Everything included at the lowest threshold: precision 2/4, recall 1.
    EXPECT_NEAR(f1_max(make({0.1, 0.2, 0.9, 0.8}, {1, 1, 0, 0})), 2.0 * 0.5 / 1.5, 1e-15);
}

TEST(Metrics, MatchBruteForceOnSmallInstances) {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 1000; ++k) {
        const std::size_t n = 2 + static_cast<std::size_t>(k % 9);
        const ScoredPixels sp = testing::random_instance(rng, n);
        ASSERT_NEAR(auroc(sp), testing::brute_auroc(sp), 1e-12) << "instance " << k;
        ASSERT_NEAR(average_precision(sp), testing::brute_average_precision(sp), 1e-12) << "instance " << k;
        ASSERT_NEAR(f1_max(sp), testing::brute_f1_max(sp), 1e-12) << "instance " << k;
    }
}

TEST(Metrics, InvariantUnderMonotoneTransforms) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    const ScoredPixels sp = testing::random_instance(rng, 40);
    const double a = auroc(sp), ap = average_precision(sp), f = f1_max(sp);
    for (int k = 0; k < 100; ++k) {
        const double scale = u(rng), shift = u(rng) - 1.5, power = u(rng);
        ScoredPixels tr = sp;
        for (double& v : tr.scores) v = scale * std::pow(v + 0.01, power) + shift + std::tanh(v);
        EXPECT_NEAR(auroc(tr), a, 1e-12);
        EXPECT_NEAR(average_precision(tr), ap, 1e-12);
        EXPECT_NEAR(f1_max(tr), f, 1e-12);
    }
}

TEST(ScoredPixels, AppendAndValidate) {
    ScoredPixels sp;
    sp.append(Tensor({2, 2}, {0.1, 0.2, 0.3, 0.4}), Tensor({2, 2}, {0, 1, 0, 1}));
    EXPECT_EQ(sp.scores.size(), 4u);
    EXPECT_EQ(sp.labels, (std::vector<int>{0, 1, 0, 1}));
    EXPECT_THROW(sp.append(Tensor({2, 2}), Tensor({3, 3})), std::invalid_argument);
    ScoredPixels bad = make({0.1, 0.2}, {0, 2});
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    ScoredPixels ragged = make({0.1}, {0, 1});
    EXPECT_THROW(ragged.validate(), std::invalid_argument);
}

TEST(Diversity, Examples) {
    const Tensor a({32, 32}, 0.2);
    EXPECT_EQ(group_diversity({a, a, a}), 0.0);
    EXPECT_EQ(group_diversity({Tensor({32, 32}, 0.0), Tensor({32, 32}, 1.0)}), 1.0);
    EXPECT_THROW(group_diversity({a}), std::invalid_argument);
    EXPECT_THROW(diversity_proxy({{a, a}, {a}}), std::invalid_argument);
}

TEST(Diversity, MatchesLoopOracle) {
    std::mt19937_64 rng(4);
    std::vector<Tensor> g;
    for (int i = 0; i < 3; ++i) g.push_back(testing::random_tensor({4, 4}, rng));
    auto rms = [](const Tensor& x, const Tensor& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
        return std::sqrt(s / static_cast<double>(x.size()));
    };
    const double expected = (rms(g[0], g[1]) + rms(g[0], g[2]) + rms(g[1], g[2])) / 3.0;
    EXPECT_NEAR(group_diversity(g), expected, 1e-14);
    const std::vector<Tensor> zero = {g[0], g[0]};
    EXPECT_NEAR(diversity_proxy({g, zero}), 0.5 * expected, 1e-14);
}

TEST(MetricsCsv, RoundTripWithMissingDiversity) {
    const auto dir = testing::scratch_dir("metrics");
    std::vector<MetricsRow> rows = {{"stripes", "spot", 0.9, 0.5, 0.6, 0.07, 6},
                                    {"checker", "patch", 0.8, 0.4, 0.3, std::nan(""), 6}};
    write_metrics_csv(dir / "metrics.csv", rows);
    const std::string text = testing::read_bytes(dir / "metrics.csv");
    EXPECT_EQ(text.substr(0, text.find('\n')), "category,defect,auroc,ap,f1_max,diversity_proxy,n_eval");
    const auto back = read_metrics_csv(dir / "metrics.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].auroc, 0.9);
    EXPECT_EQ(back[0].diversity_proxy, 0.07);
    EXPECT_TRUE(std::isnan(back[1].diversity_proxy));
    EXPECT_EQ(back[1].n_eval, 6u);
    EXPECT_THROW(read_metrics_csv(dir / "none.csv"), MissingArtifactError);
}

}  // namespace
}  // namespace apo
