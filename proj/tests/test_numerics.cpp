#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "apo/adam.hpp"
#include "apo/autodiff.hpp"
#include "apo/rng.hpp"
#include "apo/serialize.hpp"
#include "apo/tensor.hpp"
#include "support/oracles.hpp"

namespace apo {
namespace {

using testing::check_gradients;
using testing::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.at(1, 2), 1.5);
}

TEST(Tensor, MatmulVariantsAgree) {
    std::mt19937_64 rng(3);
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    const Tensor c = matmul(a, b);
    EXPECT_LT(max_abs_diff(c, matmul_nt(a, transpose(b))), 1e-14);
    EXPECT_LT(max_abs_diff(c, matmul_tn(transpose(a), b)), 1e-14);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
            EXPECT_NEAR(c.at(i, j), s, 1e-14);
        }
}

TEST(SeededGaussian, RepeatCallsAreIdentical) {
    EXPECT_EQ(seeded_gaussian({2}, 7, 0), seeded_gaussian({2}, 7, 0));
    EXPECT_NE(seeded_gaussian({2}, 7, 0), seeded_gaussian({2}, 7, 1));
}

TEST(SeededGaussian, ZeroSizedShapeIsEmpty) { EXPECT_EQ(seeded_gaussian({0}, 1, 0).size(), 0u); }

TEST(SeededGaussian, MomentsOfAMillionDraws) {
    const Tensor x = seeded_gaussian({1000000}, 1, 0);
    double mean = 0.0;
    for (double v : x.data()) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
    EXPECT_NEAR(mean, 0.0, 4e-3);
    EXPECT_NEAR(var, 1.0, 6e-3);
}

TEST(CounterRng, CursorMatchesPureFunction) {
    CounterRng r(11, 5);
    for (std::uint64_t i = 0; i < 8; ++i) EXPECT_EQ(r.uniform(), counter_uniform(11, 5, i));
    CounterRng g(11, 5);
    // Cursor draws take the cos branch of each pair.
    for (std::uint64_t i = 0; i < 8; ++i) EXPECT_EQ(g.gaussian(), counter_gaussian(11, 5, 2 * i));
}

TEST(CounterRng, UniformIntStaysInRange) {
    CounterRng r(2, 9);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto k = r.uniform_int(7);
        ASSERT_LT(k, 7u);
        ++hits[k];
    }
    for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Backward, SquareAtThree) {
    Parameter x("x", Tensor::scalar(3.0));
    Graph g;
    Var v = g.leaf(x);
    auto grads = g.backward(ad::mul(v, v));
    EXPECT_DOUBLE_EQ(grads.at(&x).item(), 6.0);
    EXPECT_DOUBLE_EQ(x.grad.item(), 6.0);
}

TEST(Backward, SigmoidAtZero) {
    Parameter x("x", Tensor({4}));
    Graph g;
    g.backward(ad::sum(ad::sigmoid(g.leaf(x))));
    for (double v : x.grad.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Backward, RejectsNonScalarOutput) {
    Parameter x("x", Tensor({3}));
    Graph g;
    Var v = g.leaf(x);
    try {
        g.backward(v);
        FAIL() << "expected an exception";
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "backward requires scalar");
    }
}

TEST(Backward, GradientsAccumulateAcrossPasses) {
    Parameter x("x", Tensor::scalar(2.0));
    for (int i = 0; i < 2; ++i) {
        Graph g;
        g.backward(ad::square(g.leaf(x)));
    }
    EXPECT_DOUBLE_EQ(x.grad.item(), 8.0);
}

TEST(Backward, ThreeLayerNetworkMatchesFiniteDifferences) {
    std::mt19937_64 rng(42);
    Parameter w1("w1", random_tensor({5, 4}, rng, 0.5)), b1("b1", random_tensor({5}, rng, 0.1));
    Parameter w2("w2", random_tensor({5, 5}, rng, 0.5)), b2("b2", random_tensor({5}, rng, 0.1));
    Parameter w3("w3", random_tensor({2, 5}, rng, 0.5)), b3("b3", random_tensor({2}, rng, 0.1));
    const Tensor x = random_tensor({3, 4}, rng);
    auto loss = [&](Graph& g) {
        Var h = ad::silu(ad::add_bias(ad::linear(g.constant(x), g.leaf(w1)), g.leaf(b1)));
        h = ad::silu(ad::add_bias(ad::linear(h, g.leaf(w2)), g.leaf(b2)));
        h = ad::add_bias(ad::linear(h, g.leaf(w3)), g.leaf(b3));
        return ad::mean(ad::square(h));
    };
    const auto r = check_gradients({&w1, &b1, &w2, &b2, &w3, &b3}, loss, 1000, 1);
    EXPECT_LT(r.max_rel_error, testing::kGradTol);
}

// One finite-difference check per differentiable primitive, 100 random inputs each.
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
    const int which = GetParam();
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(1000 * which + trial);
        Parameter a("a", random_tensor({3, 4}, rng));
        Parameter b("b", random_tensor({3, 4}, rng));
        Parameter w("w", random_tensor({2, 4}, rng));
        Parameter bias("bias", random_tensor({4}, rng));
        Parameter table("table", random_tensor({5, 4}, rng));
        const Tensor mask = random_tensor({3, 4}, rng);
        const Tensor weights = random_tensor({3, 4}, rng);
        std::vector<Parameter*> params = {&a, &b};
        std::function<Var(Graph&)> f;
        // Every loss ends in a weighted sum so upstream gradients are non-uniform.
        auto reduce = [&](Graph& g, Var v) { return ad::sum(ad::mul(v, g.constant(weights))); };
        switch (which) {
            case 0: f = [&](Graph& g) { return reduce(g, ad::add(g.leaf(a), g.leaf(b))); }; break;
            case 1: f = [&](Graph& g) { return reduce(g, ad::sub(g.leaf(a), g.leaf(b))); }; break;
            case 2: f = [&](Graph& g) { return reduce(g, ad::mul(g.leaf(a), g.leaf(b))); }; break;
            case 3: f = [&](Graph& g) { return reduce(g, ad::scale(g.leaf(a), -1.7)); }; break;
            case 4: f = [&](Graph& g) { return reduce(g, ad::neg(g.leaf(a))); }; break;
            case 5:
                params = {&a, &bias};
                f = [&](Graph& g) { return reduce(g, ad::add_bias(g.leaf(a), g.leaf(bias))); };
                break;
            case 6:
                params = {&a, &w};
                f = [&](Graph& g) { return ad::sum(ad::square(ad::linear(g.leaf(a), g.leaf(w)))); };
                break;
            case 7: f = [&](Graph& g) { return reduce(g, ad::mul_const(g.leaf(a), mask)); }; break;
            case 8: f = [&](Graph& g) { return reduce(g, ad::silu(g.leaf(a))); }; break;
            case 9: f = [&](Graph& g) { return reduce(g, ad::sigmoid(g.leaf(a))); }; break;
            case 10: f = [&](Graph& g) { return reduce(g, ad::softplus(ad::scale(g.leaf(a), 3.0))); }; break;
            case 11: f = [&](Graph& g) { return reduce(g, ad::square(g.leaf(a))); }; break;
            case 12: f = [&](Graph& g) { return ad::mean(ad::mul(g.leaf(a), g.constant(weights))); }; break;
            case 13:
                params = {&table};
                f = [&](Graph& g) { return reduce(g, ad::gather_rows(g.leaf(table), {4, 0, 4})); };
                break;
            case 14:
                f = [&](Graph& g) {
                    return ad::sum(ad::square(ad::select_row(ad::mul(g.leaf(a), g.constant(weights)), 1)));
                };
                break;
            default: FAIL();
        }
        const auto r = check_gradients(params, f, 64, trial);
        ASSERT_LT(r.max_rel_error, testing::kGradTol) << "primitive " << which << " trial " << trial;
    }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::Range(0, 15));

TEST(StableFunctions, NoOverflowAtExtremes) {
    EXPECT_DOUBLE_EQ(stable_softplus(800.0), 800.0);
    EXPECT_EQ(stable_softplus(-800.0), 0.0);
    EXPECT_DOUBLE_EQ(stable_sigmoid(800.0), 1.0);
    EXPECT_EQ(stable_sigmoid(-800.0), 0.0);
    EXPECT_NEAR(stable_softplus(0.0), std::log(2.0), 1e-16);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    Parameter p("p", Tensor::vector({1.0, -2.0, 3.0}));
    std::vector<Parameter*> ps = {&p};
    AdamState adam(AdamConfig{0.1}, ps);
    const Tensor before = p.value;
    for (int i = 0; i < 5; ++i) adam.step(ps);
    EXPECT_EQ(p.value, before);
    EXPECT_EQ(adam.step_count(), 5u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Parameter p("p", Tensor::scalar(0.0));
    std::vector<Parameter*> ps = {&p};
    AdamState adam(AdamConfig{0.1}, ps);
    p.grad = Tensor::scalar(1.0);
    adam.step(ps);
    EXPECT_NEAR(p.value.item(), -0.1, 1e-8);
}

TEST(Adam, DescendsOnParabola) {
    Parameter p("p", Tensor::scalar(1.0));
    std::vector<Parameter*> ps = {&p};
    AdamState adam(AdamConfig{0.05}, ps);
    for (int i = 0; i < 100; ++i) {
        p.grad = Tensor::scalar(2.0 * p.value.item());
        adam.step(ps);
    }
    EXPECT_LT(std::abs(p.value.item()), 0.05);
}

TEST(Adam, NonFiniteGradientAppliesNothing) {
    Parameter p("p", Tensor::vector({1.0, 2.0}));
    Parameter q("q", Tensor::vector({3.0}));
    std::vector<Parameter*> ps = {&p, &q};
    AdamState adam(AdamConfig{0.1}, ps);
    p.grad = Tensor::vector({1.0, 1.0});
    q.grad = Tensor::vector({std::nan("")});
    try {
        adam.step(ps);
        FAIL() << "expected an exception";
    } catch (const std::domain_error& e) {
        EXPECT_STREQ(e.what(), "non-finite gradient");
    }
    EXPECT_EQ(p.value, Tensor::vector({1.0, 2.0}));
    EXPECT_EQ(adam.step_count(), 0u);
}

TEST(Adam, InactiveEntriesKeepValueAndMoments) {
    Parameter p("p", Tensor::vector({1.0, 1.0}));
    std::vector<Parameter*> ps = {&p};
    AdamState adam(AdamConfig{0.1}, ps);
    const Tensor active = Tensor::vector({1.0, 0.0});
    std::vector<const Tensor*> masks = {&active};
    p.grad = Tensor::vector({1.0, 1.0});
    adam.step(ps, masks);
    EXPECT_LT(p.value[0], 1.0);
    EXPECT_EQ(p.value[1], 1.0);
    EXPECT_EQ(adam.first_moments()[0][1], 0.0);
    EXPECT_EQ(adam.second_moments()[0][1], 0.0);
}

TEST(Serialize, TensorRoundTripAndLayout) {
    const Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, -0.5});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.size(), 4u + 4u + 2 * 8u + 6 * 8u);
    EXPECT_EQ(bytes.substr(0, 4), "APOT");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3u);
    EXPECT_EQ(read_tensor(ss), t);
}

TEST(Serialize, BadMagicIsRejected) {
    std::stringstream ss("XXXX0000");
    EXPECT_THROW(read_tensor(ss), std::runtime_error);
}

}  // namespace
}  // namespace apo
