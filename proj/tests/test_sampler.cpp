#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "apo/errors.hpp"
#include "apo/rng.hpp"
#include "apo/sampler.hpp"
#include "support/oracles.hpp"

namespace apo {
namespace {

using testing::random_tensor;

// Tiny preconditioned reference with adapters whose B factors are nonzero.
struct Models {
    Denoiser reference;
    LoraStack adapters;
    LoraStack zero_adapters;
    NoiseSchedule schedule = build_schedule(1000, ScheduleKind::linear);
};

Models make_models() {
    Models m{Denoiser::init(testing::tiny_dims(), 3), {}, {}};
    m.reference.attach_schedule(m.schedule, 0.1);
    m.zero_adapters = LoraStack::init(m.reference, TemporalGate{2, 4, 1000}, 5);
    m.adapters = m.zero_adapters;
    std::mt19937_64 rng(8);
    for (auto& l : m.adapters.layers) l.b.value = random_tensor(l.b.value.shape(), rng, 0.3);
    return m;
}

TEST(Guidance, ReductionsAreBitExact) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        GuidanceBranches b{random_tensor({7}, rng), random_tensor({7}, rng), random_tensor({7}, rng)};
        EXPECT_EQ(combine_guidance(b, 0.0, 0.0), b.uncond);
        EXPECT_EQ(combine_guidance(b, 1.0, 0.0), b.cond);
        EXPECT_EQ(combine_guidance(b, 1.0, 1.0), b.policy);
    }
}

TEST(Guidance, MatchesThreeTermForm) {
    std::mt19937_64 rng(2);
    GuidanceBranches b{random_tensor({5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)};
    const Tensor out = combine_guidance(b, 3.0, 1.5);
    for (std::size_t i = 0; i < 5; ++i) {
        const double expected = b.uncond[i] + 3.0 * (b.cond[i] - b.uncond[i]) + 1.5 * (b.policy[i] - b.cond[i]);
        EXPECT_NEAR(out[i], expected, 1e-12);
    }
}

TEST(Guidance, GuidedEpsOnModels) {
    const Models m = make_models();
    const Tensor z = seeded_gaussian({6}, 1, 2);
    const int t = 300;
    GuidanceConfig g{0.0, 0.0, 10, 0.0};
    const auto u = guided_eps(m.reference, &m.adapters, z, 2, t, g);
    EXPECT_EQ(u.eps_hat, predict_noise(m.reference, nullptr, z, kNullToken, t));
    g.s_text = 1.0;
    EXPECT_EQ(guided_eps(m.reference, &m.adapters, z, 2, t, g).eps_hat, predict_noise(m.reference, nullptr, z, 2, t));
    g.s_align = 1.0;
    const auto p = guided_eps(m.reference, &m.adapters, z, 2, t, g);
    EXPECT_EQ(p.eps_hat, predict_noise(m.reference, &m.adapters, z, 2, t));
    // The recorded field does not depend on the scales.
    EXPECT_EQ(p.delta_align, u.delta_align);
    EXPECT_EQ(p.delta_align,
              predict_noise(m.reference, &m.adapters, z, 2, t) - predict_noise(m.reference, nullptr, z, 2, t));
    EXPECT_THROW(guided_eps(m.reference, &m.adapters, z, kNullToken, t, g), std::invalid_argument);
}

TEST(Ddim, InvertsExactNoise) {
    const auto s = build_schedule(1000, ScheduleKind::linear);
    std::mt19937_64 rng(3);
    for (const int t : {1, 10, 500, 999, 1000}) {
        const Tensor z0 = random_tensor({16}, rng), eps = random_tensor({16}, rng);
        const Tensor zt = forward_noise(s, z0, t, eps);
        EXPECT_LT(max_abs_diff(ddim_step(s, zt, eps, t, 0, 0.0), z0), 1e-10);
        // Re-noising to an intermediate level with the same noise lands on the forward sample.
        if (t > 1) EXPECT_LT(max_abs_diff(ddim_step(s, zt, eps, t, t / 2, 0.0), forward_noise(s, z0, t / 2, eps)), 1e-10);
    }
}

TEST(Ddim, EndpointIsPredictedSignal) {
    const auto s = build_schedule(100, ScheduleKind::linear);
    const Tensor z = Tensor::vector({0.3, -0.7}), e = Tensor::vector({1.0, 0.5});
    const Tensor out = ddim_step(s, z, e, 40, 0, 0.0);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(out[i], (z[i] - s.sigma(40) * e[i]) / s.alpha(40));
}

TEST(Ddim, Preconditions) {
    const auto s = build_schedule(100, ScheduleKind::linear);
    const Tensor z({3});
    EXPECT_THROW(ddim_step(s, z, z, 5, 5, 0.0), std::invalid_argument);
    EXPECT_THROW(ddim_step(s, z, z, 5, 7, 0.0), std::invalid_argument);
    EXPECT_THROW(ddim_step(s, z, z, 5, 2, 0.5), std::invalid_argument);
}

TEST(Ddim, TenStepChainMatchesHandExpansion) {
    const auto s = build_schedule(1000, ScheduleKind::linear);
    std::mt19937_64 rng(4);
    const std::vector<int> ts = {1000, 870, 700, 555, 420, 300, 190, 101, 40, 7, 0};
    Tensor z = random_tensor({4}, rng);
    std::vector<double> hand(z.values());
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const Tensor e = random_tensor({4}, rng);
        z = ddim_step(s, z, e, ts[k], ts[k + 1], 0.0);
        const double ab = s.alpha_bar(ts[k]);
        for (std::size_t i = 0; i < 4; ++i) {
            const double x0 = (hand[i] - std::sqrt(1.0 - ab) * e[i]) / std::sqrt(ab);
            if (ts[k + 1] == 0) {
                hand[i] = x0;
            } else {
                const double abp = s.alpha_bar(ts[k + 1]);
                hand[i] = std::sqrt(abp) * x0 + std::sqrt(1.0 - abp) * e[i];
            }
        }
        for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(z[i], hand[i], 1e-9 * std::max(1.0, std::abs(hand[i])));
    }
}

TEST(Ddim, StochasticStepAddsScaledNoise) {
    const auto s = build_schedule(1000, ScheduleKind::linear);
    const Tensor z = Tensor::vector({0.2}), e = Tensor::vector({0.4}), n = Tensor::vector({1.0});
    const Tensor zero = Tensor::vector({0.0});
    const double with = ddim_step(s, z, e, 500, 400, 1.0, &n)[0];
    const double without = ddim_step(s, z, e, 500, 400, 1.0, &zero)[0];
    const double ab = s.alpha_bar(500), abp = s.alpha_bar(400);
    const double c = std::sqrt((1.0 - abp) / (1.0 - ab) * (1.0 - ab / abp));
    EXPECT_NEAR(with - without, c, 1e-12);
}

TEST(DdimTimesteps, EvenStrideFromTopToOne) {
    const auto ts = ddim_timesteps(1000, 100);
    ASSERT_EQ(ts.size(), 100u);
    EXPECT_EQ(ts.front(), 1000);
    EXPECT_EQ(ts.back(), 1);
    for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
    EXPECT_EQ(ddim_timesteps(10, 10), (std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1}));
    EXPECT_EQ(ddim_timesteps(1000, 1), (std::vector<int>{1000}));
    EXPECT_THROW(ddim_timesteps(10, 0), std::invalid_argument);
}

TEST(Sample, ShapesAndDeterminism) {
    const Models m = make_models();
    const GuidanceConfig g{3.0, 1.5, 12, 0.0};
    const SampleRun a = sample(m.reference, &m.adapters, 3, g, m.schedule, 7);
    EXPECT_EQ(a.trajectory.size(), 13u);
    EXPECT_EQ(a.delta_align.size(), 12u);
    EXPECT_EQ(a.timesteps, ddim_timesteps(1000, 12));
    for (const auto& d : a.delta_align) EXPECT_EQ(d.shape(), Shape{6});
    EXPECT_EQ(a.final_latent, a.trajectory.back());
    EXPECT_EQ(a.trajectory.front(), seeded_gaussian({6}, 7, derive_stream(streams::kSample, 3, 0)));
    const SampleRun b = sample(m.reference, &m.adapters, 3, g, m.schedule, 7);
    EXPECT_EQ(a.trajectory, b.trajectory);
    EXPECT_EQ(a.delta_align, b.delta_align);
    EXPECT_NE(sample(m.reference, &m.adapters, 3, g, m.schedule, 8).final_latent, a.final_latent);
    EXPECT_NE(sample(m.reference, &m.adapters, 3, g, m.schedule, 7, 1).final_latent, a.final_latent);
}

TEST(Sample, ZeroAlignScaleIgnoresAdapters) {
    const Models m = make_models();
    const GuidanceConfig g{3.0, 0.0, 10, 0.0};
    const SampleRun with = sample(m.reference, &m.adapters, 2, g, m.schedule, 1);
    const SampleRun without = sample(m.reference, nullptr, 2, g, m.schedule, 1);
    EXPECT_EQ(with.trajectory, without.trajectory);
    double field = 0.0;
    for (const auto& d : with.delta_align) field += squared_norm(d);
    EXPECT_GT(field, 0.0);
}

TEST(Sample, ZeroAdaptersRecordZeroField) {
    const Models m = make_models();
    const SampleRun run = sample(m.reference, &m.zero_adapters, 3, GuidanceConfig{3.0, 1.5, 10, 0.0}, m.schedule, 2);
    for (const auto& d : run.delta_align) EXPECT_EQ(squared_norm(d), 0.0);
}

TEST(Sample, StochasticModeIsSeeded) {
    const Models m = make_models();
    const GuidanceConfig g{3.0, 1.5, 10, 0.5};
    const auto a = sample(m.reference, &m.adapters, 3, g, m.schedule, 2);
    EXPECT_EQ(a.trajectory, sample(m.reference, &m.adapters, 3, g, m.schedule, 2).trajectory);
    EXPECT_NE(a.final_latent, sample(m.reference, &m.adapters, 3, GuidanceConfig{3.0, 1.5, 10, 0.0}, m.schedule, 2)
                                  .final_latent);
}

TEST(TraceLatent, RecordsFieldOnNoisedCopies) {
    const Models m = make_models();
    const Tensor z0 = seeded_gaussian({6}, 4, 4);
    const GuidanceConfig g{3.0, 1.5, 5, 0.0};
    const SampleRun run = trace_latent(m.reference, m.adapters, z0, 2, g, m.schedule, 9);
    ASSERT_EQ(run.trajectory.size(), 6u);
    const Tensor eps = seeded_gaussian({6}, 9, derive_stream(streams::kLocalize, 2, 0));
    for (std::size_t i = 0; i < 5; ++i) {
        const int t = run.timesteps[i];
        EXPECT_EQ(run.trajectory[i], forward_noise(m.schedule, z0, t, eps));
        EXPECT_EQ(run.delta_align[i], predict_noise(m.reference, &m.adapters, run.trajectory[i], 2, t) -
                                          predict_noise(m.reference, nullptr, run.trajectory[i], 2, t));
    }
    EXPECT_EQ(run.final_latent, z0);
}

TEST(GuidedDensity, ResidualVanishesOnRandomCases) {
    const auto s = build_schedule(1000, ScheduleKind::linear);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> st(0.0, 8.0), sa(0.0, 4.0), eta(0.05, 1.0);
    std::uniform_int_distribution<int> tt(1, 1000);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        GuidanceConfig g{st(rng), sa(rng), 100, eta(rng)};
        const GuidanceBranches b{random_tensor({1}, rng), random_tensor({1}, rng), random_tensor({1}, rng)};
        const Tensor zt = random_tensor({1}, rng), zp = random_tensor({1}, rng);
        worst = std::max(worst, std::abs(guided_log_density_check(s, zt, zp, tt(rng), g, b)));
    }
    EXPECT_LT(worst, 1e-8);
}

TEST(GuidedDensity, ReductionsAndDegenerateCase) {
    const auto s = build_schedule(1000, ScheduleKind::linear);
    std::mt19937_64 rng(13);
    const GuidanceBranches b{random_tensor({1}, rng), random_tensor({1}, rng), random_tensor({1}, rng)};
    const Tensor zt = random_tensor({1}, rng), zp = random_tensor({1}, rng);
    EXPECT_EQ(guided_log_density_check(s, zt, zp, 300, GuidanceConfig{0.0, 0.0, 100, 0.5}, b), 0.0);
    EXPECT_LT(std::abs(guided_log_density_check(s, zt, zp, 300, GuidanceConfig{1.0, 1.0, 100, 0.5}, b)), 1e-10);
    try {
        guided_log_density_check(s, zt, zp, 300, GuidanceConfig{1.0, 1.0, 100, 0.0}, b);
        FAIL() << "expected an exception";
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "densities degenerate");
    }
}

TEST(GuidanceConfig, Validation) {
    EXPECT_NO_THROW(GuidanceConfig{}.validate());
    EXPECT_THROW((GuidanceConfig{3.0, 1.5, 0, 0.0}.validate()), ConfigError);
    EXPECT_THROW((GuidanceConfig{3.0, 1.5, 10, 1.5}.validate()), ConfigError);
}

TEST(SampleRunIo, RoundTrip) {
    const Models m = make_models();
    const SampleRun run = sample(m.reference, &m.adapters, 2, GuidanceConfig{3.0, 1.5, 6, 0.0}, m.schedule, 3);
    const auto dir = testing::scratch_dir("sample_run");
    // A 6-dim latent cannot be decoded to a 32x32 image; use the matching toy layout instead.
    SampleRun big = run;
    for (auto& z : big.trajectory) z = seeded_gaussian({256}, 1, 1);
    for (auto& d : big.delta_align) d = seeded_gaussian({256}, 1, 2);
    big.final_latent = big.trajectory.back();
    save_sample_run(dir, big, 32, 32);
    const SampleRun back = load_sample_run(dir);
    EXPECT_EQ(back.seed, 3u);
    EXPECT_EQ(back.token, 2u);
    EXPECT_EQ(back.timesteps, run.timesteps);
    EXPECT_EQ(back.trajectory, big.trajectory);
    EXPECT_EQ(back.delta_align, big.delta_align);
    EXPECT_TRUE(std::filesystem::exists(dir / "final.pgm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "delta_align_norms.csv"));
    EXPECT_THROW(load_sample_run(dir / "missing"), MissingArtifactError);
}

}  // namespace
}  // namespace apo
