#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "apo/denoiser.hpp"
#include "apo/preference.hpp"
#include "apo/schedule.hpp"
#include "apo/tensor.hpp"

namespace apo {

struct GuidanceConfig {
    double s_text = 3.0;
    double s_align = 1.5;
    int steps = 100;
    double eta = 0.0;

    void validate() const;
};

struct GuidanceBranches {
    Tensor uncond;  // eps_ref(z_t, t)
    Tensor cond;    // eps_ref(z_t, c, t)
    Tensor policy;  // eps_theta(z_t, c, t)
};

// eps_u + s_text (eps_c - eps_u) + s_align (eps_p - eps_c), computed as
// (1 - s_text) eps_u + (s_text - s_align) eps_c + s_align eps_p.
Tensor combine_guidance(const GuidanceBranches& b, double s_text, double s_align);

struct GuidedPrediction {
    Tensor eps_hat;
    Tensor delta_align;  // eps_theta(z_t,c,t) - eps_ref(z_t,c,t)
};

// The unconditional branch always uses the reference model. `adapters` may be null.
GuidanceBranches guidance_branches(const Denoiser& reference, const LoraStack* adapters, const Tensor& z_t,
                                   std::size_t token, int t);
GuidedPrediction guided_eps(const Denoiser& reference, const LoraStack* adapters, const Tensor& z_t,
                            std::size_t token, int t, const GuidanceConfig& guidance);

// DDIM update from level t to t_prev < t. With t_prev = 0 the predicted z0 is returned.
// `noise` is required when eta > 0.
Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 double eta, const Tensor* noise = nullptr);

// `steps` indices evenly spaced from T down to 1; the final hop goes to 0.
std::vector<int> ddim_timesteps(int T, int steps);

struct SampleRun {
    std::uint64_t seed = 0;
    std::uint64_t run_index = 0;
    std::size_t token = 0;
    std::vector<int> timesteps;          // visited levels, length steps
    std::vector<Tensor> trajectory;      // z at each visited level plus final z0, length steps+1
    std::vector<Tensor> delta_align;     // one per visited level
    Tensor final_latent;
};

SampleRun sample(const Denoiser& reference, const LoraStack* adapters, std::size_t token,
                 const GuidanceConfig& guidance, const NoiseSchedule& schedule, std::uint64_t seed,
                 std::uint64_t run_index = 0);

// Deviation trace of an existing latent: at each DDIM level t, forward-noise z0
// with a seeded eps and record delta_align(z_t). Trajectory holds the noised latents then z0.
SampleRun trace_latent(const Denoiser& reference, const LoraStack& adapters, const Tensor& z0, std::size_t token,
                       const GuidanceConfig& guidance, const NoiseSchedule& schedule, std::uint64_t seed,
                       std::uint64_t run_index = 0);

// Residual of log p_guided(z_prev|z_t) against the exponent-weighted combination of
// branch log densities, for equal-variance Gaussian transitions with variance
// eta^2 times the posterior variance. Returned relative to the value at the guided mean,
// so the normalization constant cancels.
double guided_log_density_check(const NoiseSchedule& schedule, const Tensor& z_t, const Tensor& z_prev, int t,
                                const GuidanceConfig& guidance, const GuidanceBranches& branches);

// Directory layout: final.pgm, trajectory.apot [steps+1, d], delta_align.apot [steps, d],
// delta_align_norms.csv (step,t,norm), run_meta.json.
void save_sample_run(const std::filesystem::path& dir, const SampleRun& run, std::size_t height, std::size_t width);
SampleRun load_sample_run(const std::filesystem::path& dir);

}  // namespace apo
