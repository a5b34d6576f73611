#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "apo/autodiff.hpp"
#include "apo/schedule.hpp"
#include "apo/tensor.hpp"

namespace apo {

// Delta = ||eps_theta_hat - eps||^2 - ||eps_ref_hat - eps||^2; negative when
// the policy is closer to the injected noise than the reference.
double alignment_deviation(const Tensor& eps_theta_hat, const Tensor& eps_ref_hat, const Tensor& eps);

// -log sigmoid(-beta_t * Delta), evaluated as softplus(beta_t * Delta).
double apo_loss(double delta, double beta_t);

// Mean squared error ||eps - eps_hat||^2 / n.
double sd_loss(const Tensor& eps_hat, const Tensor& eps);

// sigmoid(-beta_t * Delta): probability the policy is preferred over the reference.
double bt_preference_prob(double delta, double beta_t);

struct DeviationSample {
    double delta = 0.0;
    double beta_t = 0.0;
    int t = 0;
    std::size_t condition = 0;
};

// Graph forms used by the training loops. `eps_theta_hat` is [n, d] or [d];
// reference prediction and noise enter as constants.
Var deviation_graph(Var eps_theta_hat, const Tensor& eps_ref_hat, const Tensor& eps);
Var apo_loss_graph(Var delta, double beta_t);
Var sd_loss_graph(Var eps_hat, const Tensor& eps);

// Three reverse-step Gaussians sharing the scalar variance `var`.
struct GaussianStep {
    Tensor mu_q;
    Tensor mu_ref;
    Tensor mu_theta;
    double var = 1.0;
};

// KL(q || p_ref) - KL(q || p_theta) for equal-covariance Gaussians:
// (||mu_q - mu_ref||^2 - ||mu_q - mu_theta||^2) / (2 var).
double analytic_step_kl_difference(const GaussianStep& step);

// mu = (z_t - (1 - a_t)/sqrt(1 - abar_t) * noise_pred) / sqrt(a_t),
// with a_t the per-step and abar_t the cumulative signal factor.
Tensor posterior_means(const NoiseSchedule& schedule, const Tensor& z_t, const Tensor& noise_pred, int t);

// Coefficient (1 - a_t)/sqrt(a_t (1 - abar_t)) linking mean gaps to noise gaps.
double mean_gap_coefficient(const NoiseSchedule& schedule, int t);

using NoisePredictor = std::function<Tensor(const Tensor& z_t, std::size_t token, int t)>;

struct LatentSample {
    Tensor z0;
    std::size_t token = 0;
};

struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t draws = 0;
};

// delta_hat = 1/2 mean_draws |lambda'_t| (||eps - eps_ref||^2 - ||eps - eps_theta||^2)
// with sample, t ~ U{1..T} and eps drawn per draw from stream (seed, draw index).
McEstimate mc_deviation_estimate(const NoisePredictor& policy, const NoisePredictor& reference,
                                 std::span<const LatentSample> samples, const NoiseSchedule& schedule,
                                 std::size_t n_draws, std::uint64_t seed);

}  // namespace apo
