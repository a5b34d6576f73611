#include "apo/preference.hpp"

#include <cmath>
#include <stdexcept>

#include "apo/rng.hpp"

namespace apo {

double alignment_deviation(const Tensor& eps_theta_hat, const Tensor& eps_ref_hat, const Tensor& eps) {
    require_same_shape(eps_theta_hat, eps, "alignment_deviation");
    require_same_shape(eps_ref_hat, eps, "alignment_deviation");
    return squared_distance(eps_theta_hat, eps) - squared_distance(eps_ref_hat, eps);
}

double apo_loss(double delta, double beta_t) {
    if (!(beta_t > 0.0)) throw std::invalid_argument("apo_loss requires beta_t > 0");
    return stable_softplus(beta_t * delta);
}

double sd_loss(const Tensor& eps_hat, const Tensor& eps) {
    require_same_shape(eps_hat, eps, "sd_loss");
    if (eps.size() == 0) throw std::invalid_argument("sd_loss of empty tensors");
    return squared_distance(eps_hat, eps) / static_cast<double>(eps.size());
}

double bt_preference_prob(double delta, double beta_t) {
    if (!(beta_t > 0.0)) throw std::invalid_argument("preference probability requires beta_t > 0");
    return stable_sigmoid(-beta_t * delta);
}

namespace {

Var squared_error_graph(Var pred, const Tensor& target) {
    Graph& g = *pred.graph;
    const Tensor& pv = pred.value();
    if (pv.size() != target.size()) throw std::invalid_argument("squared error: size mismatch");
    Var tgt = g.constant(target.reshaped(pv.shape()));
    return ad::sum(ad::square(ad::sub(pred, tgt)));
}

}  // namespace

Var deviation_graph(Var eps_theta_hat, const Tensor& eps_ref_hat, const Tensor& eps) {
    require_same_shape(eps_ref_hat, eps, "deviation_graph");
    const double ref_term = squared_distance(eps_ref_hat, eps);
    Var policy_term = squared_error_graph(eps_theta_hat, eps);
    Graph& g = *eps_theta_hat.graph;
    return ad::sub(policy_term, g.constant(Tensor::scalar(ref_term)));
}

Var apo_loss_graph(Var delta, double beta_t) {
    if (!(beta_t > 0.0)) throw std::invalid_argument("apo_loss requires beta_t > 0");
    return ad::softplus(ad::scale(delta, beta_t));
}

Var sd_loss_graph(Var eps_hat, const Tensor& eps) {
    if (eps.size() == 0) throw std::invalid_argument("sd_loss of empty tensors");
    return ad::scale(squared_error_graph(eps_hat, eps), 1.0 / static_cast<double>(eps.size()));
}

double analytic_step_kl_difference(const GaussianStep& step) {
    if (!(step.var > 0.0)) throw std::invalid_argument("GaussianStep variance must be positive");
    require_same_shape(step.mu_q, step.mu_ref, "analytic_step_kl_difference");
    require_same_shape(step.mu_q, step.mu_theta, "analytic_step_kl_difference");
    return (squared_distance(step.mu_q, step.mu_ref) - squared_distance(step.mu_q, step.mu_theta)) / (2.0 * step.var);
}

Tensor posterior_means(const NoiseSchedule& schedule, const Tensor& z_t, const Tensor& noise_pred, int t) {
    if (t < 1) throw std::out_of_range("posterior mean undefined at t = 0");
    require_same_shape(z_t, noise_pred, "posterior_means");
    const double a = schedule.step_alpha(t);
    const double one_minus_ab = schedule.sigma(t) * schedule.sigma(t);
    const double coef = (1.0 - a) / std::sqrt(one_minus_ab);
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    Tensor mu(z_t.shape());
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = (z_t[i] - coef * noise_pred[i]) * inv_sqrt_a;
    return mu;
}

double mean_gap_coefficient(const NoiseSchedule& schedule, int t) {
    if (t < 1) throw std::out_of_range("mean gap coefficient undefined at t = 0");
    const double a = schedule.step_alpha(t);
    const double one_minus_ab = schedule.sigma(t) * schedule.sigma(t);
    return (1.0 - a) / std::sqrt(a * one_minus_ab);
}

McEstimate mc_deviation_estimate(const NoisePredictor& policy, const NoisePredictor& reference,
                                 std::span<const LatentSample> samples, const NoiseSchedule& schedule,
                                 std::size_t n_draws, std::uint64_t seed) {
    if (samples.empty()) throw std::invalid_argument("mc_deviation_estimate: empty sample set");
    if (n_draws < 2) throw std::invalid_argument("mc_deviation_estimate: need at least 2 draws");
    const auto T = static_cast<std::uint64_t>(schedule.steps());
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t d = 0; d < n_draws; ++d) {
        CounterRng rng(seed, derive_stream(streams::kMonteCarlo, d));
        const auto& s = samples[rng.uniform_int(samples.size())];
        const int t = 1 + static_cast<int>(rng.uniform_int(T));
        const Tensor eps = rng.gaussian(s.z0.shape());
        const Tensor zt = forward_noise(schedule, s.z0, t, eps);
        const Tensor e_ref = reference(zt, s.token, t);
        const Tensor e_pol = policy(zt, s.token, t);
        const double err_gap = squared_distance(eps, e_ref) - squared_distance(eps, e_pol);
        const double v = 0.5 * std::abs(log_snr_slope(schedule, t)) * err_gap;
        sum += v;
        sum_sq += v * v;
    }
    const double n = static_cast<double>(n_draws);
    McEstimate est;
    est.draws = n_draws;
    est.mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1.0));
    est.standard_error = std::sqrt(var / n);
    return est;
}

}  // namespace apo
