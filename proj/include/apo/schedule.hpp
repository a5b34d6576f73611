#pragma once

#include <string>
#include <vector>

#include "apo/tensor.hpp"

namespace apo {

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

// Discrete variance-preserving schedule over t = 0..T.
//   alpha_t^2 = prod_{s<=t} (1 - b_s),  sigma_t^2 = 1 - alpha_t^2,
//   lambda_t  = log(alpha_t^2 / sigma_t^2).
// The DDPM-style names are kept alongside: alpha_bar_t = alpha_t^2 and
// step_alpha_t = alpha_bar_t / alpha_bar_{t-1} = 1 - b_t.
class NoiseSchedule {
public:
    // `lambda` is stored verbatim; alpha/sigma are derived from it.
    static NoiseSchedule from_log_snr(std::vector<double> lambda, ScheduleKind kind = ScheduleKind::linear);

    int steps() const noexcept { return T_; }
    ScheduleKind kind() const noexcept { return kind_; }

    double alpha(int t) const { return alpha_.at(index(t)); }
    double sigma(int t) const { return sigma_.at(index(t)); }
    double lambda(int t) const { return lambda_.at(index(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    double step_alpha(int t) const { return step_alpha_.at(index(t)); }
    double step_beta(int t) const { return 1.0 - step_alpha(t); }

private:
    friend NoiseSchedule build_schedule(int T, ScheduleKind kind);
    NoiseSchedule() = default;

    std::size_t index(int t) const;
    void fill_from_log_alpha_bar(const std::vector<double>& log_alpha_bar);

    int T_ = 0;
    ScheduleKind kind_ = ScheduleKind::linear;
    std::vector<double> alpha_, sigma_, lambda_, alpha_bar_, step_alpha_;
};

// Linear: b_s rises linearly from 1e-4 (s = 0) to 2e-2 (s = T).
// Cosine: alpha_bar_t = (1 - 1e-4) f(t)/f(0), f(u) = cos^2(((u/T) + 0.008)/1.008 * pi/2),
// with per-step variance clipped at 0.999 so the last step stays finite.
NoiseSchedule build_schedule(int T, ScheduleKind kind);

// z_t = alpha_t z0 + sigma_t eps
Tensor forward_noise(const NoiseSchedule& s, const Tensor& z0, int t, const Tensor& eps);

// Backward difference lambda_t - lambda_{t-1}; negative for a valid schedule.
double log_snr_slope(const NoiseSchedule& s, int t);

// beta_t = -1/2 * beta * lambda'_t
double beta_weight(const NoiseSchedule& s, double beta, int t);

}  // namespace apo
