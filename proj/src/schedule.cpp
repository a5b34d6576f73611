#include "apo/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace apo {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

std::size_t NoiseSchedule::index(int t) const {
    if (t < 0 || t > T_) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T_) + "]");
    return static_cast<std::size_t>(t);
}

void NoiseSchedule::fill_from_log_alpha_bar(const std::vector<double>& log_ab) {
    const std::size_t n = log_ab.size();
    alpha_.resize(n);
    sigma_.resize(n);
    lambda_.resize(n);
    alpha_bar_.resize(n);
    step_alpha_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double ab = std::exp(log_ab[t]);
        const double one_minus = -std::expm1(log_ab[t]);
        alpha_bar_[t] = ab;
        alpha_[t] = std::sqrt(ab);
        sigma_[t] = std::sqrt(one_minus);
        lambda_[t] = log_ab[t] - std::log(one_minus);
        step_alpha_[t] = t == 0 ? ab : std::exp(log_ab[t] - log_ab[t - 1]);
    }
}

NoiseSchedule NoiseSchedule::from_log_snr(std::vector<double> lambda, ScheduleKind kind) {
    if (lambda.size() < 3) throw std::invalid_argument("log-SNR table needs at least 3 entries");
    NoiseSchedule s;
    s.T_ = static_cast<int>(lambda.size()) - 1;
    s.kind_ = kind;
    std::vector<double> log_ab(lambda.size());
    // alpha_bar = sigmoid(lambda)
    for (std::size_t t = 0; t < lambda.size(); ++t) log_ab[t] = -std::log1p(std::exp(-lambda[t]));
    s.fill_from_log_alpha_bar(log_ab);
    s.lambda_ = std::move(lambda);
    return s;
}

NoiseSchedule build_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw std::invalid_argument("schedule requires T >= 2");
    NoiseSchedule s;
    s.T_ = T;
    s.kind_ = kind;
    std::vector<double> log_ab(static_cast<std::size_t>(T) + 1);
    constexpr double kFirst = 1e-4;
    if (kind == ScheduleKind::linear) {
        constexpr double kLast = 2e-2;
        double acc = 0.0;
        for (int t = 0; t <= T; ++t) {
            const double b = kFirst + (kLast - kFirst) * static_cast<double>(t) / static_cast<double>(T);
            acc += std::log1p(-b);
            log_ab[static_cast<std::size_t>(t)] = acc;
        }
    } else {
        constexpr double kOffset = 0.008;
        constexpr double kMaxStep = 0.999;
        auto f = [&](int u) {
            const double c = std::cos((static_cast<double>(u) / T + kOffset) / (1.0 + kOffset) * std::numbers::pi / 2);
            return c * c;
        };
        log_ab[0] = std::log1p(-kFirst);
        for (int t = 1; t <= T; ++t) {
            double b = 1.0 - f(t) / f(t - 1);
            if (b > kMaxStep) b = kMaxStep;
            log_ab[static_cast<std::size_t>(t)] = log_ab[static_cast<std::size_t>(t) - 1] + std::log1p(-b);
        }
    }
    s.fill_from_log_alpha_bar(log_ab);
    return s;
}

Tensor forward_noise(const NoiseSchedule& s, const Tensor& z0, int t, const Tensor& eps) {
    require_same_shape(z0, eps, "forward_noise");
    const double a = s.alpha(t);
    const double sg = s.sigma(t);
    Tensor zt(z0.shape());
    for (std::size_t i = 0; i < zt.size(); ++i) zt[i] = a * z0[i] + sg * eps[i];
    return zt;
}

double log_snr_slope(const NoiseSchedule& s, int t) {
    if (t == 0) throw std::out_of_range("slope undefined at first step");
    return s.lambda(t) - s.lambda(t - 1);
}

double beta_weight(const NoiseSchedule& s, double beta, int t) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    return (-0.5 * beta) * log_snr_slope(s, t);
}

}  // namespace apo
