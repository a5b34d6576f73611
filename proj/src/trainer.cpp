#include "apo/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "apo/adam.hpp"
#include "apo/errors.hpp"
#include "apo/rng.hpp"

namespace apo {

void TrainConfig::validate() const {
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(condition_dropout >= 0.0 && condition_dropout < 1.0)) throw ConfigError("condition_dropout must lie in [0, 1)");
    if (k_min < 1 || k_max < k_min) throw ConfigError("gate bounds require 1 <= k_min <= k_max");
    if (!(data_std >= 0.0)) throw ConfigError("data_std must be >= 0");
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "step,t,delta,beta_t,loss,pref_prob\n" << std::setprecision(17);
    for (const auto& r : records)
        os << r.step << ',' << r.t << ',' << r.delta << ',' << r.beta_t << ',' << r.loss << ',' << r.pref_prob << '\n';
}

namespace {

int draw_timestep(CounterRng& rng, int T) { return 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(T))); }

void require_finite(double v) {
    if (!std::isfinite(v)) throw DivergenceError("diverged");
}

}  // namespace

PretrainResult pretrain_reference(std::span<const PretrainSample> data, const NoiseSchedule& schedule,
                                  const TrainConfig& config, const DenoiserDims& dims) {
    config.validate();
    if (data.empty()) throw std::invalid_argument("pretrain_reference: empty dataset");
    for (const auto& s : data) {
        if (s.z0.size() != dims.latent_dim) throw std::invalid_argument("pretrain_reference: latent size mismatch");
        if (s.tokens.empty()) throw std::invalid_argument("pretrain_reference: sample without tokens");
    }
    PretrainResult out{Denoiser::init(dims, config.seed), {}};
    if (config.data_std > 0.0) out.model.attach_schedule(schedule, config.data_std);
    auto params = out.model.parameters();
    AdamState adam(AdamConfig{config.learning_rate}, params);
    const std::size_t n = config.batch_size, d = dims.latent_dim;
    for (int step = 0; step < config.steps; ++step) {
        CounterRng rng(config.seed, derive_stream(streams::kPretrain, static_cast<std::uint64_t>(step)));
        Tensor zt({n, d}), eps_all({n, d});
        std::vector<std::size_t> tokens(n);
        std::vector<int> ts(n);
        for (std::size_t b = 0; b < n; ++b) {
            const auto& s = data[rng.uniform_int(data.size())];
            const std::size_t token = s.tokens[rng.uniform_int(s.tokens.size())];
            tokens[b] = rng.uniform() <= config.condition_dropout ? kNullToken : token;
            ts[b] = draw_timestep(rng, schedule.steps());
            const Tensor eps = rng.gaussian({d});
            const Tensor z = forward_noise(schedule, s.z0, ts[b], eps);
            std::copy(z.data().begin(), z.data().end(), zt.data().begin() + static_cast<std::ptrdiff_t>(b * d));
            std::copy(eps.data().begin(), eps.data().end(), eps_all.data().begin() + static_cast<std::ptrdiff_t>(b * d));
        }
        double loss_value = 0.0;
        try {
            Graph g;
            Var pred = denoiser_forward(g, out.model, nullptr, g.constant(std::move(zt)), tokens, ts,
                                        TrainableSet{&out.model, nullptr});
            Var loss = sd_loss_graph(pred, eps_all);
            loss_value = loss.value().item();
            require_finite(loss_value);
            g.backward(loss);
            adam.step(params);
        } catch (const std::domain_error&) {
            throw DivergenceError("diverged");
        }
        for (auto* p : params) p->zero_grad();
        out.log.records.push_back({step, ts[0], 0.0, 0.0, loss_value, 0.0});
    }
    return out;
}

AlignResult align(const Denoiser& reference, std::span<const LatentSample> anomalies, const NoiseSchedule& schedule,
                  const TrainConfig& config) {
    config.validate();
    if (anomalies.empty()) throw std::invalid_argument("align: empty anomaly set");
    const TemporalGate gate{config.k_min, config.k_max, schedule.steps()};
    gate.validate();
    AlignResult out{LoraStack::init(reference, gate, config.seed), {}};
    auto params = out.adapters.parameters();
    AdamState adam(AdamConfig{config.learning_rate}, params);
    const std::size_t d = reference.dims.latent_dim;
    for (int step = 0; step < config.steps; ++step) {
        CounterRng rng(config.seed, derive_stream(streams::kAlign, static_cast<std::uint64_t>(step)));
        const auto& s = anomalies[rng.uniform_int(anomalies.size())];
        if (s.z0.size() != d) throw std::invalid_argument("align: latent size mismatch");
        const int t = draw_timestep(rng, schedule.steps());
        const Tensor eps = rng.gaussian({d});
        const Tensor zt = forward_noise(schedule, s.z0, t, eps);
        const Tensor eps_ref = predict_noise(reference, nullptr, zt, s.token, t);
        const double beta_t = beta_weight(schedule, config.beta, t);
        TrainRecord rec{step, t, 0.0, beta_t, 0.0, 0.0};
        try {
            Graph g;
            Var pred = denoiser_forward(g, reference, &out.adapters, g.constant(zt.reshaped({1, d})), {s.token}, {t},
                                        TrainableSet{nullptr, &out.adapters});
            Var delta = deviation_graph(pred, eps_ref.reshaped({1, d}), eps.reshaped({1, d}));
            Var loss = apo_loss_graph(delta, beta_t);
            rec.delta = delta.value().item();
            rec.loss = loss.value().item();
            require_finite(rec.loss);
            g.backward(loss);
            const auto masks = out.adapters.active_masks(t);
            std::vector<const Tensor*> mask_ptrs;
            for (const auto& m : masks) mask_ptrs.push_back(&m);
            adam.step(params, mask_ptrs);
        } catch (const std::domain_error&) {
            throw DivergenceError("diverged");
        }
        for (auto* p : params) p->zero_grad();
        rec.pref_prob = bt_preference_prob(rec.delta, beta_t);
        out.log.records.push_back(rec);
    }
    return out;
}

AlignmentStats evaluate_alignment(const Denoiser& reference, const LoraStack& adapters,
                                  std::span<const LatentSample> anomalies, const NoiseSchedule& schedule, double beta,
                                  std::size_t draws, std::uint64_t seed) {
    if (anomalies.empty()) throw std::invalid_argument("evaluate_alignment: empty anomaly set");
    if (draws == 0) throw std::invalid_argument("evaluate_alignment: zero draws");
    AlignmentStats st;
    st.draws = draws;
    for (std::size_t k = 0; k < draws; ++k) {
        CounterRng rng(seed, derive_stream(streams::kEvalDraws, k));
        const auto& s = anomalies[k % anomalies.size()];
        const int t = draw_timestep(rng, schedule.steps());
        const Tensor eps = rng.gaussian(s.z0.shape());
        const Tensor zt = forward_noise(schedule, s.z0, t, eps);
        const double delta = alignment_deviation(predict_noise(reference, &adapters, zt, s.token, t),
                                                 predict_noise(reference, nullptr, zt, s.token, t), eps);
        const double beta_t = beta_weight(schedule, beta, t);
        st.mean_delta += delta;
        st.mean_abs_delta += std::abs(delta);
        st.mean_loss += apo_loss(delta, beta_t);
        st.mean_pref_prob += bt_preference_prob(delta, beta_t);
    }
    const double n = static_cast<double>(draws);
    st.mean_delta /= n;
    st.mean_abs_delta /= n;
    st.mean_loss /= n;
    st.mean_pref_prob /= n;
    return st;
}

std::vector<SweepRow> beta_sweep(const Denoiser& reference, std::span<const LatentSample> anomalies,
                                 const NoiseSchedule& schedule, const TrainConfig& config,
                                 std::span<const double> betas, std::size_t eval_draws) {
    if (betas.empty()) throw std::invalid_argument("beta_sweep: no betas");
    for (const double b : betas)
        if (!(b > 0.0)) throw ConfigError("beta_sweep: betas must be > 0");
    std::vector<SweepRow> rows;
    for (const double b : betas) {
        TrainConfig cfg = config;
        cfg.beta = b;
        AlignResult res = align(reference, anomalies, schedule, cfg);
        const AlignmentStats st = evaluate_alignment(reference, res.adapters, anomalies, schedule, b, eval_draws,
                                                     config.seed);
        SweepRow row;
        row.beta = b;
        row.final_mean_delta = st.mean_delta;
        row.final_mean_abs_delta = st.mean_abs_delta;
        row.final_loss = st.mean_loss;
        row.final_pref_prob = st.mean_pref_prob;
        row.log = std::move(res.log);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "beta,final_mean_delta,final_mean_abs_delta,final_loss,final_pref_prob\n" << std::setprecision(17);
    for (const auto& r : rows)
        os << r.beta << ',' << r.final_mean_delta << ',' << r.final_mean_abs_delta << ',' << r.final_loss << ','
           << r.final_pref_prob << '\n';
}

}  // namespace apo
