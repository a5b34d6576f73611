#include "apo/sampler.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "apo/errors.hpp"
#include "apo/image_io.hpp"
#include "apo/rng.hpp"
#include "apo/serialize.hpp"

namespace apo {

void GuidanceConfig::validate() const {
    if (steps < 1) throw ConfigError("guidance steps must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
    if (!std::isfinite(s_text) || !std::isfinite(s_align)) throw ConfigError("guidance scales must be finite");
}

Tensor combine_guidance(const GuidanceBranches& b, double s_text, double s_align) {
    require_same_shape(b.uncond, b.cond, "combine_guidance");
    require_same_shape(b.cond, b.policy, "combine_guidance");
    const double wu = 1.0 - s_text, wc = s_text - s_align, wp = s_align;
    Tensor out(b.cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = wu * b.uncond[i] + wc * b.cond[i] + wp * b.policy[i];
    return out;
}

GuidanceBranches guidance_branches(const Denoiser& reference, const LoraStack* adapters, const Tensor& z_t,
                                   std::size_t token, int t) {
    if (token == kNullToken) throw std::invalid_argument("guided_eps requires a non-null condition");
    GuidanceBranches b;
    b.uncond = predict_noise(reference, nullptr, z_t, kNullToken, t);
    b.cond = predict_noise(reference, nullptr, z_t, token, t);
    b.policy = adapters ? predict_noise(reference, adapters, z_t, token, t) : b.cond;
    return b;
}

GuidedPrediction guided_eps(const Denoiser& reference, const LoraStack* adapters, const Tensor& z_t,
                            std::size_t token, int t, const GuidanceConfig& guidance) {
    const GuidanceBranches b = guidance_branches(reference, adapters, z_t, token, t);
    GuidedPrediction out;
    out.eps_hat = combine_guidance(b, guidance.s_text, guidance.s_align);
    out.delta_align = b.policy - b.cond;
    return out;
}

Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 double eta, const Tensor* noise) {
    if (t_prev >= t) throw std::invalid_argument("ddim_step requires t_prev < t");
    if (t_prev < 0) throw std::out_of_range("ddim_step: negative t_prev");
    require_same_shape(z_t, eps_hat, "ddim_step");
    const double a_t = schedule.alpha(t), s_t = schedule.sigma(t);
    Tensor x0(z_t.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = (z_t[i] - s_t * eps_hat[i]) / a_t;
    if (t_prev == 0) return x0;
    const double a_p = schedule.alpha(t_prev), s_p = schedule.sigma(t_prev);
    double c = 0.0;
    if (eta > 0.0) {
        c = eta * std::sqrt((s_p * s_p) / (s_t * s_t) * (1.0 - (a_t * a_t) / (a_p * a_p)));
        if (!noise) throw std::invalid_argument("ddim_step: eta > 0 requires noise");
        require_same_shape(z_t, *noise, "ddim_step");
    }
    const double dir = std::sqrt(std::max(0.0, s_p * s_p - c * c));
    Tensor out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a_p * x0[i] + dir * eps_hat[i];
        if (c > 0.0) out[i] += c * (*noise)[i];
    }
    return out;
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1) throw std::invalid_argument("ddim_timesteps: steps must be >= 1");
    if (steps > T) throw std::invalid_argument("ddim_timesteps: more steps than schedule levels");
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        ts[static_cast<std::size_t>(i)] = T - static_cast<int>(std::lround(frac * (T - 1)));
    }
    return ts;
}

namespace {

std::uint64_t run_stream(std::uint64_t tag, std::size_t token, std::uint64_t run_index) {
    return derive_stream(tag, token, run_index);
}

}  // namespace

SampleRun sample(const Denoiser& reference, const LoraStack* adapters, std::size_t token,
                 const GuidanceConfig& guidance, const NoiseSchedule& schedule, std::uint64_t seed,
                 std::uint64_t run_index) {
    guidance.validate();
    SampleRun run;
    run.seed = seed;
    run.run_index = run_index;
    run.token = token;
    run.timesteps = ddim_timesteps(schedule.steps(), guidance.steps);
    const std::uint64_t stream = run_stream(streams::kSample, token, run_index);
    Tensor z = seeded_gaussian({reference.dims.latent_dim}, seed, stream);
    for (std::size_t s = 0; s < run.timesteps.size(); ++s) {
        const int t = run.timesteps[s];
        const int t_prev = s + 1 < run.timesteps.size() ? run.timesteps[s + 1] : 0;
        run.trajectory.push_back(z);
        GuidedPrediction g = guided_eps(reference, adapters, z, token, t, guidance);
        Tensor noise;
        if (guidance.eta > 0.0) noise = seeded_gaussian(z.shape(), seed, derive_stream(stream, s + 1));
        z = ddim_step(schedule, z, g.eps_hat, t, t_prev, guidance.eta, guidance.eta > 0.0 ? &noise : nullptr);
        run.delta_align.push_back(std::move(g.delta_align));
    }
    run.trajectory.push_back(z);
    run.final_latent = z;
    return run;
}

SampleRun trace_latent(const Denoiser& reference, const LoraStack& adapters, const Tensor& z0, std::size_t token,
                       const GuidanceConfig& guidance, const NoiseSchedule& schedule, std::uint64_t seed,
                       std::uint64_t run_index) {
    guidance.validate();
    if (token == kNullToken) throw std::invalid_argument("trace_latent requires a non-null condition");
    SampleRun run;
    run.seed = seed;
    run.run_index = run_index;
    run.token = token;
    run.timesteps = ddim_timesteps(schedule.steps(), guidance.steps);
    const Tensor eps = seeded_gaussian(z0.shape(), seed, run_stream(streams::kLocalize, token, run_index));
    for (const int t : run.timesteps) {
        Tensor zt = forward_noise(schedule, z0, t, eps);
        const Tensor cond = predict_noise(reference, nullptr, zt, token, t);
        const Tensor pol = predict_noise(reference, &adapters, zt, token, t);
        run.delta_align.push_back(pol - cond);
        run.trajectory.push_back(std::move(zt));
    }
    run.trajectory.push_back(z0);
    run.final_latent = z0;
    return run;
}

double guided_log_density_check(const NoiseSchedule& schedule, const Tensor& z_t, const Tensor& z_prev, int t,
                                const GuidanceConfig& guidance, const GuidanceBranches& branches) {
    if (!(guidance.eta > 0.0)) throw std::invalid_argument("densities degenerate");
    if (t < 1) throw std::out_of_range("guided_log_density_check requires t >= 1");
    require_same_shape(z_t, z_prev, "guided_log_density_check");
    const double ab_t = schedule.alpha_bar(t), ab_p = schedule.alpha_bar(t - 1);
    const double var = guidance.eta * guidance.eta * (1.0 - ab_p) / (1.0 - ab_t) * schedule.step_beta(t);
    if (!(var > 0.0)) throw std::invalid_argument("densities degenerate");

    const Tensor mu_u = posterior_means(schedule, z_t, branches.uncond, t);
    const Tensor mu_c = posterior_means(schedule, z_t, branches.cond, t);
    const Tensor mu_p = posterior_means(schedule, z_t, branches.policy, t);
    const Tensor eps_g = combine_guidance(branches, guidance.s_text, guidance.s_align);
    const Tensor mu_g = posterior_means(schedule, z_t, eps_g, t);
    const double log_norm = -0.5 * static_cast<double>(z_t.size()) * std::log(2.0 * std::numbers::pi * var);
    auto log_n = [&](const Tensor& x, const Tensor& mu) { return log_norm - squared_distance(x, mu) / (2.0 * var); };
    auto residual = [&](const Tensor& x) {
        const double lu = log_n(x, mu_u), lc = log_n(x, mu_c), lp = log_n(x, mu_p);
        const double combined = lu + guidance.s_text * (lc - lu) + guidance.s_align * (lp - lc);
        return log_n(x, mu_g) - combined;
    };
    return residual(z_prev) - residual(mu_g);
}

void save_sample_run(const std::filesystem::path& dir, const SampleRun& run, std::size_t height, std::size_t width) {
    if (run.delta_align.empty()) throw std::invalid_argument("save_sample_run: empty run");
    std::filesystem::create_directories(dir);
    write_pgm(dir / "final.pgm", decode_latent(run.final_latent, height, width));
    save_tensor(dir / "trajectory.apot", stack(run.trajectory));
    save_tensor(dir / "delta_align.apot", stack(run.delta_align));
    {
        std::ofstream csv(dir / "delta_align_norms.csv");
        csv << "step,t,norm\n" << std::setprecision(17);
        for (std::size_t s = 0; s < run.delta_align.size(); ++s)
            csv << s << ',' << run.timesteps[s] << ',' << std::sqrt(squared_norm(run.delta_align[s])) << '\n';
    }
    nlohmann::json meta;
    meta["seed"] = run.seed;
    meta["run_index"] = run.run_index;
    meta["token"] = run.token;
    meta["timesteps"] = run.timesteps;
    std::ofstream(dir / "run_meta.json") << meta.dump(2) << '\n';
}

SampleRun load_sample_run(const std::filesystem::path& dir) {
    const auto meta_path = dir / "run_meta.json";
    std::ifstream is(meta_path);
    if (!is) throw MissingArtifactError("missing sample run: " + meta_path.string());
    const nlohmann::json meta = nlohmann::json::parse(is);
    SampleRun run;
    run.seed = meta.at("seed").get<std::uint64_t>();
    run.run_index = meta.at("run_index").get<std::uint64_t>();
    run.token = meta.at("token").get<std::size_t>();
    run.timesteps = meta.at("timesteps").get<std::vector<int>>();
    const Tensor traj = load_tensor(dir / "trajectory.apot");
    const Tensor delta = load_tensor(dir / "delta_align.apot");
    if (traj.rank() != 2 || delta.rank() != 2 || delta.dim(0) != run.timesteps.size() ||
        traj.dim(0) != delta.dim(0) + 1)
        throw std::runtime_error("inconsistent sample run in " + dir.string());
    for (std::size_t i = 0; i < traj.dim(0); ++i) run.trajectory.push_back(row(traj, i));
    for (std::size_t i = 0; i < delta.dim(0); ++i) run.delta_align.push_back(row(delta, i));
    run.final_latent = run.trajectory.back();
    return run;
}

}  // namespace apo
