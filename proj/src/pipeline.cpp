#include "apo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "apo/dataset.hpp"
#include "apo/denoiser.hpp"
#include "apo/errors.hpp"
#include "apo/eval.hpp"
#include "apo/image_io.hpp"
#include "apo/localization.hpp"
#include "apo/sampler.hpp"
#include "apo/serialize.hpp"
#include "apo/trainer.hpp"

namespace apo {

namespace fs = std::filesystem;

namespace {

fs::path require_path(const std::string& value, const char* key) {
    if (value.empty()) throw ConfigError(std::string("missing required path '") + key + "'");
    return fs::path(value);
}

void require_exists(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifactError("missing input artifact: " + p.string());
}

NoiseSchedule schedule_for(const RunConfig& cfg) { return build_schedule(cfg.T, cfg.schedule); }

void check_header(const CheckpointHeader& h, const RunConfig& cfg, const fs::path& path) {
    if (static_cast<int>(h.T) != cfg.T || h.schedule_kind != cfg.schedule)
        throw ConfigError("schedule in " + path.string() + " does not match the configured schedule");
}

ReferenceCheckpoint load_reference_for(const RunConfig& cfg) {
    const fs::path p = require_path(cfg.reference, "reference");
    require_exists(p);
    ReferenceCheckpoint ck = load_reference(p);
    check_header(ck.header, cfg, p);
    return ck;
}

AdapterCheckpoint load_adapters_for(const RunConfig& cfg) {
    const fs::path p = require_path(cfg.adapters, "adapters");
    require_exists(p);
    AdapterCheckpoint ck = load_adapters(p);
    check_header(ck.header, cfg, p);
    return ck;
}

Dataset load_dataset_for(const RunConfig& cfg) {
    const fs::path root = require_path(cfg.data, "data");
    require_exists(root / "manifest.json");
    return load_dataset(root);
}

std::vector<LatentSample> reference_latents(const Dataset& ds) {
    std::vector<LatentSample> out;
    for (const auto& s : ds.anomalies)
        if (s.split == Split::reference) out.push_back({encode_image(s.image), s.token});
    if (out.empty()) throw MissingArtifactError("dataset has no reference anomalies");
    return out;
}

std::string run_name(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "run_%03zu", k);
    return buf;
}

void write_map(const fs::path& stem, const AnomalyMap& map) {
    save_tensor(stem.string() + ".M.apot", map.m);
    save_tensor(stem.string() + ".P.apot", map.p);
    const double hi = *std::max_element(map.m.values().begin(), map.m.values().end());
    write_pgm(stem.string() + ".M.pgm", hi > 0.0 ? (1.0 / hi) * map.m : map.m);
    write_pgm(stem.string() + ".P.pgm", map.p);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void run_gen_data(const RunConfig& cfg) {
    const fs::path out(cfg.out);
    write_dataset(out, build_dataset(cfg.dataset_config()));
    write_run_json(out, cfg);
}

void run_pretrain(const RunConfig& cfg) {
    const Dataset ds = load_dataset_for(cfg);
    std::vector<PretrainSample> data;
    for (const auto& [ck, s] : ds.normals) data.push_back({encode_image(s.image), category_tokens(ck)});
    if (data.empty()) throw MissingArtifactError("dataset has no normal images");
    const NoiseSchedule sched = schedule_for(cfg);
    PretrainResult res = pretrain_reference(data, sched, cfg.pretrain_config(), cfg.dims());
    const fs::path out(cfg.out);
    fs::create_directories(out);
    save_reference(out / "reference.apoc", res.model, cfg.schedule, cfg.T);
    res.log.write_csv(out / "pretrain_log.csv");
    write_run_json(out, cfg);
}

void run_align(const RunConfig& cfg) {
    const Dataset ds = load_dataset_for(cfg);
    const ReferenceCheckpoint ref = load_reference_for(cfg);
    const auto anomalies = reference_latents(ds);
    const NoiseSchedule sched = schedule_for(cfg);
    AlignResult res = align(ref.model, anomalies, sched, cfg.align_config());
    const fs::path out(cfg.out);
    fs::create_directories(out);
    save_adapters(out / "adapters.apoc", res.adapters, ref.model.dims, cfg.schedule);
    res.log.write_csv(out / "align_log.csv");
    const AlignmentStats st =
        evaluate_alignment(ref.model, res.adapters, anomalies, sched, cfg.beta, cfg.align_eval_draws, cfg.seed);
    nlohmann::json stats = {{"mean_delta", st.mean_delta},       {"mean_abs_delta", st.mean_abs_delta},
                            {"mean_loss", st.mean_loss},         {"mean_pref_prob", st.mean_pref_prob},
                            {"draws", st.draws},                 {"first_loss", res.log.records.empty() ? 0.0 : res.log.records.front().loss}};
    std::ofstream(out / "alignment_stats.json") << stats.dump(2) << '\n';
    write_run_json(out, cfg);
}

void run_sample(const RunConfig& cfg) {
    const ReferenceCheckpoint ref = load_reference_for(cfg);
    const AdapterCheckpoint ad = load_adapters_for(cfg);
    const NoiseSchedule sched = schedule_for(cfg);
    const fs::path out(cfg.out);
    for (const std::size_t token : cfg.resolved_conditions()) {
        for (std::size_t k = 0; k < cfg.samples_per_condition; ++k) {
            const SampleRun run = sample(ref.model, &ad.adapters, token, cfg.guidance(), sched, cfg.seed, k);
            save_sample_run(out / condition_slug(token) / run_name(k), run, kImageSide, kImageSide);
        }
    }
    write_run_json(out, cfg);
}

void run_localize(const RunConfig& cfg) {
    const fs::path out(cfg.out);
    const NoiseSchedule sched = schedule_for(cfg);
    if (cfg.localize_source == "eval") {
        const Dataset ds = load_dataset_for(cfg);
        const ReferenceCheckpoint ref = load_reference_for(cfg);
        const AdapterCheckpoint ad = load_adapters_for(cfg);
        std::size_t image_index = 0;
        for (const auto& s : ds.anomalies) {
            if (s.split != Split::eval) continue;
            const Tensor z0 = encode_image(s.image);
            Tensor m({kImageSide, kImageSide});
            for (std::size_t r = 0; r < cfg.localize_traces; ++r) {
                const std::uint64_t trace_index = image_index * cfg.localize_traces + r;
                const SampleRun run =
                    trace_latent(ref.model, ad.adapters, z0, s.token, cfg.guidance(), sched, cfg.seed, trace_index);
                axpy_inplace(m, 1.0 / static_cast<double>(cfg.localize_traces),
                             accumulate_map(run, ad.adapters.gate, kImageSide, kImageSide));
            }
            AnomalyMap map{m, normalize_and_smooth(m), to_string(s.category) + "/" + s.id};
            ++image_index;
            write_map(out / to_string(s.category) / s.id, map);
        }
    } else {
        const fs::path root = require_path(cfg.samples, "samples");
        require_exists(root);
        std::optional<ReferenceCheckpoint> ref;
        const AdapterCheckpoint ad = load_adapters_for(cfg);
        if (cfg.localize_unit_align) ref = load_reference_for(cfg);
        std::vector<fs::path> run_dirs;
        for (const auto& cond : fs::directory_iterator(root)) {
            if (!cond.is_directory()) continue;
            for (const auto& r : fs::directory_iterator(cond.path()))
                if (fs::exists(r.path() / "run_meta.json")) run_dirs.push_back(r.path());
        }
        std::sort(run_dirs.begin(), run_dirs.end());
        for (const auto& dir : run_dirs) {
            SampleRun run = load_sample_run(dir);
            if (cfg.localize_unit_align) {
                GuidanceConfig g = cfg.guidance();
                g.s_align = 1.0;
                run = sample(ref->model, &ad.adapters, run.token, g, sched, run.seed, run.run_index);
            }
            const std::string id = dir.parent_path().filename().string() + "/" + dir.filename().string();
            write_map(out / dir.parent_path().filename() / dir.filename(),
                      localize(run, ad.adapters.gate, kImageSide, kImageSide, id));
        }
    }
    write_run_json(out, cfg);
}

void run_eval(const RunConfig& cfg) {
    const Dataset ds = load_dataset_for(cfg);
    const fs::path maps = require_path(cfg.maps, "maps");
    require_exists(maps);
    std::map<std::size_t, ScoredPixels> pooled;
    std::map<std::size_t, std::size_t> n_eval;
    std::map<std::size_t, std::vector<Tensor>> reference_images;
    for (const auto& s : ds.anomalies) {
        if (s.split == Split::reference) {
            reference_images[s.token].push_back(s.image);
            continue;
        }
        const fs::path p = maps / to_string(s.category) / (s.id + ".P.apot");
        require_exists(p);
        pooled[s.token].append(load_tensor(p), s.mask);
        ++n_eval[s.token];
    }
    std::map<std::size_t, std::vector<Tensor>> generated;
    if (!cfg.samples.empty()) {
        const fs::path root(cfg.samples);
        require_exists(root);
        for (std::size_t token = 1; token <= 9; ++token) {
            const fs::path cond = root / condition_slug(token);
            if (!fs::exists(cond)) continue;
            std::vector<fs::path> runs;
            for (const auto& r : fs::directory_iterator(cond))
                if (fs::exists(r.path() / "final.pgm")) runs.push_back(r.path());
            std::sort(runs.begin(), runs.end());
            for (const auto& r : runs) generated[token].push_back(read_pgm(r / "final.pgm"));
        }
    }
    const fs::path out(cfg.out);
    fs::create_directories(out);
    std::vector<MetricsRow> rows;
    std::ofstream div(out / "diversity.csv");
    div << "category,defect,generated_diversity_proxy,reference_diversity_proxy,n_generated,n_reference\n"
        << std::setprecision(17);
    double sum_auroc = 0.0, sum_gen_div = 0.0, sum_ref_div = 0.0;
    std::size_t n_div = 0;
    for (auto& [token, sp] : pooled) {
        const auto [ck, dk] = token_condition(token);
        MetricsRow r;
        r.category = to_string(ck);
        r.defect = to_string(dk);
        r.auroc = auroc(sp);
        r.ap = average_precision(sp);
        r.f1_max = f1_max(sp);
        r.n_eval = n_eval[token];
        r.diversity_proxy = std::numeric_limits<double>::quiet_NaN();
        const double ref_div = reference_images[token].size() >= 2 ? group_diversity(reference_images[token])
                                                                    : std::numeric_limits<double>::quiet_NaN();
        if (generated[token].size() >= 2) {
            r.diversity_proxy = group_diversity(generated[token]);
            sum_gen_div += r.diversity_proxy;
            sum_ref_div += ref_div;
            ++n_div;
        }
        div << r.category << ',' << r.defect << ',';
        if (std::isfinite(r.diversity_proxy)) div << r.diversity_proxy;
        div << ',' << ref_div << ',' << generated[token].size() << ',' << reference_images[token].size() << '\n';
        sum_auroc += r.auroc;
        rows.push_back(r);
    }
    write_metrics_csv(out / "metrics.csv", rows);
    nlohmann::json summary = {{"mean_auroc", rows.empty() ? 0.0 : sum_auroc / static_cast<double>(rows.size())},
                              {"conditions", rows.size()}};
    if (n_div > 0) {
        summary["mean_generated_diversity_proxy"] = sum_gen_div / static_cast<double>(n_div);
        summary["mean_reference_diversity_proxy"] = sum_ref_div / static_cast<double>(n_div);
    }
    std::ofstream(out / "summary.json") << summary.dump(2) << '\n';
    write_run_json(out, cfg);
}

void run_inspect_schedule(const RunConfig& cfg) {
    const NoiseSchedule s = schedule_for(cfg);
    const fs::path out(cfg.out);
    fs::create_directories(out);
    std::ofstream os(out / "schedule.csv");
    os << "t,alpha,sigma,lambda,lambda_prime,beta_t,k\n" << std::setprecision(17);
    const TemporalGate gate{cfg.kmin, cfg.kmax, cfg.T};
    for (int t = 0; t <= s.steps(); ++t) {
        os << t << ',' << s.alpha(t) << ',' << s.sigma(t) << ',' << s.lambda(t) << ',';
        if (t >= 1) os << log_snr_slope(s, t) << ',' << beta_weight(s, cfg.beta, t);
        else os << ',';
        os << ',' << gate_dims(gate, t) << '\n';
    }
    write_run_json(out, cfg);
}

void run_beta_sweep(const RunConfig& cfg) {
    const Dataset ds = load_dataset_for(cfg);
    const ReferenceCheckpoint ref = load_reference_for(cfg);
    const auto anomalies = reference_latents(ds);
    const NoiseSchedule sched = schedule_for(cfg);
    const fs::path out(cfg.out);
    fs::create_directories(out);
    std::ofstream all(out / "beta_sweep.csv");
    all << "seed,beta,final_mean_delta,final_mean_abs_delta,final_loss,final_pref_prob\n" << std::setprecision(17);
    for (const auto seed : cfg.sweep_seeds) {
        TrainConfig tc = cfg.align_config();
        tc.seed = seed;
        const auto rows = beta_sweep(ref.model, anomalies, sched, tc, cfg.betas, cfg.align_eval_draws);
        for (const auto& r : rows) {
            all << seed << ',' << r.beta << ',' << r.final_mean_delta << ',' << r.final_mean_abs_delta << ','
                << r.final_loss << ',' << r.final_pref_prob << '\n';
            r.log.write_csv(out / ("seed" + std::to_string(seed)) / ("beta_" + fmt(r.beta) + "_log.csv"));
        }
    }
    write_run_json(out, cfg);
}

void run_command(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.command == "gen-data") return run_gen_data(cfg);
    if (cfg.command == "pretrain") return run_pretrain(cfg);
    if (cfg.command == "align") return run_align(cfg);
    if (cfg.command == "sample") return run_sample(cfg);
    if (cfg.command == "localize") return run_localize(cfg);
    if (cfg.command == "eval") return run_eval(cfg);
    if (cfg.command == "inspect-schedule") return run_inspect_schedule(cfg);
    if (cfg.command == "beta-sweep") return run_beta_sweep(cfg);
    throw ConfigError("unknown command: " + cfg.command);
}

}  // namespace apo
