#include "apo/config.hpp"

#include <fstream>
#include <set>

#include "apo/errors.hpp"

namespace apo {

namespace {

// Visits every serialized field as (key, reference). ScheduleKind is handled by the callers.
template <class Cfg, class F>
void for_each_field(Cfg& c, F&& f) {
    f("command", c.command);
    f("preset", c.preset);
    f("seed", c.seed);
    f("out", c.out);
    f("data", c.data);
    f("reference", c.reference);
    f("adapters", c.adapters);
    f("samples", c.samples);
    f("maps", c.maps);
    f("schedule", c.schedule);
    f("T", c.T);
    f("hidden", c.hidden);
    f("layers", c.layers);
    f("time_dim", c.time_dim);
    f("normal_per_category", c.normal_per_category);
    f("anomalies_per_condition", c.anomalies_per_condition);
    f("reference_fraction", c.reference_fraction);
    f("placement_jitter", c.placement_jitter);
    f("texture_jitter", c.texture_jitter);
    f("pretrain_steps", c.pretrain_steps);
    f("pretrain_batch", c.pretrain_batch);
    f("pretrain_lr", c.pretrain_lr);
    f("condition_dropout", c.condition_dropout);
    f("data_std", c.data_std);
    f("align_steps", c.align_steps);
    f("align_lr", c.align_lr);
    f("beta", c.beta);
    f("kmin", c.kmin);
    f("kmax", c.kmax);
    f("align_eval_draws", c.align_eval_draws);
    f("s_text", c.s_text);
    f("s_align", c.s_align);
    f("steps", c.steps);
    f("eta", c.eta);
    f("samples_per_condition", c.samples_per_condition);
    f("conditions", c.conditions);
    f("localize_source", c.localize_source);
    f("localize_unit_align", c.localize_unit_align);
    f("localize_traces", c.localize_traces);
    f("betas", c.betas);
    f("sweep_seeds", c.sweep_seeds);
}

template <class T>
void assign(const nlohmann::json& j, const char* key, T& field) {
    try {
        if constexpr (std::is_same_v<T, ScheduleKind>) {
            field = parse_schedule_kind(j.get<std::string>());
        } else if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!j.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
            field = j.get<T>();
        } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!j.is_number_integer()) throw ConfigError("expected an integer");
            field = j.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!j.is_number()) throw ConfigError("expected a number");
            field = j.get<T>();
        } else {
            field = j.get<T>();
        }
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    if (preset != "desk" && preset != "as-paper") throw ConfigError("preset must be 'desk' or 'as-paper'");
    if (T < 2) throw ConfigError("T must be >= 2");
    if (hidden < 1 || layers < 1 || time_dim < 2 || time_dim % 2 != 0)
        throw ConfigError("model dims: hidden, layers >= 1 and an even time_dim >= 2 required");
    if (normal_per_category < 1) throw ConfigError("normal_per_category must be >= 1");
    if (anomalies_per_condition < 3) throw ConfigError("anomalies_per_condition must be >= 3");
    if (!(reference_fraction > 0.0 && reference_fraction < 1.0)) throw ConfigError("reference_fraction must lie in (0, 1)");
    if (!(placement_jitter >= 0.0)) throw ConfigError("placement_jitter must be >= 0");
    if (!(texture_jitter >= 0.0 && texture_jitter <= 1.0)) throw ConfigError("texture_jitter must lie in [0, 1]");
    pretrain_config().validate();
    align_config().validate();
    if (kmax > static_cast<int>(hidden)) throw ConfigError("kmax cannot exceed the layer width");
    guidance().validate();
    if (steps > T) throw ConfigError("steps cannot exceed T");
    if (samples_per_condition < 1) throw ConfigError("samples_per_condition must be >= 1");
    for (const auto c : conditions)
        if (c < 1 || c > 9) throw ConfigError("conditions must be tokens in 1..9");
    if (localize_source != "eval" && localize_source != "samples")
        throw ConfigError("localize_source must be 'eval' or 'samples'");
    if (localize_traces < 1) throw ConfigError("localize_traces must be >= 1");
    if (align_eval_draws < 1) throw ConfigError("align_eval_draws must be >= 1");
    if (betas.empty()) throw ConfigError("betas must be non-empty");
    for (const double b : betas)
        if (!(b > 0.0)) throw ConfigError("betas must be > 0");
    if (sweep_seeds.empty()) throw ConfigError("sweep_seeds must be non-empty");
}

TrainConfig RunConfig::pretrain_config() const {
    TrainConfig c;
    c.beta = beta;
    c.learning_rate = pretrain_lr;
    c.steps = pretrain_steps;
    c.batch_size = pretrain_batch;
    c.seed = seed;
    c.condition_dropout = condition_dropout;
    c.data_std = data_std;
    c.k_min = kmin;
    c.k_max = kmax;
    return c;
}

TrainConfig RunConfig::align_config() const {
    TrainConfig c = pretrain_config();
    c.learning_rate = align_lr;
    c.steps = align_steps;
    c.batch_size = 1;
    return c;
}

GuidanceConfig RunConfig::guidance() const { return GuidanceConfig{s_text, s_align, steps, eta}; }

DatasetConfig RunConfig::dataset_config() const {
    DatasetConfig c;
    c.seed = seed;
    c.normal_per_category = normal_per_category;
    c.anomalies_per_condition = anomalies_per_condition;
    c.reference_fraction = reference_fraction;
    c.placement_jitter = placement_jitter;
    c.texture_jitter = texture_jitter;
    return c;
}

DenoiserDims RunConfig::dims() const {
    DenoiserDims d;
    d.hidden = hidden;
    d.n_layers = layers;
    d.time_dim = time_dim;
    return d;
}

std::vector<std::size_t> RunConfig::resolved_conditions() const {
    if (!conditions.empty()) return conditions;
    std::vector<std::size_t> all;
    for (std::size_t t = 1; t <= 9; ++t) all.push_back(t);
    return all;
}

void apply_preset(RunConfig& cfg, const std::string& preset) {
    cfg.preset = preset;
    if (preset == "as-paper") {
        cfg.s_text = 6.5;
        cfg.s_align = 3.0;
        cfg.align_lr = 5e-5;
        cfg.beta = 1000.0;
    } else if (preset != "desk") {
        throw ConfigError("preset must be 'desk' or 'as-paper'");
    }
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for_each_field(cfg, [&](const char* key, const auto& field) {
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, ScheduleKind>) {
            j[key] = to_string(field);
        } else {
            j[key] = field;
        }
    });
    return j;
}

RunConfig merge_json(RunConfig base, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::set<std::string> known;
    for_each_field(base, [&](const char* key, auto&) { known.insert(key); });
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key: " + key);
    // A preset establishes its defaults before explicit keys apply.
    if (j.contains("preset")) {
        std::string preset;
        assign(j.at("preset"), "preset", preset);
        apply_preset(base, preset);
    }
    for_each_field(base, [&](const char* key, auto& field) {
        if (j.contains(key)) assign(j.at(key), key, field);
    });
    return base;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    return merge_json(std::move(base), j);
}

void write_run_json(const std::filesystem::path& dir, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "run.json") << to_json(cfg).dump(2) << '\n';
}

}  // namespace apo
