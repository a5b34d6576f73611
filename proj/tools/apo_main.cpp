#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "apo/config.hpp"
#include "apo/errors.hpp"
#include "apo/pipeline.hpp"

namespace {

enum class Kind { text, number, flag, list };

struct FlagSpec {
    const char* flag;
    const char* key;
    Kind kind;
    const char* help;
};

const FlagSpec kFlags[] = {
    {"--out", "out", Kind::text, "output directory"},
    {"--seed", "seed", Kind::number, "master seed (u64)"},
    {"--preset", "preset", Kind::text, "desk | as-paper"},
    {"--data", "data", Kind::text, "dataset root"},
    {"--reference", "reference", Kind::text, "reference checkpoint"},
    {"--adapters", "adapters", Kind::text, "adapter checkpoint"},
    {"--samples", "samples", Kind::text, "directory of sample runs"},
    {"--maps", "maps", Kind::text, "directory of localization maps"},
    {"--schedule", "schedule", Kind::text, "linear | cosine"},
    {"--T", "T", Kind::number, "number of diffusion levels"},
    {"--hidden", "hidden", Kind::number, "denoiser width"},
    {"--layers", "layers", Kind::number, "denoiser depth"},
    {"--normal-per-category", "normal_per_category", Kind::number, "normal images per category"},
    {"--anomalies-per-condition", "anomalies_per_condition", Kind::number, "anomalies per condition"},
    {"--reference-fraction", "reference_fraction", Kind::number, "share of anomalies in the reference split"},
    {"--texture-jitter", "texture_jitter", Kind::number, "share of the phase/orientation range drawn per image"},
    {"--placement-jitter", "placement_jitter", Kind::number, "defect center jitter in pixels"},
    {"--pretrain-steps", "pretrain_steps", Kind::number, "pretraining steps"},
    {"--pretrain-batch", "pretrain_batch", Kind::number, "pretraining batch size"},
    {"--pretrain-lr", "pretrain_lr", Kind::number, "pretraining learning rate"},
    {"--condition-dropout", "condition_dropout", Kind::number, "null-token probability in pretraining"},
    {"--data-std", "data_std", Kind::number, "nominal latent std for preconditioning (0 = plain)"},
    {"--align-steps", "align_steps", Kind::number, "alignment steps"},
    {"--align-lr", "align_lr", Kind::number, "alignment learning rate"},
    {"--beta", "beta", Kind::number, "regularization coefficient"},
    {"--kmin", "kmin", Kind::number, "gate lower bound"},
    {"--kmax", "kmax", Kind::number, "gate upper bound (adapter rank)"},
    {"--align-eval-draws", "align_eval_draws", Kind::number, "draws for post-alignment statistics"},
    {"--s-text", "s_text", Kind::number, "text guidance scale"},
    {"--s-align", "s_align", Kind::number, "alignment guidance scale"},
    {"--steps", "steps", Kind::number, "DDIM steps"},
    {"--eta", "eta", Kind::number, "DDIM stochasticity"},
    {"--count", "samples_per_condition", Kind::number, "samples per condition"},
    {"--conditions", "conditions", Kind::list, "comma-separated condition tokens (default all)"},
    {"--source", "localize_source", Kind::text, "localize input: eval | samples"},
    {"--unit-align", "localize_unit_align", Kind::flag, "re-run samples with s_align = 1 before localizing"},
    {"--traces", "localize_traces", Kind::number, "noise traces averaged per eval image"},
    {"--betas", "betas", Kind::list, "comma-separated betas for the sweep"},
    {"--sweep-seeds", "sweep_seeds", Kind::list, "comma-separated seeds for the sweep"},
};

nlohmann::json parse_number(const std::string& flag, const std::string& text) {
    nlohmann::json v = nlohmann::json::parse(text, nullptr, false);
    if (v.is_discarded() || !v.is_number()) throw apo::ConfigError(flag + ": expected a number, got '" + text + "'");
    return v;
}

nlohmann::json parse_list(const std::string& flag, const std::string& text) {
    nlohmann::json arr = nlohmann::json::array();
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = text.find(',', start);
        const std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
        if (!item.empty()) arr.push_back(parse_number(flag, item));
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return arr;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference-aligned few-shot anomaly generation and localization (desk scale)"};
    std::string command;
    std::string config_path;
    app.add_option("command", command, "pipeline stage")
        ->required()
        ->check(CLI::IsMember({"gen-data", "pretrain", "align", "sample", "localize", "eval", "inspect-schedule",
                               "beta-sweep"}));
    app.add_option("--config", config_path, "JSON config file (e.g. a previous run.json)");
    std::map<std::string, std::string> values;
    std::map<std::string, bool> switches;
    for (const auto& f : kFlags) {
        if (f.kind == Kind::flag) {
            app.add_flag(f.flag, switches[f.key], f.help);
        } else {
            app.add_option(f.flag, values[f.key], f.help);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        apo::RunConfig cfg;
        if (!config_path.empty()) {
            cfg = apo::load_config_file(config_path);
            if (!cfg.command.empty() && cfg.command != command)
                throw apo::ConfigError("config was written by '" + cfg.command + "', not '" + command + "'");
        }
        nlohmann::json overrides = nlohmann::json::object();
        for (const auto& f : kFlags) {
            const std::string flag = f.flag;
            if (app.count(flag) == 0) continue;
            switch (f.kind) {
                case Kind::text: overrides[f.key] = values[f.key]; break;
                case Kind::number: overrides[f.key] = parse_number(flag, values[f.key]); break;
                case Kind::list: overrides[f.key] = parse_list(flag, values[f.key]); break;
                case Kind::flag: overrides[f.key] = switches[f.key]; break;
            }
        }
        cfg = apo::merge_json(cfg, overrides);
        cfg.command = command;
        apo::run_command(cfg);
    } catch (const apo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const apo::MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return 3;
    } catch (const apo::DivergenceError& e) {
        std::cerr << "numerical divergence: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
