#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apo/dataset.hpp"
#include "apo/sampler.hpp"
#include "apo/schedule.hpp"
#include "apo/trainer.hpp"

namespace apo {

// Fully resolved settings for one CLI invocation. Serialized flat, one JSON key per field.
struct RunConfig {
    std::string command;
    std::string preset = "desk";  // "desk" or "as-paper"
    std::uint64_t seed = 0;

    // paths
    std::string out = "out";
    std::string data;       // dataset root
    std::string reference;  // reference checkpoint
    std::string adapters;   // adapter checkpoint
    std::string samples;    // directory of sample runs
    std::string maps;       // directory of localization maps

    // schedule and model
    ScheduleKind schedule = ScheduleKind::linear;
    int T = 1000;
    std::size_t hidden = 256;
    std::size_t layers = 4;
    std::size_t time_dim = 64;

    // dataset
    std::size_t normal_per_category = 256;
    std::size_t anomalies_per_condition = 9;
    double reference_fraction = 1.0 / 3.0;
    double placement_jitter = 2.0;
    double texture_jitter = 0.25;

    // pretraining
    int pretrain_steps = 2000;
    std::size_t pretrain_batch = 32;
    double pretrain_lr = 1e-3;
    double condition_dropout = 0.1;
    double data_std = 0.1;

    // alignment
    int align_steps = 3000;
    double align_lr = 3e-4;
    double beta = 100.0;
    int kmin = 4;
    int kmax = 32;
    std::size_t align_eval_draws = 512;

    // guidance and sampling
    double s_text = 3.0;
    double s_align = 1.5;
    int steps = 100;
    double eta = 0.0;
    std::size_t samples_per_condition = 16;
    std::vector<std::size_t> conditions;  // empty means all nine

    // localization
    std::string localize_source = "eval";  // "eval" or "samples"
    bool localize_unit_align = false;
    std::size_t localize_traces = 16;

    // beta sweep
    std::vector<double> betas = {500.0, 1000.0, 2000.0};
    std::vector<std::uint64_t> sweep_seeds = {0};

    void validate() const;

    TrainConfig pretrain_config() const;
    TrainConfig align_config() const;
    GuidanceConfig guidance() const;
    DatasetConfig dataset_config() const;
    DenoiserDims dims() const;
    std::vector<std::size_t> resolved_conditions() const;
};

// Values of the "as-paper" preset that differ from the desk defaults.
void apply_preset(RunConfig& cfg, const std::string& preset);

nlohmann::json to_json(const RunConfig& cfg);
// Starts from `base` and overrides present keys; unknown keys raise ConfigError.
RunConfig merge_json(RunConfig base, const nlohmann::json& j);
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});
void write_run_json(const std::filesystem::path& dir, const RunConfig& cfg);

}  // namespace apo
