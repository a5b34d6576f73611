#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "apo/denoiser.hpp"
#include "apo/preference.hpp"
#include "apo/schedule.hpp"

namespace apo {

struct TrainConfig {
    double beta = 1000.0;
    double learning_rate = 1e-3;
    int steps = 1000;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    double condition_dropout = 0.1;
    int k_min = 4;
    int k_max = 32;
    // Nominal latent std for the reference preconditioning; 0 trains a plain eps-predictor.
    double data_std = 0.1;

    void validate() const;
};

struct TrainRecord {
    int step = 0;
    int t = 0;
    double delta = 0.0;
    double beta_t = 0.0;
    double loss = 0.0;
    double pref_prob = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void write_csv(const std::filesystem::path& path) const;
};

// A normal latent with the condition tokens it may be trained under.
struct PretrainSample {
    Tensor z0;
    std::vector<std::size_t> tokens;
};

struct PretrainResult {
    Denoiser model;
    TrainLog log;
};

// Minimizes the denoising loss with null-token dropout. Logged delta, beta_t and
// pref_prob are zero; t is that of the first batch row.
PretrainResult pretrain_reference(std::span<const PretrainSample> data, const NoiseSchedule& schedule,
                                  const TrainConfig& config, const DenoiserDims& dims);

struct AlignResult {
    LoraStack adapters;
    TrainLog log;
};

// Preference alignment of gated adapters on top of a frozen reference.
AlignResult align(const Denoiser& reference, std::span<const LatentSample> anomalies, const NoiseSchedule& schedule,
                  const TrainConfig& config);

struct AlignmentStats {
    double mean_delta = 0.0;
    double mean_abs_delta = 0.0;
    double mean_loss = 0.0;
    double mean_pref_prob = 0.0;
    std::size_t draws = 0;
};

// Fresh (sample, t, eps) draws, evaluated without updates.
AlignmentStats evaluate_alignment(const Denoiser& reference, const LoraStack& adapters,
                                  std::span<const LatentSample> anomalies, const NoiseSchedule& schedule, double beta,
                                  std::size_t draws, std::uint64_t seed);

struct SweepRow {
    double beta = 0.0;
    double final_mean_delta = 0.0;
    double final_mean_abs_delta = 0.0;
    double final_loss = 0.0;
    double final_pref_prob = 0.0;
    TrainLog log;
};

std::vector<SweepRow> beta_sweep(const Denoiser& reference, std::span<const LatentSample> anomalies,
                                 const NoiseSchedule& schedule, const TrainConfig& config,
                                 std::span<const double> betas, std::size_t eval_draws = 512);

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace apo
