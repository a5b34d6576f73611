#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "apo/autodiff.hpp"
#include "apo/schedule.hpp"
#include "apo/tensor.hpp"

namespace apo {

inline constexpr std::size_t kNullToken = 0;

struct DenoiserDims {
    std::size_t latent_dim = 256;  // flattened 16x16 latent
    std::size_t hidden = 256;
    std::size_t n_layers = 4;
    std::size_t n_tokens = 10;  // null + one per condition
    std::size_t time_dim = 64;
    double max_period = 10000.0;

    bool operator==(const DenoiserDims&) const = default;
};

enum class Activation : std::uint8_t { identity, silu };

struct DenseLayer {
    Parameter weight;  // [out, in]
    Parameter bias;    // [out]
    Activation activation = Activation::silu;
};

// Noise predictor eps(z_t, c, t): dense stack on the flattened latent with a
// learned token embedding and a projected sinusoidal time embedding both added
// to the first pre-activation. With a schedule attached the stack is
// preconditioned around a nominal data std s_d: with q_t = alpha_t^2 s_d^2 + sigma_t^2,
//   eps = (sigma_t / q_t) z_t + (alpha_t s_d / sqrt(q_t)) F(z_t / sqrt(q_t), c, t).
struct Denoiser {
    DenoiserDims dims;
    std::vector<DenseLayer> layers;
    Parameter cond_table;   // [n_tokens, hidden]; row 0 is the null token
    Parameter time_weight;  // [hidden, time_dim]
    Parameter time_bias;    // [hidden]
    // Per-level coefficients, empty for the plain parametrization eps = F.
    double data_std = 0.0;
    std::vector<double> in_coef;
    std::vector<double> skip_coef;
    std::vector<double> out_coef;

    static Denoiser init(const DenoiserDims& dims, std::uint64_t seed);

    void attach_schedule(const NoiseSchedule& schedule, double data_std);
    bool preconditioned() const { return !skip_coef.empty(); }

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

Tensor sinusoidal_embedding(int t, std::size_t dim, double max_period);

// Expansion schedule k(t) = floor(k_min + (k_max - k_min)(T - t)/T).
struct TemporalGate {
    int k_min = 4;
    int k_max = 32;
    int T = 1000;

    void validate() const;
};

int gate_dims(const TemporalGate& gate, int t);
// Diagonal of G_t: the first k(t) entries are 1, the rest 0.
Tensor gate_matrix(const TemporalGate& gate, int t);
Tensor gate_mask_for_dims(std::size_t rank, int k);

struct LoraAdapter {
    Parameter a;  // [rank, in]
    Parameter b;  // [out, rank]
};

// One adapter per dense layer, rank = gate.k_max.
struct LoraStack {
    TemporalGate gate;
    std::vector<LoraAdapter> layers;

    std::size_t rank() const { return static_cast<std::size_t>(gate.k_max); }

    // A ~ N(0, 1/rank), B = 0.
    static LoraStack init(const Denoiser& model, const TemporalGate& gate, std::uint64_t seed);

    std::vector<Parameter*> parameters();
    // Per-parameter activity masks at timestep t (rows of A / columns of B
    // with index >= k(t) are inactive), aligned with parameters().
    std::vector<Tensor> active_masks(int t) const;
};

// B diag(mask) A
Tensor effective_delta(const LoraAdapter& adapter, const TemporalGate& gate, int t);

// Mutable handles for the weights that should become graph leaves; anything
// not listed enters the graph as a constant.
struct TrainableSet {
    Denoiser* reference = nullptr;
    LoraStack* adapters = nullptr;
};

// Batched forward on a graph. z: [n, latent_dim], tokens/timesteps per row.
// With adapters, each dense layer computes x W^T + b + ((x A^T) * mask_t) B^T.
Var denoiser_forward(Graph& g, const Denoiser& model, const LoraStack* adapters, Var z,
                     const std::vector<std::size_t>& tokens, const std::vector<int>& timesteps,
                     TrainableSet trainable = {});

// Single-latent prediction without gradient tracking.
Tensor predict_noise(const Denoiser& model, const LoraStack* adapters, const Tensor& z_t, std::size_t token, int t);

// ---- checkpoint container ----

enum class CheckpointRole : std::uint8_t { reference = 0, adapter = 1 };

struct CheckpointHeader {
    std::uint32_t version = 2;
    CheckpointRole role = CheckpointRole::reference;
    double data_std = 0.0;  // 0 means no preconditioning
    ScheduleKind schedule_kind = ScheduleKind::linear;
    std::uint32_t T = 1000;
    DenoiserDims dims;
    std::uint32_t rank = 0;
    std::uint32_t k_min = 0;
    std::uint32_t k_max = 0;
};

// A preconditioned reference is reloaded with the schedule named in its header.
void save_reference(const std::filesystem::path& path, const Denoiser& model, ScheduleKind kind, int T);
void save_adapters(const std::filesystem::path& path, const LoraStack& adapters, const DenoiserDims& dims,
                   ScheduleKind kind);

struct ReferenceCheckpoint {
    CheckpointHeader header;
    Denoiser model;
};
struct AdapterCheckpoint {
    CheckpointHeader header;
    LoraStack adapters;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);
ReferenceCheckpoint load_reference(const std::filesystem::path& path);
AdapterCheckpoint load_adapters(const std::filesystem::path& path);

}  // namespace apo
