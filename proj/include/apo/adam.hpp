#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "apo/autodiff.hpp"

namespace apo {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list.
class AdamState {
public:
    AdamState(AdamConfig config, std::span<Parameter* const> params);

    // Applies one update from each parameter's accumulated `grad`.
    // `active` (optional, one per parameter) marks entries that take part in
    // this step; inactive entries keep both their value and their moments.
    // Throws "non-finite gradient" before touching anything if any grad is NaN/inf.
    void step(std::span<Parameter* const> params, std::span<const Tensor* const> active = {});

    std::uint64_t step_count() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return cfg_; }
    const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor>& second_moments() const noexcept { return v_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t t_ = 0;
};

}  // namespace apo
