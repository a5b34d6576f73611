#pragma once

#include <string>

#include "apo/denoiser.hpp"
#include "apo/tensor.hpp"

namespace apo {

struct SampleRun;

struct AnomalyMap {
    Tensor m;  // raw accumulated map at image resolution
    Tensor p;  // normalized, smoothed map in [0, 1]
    std::string source_run;
};

// Align-corners bilinear interpolation of a [h, w] map to [height, width].
Tensor upsample_bilinear(const Tensor& map, std::size_t height, std::size_t width);

// Per-location L2 norm over channels of a flattened [channels, side, side] latent.
Tensor location_norms(const Tensor& delta, std::size_t channels, std::size_t side);

// M = (1/steps) sum_t k(t) * upsample(|delta_align(t)|).
Tensor accumulate_map(const SampleRun& run, const TemporalGate& gate, std::size_t height, std::size_t width,
                      std::size_t channels = 1);

// Min-max normalize then convolve with the 3x3 binomial kernel (replicate
// padding). A constant map yields all zeros.
Tensor normalize_and_smooth(const Tensor& m);

AnomalyMap localize(const SampleRun& run, const TemporalGate& gate, std::size_t height, std::size_t width,
                    std::string source_run);

}  // namespace apo
