#include "apo/localization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "apo/sampler.hpp"

namespace apo {

Tensor upsample_bilinear(const Tensor& map, std::size_t height, std::size_t width) {
    if (map.rank() != 2) throw std::invalid_argument("upsample_bilinear: expected a rank-2 map");
    const std::size_t h = map.dim(0), w = map.dim(1);
    if (h == 0 || w == 0) throw std::invalid_argument("upsample_bilinear: empty map");
    if (height < h || width < w) throw std::invalid_argument("upsample_bilinear: downsampling not supported");
    Tensor out({height, width});
    const double sy = height > 1 ? static_cast<double>(h - 1) / static_cast<double>(height - 1) : 0.0;
    const double sx = width > 1 ? static_cast<double>(w - 1) / static_cast<double>(width - 1) : 0.0;
    for (std::size_t i = 0; i < height; ++i) {
        const double y = static_cast<double>(i) * sy;
        const std::size_t y0 = std::min(static_cast<std::size_t>(y), h - 1);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t j = 0; j < width; ++j) {
            const double x = static_cast<double>(j) * sx;
            const std::size_t x0 = std::min(static_cast<std::size_t>(x), w - 1);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = (1.0 - fx) * map.at(y0, x0) + fx * map.at(y0, x1);
            const double bot = (1.0 - fx) * map.at(y1, x0) + fx * map.at(y1, x1);
            out.at(i, j) = (1.0 - fy) * top + fy * bot;
        }
    }
    return out;
}

Tensor location_norms(const Tensor& delta, std::size_t channels, std::size_t side) {
    const std::size_t plane = side * side;
    if (channels == 0 || delta.size() != channels * plane)
        throw std::invalid_argument("location_norms: delta does not match [channels, side, side]");
    Tensor out({side, side});
    for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) acc += delta[c * plane + i] * delta[c * plane + i];
        out[i] = std::sqrt(acc);
    }
    return out;
}

Tensor accumulate_map(const SampleRun& run, const TemporalGate& gate, std::size_t height, std::size_t width,
                      std::size_t channels) {
    if (run.delta_align.empty()) throw std::invalid_argument("accumulate_map: empty trajectory");
    if (run.delta_align.size() != run.timesteps.size())
        throw std::invalid_argument("accumulate_map: timesteps and deltas disagree");
    const std::size_t plane = run.delta_align.front().size() / channels;
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(plane))));
    if (side * side != plane) throw std::invalid_argument("accumulate_map: latent is not square");
    Tensor m({height, width});
    for (std::size_t s = 0; s < run.delta_align.size(); ++s) {
        const Tensor norms = location_norms(run.delta_align[s], channels, side);
        const Tensor up = upsample_bilinear(norms, height, width);
        axpy_inplace(m, static_cast<double>(gate_dims(gate, run.timesteps[s])), up);
    }
    return (1.0 / static_cast<double>(run.delta_align.size())) * m;
}

Tensor normalize_and_smooth(const Tensor& m) {
    if (m.rank() != 2) throw std::invalid_argument("normalize_and_smooth: expected a rank-2 map");
    if (!m.all_finite()) throw std::invalid_argument("normalize_and_smooth: non-finite map");
    const auto [lo_it, hi_it] = std::minmax_element(m.values().begin(), m.values().end());
    const double lo = *lo_it, hi = *hi_it;
    const std::size_t h = m.dim(0), w = m.dim(1);
    Tensor p({h, w});
    if (!(hi > lo)) return p;
    Tensor n({h, w});
    for (std::size_t i = 0; i < m.size(); ++i) n[i] = (m[i] - lo) / (hi - lo);
    static constexpr double kernel[3] = {1.0, 2.0, 1.0};
    auto clampi = [](long v, std::size_t n_) {
        return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n_) - 1));
    };
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    const std::size_t r = clampi(static_cast<long>(i) + di, h);
                    const std::size_t c = clampi(static_cast<long>(j) + dj, w);
                    acc += kernel[di + 1] * kernel[dj + 1] * n.at(r, c);
                }
            }
            p.at(i, j) = std::clamp(acc / 16.0, 0.0, 1.0);
        }
    }
    return p;
}

AnomalyMap localize(const SampleRun& run, const TemporalGate& gate, std::size_t height, std::size_t width,
                    std::string source_run) {
    AnomalyMap out;
    out.m = accumulate_map(run, gate, height, width);
    out.p = normalize_and_smooth(out.m);
    out.source_run = std::move(source_run);
    return out;
}

}  // namespace apo
