#pragma once

#include <cstdint>

#include "apo/tensor.hpp"

namespace apo {

// Counter-based random source: every draw is a pure function of
// (seed, stream, index), so no generator state is shared between users.
std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Uniform in (0, 1].
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Standard normal via Box-Muller; element i of the stream uses the uniform
// pair at counters 2*(i/2), 2*(i/2)+1 and takes the cos/sin branch by parity.
double counter_gaussian(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

Tensor seeded_gaussian(const Shape& shape, std::uint64_t seed, std::uint64_t stream_id);

// Mix a purpose tag and up to two indices into a stream id.
std::uint64_t derive_stream(std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0);

// Sequential cursor over one (seed, stream). Copyable value type.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double uniform();                        // (0, 1]
    std::uint64_t uniform_int(std::uint64_t n);  // [0, n)
    double gaussian();
    Tensor gaussian(const Shape& shape);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t position() const noexcept { return index_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t index_ = 0;
};

// Stream tags used across the pipeline.
namespace streams {
inline constexpr std::uint64_t kInit = 0x1001;
inline constexpr std::uint64_t kPretrain = 0x1002;
inline constexpr std::uint64_t kAlign = 0x1003;
inline constexpr std::uint64_t kSample = 0x1004;
inline constexpr std::uint64_t kDataset = 0x1005;
inline constexpr std::uint64_t kSplit = 0x1006;
inline constexpr std::uint64_t kMonteCarlo = 0x1007;
inline constexpr std::uint64_t kEvalDraws = 0x1008;
inline constexpr std::uint64_t kLocalize = 0x1009;
}  // namespace streams

}  // namespace apo
