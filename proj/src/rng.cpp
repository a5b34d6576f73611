#include "apo/rng.hpp"

#include <cmath>
#include <numbers>

namespace apo {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t h = mix64(seed + kGolden);
    h = mix64(h ^ (stream + 2 * kGolden));
    h = mix64(h ^ (index + 3 * kGolden));
    return mix64(h + kGolden);
}

double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    const std::uint64_t bits = counter_bits(seed, stream, index) >> 11;
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

double counter_gaussian(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    const std::uint64_t pair = index / 2;
    const double u1 = counter_uniform(seed, stream, 2 * pair);
    const double u2 = counter_uniform(seed, stream, 2 * pair + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return (index % 2 == 0) ? r * std::cos(theta) : r * std::sin(theta);
}

Tensor seeded_gaussian(const Shape& shape, std::uint64_t seed, std::uint64_t stream_id) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = counter_gaussian(seed, stream_id, i);
    return t;
}

std::uint64_t derive_stream(std::uint64_t tag, std::uint64_t a, std::uint64_t b) {
    return mix64(mix64(mix64(tag) ^ (a + kGolden)) ^ (b + 5 * kGolden));
}

double CounterRng::uniform() { return counter_uniform(seed_, stream_, index_++); }

std::uint64_t CounterRng::uniform_int(std::uint64_t n) {
    const std::uint64_t bits = counter_bits(seed_, stream_, index_++);
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits) * n) >> 64);
}

double CounterRng::gaussian() {
    // Keep pairs aligned so a cursor draw equals the cos branch of its pair.
    if (index_ % 2) ++index_;
    const double g = counter_gaussian(seed_, stream_, index_);
    index_ += 2;
    return g;
}

Tensor CounterRng::gaussian(const Shape& shape) {
    // Consume a fresh sub-stream so bulk draws stay pair-aligned and reproducible.
    const std::uint64_t sub = derive_stream(stream_, index_++);
    return seeded_gaussian(shape, seed_, sub);
}

}  // namespace apo
