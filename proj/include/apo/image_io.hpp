#pragma once

#include <filesystem>

#include "apo/tensor.hpp"

namespace apo {

// Binary 8-bit PGM (P5). Images are [height, width] tensors with values in [0, 1];
// writing clamps and rounds to the nearest of 256 levels.
void write_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm(const std::filesystem::path& path);

// Fixed toy latent mapping between 32x32 images and 16x16 latents:
// encode = 2 * avgpool2x2(x) - 1, decode = clamp((bilinear_up(z) + 1) / 2, 0, 1).
Tensor encode_image(const Tensor& image);
Tensor decode_latent(const Tensor& latent, std::size_t height, std::size_t width);

}  // namespace apo
