#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "apo/tensor.hpp"

namespace apo {

// Little-endian tensor record: "APOT", u32 rank, rank x u64 dims, f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace le {
void put_u8(std::ostream& os, std::uint8_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f64(std::ostream& os, double v);
std::uint8_t get_u8(std::istream& is);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
double get_f64(std::istream& is);
void put_magic(std::ostream& os, const char (&magic)[5]);
void expect_magic(std::istream& is, const char (&magic)[5]);
}  // namespace le

}  // namespace apo
