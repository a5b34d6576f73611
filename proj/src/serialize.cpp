#include "apo/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "apo/errors.hpp"

namespace apo {

namespace le {

namespace {

template <class U>
void put_uint(std::ostream& os, U v) {
    std::array<char, sizeof(U)> b{};
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b.data(), b.size());
}

template <class U>
U get_uint(std::istream& is) {
    std::array<unsigned char, sizeof(U)> b{};
    is.read(reinterpret_cast<char*>(b.data()), b.size());
    if (!is) throw std::runtime_error("unexpected end of binary stream");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { put_uint(os, v); }
void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put_uint(os, v); }
void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }
std::uint8_t get_u8(std::istream& is) { return get_uint<std::uint8_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get_uint<std::uint32_t>(is); }
std::uint64_t get_u64(std::istream& is) { return get_uint<std::uint64_t>(is); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }

void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
    char got[4]{};
    is.read(got, 4);
    if (!is || std::memcmp(got, magic, 4) != 0) {
        throw std::runtime_error(std::string("bad magic, expected ") + magic);
    }
}

}  // namespace le

void write_tensor(std::ostream& os, const Tensor& t) {
    le::put_magic(os, "APOT");
    le::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) le::put_u64(os, d);
    for (double v : t.data()) le::put_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
    le::expect_magic(is, "APOT");
    const std::uint32_t rank = le::get_u32(is);
    if (rank > 16) throw std::runtime_error("tensor rank too large");
    Shape shape(rank);
    for (auto& d : shape) d = le::get_u64(is);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = le::get_f64(is);
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifactError("missing tensor file " + path.string());
    return read_tensor(is);
}

}  // namespace apo
