#include "apo/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "apo/errors.hpp"
#include "apo/localization.hpp"

namespace apo {

namespace {

void require_image(const Tensor& image, const char* what) {
    if (image.rank() != 2 || image.dim(0) == 0 || image.dim(1) == 0)
        throw std::invalid_argument(std::string(what) + ": expected a non-empty [height, width] tensor");
}

// Skips whitespace and '#' comments between header tokens.
std::string next_token(std::istream& is) {
    std::string tok;
    while (is) {
        const int ch = is.peek();
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(ch)) {
            is.get();
        } else {
            break;
        }
    }
    is >> tok;
    return tok;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
    require_image(image, "write_pgm");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::size_t h = image.dim(0), w = image.dim(1);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    std::string bytes(h * w, '\0');
    for (std::size_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(image[i], 0.0, 1.0);
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifactError("missing image: " + path.string());
    if (next_token(is) != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
    const std::size_t w = std::stoul(next_token(is));
    const std::size_t h = std::stoul(next_token(is));
    const int maxval = std::stoi(next_token(is));
    if (maxval != 255) throw std::runtime_error("unsupported PGM depth in " + path.string());
    is.get();  // single whitespace after maxval
    std::string bytes(h * w, '\0');
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!is) throw std::runtime_error("truncated PGM: " + path.string());
    Tensor img({h, w});
    for (std::size_t i = 0; i < h * w; ++i) img[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
    return img;
}

Tensor encode_image(const Tensor& image) {
    require_image(image, "encode_image");
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("encode_image: dims must be even");
    Tensor z({(h / 2) * (w / 2)});
    for (std::size_t r = 0; r < h / 2; ++r) {
        for (std::size_t c = 0; c < w / 2; ++c) {
            const double avg = 0.25 * (image.at(2 * r, 2 * c) + image.at(2 * r, 2 * c + 1) +
                                       image.at(2 * r + 1, 2 * c) + image.at(2 * r + 1, 2 * c + 1));
            z[r * (w / 2) + c] = 2.0 * avg - 1.0;
        }
    }
    return z;
}

Tensor decode_latent(const Tensor& latent, std::size_t height, std::size_t width) {
    const std::size_t lh = height / 2, lw = width / 2;
    if (latent.size() != lh * lw) throw std::invalid_argument("decode_latent: latent size mismatch");
    Tensor img = upsample_bilinear(latent.reshaped({lh, lw}), height, width);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp((img[i] + 1.0) / 2.0, 0.0, 1.0);
    return img;
}

}  // namespace apo
