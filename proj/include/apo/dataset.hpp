#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "apo/tensor.hpp"

namespace apo {

inline constexpr std::size_t kImageSide = 32;

enum class CategoryKind { stripes, checker, gradient };
enum class DefectKind { scratch, spot, patch };

std::string to_string(CategoryKind kind);
std::string to_string(DefectKind kind);
CategoryKind parse_category(const std::string& name);
DefectKind parse_defect(const std::string& name);

inline constexpr CategoryKind kAllCategories[] = {CategoryKind::stripes, CategoryKind::checker,
                                                  CategoryKind::gradient};
inline constexpr DefectKind kAllDefects[] = {DefectKind::scratch, DefectKind::spot, DefectKind::patch};

struct TextureParams {
    int period = 8;            // stripe period / checker cell size, pixels
    double orientation = 0.0;  // gradient direction, radians
    double contrast = 0.3;
    double phase = 0.0;        // stripe phase or checker offset, pixels
};

struct Category {
    CategoryKind kind = CategoryKind::stripes;
    TextureParams base;
    double contrast_jitter = 0.05;
    // Share of the full phase / orientation range drawn per sample.
    double texture_jitter = 1.0;
    std::size_t height = kImageSide;
    std::size_t width = kImageSide;

    std::string name() const { return to_string(kind); }
};

Category make_category(const std::string& name);
Category make_category(CategoryKind kind);

struct DefectSpec {
    DefectKind kind = DefectKind::spot;
    double cx = 15.5;          // center, pixel coordinates (column)
    double cy = 15.5;          // center, pixel coordinates (row)
    double radius = 3.5;       // spot radius
    double half_length = 7.0;  // scratch half length
    double half_width = 1.0;   // scratch half width
    double angle = 0.6;        // scratch direction, radians
    int patch_w = 7;
    int patch_h = 7;
    double intensity = 0.25;   // additive delta
    double jitter = 2.0;       // uniform placement jitter of the center, pixels
};

// Nominal spec per defect kind.
DefectSpec default_defect(DefectKind kind);

// Condition token 1 + 3 * category + defect; 0 is reserved for the null token.
std::size_t condition_token(CategoryKind category, DefectKind defect);
std::pair<CategoryKind, DefectKind> token_condition(std::size_t token);
std::string condition_slug(std::size_t token);
// The three condition tokens belonging to a category.
std::vector<std::size_t> category_tokens(CategoryKind category);

Tensor render_texture(const Category& category, const TextureParams& params);
// Binary region of the defect, with `spec` already placed (no jitter applied).
Tensor defect_region(const DefectSpec& spec, std::size_t height, std::size_t width);

struct NormalSample {
    std::string id;
    TextureParams params;
    Tensor image;
};

enum class Split { normal, reference, eval };
std::string to_string(Split split);

struct LabeledSample {
    std::string id;
    CategoryKind category = CategoryKind::stripes;
    DefectSpec defect;  // placed spec (jitter resolved)
    TextureParams params;
    std::size_t token = 0;
    Split split = Split::eval;
    std::uint64_t seed = 0;
    Tensor image;
    Tensor mask;
};

std::vector<NormalSample> gen_normal(const Category& category, std::size_t n, std::uint64_t seed);
std::vector<LabeledSample> gen_anomaly(const Category& category, const DefectSpec& defect, std::size_t n,
                                       std::uint64_t seed);
// The defect-free image a labeled sample was built from.
Tensor defect_free_twin(const Category& category, const LabeledSample& sample);

struct FewShotSplit {
    std::vector<LabeledSample> reference;
    std::vector<LabeledSample> eval;
};

FewShotSplit split_few_shot(std::vector<LabeledSample> samples, double fraction, std::uint64_t seed);

struct DatasetConfig {
    std::uint64_t seed = 0;
    std::size_t normal_per_category = 256;
    std::size_t anomalies_per_condition = 9;
    double reference_fraction = 1.0 / 3.0;
    double placement_jitter = 2.0;
    double texture_jitter = 1.0;
};

struct Dataset {
    DatasetConfig config;
    std::vector<std::pair<CategoryKind, NormalSample>> normals;
    std::vector<LabeledSample> anomalies;  // reference and eval, split tags set
};

Dataset build_dataset(const DatasetConfig& config);

// <root>/<category>/<split>/<id>.pgm (+ <id>.mask.pgm) and <root>/manifest.json.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace apo
