#include "apo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "apo/errors.hpp"
#include "apo/image_io.hpp"
#include "apo/rng.hpp"

namespace apo {

std::string to_string(CategoryKind kind) {
    switch (kind) {
        case CategoryKind::stripes: return "stripes";
        case CategoryKind::checker: return "checker";
        case CategoryKind::gradient: return "gradient";
    }
    throw std::logic_error("bad category");
}

std::string to_string(DefectKind kind) {
    switch (kind) {
        case DefectKind::scratch: return "scratch";
        case DefectKind::spot: return "spot";
        case DefectKind::patch: return "patch";
    }
    throw std::logic_error("bad defect");
}

std::string to_string(Split split) {
    switch (split) {
        case Split::normal: return "normal";
        case Split::reference: return "reference";
        case Split::eval: return "eval";
    }
    throw std::logic_error("bad split");
}

CategoryKind parse_category(const std::string& name) {
    for (const auto k : kAllCategories)
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown category: " + name);
}

DefectKind parse_defect(const std::string& name) {
    for (const auto k : kAllDefects)
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown defect: " + name);
}

namespace {

Split parse_split(const std::string& name) {
    for (const auto s : {Split::normal, Split::reference, Split::eval})
        if (to_string(s) == name) return s;
    throw std::invalid_argument("unknown split: " + name);
}

std::size_t category_index(CategoryKind k) { return static_cast<std::size_t>(k); }
std::size_t defect_index(DefectKind k) { return static_cast<std::size_t>(k); }

// Draws per-sample texture parameters around the category base.
TextureParams draw_texture(const Category& category, CounterRng& rng) {
    TextureParams p = category.base;
    p.contrast = category.base.contrast + category.contrast_jitter * (2.0 * rng.uniform() - 1.0);
    switch (category.kind) {
        case CategoryKind::stripes:
            p.phase = category.texture_jitter * p.period * rng.uniform();
            break;
        case CategoryKind::checker: {
            const auto span = static_cast<std::uint64_t>(std::floor(category.texture_jitter * (p.period - 1))) + 1;
            p.phase = static_cast<double>(rng.uniform_int(span));
            break;
        }
        case CategoryKind::gradient:
            p.orientation = category.base.orientation + category.texture_jitter * 2.0 * std::numbers::pi * rng.uniform();
            break;
    }
    return p;
}

void require_inside(const DefectSpec& s, std::size_t height, std::size_t width) {
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    switch (s.kind) {
        case DefectKind::spot:
            x0 = s.cx - s.radius; x1 = s.cx + s.radius; y0 = s.cy - s.radius; y1 = s.cy + s.radius;
            break;
        case DefectKind::scratch: {
            const double dx = std::abs(std::cos(s.angle)) * s.half_length + s.half_width;
            const double dy = std::abs(std::sin(s.angle)) * s.half_length + s.half_width;
            x0 = s.cx - dx; x1 = s.cx + dx; y0 = s.cy - dy; y1 = s.cy + dy;
            break;
        }
        case DefectKind::patch:
            x0 = std::round(s.cx - s.patch_w / 2.0); x1 = x0 + s.patch_w - 1;
            y0 = std::round(s.cy - s.patch_h / 2.0); y1 = y0 + s.patch_h - 1;
            break;
    }
    if (!(x0 > 0.0 && y0 > 0.0 && x1 < static_cast<double>(width) - 1.0 && y1 < static_cast<double>(height) - 1.0))
        throw std::invalid_argument("defect outside image");
}

}  // namespace

Category make_category(CategoryKind kind) {
    Category c;
    c.kind = kind;
    return c;
}

Category make_category(const std::string& name) { return make_category(parse_category(name)); }

DefectSpec default_defect(DefectKind kind) {
    DefectSpec s;
    s.kind = kind;
    switch (kind) {
        case DefectKind::scratch: s.intensity = 0.3; break;
        case DefectKind::spot: s.intensity = -0.3; break;
        case DefectKind::patch: s.intensity = -0.3; break;
    }
    return s;
}

std::size_t condition_token(CategoryKind category, DefectKind defect) {
    return 1 + 3 * category_index(category) + defect_index(defect);
}

std::pair<CategoryKind, DefectKind> token_condition(std::size_t token) {
    if (token < 1 || token > 9) throw std::invalid_argument("token has no condition: " + std::to_string(token));
    return {kAllCategories[(token - 1) / 3], kAllDefects[(token - 1) % 3]};
}

std::string condition_slug(std::size_t token) {
    const auto [c, d] = token_condition(token);
    return to_string(c) + "_" + to_string(d);
}

std::vector<std::size_t> category_tokens(CategoryKind category) {
    std::vector<std::size_t> out;
    for (const auto d : kAllDefects) out.push_back(condition_token(category, d));
    return out;
}

Tensor render_texture(const Category& category, const TextureParams& p) {
    const std::size_t h = category.height, w = category.width;
    Tensor img({h, w});
    const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
    const double reach = std::hypot(cx, cy);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double v = 0.5;
            switch (category.kind) {
                case CategoryKind::stripes:
                    v += 0.5 * p.contrast * std::sin(2.0 * std::numbers::pi * (static_cast<double>(c) + p.phase) / p.period);
                    break;
                case CategoryKind::checker: {
                    const auto off = static_cast<std::size_t>(p.phase);
                    const std::size_t parity = ((r + off) / p.period + (c + off) / p.period) % 2;
                    v += parity ? 0.5 * p.contrast : -0.5 * p.contrast;
                    break;
                }
                case CategoryKind::gradient: {
                    const double proj = (static_cast<double>(c) - cx) * std::cos(p.orientation) +
                                        (static_cast<double>(r) - cy) * std::sin(p.orientation);
                    v += 0.5 * p.contrast * proj / reach;
                    break;
                }
            }
            img.at(r, c) = v;
        }
    }
    return img;
}

Tensor defect_region(const DefectSpec& s, std::size_t height, std::size_t width) {
    Tensor region({height, width});
    const double ux = std::cos(s.angle), uy = std::sin(s.angle);
    const double px0 = std::round(s.cx - s.patch_w / 2.0), py0 = std::round(s.cy - s.patch_h / 2.0);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double dx = static_cast<double>(c) - s.cx, dy = static_cast<double>(r) - s.cy;
            bool inside = false;
            switch (s.kind) {
                case DefectKind::spot:
                    inside = dx * dx + dy * dy <= s.radius * s.radius;
                    break;
                case DefectKind::scratch: {
                    const double along = std::clamp(dx * ux + dy * uy, -s.half_length, s.half_length);
                    inside = std::hypot(dx - along * ux, dy - along * uy) <= s.half_width;
                    break;
                }
                case DefectKind::patch: {
                    const double x = static_cast<double>(c), y = static_cast<double>(r);
                    inside = x >= px0 && x < px0 + s.patch_w && y >= py0 && y < py0 + s.patch_h;
                    break;
                }
            }
            region.at(r, c) = inside ? 1.0 : 0.0;
        }
    }
    return region;
}

std::vector<NormalSample> gen_normal(const Category& category, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("gen_normal requires n >= 1");
    std::vector<NormalSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng(seed, derive_stream(streams::kDataset, category_index(category.kind), i));
        NormalSample s;
        char id[32];
        std::snprintf(id, sizeof id, "n%04zu", i);
        s.id = id;
        s.params = draw_texture(category, rng);
        s.image = render_texture(category, s.params);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<LabeledSample> gen_anomaly(const Category& category, const DefectSpec& defect, std::size_t n,
                                       std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("gen_anomaly requires n >= 1");
    if (defect.intensity == 0.0) throw std::invalid_argument("null defect");
    const std::size_t token = condition_token(category.kind, defect.kind);
    std::vector<LabeledSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng(seed, derive_stream(streams::kDataset, 16 + token, i));
        LabeledSample s;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%03zu", to_string(defect.kind).c_str(), i);
        s.id = id;
        s.category = category.kind;
        s.token = token;
        s.seed = seed;
        s.params = draw_texture(category, rng);
        s.defect = defect;
        s.defect.cx += defect.jitter * (2.0 * rng.uniform() - 1.0);
        s.defect.cy += defect.jitter * (2.0 * rng.uniform() - 1.0);
        s.defect.jitter = 0.0;
        require_inside(s.defect, category.height, category.width);
        const Tensor twin = render_texture(category, s.params);
        const Tensor region = defect_region(s.defect, category.height, category.width);
        s.image = twin;
        s.mask = Tensor(twin.shape());
        for (std::size_t k = 0; k < twin.size(); ++k) {
            if (region[k] > 0.0) s.image[k] = std::clamp(twin[k] + defect.intensity, 0.0, 1.0);
            s.mask[k] = std::abs(s.image[k] - twin[k]) > 1e-6 ? 1.0 : 0.0;
        }
        if (sum(s.mask) == 0.0) throw std::invalid_argument("null defect");
        out.push_back(std::move(s));
    }
    return out;
}

Tensor defect_free_twin(const Category& category, const LabeledSample& sample) {
    return render_texture(category, sample.params);
}

FewShotSplit split_few_shot(std::vector<LabeledSample> samples, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split fraction must lie in (0, 1)");
    const std::size_t n = samples.size();
    if (n < 3) throw std::invalid_argument("split_few_shot needs at least 3 samples");
    CounterRng rng(seed, streams::kSplit);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(samples[i], samples[rng.uniform_int(i + 1)]);
    // The small slack keeps exact products such as 9 * (1/3) from rounding up.
    auto n_ref = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    n_ref = std::clamp<std::size_t>(n_ref, 1, n - 1);
    FewShotSplit out;
    for (std::size_t i = 0; i < n; ++i) {
        samples[i].split = i < n_ref ? Split::reference : Split::eval;
        (i < n_ref ? out.reference : out.eval).push_back(std::move(samples[i]));
    }
    return out;
}

Dataset build_dataset(const DatasetConfig& config) {
    Dataset ds;
    ds.config = config;
    for (const auto ck : kAllCategories) {
        Category cat = make_category(ck);
        cat.texture_jitter = config.texture_jitter;
        for (auto& s : gen_normal(cat, config.normal_per_category, config.seed)) ds.normals.emplace_back(ck, std::move(s));
        for (const auto dk : kAllDefects) {
            DefectSpec spec = default_defect(dk);
            spec.jitter = config.placement_jitter;
            auto split = split_few_shot(gen_anomaly(cat, spec, config.anomalies_per_condition, config.seed),
                                        config.reference_fraction,
                                        counter_bits(config.seed, streams::kSplit, condition_token(ck, dk)));
            for (auto& s : split.reference) ds.anomalies.push_back(std::move(s));
            for (auto& s : split.eval) ds.anomalies.push_back(std::move(s));
        }
    }
    return ds;
}

namespace {

nlohmann::json texture_json(const TextureParams& p) {
    return {{"period", p.period}, {"orientation", p.orientation}, {"contrast", p.contrast}, {"phase", p.phase}};
}

TextureParams texture_from_json(const nlohmann::json& j) {
    TextureParams p;
    p.period = j.at("period").get<int>();
    p.orientation = j.at("orientation").get<double>();
    p.contrast = j.at("contrast").get<double>();
    p.phase = j.at("phase").get<double>();
    return p;
}

nlohmann::json defect_json(const DefectSpec& d) {
    return {{"kind", to_string(d.kind)}, {"cx", d.cx}, {"cy", d.cy}, {"radius", d.radius},
            {"half_length", d.half_length}, {"half_width", d.half_width}, {"angle", d.angle},
            {"patch_w", d.patch_w}, {"patch_h", d.patch_h}, {"intensity", d.intensity}};
}

DefectSpec defect_from_json(const nlohmann::json& j) {
    DefectSpec d;
    d.kind = parse_defect(j.at("kind").get<std::string>());
    d.cx = j.at("cx").get<double>();
    d.cy = j.at("cy").get<double>();
    d.radius = j.at("radius").get<double>();
    d.half_length = j.at("half_length").get<double>();
    d.half_width = j.at("half_width").get<double>();
    d.angle = j.at("angle").get<double>();
    d.patch_w = j.at("patch_w").get<int>();
    d.patch_h = j.at("patch_h").get<int>();
    d.intensity = j.at("intensity").get<double>();
    d.jitter = 0.0;
    return d;
}

}  // namespace

void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
    std::filesystem::create_directories(root);
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& [ck, s] : ds.normals) {
        const auto dir = root / to_string(ck) / to_string(Split::normal);
        write_pgm(dir / (s.id + ".pgm"), s.image);
        samples.push_back({{"id", s.id}, {"category", to_string(ck)}, {"split", "normal"}, {"token", nullptr},
                           {"texture", texture_json(s.params)}, {"defect", nullptr}, {"seed", ds.config.seed}});
    }
    for (const auto& s : ds.anomalies) {
        const auto dir = root / to_string(s.category) / to_string(s.split);
        write_pgm(dir / (s.id + ".pgm"), s.image);
        write_pgm(dir / (s.id + ".mask.pgm"), s.mask);
        samples.push_back({{"id", s.id}, {"category", to_string(s.category)}, {"split", to_string(s.split)},
                           {"token", s.token}, {"texture", texture_json(s.params)}, {"defect", defect_json(s.defect)},
                           {"seed", s.seed}});
    }
    nlohmann::json manifest = {{"seed", ds.config.seed},
                               {"normal_per_category", ds.config.normal_per_category},
                               {"anomalies_per_condition", ds.config.anomalies_per_condition},
                               {"reference_fraction", ds.config.reference_fraction},
                               {"placement_jitter", ds.config.placement_jitter},
                               {"texture_jitter", ds.config.texture_jitter},
                               {"image_height", kImageSide},
                               {"image_width", kImageSide},
                               {"samples", samples}};
    std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& root) {
    const auto manifest_path = root / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw MissingArtifactError("missing dataset manifest: " + manifest_path.string());
    const nlohmann::json m = nlohmann::json::parse(is);
    Dataset ds;
    ds.config.seed = m.at("seed").get<std::uint64_t>();
    ds.config.normal_per_category = m.at("normal_per_category").get<std::size_t>();
    ds.config.anomalies_per_condition = m.at("anomalies_per_condition").get<std::size_t>();
    ds.config.reference_fraction = m.at("reference_fraction").get<double>();
    ds.config.placement_jitter = m.at("placement_jitter").get<double>();
    ds.config.texture_jitter = m.at("texture_jitter").get<double>();
    for (const auto& j : m.at("samples")) {
        const auto ck = parse_category(j.at("category").get<std::string>());
        const auto split = parse_split(j.at("split").get<std::string>());
        const std::string id = j.at("id").get<std::string>();
        const auto dir = root / to_string(ck) / to_string(split);
        if (split == Split::normal) {
            NormalSample s;
            s.id = id;
            s.params = texture_from_json(j.at("texture"));
            s.image = read_pgm(dir / (id + ".pgm"));
            ds.normals.emplace_back(ck, std::move(s));
        } else {
            LabeledSample s;
            s.id = id;
            s.category = ck;
            s.split = split;
            s.token = j.at("token").get<std::size_t>();
            s.seed = j.at("seed").get<std::uint64_t>();
            s.params = texture_from_json(j.at("texture"));
            s.defect = defect_from_json(j.at("defect"));
            s.image = read_pgm(dir / (id + ".pgm"));
            s.mask = read_pgm(dir / (id + ".mask.pgm"));
            ds.anomalies.push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace apo
