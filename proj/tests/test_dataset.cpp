#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "apo/dataset.hpp"
#include "apo/errors.hpp"
#include "apo/image_io.hpp"
#include "support/oracles.hpp"

namespace apo {
namespace {

std::string tensor_bytes(const Tensor& t) {
    return {reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double)};
}

TEST(GenNormal, DeterministicPerSeed) {
    for (const auto ck : kAllCategories) {
        const auto cat = make_category(ck);
        const auto a = gen_normal(cat, 8, 4), b = gen_normal(cat, 8, 4), c = gen_normal(cat, 8, 5);
        for (std::size_t i = 0; i < 8; ++i) {
            EXPECT_EQ(tensor_bytes(a[i].image), tensor_bytes(b[i].image));
            EXPECT_EQ(a[i].id, b[i].id);
        }
        EXPECT_NE(tensor_bytes(a[0].image), tensor_bytes(c[0].image));
    }
    EXPECT_THROW(gen_normal(make_category(CategoryKind::stripes), 0, 0), std::invalid_argument);
    EXPECT_THROW(make_category("plaid"), std::invalid_argument);
}

TEST(GenNormal, StripesArePeriodicInColumns) {
    const auto cat = make_category(CategoryKind::stripes);
    ASSERT_EQ(cat.base.period, 8);
    for (const auto& s : gen_normal(cat, 5, 1)) {
        for (std::size_t r = 0; r < 32; ++r)
            for (std::size_t c = 0; c < 32; ++c) {
                EXPECT_EQ(s.image.at(r, c), s.image.at(0, c));
                if (c + 8 < 32) EXPECT_NEAR(s.image.at(r, c), s.image.at(r, c + 8), 1e-12);
            }
        // Not periodic at any shorter shift.
        for (std::size_t p = 1; p < 8; ++p) EXPECT_GT(std::abs(s.image.at(0, 0) - s.image.at(0, p)) +
                                                          std::abs(s.image.at(0, 1) - s.image.at(0, p + 1)),
                                                      1e-6);
    }
}

TEST(GenNormal, PixelsInUnitRangeOverManySamples) {
    std::size_t count = 0;
    for (const auto ck : kAllCategories) {
        const auto cat = make_category(ck);
        for (const auto& s : gen_normal(cat, 3334, 9)) {
            for (double v : s.image.values()) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
            }
            ++count;
        }
    }
    EXPECT_GE(count, 10000u);
}

TEST(GenAnomaly, NullDefectRejected) {
    DefectSpec d = default_defect(DefectKind::spot);
    d.intensity = 0.0;
    try {
        gen_anomaly(make_category(CategoryKind::checker), d, 2, 0);
        FAIL() << "expected an exception";
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "null defect");
    }
}

TEST(GenAnomaly, OutsideImageRejected) {
    DefectSpec d = default_defect(DefectKind::spot);
    d.cx = 1.0;
    d.jitter = 0.0;
    EXPECT_THROW(gen_anomaly(make_category(CategoryKind::stripes), d, 1, 0), std::invalid_argument);
}

TEST(GenAnomaly, SpotMaskMatchesScannedDisk) {
    DefectSpec d = default_defect(DefectKind::spot);
    d.radius = 3.0;
    d.cx = 16.0;
    d.cy = 16.0;
    d.jitter = 0.0;
    std::size_t disk = 0;
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            if ((r - 16) * (r - 16) + (c - 16) * (c - 16) <= 9) ++disk;
    EXPECT_EQ(disk, 29u);
    for (const auto ck : kAllCategories)
        for (const auto& s : gen_anomaly(make_category(ck), d, 4, 2)) EXPECT_EQ(sum(s.mask), static_cast<double>(disk));
}

TEST(GenAnomaly, MaskMarksExactlyTheAlteredPixels) {
    for (const auto ck : kAllCategories) {
        const auto cat = make_category(ck);
        for (const auto dk : kAllDefects) {
            for (const auto& s : gen_anomaly(cat, default_defect(dk), 9, 3)) {
                const Tensor twin = defect_free_twin(cat, s);
                ASSERT_GT(sum(s.mask), 0.0);
                for (std::size_t k = 0; k < twin.size(); ++k) {
                    ASSERT_EQ(s.mask[k], std::abs(s.image[k] - twin[k]) > 1e-6 ? 1.0 : 0.0);
                    ASSERT_GE(s.image[k], 0.0);
                    ASSERT_LE(s.image[k], 1.0);
                }
                // The region stays off the image border.
                for (std::size_t k = 0; k < 32; ++k) {
                    EXPECT_EQ(s.mask.at(0, k), 0.0);
                    EXPECT_EQ(s.mask.at(31, k), 0.0);
                    EXPECT_EQ(s.mask.at(k, 0), 0.0);
                    EXPECT_EQ(s.mask.at(k, 31), 0.0);
                }
                EXPECT_EQ(s.token, condition_token(ck, dk));
            }
        }
    }
}

TEST(Tokens, LayoutAndRoundTrip) {
    std::set<std::size_t> seen;
    for (const auto ck : kAllCategories)
        for (const auto dk : kAllDefects) {
            const std::size_t tok = condition_token(ck, dk);
            EXPECT_GE(tok, 1u);
            EXPECT_LE(tok, 9u);
            EXPECT_EQ(token_condition(tok), std::make_pair(ck, dk));
            seen.insert(tok);
        }
    EXPECT_EQ(seen.size(), 9u);
    EXPECT_EQ(condition_slug(1), "stripes_scratch");
    EXPECT_THROW(token_condition(0), std::invalid_argument);
}

TEST(SplitFewShot, NineSplitsIntoThreeAndSix) {
    const auto samples = gen_anomaly(make_category(CategoryKind::stripes), default_defect(DefectKind::patch), 9, 0);
    const auto split = split_few_shot(samples, 1.0 / 3.0, 7);
    EXPECT_EQ(split.reference.size(), 3u);
    EXPECT_EQ(split.eval.size(), 6u);
    std::set<std::string> ref, ev, all;
    for (const auto& s : split.reference) {
        ref.insert(s.id);
        EXPECT_EQ(s.split, Split::reference);
    }
    for (const auto& s : split.eval) {
        ev.insert(s.id);
        EXPECT_EQ(s.split, Split::eval);
    }
    for (const auto& s : samples) all.insert(s.id);
    for (const auto& id : ref) EXPECT_EQ(ev.count(id), 0u);
    std::set<std::string> uni = ref;
    uni.insert(ev.begin(), ev.end());
    EXPECT_EQ(uni, all);
    const auto again = split_few_shot(samples, 1.0 / 3.0, 7);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again.reference[i].id, split.reference[i].id);
}

TEST(SplitFewShot, BoundariesAndErrors) {
    const auto samples = gen_anomaly(make_category(CategoryKind::checker), default_defect(DefectKind::spot), 5, 0);
    EXPECT_EQ(split_few_shot(samples, 0.999, 1).eval.size(), 1u);
    EXPECT_EQ(split_few_shot(samples, 0.01, 1).reference.size(), 1u);
    EXPECT_EQ(split_few_shot(samples, 0.5, 1).reference.size(), 3u);
    std::vector<LabeledSample> two(samples.begin(), samples.begin() + 2);
    EXPECT_THROW(split_few_shot(two, 0.5, 0), std::invalid_argument);
    EXPECT_THROW(split_few_shot(samples, 0.0, 0), std::invalid_argument);
    EXPECT_THROW(split_few_shot(samples, 1.0, 0), std::invalid_argument);
}

TEST(BuildDataset, WriteLoadRoundTrip) {
    DatasetConfig cfg;
    cfg.normal_per_category = 4;
    const Dataset ds = build_dataset(cfg);
    EXPECT_EQ(ds.normals.size(), 12u);
    EXPECT_EQ(ds.anomalies.size(), 81u);
    std::size_t refs = 0;
    for (const auto& s : ds.anomalies) refs += s.split == Split::reference;
    EXPECT_EQ(refs, 27u);

    const auto a = testing::scratch_dir("dataset_a"), b = testing::scratch_dir("dataset_b");
    write_dataset(a, ds);
    write_dataset(b, build_dataset(cfg));
    EXPECT_EQ(testing::read_bytes(a / "manifest.json"), testing::read_bytes(b / "manifest.json"));
    const auto& first = ds.anomalies.front();
    const auto rel = std::filesystem::path(to_string(first.category)) / to_string(first.split) / (first.id + ".pgm");
    EXPECT_EQ(testing::read_bytes(a / rel), testing::read_bytes(b / rel));

    const Dataset back = load_dataset(a);
    ASSERT_EQ(back.anomalies.size(), ds.anomalies.size());
    ASSERT_EQ(back.normals.size(), ds.normals.size());
    for (std::size_t i = 0; i < ds.anomalies.size(); ++i) {
        EXPECT_EQ(back.anomalies[i].id, ds.anomalies[i].id);
        EXPECT_EQ(back.anomalies[i].split, ds.anomalies[i].split);
        EXPECT_EQ(back.anomalies[i].token, ds.anomalies[i].token);
        EXPECT_EQ(back.anomalies[i].mask, ds.anomalies[i].mask);
        EXPECT_LE(max_abs_diff(back.anomalies[i].image, ds.anomalies[i].image), 0.5 / 255.0 + 1e-12);
        EXPECT_EQ(back.anomalies[i].defect.cx, ds.anomalies[i].defect.cx);
    }
    EXPECT_THROW(load_dataset(a / "nowhere"), MissingArtifactError);
}

TEST(ImageIo, PgmQuantizesAndLatentMapsAreAffine) {
    const auto dir = testing::scratch_dir("pgm");
    Tensor img({32, 32});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 256) / 255.0;
    write_pgm(dir / "x.pgm", img);
    EXPECT_LT(max_abs_diff(read_pgm(dir / "x.pgm"), img), 1e-12);
    const Tensor z = encode_image(Tensor({32, 32}, 0.75));
    EXPECT_EQ(z.size(), 256u);
    for (double v : z.values()) EXPECT_NEAR(v, 0.5, 1e-15);
    const Tensor back = decode_latent(z, 32, 32);
    for (double v : back.values()) EXPECT_NEAR(v, 0.75, 1e-15);
}

}  // namespace
}  // namespace apo
