#include <gtest/gtest.h>

#include <cmath>

#include "eogym/spectral.hpp"
#include "test_support.hpp"

using namespace eogym;
using eogym::testing::random_bandset;

namespace {

BandSet flat_scene(float red, float nir, int w = 8, int h = 8) {
    BandSet s;
    for (const auto& b : band_roles(Platform::synthetic)) s.bands[b.name] = RasterPatch::filled(w, h, 1, 0.1f);
    s.bands["B4"] = RasterPatch::filled(w, h, 1, red);
    s.bands["B8"] = RasterPatch::filled(w, h, 1, nir);
    return s;
}

}  // namespace

TEST(Bands, PlatformRoles) {
    EXPECT_EQ(band_for_role(Platform::sentinel2a, BandRole::nir), "B8");
    EXPECT_EQ(band_for_role(Platform::landsat9, BandRole::red), "SR_B4");
    EXPECT_EQ(band_for_role(Platform::landsat8, BandRole::nir), "SR_B5");
    EXPECT_EQ(band_roles(Platform::landsat8).size(), 8u);
    EXPECT_FALSE(band_for_role(Platform::synthetic, BandRole::thermal));
    EXPECT_EQ(parse_platform("sentinel2b"), Platform::sentinel2b);
    try {
        parse_platform("modis");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::unknown_platform);
    }
}

TEST(Index, KnownValues) {
    EXPECT_EQ(compute_index(flat_scene(0.4f, 0.4f), SpectralIndex::ndvi).values[0], 0.0);
    EXPECT_NEAR(compute_index(flat_scene(0.2f, 0.8f), SpectralIndex::ndvi).values[0], 0.6, 1e-6);
    EXPECT_TRUE(std::isnan(normalized_difference(0, 0)));
    EXPECT_EQ(normalized_difference(1, 0), 1.0);
}

TEST(Index, AllZeroGivesEmptyMaskAndNanStats) {
    const auto s = flat_scene(0.0f, 0.0f);
    const auto r = compute_index(s, SpectralIndex::ndvi);
    EXPECT_EQ(r.stats.valid_pixels, 0u);
    EXPECT_TRUE(std::isnan(r.stats.mean));
    EXPECT_EQ(thematic_mask(s, Theme::vegetation).count(), 0u);
}

TEST(Index, HalfVegetationScene) {
    auto s = flat_scene(0.3f, 0.3f, 10, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x) {
            s.bands["B4"].at(x, y) = 0.1f;
            s.bands["B8"].at(x, y) = 0.7f;
        }
    const auto m = thematic_mask(s, Theme::vegetation);
    auto expected = BinaryMask::empty(10, 6);
    expected.fill_box(BBox{0, 0, 5, 6, "", std::nullopt});
    EXPECT_EQ(m, expected);
    const auto r = compute_index(s, SpectralIndex::ndvi);
    EXPECT_DOUBLE_EQ(r.stats.fraction_above, 0.5);
    EXPECT_EQ(thematic_mask(s, Theme::vegetation, 1.1).count(), 0u);
}

TEST(Index, MatchesScalarOracle) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = random_bandset(seed, 12, 9);
        for (auto idx : {SpectralIndex::ndvi, SpectralIndex::ndwi, SpectralIndex::ndbi, SpectralIndex::ndsi}) {
            const auto [r1, r2] = index_roles(idx);
            const auto oracle = eogym::testing::scalar_normalized_difference(
                s.band(*band_for_role(s.platform, r1)), s.band(*band_for_role(s.platform, r2)));
            const auto got = compute_index(s, idx);
            ASSERT_EQ(got.values.size(), oracle.size());
            for (std::size_t i = 0; i < oracle.size(); ++i) {
                if (std::isnan(oracle[i])) EXPECT_TRUE(std::isnan(got.values[i]));
                else EXPECT_NEAR(got.values[i], oracle[i], 1e-6);
            }
        }
    }
}

TEST(Index, AntisymmetryAndThresholdMonotonicity) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = random_bandset(seed, 10, 10);
        const auto& red = s.band("B4");
        const auto& nir = s.band("B8");
        for (std::size_t i = 0; i < red.pixels.size(); ++i) {
            const double f = normalized_difference(nir.pixels[i], red.pixels[i]);
            const double g = normalized_difference(red.pixels[i], nir.pixels[i]);
            if (std::isnan(f)) EXPECT_TRUE(std::isnan(g));
            else EXPECT_EQ(f, -g);
        }
        BinaryMask prev = thematic_mask(s, Theme::vegetation, -1.0);
        for (double t = -0.9; t <= 1.0; t += 0.1) {
            const auto m = thematic_mask(s, Theme::vegetation, t);
            for (std::size_t i = 0; i < m.bits.size(); ++i) EXPECT_LE(m.bits[i], prev.bits[i]);
            prev = m;
        }
    }
}

TEST(Index, MissingBandsAndShapes) {
    BandSet s = flat_scene(0.1f, 0.2f);
    s.bands.erase("B8");
    EXPECT_THROW(compute_index(s, SpectralIndex::ndvi), Error);
    BandSet t = flat_scene(0.1f, 0.2f);
    t.bands["B8"] = RasterPatch::filled(4, 4, 1, 0.2f);
    try {
        compute_index(t, SpectralIndex::ndvi);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
    }
}

TEST(Themes, Lookup) {
    EXPECT_EQ(theme_index_lookup("vegetation").index, SpectralIndex::ndvi);
    EXPECT_EQ(theme_index_lookup("water").index, SpectralIndex::ndwi);
    EXPECT_EQ(theme_index_lookup("urban").index, SpectralIndex::ndbi);
    EXPECT_EQ(theme_index_lookup("snow").index, SpectralIndex::ndsi);
    EXPECT_EQ(default_threshold(SpectralIndex::ndvi), 0.3);
    EXPECT_EQ(default_threshold(SpectralIndex::ndwi), 0.2);
    try {
        theme_index_lookup("plasma");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::unknown_theme);
    }
}

TEST(Scenes, CropAndIoRoundTrip) {
    auto s = random_bandset(4, 20, 16);
    s.capture_time = parse_rfc3339("2022-07-01T00:00:00Z");
    s.gsd_m = 10.0;
    const auto c = crop_bandset(s, AOI{0.5, 0, 1, 0.5});
    EXPECT_EQ(c.band("B2").width, 10);
    EXPECT_EQ(c.band("B2").at(0, 0), s.band("B2").at(10, 0));
    const auto dir = eogym::testing::temp_dir("scene");
    write_bandset(dir / "s", s);
    const auto back = read_bandset(dir / "s");
    EXPECT_EQ(back.platform, s.platform);
    EXPECT_EQ(back.capture_time, s.capture_time);
    EXPECT_EQ(back.bands.size(), s.bands.size());
    EXPECT_EQ(back.band("B11").pixels, s.band("B11").pixels);
    EXPECT_THROW(read_bandset(dir / "missing"), Error);
}

TEST(Scenes, FixtureScenesLoadFromIndex) {
    const auto& env = eogym::testing::fixture_env();
    int loaded = 0;
    for (const auto& r : env.index->records()) {
        if (r.modality != Modality::multispectral_scene) continue;
        const auto s = load_bandset(*env.index, r);
        EXPECT_NO_THROW(s.validate());
        EXPECT_EQ(s.bands.size(), 5u);
        ++loaded;
    }
    EXPECT_EQ(loaded, 5);
}
