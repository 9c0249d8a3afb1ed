#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eogym/datalake.hpp"
#include "eogym/raster.hpp"

namespace eogym {

enum class Platform { landsat8, landsat9, sentinel2a, sentinel2b, synthetic };

std::string_view to_string(Platform p);
Platform parse_platform(std::string_view text);  // throws Error(unknown_platform)

enum class BandRole {
    coastal_aerosol,
    blue,
    green,
    red,
    red_edge,
    nir,
    narrow_nir,
    water_vapor,
    swir1,
    swir2,
    thermal,
    scene_classification,
    cloud_probability,
};

std::string_view to_string(BandRole r);

struct BandInfo {
    std::string name;
    BandRole role;
};

// Band files and physical roles exposed per platform, in file-listing order.
const std::vector<BandInfo>& band_roles(Platform p);
// Name of the band carrying `role` on `p`, if any.
std::optional<std::string> band_for_role(Platform p, BandRole role);

struct BandSet {
    Platform platform = Platform::synthetic;
    std::map<std::string, RasterPatch> bands;  // single channel, reflectance in [0,1]
    std::optional<UtcTime> capture_time;
    std::optional<double> gsd_m;

    const RasterPatch& band(const std::string& name) const;
    // Throws Error(dimension_mismatch) if bands disagree in size.
    void validate() const;
};

enum class SpectralIndex { ndvi, ndwi, ndbi, ndsi };

std::string_view to_string(SpectralIndex i);
SpectralIndex parse_spectral_index(std::string_view text);

// Normalized difference (first - second) / (first + second).
std::pair<BandRole, BandRole> index_roles(SpectralIndex i);
double default_threshold(SpectralIndex i);

struct IndexStats {
    double mean = 0.0;
    double median = 0.0;
    double fraction_above = 0.0;
    std::size_t valid_pixels = 0;
};

struct IndexResult {
    SpectralIndex index = SpectralIndex::ndvi;
    int width = 0;
    int height = 0;
    std::vector<double> values;  // NaN where the denominator is zero
    IndexStats stats;
    double threshold = 0.0;
};

// Scalar normalized difference clamped to [-1,1]; NaN when a + b == 0.
double normalized_difference(double a, double b);

IndexResult compute_index(const BandSet& bands, SpectralIndex index,
                          std::optional<double> threshold = std::nullopt);

enum class Theme { vegetation, water, urban, snow };

std::string_view to_string(Theme t);
Theme parse_theme(std::string_view text);  // throws Error(unknown_theme)

struct ThemeIndex {
    SpectralIndex index;
    std::string expression;
    std::vector<BandRole> required_roles;
};

ThemeIndex theme_index_lookup(std::string_view theme);

// Foreground where the theme's index strictly exceeds the threshold.
BinaryMask thematic_mask(const BandSet& bands, Theme theme, std::optional<double> threshold = std::nullopt);

BandSet crop_bandset(const BandSet& bands, const AOI& aoi);

// Scene folder: scene.json (platform, capture_time, gsd_m) plus <band>.bin per band.
void write_bandset(const std::filesystem::path& dir, const BandSet& bands);
BandSet read_bandset(const std::filesystem::path& dir);
// Loads the bands a multispectral record lists, resolved against the index root.
BandSet load_bandset(const DataLakeIndex& index, const DataLakeRecord& record);

}  // namespace eogym
