#include "eogym/spectral.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace eogym {

std::string_view to_string(Platform p) {
    switch (p) {
        case Platform::landsat8: return "landsat8";
        case Platform::landsat9: return "landsat9";
        case Platform::sentinel2a: return "sentinel2a";
        case Platform::sentinel2b: return "sentinel2b";
        case Platform::synthetic: return "synthetic";
    }
    return "synthetic";
}

Platform parse_platform(std::string_view text) {
    for (auto p : {Platform::landsat8, Platform::landsat9, Platform::sentinel2a, Platform::sentinel2b,
                   Platform::synthetic})
        if (text == to_string(p)) return p;
    throw Error(ErrorCode::unknown_platform, "unknown platform '" + std::string(text) + "'");
}

std::string_view to_string(BandRole r) {
    switch (r) {
        case BandRole::coastal_aerosol: return "coastal aerosol";
        case BandRole::blue: return "blue";
        case BandRole::green: return "green";
        case BandRole::red: return "red";
        case BandRole::red_edge: return "red edge";
        case BandRole::nir: return "near infrared";
        case BandRole::narrow_nir: return "narrow near infrared";
        case BandRole::water_vapor: return "water vapor";
        case BandRole::swir1: return "SWIR 1";
        case BandRole::swir2: return "SWIR 2";
        case BandRole::thermal: return "thermal";
        case BandRole::scene_classification: return "scene classification";
        case BandRole::cloud_probability: return "cloud probability";
    }
    return "unknown";
}

const std::vector<BandInfo>& band_roles(Platform p) {
    static const std::vector<BandInfo> landsat = {
        {"SR_B1", BandRole::coastal_aerosol}, {"SR_B2", BandRole::blue},  {"SR_B3", BandRole::green},
        {"SR_B4", BandRole::red},             {"SR_B5", BandRole::nir},   {"SR_B6", BandRole::swir1},
        {"SR_B7", BandRole::swir2},           {"ST_B10", BandRole::thermal},
    };
    static const std::vector<BandInfo> sentinel = {
        {"B1", BandRole::coastal_aerosol},
        {"B11", BandRole::swir1},
        {"B12", BandRole::swir2},
        {"B2", BandRole::blue},
        {"B3", BandRole::green},
        {"B4", BandRole::red},
        {"B5", BandRole::red_edge},
        {"B6", BandRole::red_edge},
        {"B7", BandRole::red_edge},
        {"B8", BandRole::nir},
        {"B8A", BandRole::narrow_nir},
        {"B9", BandRole::water_vapor},
        {"MSK_CLDPRB", BandRole::cloud_probability},
        {"SCL", BandRole::scene_classification},
    };
    // Desk fixtures carry only the bands the four indices need, under Sentinel-2 names.
    static const std::vector<BandInfo> synthetic = {
        {"B2", BandRole::blue}, {"B3", BandRole::green}, {"B4", BandRole::red},
        {"B8", BandRole::nir},  {"B11", BandRole::swir1},
    };
    switch (p) {
        case Platform::landsat8:
        case Platform::landsat9: return landsat;
        case Platform::sentinel2a:
        case Platform::sentinel2b: return sentinel;
        case Platform::synthetic: return synthetic;
    }
    throw Error(ErrorCode::unknown_platform, "unknown platform");
}

std::optional<std::string> band_for_role(Platform p, BandRole role) {
    for (const auto& b : band_roles(p))
        if (b.role == role) return b.name;
    return std::nullopt;
}

const RasterPatch& BandSet::band(const std::string& name) const {
    auto it = bands.find(name);
    if (it == bands.end()) throw Error(ErrorCode::missing_band, "band '" + name + "' not present");
    return it->second;
}

void BandSet::validate() const {
    const RasterPatch* first = nullptr;
    for (const auto& [name, patch] : bands) {
        if (patch.channels != 1) throw Error(ErrorCode::invalid_dims, "band '" + name + "' is not single-channel");
        if (!first) first = &patch;
        else if (patch.width != first->width || patch.height != first->height)
            throw Error(ErrorCode::dimension_mismatch, "band '" + name + "' differs in size");
    }
}

std::string_view to_string(SpectralIndex i) {
    switch (i) {
        case SpectralIndex::ndvi: return "ndvi";
        case SpectralIndex::ndwi: return "ndwi";
        case SpectralIndex::ndbi: return "ndbi";
        case SpectralIndex::ndsi: return "ndsi";
    }
    return "ndvi";
}

SpectralIndex parse_spectral_index(std::string_view text) {
    for (auto i : {SpectralIndex::ndvi, SpectralIndex::ndwi, SpectralIndex::ndbi, SpectralIndex::ndsi})
        if (text == to_string(i)) return i;
    throw Error(ErrorCode::invalid_argument, "unknown spectral index '" + std::string(text) + "'");
}

std::pair<BandRole, BandRole> index_roles(SpectralIndex i) {
    switch (i) {
        case SpectralIndex::ndvi: return {BandRole::nir, BandRole::red};
        case SpectralIndex::ndwi: return {BandRole::green, BandRole::nir};
        case SpectralIndex::ndbi: return {BandRole::swir1, BandRole::nir};
        case SpectralIndex::ndsi: return {BandRole::green, BandRole::swir1};
    }
    return {BandRole::nir, BandRole::red};
}

double default_threshold(SpectralIndex i) {
    switch (i) {
        case SpectralIndex::ndvi: return 0.3;
        case SpectralIndex::ndwi: return 0.2;
        case SpectralIndex::ndbi: return 0.0;
        case SpectralIndex::ndsi: return 0.4;
    }
    return 0.0;
}

double normalized_difference(double a, double b) {
    const double den = a + b;
    if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::clamp((a - b) / den, -1.0, 1.0);
}

IndexResult compute_index(const BandSet& bands, SpectralIndex index, std::optional<double> threshold) {
    const auto [first_role, second_role] = index_roles(index);
    const auto first_name = band_for_role(bands.platform, first_role);
    const auto second_name = band_for_role(bands.platform, second_role);
    if (!first_name || !second_name)
        throw Error(ErrorCode::missing_band, std::string(to_string(bands.platform)) + " lacks bands for " +
                                                 std::string(to_string(index)));
    const RasterPatch& a = bands.band(*first_name);
    const RasterPatch& b = bands.band(*second_name);
    if (a.width != b.width || a.height != b.height || a.channels != 1 || b.channels != 1)
        throw Error(ErrorCode::dimension_mismatch, "index bands differ in shape");

    IndexResult r;
    r.index = index;
    r.width = a.width;
    r.height = a.height;
    r.threshold = threshold.value_or(default_threshold(index));
    r.values.resize(a.pixels.size());
    std::vector<double> valid;
    valid.reserve(a.pixels.size());
    double sum = 0.0;
    std::size_t above = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double v = normalized_difference(a.pixels[i], b.pixels[i]);
        r.values[i] = v;
        if (std::isnan(v)) continue;
        valid.push_back(v);
        sum += v;
        if (v > r.threshold) ++above;
    }
    r.stats.valid_pixels = valid.size();
    if (!valid.empty()) {
        r.stats.mean = sum / static_cast<double>(valid.size());
        r.stats.fraction_above = static_cast<double>(above) / static_cast<double>(valid.size());
        std::sort(valid.begin(), valid.end());
        const std::size_t n = valid.size();
        r.stats.median = n % 2 ? valid[n / 2] : 0.5 * (valid[n / 2 - 1] + valid[n / 2]);
    } else {
        r.stats.mean = r.stats.median = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

std::string_view to_string(Theme t) {
    switch (t) {
        case Theme::vegetation: return "vegetation";
        case Theme::water: return "water";
        case Theme::urban: return "urban";
        case Theme::snow: return "snow";
    }
    return "vegetation";
}

Theme parse_theme(std::string_view text) {
    std::string t;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto th : {Theme::vegetation, Theme::water, Theme::urban, Theme::snow})
        if (t == to_string(th)) return th;
    throw Error(ErrorCode::unknown_theme,
                "unknown theme '" + std::string(text) + "'; known themes: vegetation, water, urban, snow");
}

ThemeIndex theme_index_lookup(std::string_view theme) {
    switch (parse_theme(theme)) {
        case Theme::vegetation:
            return {SpectralIndex::ndvi, "(NIR - Red) / (NIR + Red)", {BandRole::nir, BandRole::red}};
        case Theme::water:
            return {SpectralIndex::ndwi, "(Green - NIR) / (Green + NIR)", {BandRole::green, BandRole::nir}};
        case Theme::urban:
            return {SpectralIndex::ndbi, "(SWIR1 - NIR) / (SWIR1 + NIR)", {BandRole::swir1, BandRole::nir}};
        case Theme::snow:
            return {SpectralIndex::ndsi, "(Green - SWIR1) / (Green + SWIR1)", {BandRole::green, BandRole::swir1}};
    }
    throw Error(ErrorCode::unknown_theme, "unknown theme");
}

BinaryMask thematic_mask(const BandSet& bands, Theme theme, std::optional<double> threshold) {
    const auto lookup = theme_index_lookup(to_string(theme));
    const auto r = compute_index(bands, lookup.index, threshold);
    BinaryMask m = BinaryMask::empty(r.width, r.height);
    for (std::size_t i = 0; i < r.values.size(); ++i)
        m.bits[i] = (!std::isnan(r.values[i]) && r.values[i] > r.threshold) ? 1 : 0;
    return m;
}

BandSet crop_bandset(const BandSet& bands, const AOI& aoi) {
    bands.validate();
    BandSet out = bands;
    for (auto& [name, patch] : out.bands) patch = crop_aoi(bands.bands.at(name), aoi);
    return out;
}

void write_bandset(const std::filesystem::path& dir, const BandSet& bands) {
    std::filesystem::create_directories(dir);
    nlohmann::json scene = {{"platform", std::string(to_string(bands.platform))}};
    if (bands.capture_time) scene["capture_time"] = format_rfc3339(*bands.capture_time);
    if (bands.gsd_m) scene["gsd_m"] = *bands.gsd_m;
    std::ofstream(dir / "scene.json") << scene.dump(2) << '\n';
    for (const auto& [name, patch] : bands.bands) write_patch(dir / (name + ".bin"), patch);
}

BandSet read_bandset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "scene.json");
    if (!in) throw Error(ErrorCode::io_error, "missing scene descriptor in " + dir.string());
    nlohmann::json scene;
    try {
        in >> scene;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::io_error, std::string("bad scene descriptor: ") + e.what());
    }
    BandSet out;
    out.platform = parse_platform(scene.value("platform", std::string{"synthetic"}));
    if (scene.contains("capture_time")) out.capture_time = parse_rfc3339(scene["capture_time"].get<std::string>());
    if (scene.contains("gsd_m")) out.gsd_m = scene["gsd_m"].get<double>();
    for (const auto& b : band_roles(out.platform)) {
        const auto file = dir / (b.name + ".bin");
        if (std::filesystem::exists(file)) out.bands.emplace(b.name, read_patch(file));
    }
    out.validate();
    return out;
}

BandSet load_bandset(const DataLakeIndex& index, const DataLakeRecord& record) {
    if (record.modality != Modality::multispectral_scene)
        throw Error(ErrorCode::illegal_arguments, "record '" + record.record_id + "' is not a multispectral scene");
    BandSet out;
    out.platform = parse_platform(record.sensor);
    out.capture_time = record.capture_time;
    out.gsd_m = record.gsd_m;
    for (const auto& b : record.band_files) out.bands.emplace(b.band_name, read_patch(index.resolve(b.path)));
    out.validate();
    return out;
}

}  // namespace eogym
