#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "eogym/error.hpp"

namespace eogym {

// Where a patch sits inside its base image, in base pixels.
struct Provenance {
    std::string base_image_id;
    int origin_x = 0;
    int origin_y = 0;
    int base_width = 0;
    int base_height = 0;

    bool operator==(const Provenance&) const = default;
};

// Row-major, channel-interleaved pixels in [0,1]. Channels is 1 (mask/SAR/band) or 3 (RGB).
struct RasterPatch {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> pixels;
    std::optional<Provenance> provenance;

    static RasterPatch filled(int width, int height, int channels, float value = 0.0f);

    float& at(int x, int y, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    // Throws Error(invalid_dims) on buffer/shape mismatch or out-of-bounds provenance.
    void validate() const;

    bool operator==(const RasterPatch&) const = default;
};

// Normalized, axis-aligned window.
struct AOI {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

// Throws Error(degenerate_aoi) unless 0 <= x0 < x1 <= 1 and likewise for y.
void validate(const AOI& aoi);

struct PixelWindow {
    int x = 0, y = 0, width = 0, height = 0;

    bool operator==(const PixelWindow&) const = default;
    bool contains(const PixelWindow& o) const {
        return o.x >= x && o.y >= y && o.x + o.width <= x + width && o.y + o.height <= y + height;
    }
};

// Pixel window an AOI covers in a width x height patch: floor on the min edge, ceil on the max edge.
PixelWindow aoi_window(const AOI& aoi, int width, int height);

RasterPatch extract(const RasterPatch& source, const PixelWindow& window);

RasterPatch crop_aoi(const RasterPatch& patch, const AOI& aoi);

enum class PanDirection { up, down, left, right };

struct NavResult {
    RasterPatch patch;
    bool clamped = false;  // the move hit the base image edge
};

// `base` is the full base image the current window's provenance refers to.
NavResult pan(const RasterPatch& base, const RasterPatch& current, PanDirection direction,
              double step_frac = 0.5);
NavResult zoom_out(const RasterPatch& base, const RasterPatch& current, double factor = 2.0);

// Window arithmetic behind pan/zoom_out, exposed for property tests.
PixelWindow pan_window(const Provenance& prov, int width, int height, PanDirection direction,
                       double step_frac, bool* clamped = nullptr);
PixelWindow zoom_window(const Provenance& prov, int width, int height, double factor,
                        bool* clamped = nullptr);

// ---------------------------------------------------------------------------
// Boxes

struct BBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    std::string label;
    std::optional<double> score;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x_min + x_max); }
    double cy() const { return 0.5 * (y_min + y_max); }

    bool operator==(const BBox&) const = default;
};

void validate(const BBox& b);

struct Point2 {
    double x = 0, y = 0;
    bool operator==(const Point2&) const = default;
};

using Shape = std::variant<BBox, Point2>;

struct Dims {
    int width = 0;
    int height = 0;
};

std::vector<BBox> normalize_bboxes(std::span<const BBox> boxes, Dims from, Dims to);

double iou(const BBox& a, const BBox& b);

// One of right, upper-right, above, upper-left, left, lower-left, below,
// lower-right. Image convention: +y points down, so "below" means larger y.
std::string compass_direction(double dx, double dy);

struct BoxRelation {
    std::string direction;  // compass word, "overlapping" or "contained"
    double iou = 0.0;
    double dx = 0.0, dy = 0.0;  // b center minus a center
    bool a_contains_b = false;
    bool b_contains_a = false;
};

BoxRelation bbox_relationship(const Shape& a, const Shape& b, Dims frame);

// ---------------------------------------------------------------------------
// Masks

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;  // 0 or 1, row-major

    static BinaryMask empty(int width, int height) {
        return {width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
    }
    bool get(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const;
    // Marks every pixel whose center lies inside the box.
    void fill_box(const BBox& box);

    bool operator==(const BinaryMask&) const = default;
};

struct MaskRelation {
    std::string relation;  // disjoint, overlap, contains, contained_by, equal, both_empty
    double iou = 0.0;
    double a_frac_in_b = 0.0;
    double b_frac_in_a = 0.0;
    bool a_contains_b = false;
    bool b_contains_a = false;
    bool both_empty = false;
    std::string direction;  // centroid of a to centroid of b, "undefined" if either is empty
    std::size_t a_count = 0, b_count = 0, intersection = 0, union_count = 0;
};

MaskRelation mask_relationship(const BinaryMask& a, const BinaryMask& b);

// ---------------------------------------------------------------------------
// I/O: "EOPATCH1" + u32 width, height, channels (little-endian) + f32 LE pixels.

void write_patch(const std::filesystem::path& path, const RasterPatch& patch);
RasterPatch read_patch(const std::filesystem::path& path);
// PPM for 3 channels, PGM for 1.
void write_pnm(const std::filesystem::path& path, const RasterPatch& patch);

}  // namespace eogym
