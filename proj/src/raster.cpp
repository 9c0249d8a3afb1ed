#include "eogym/raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace eogym {

RasterPatch RasterPatch::filled(int width, int height, int channels, float value) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3))
        throw Error(ErrorCode::invalid_dims, "bad patch shape");
    RasterPatch p;
    p.width = width;
    p.height = height;
    p.channels = channels;
    p.pixels.assign(static_cast<std::size_t>(width) * height * channels, value);
    return p;
}

void RasterPatch::validate() const {
    if (width <= 0 || height <= 0) throw Error(ErrorCode::invalid_dims, "patch dimensions must be positive");
    if (channels != 1 && channels != 3) throw Error(ErrorCode::invalid_dims, "patch must have 1 or 3 channels");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
        throw Error(ErrorCode::invalid_dims, "pixel buffer length does not match shape");
    if (provenance) {
        const auto& p = *provenance;
        if (p.origin_x < 0 || p.origin_y < 0 || p.origin_x + width > p.base_width ||
            p.origin_y + height > p.base_height)
            throw Error(ErrorCode::invalid_dims, "patch window exceeds base image bounds");
    }
}

void validate(const AOI& a) {
    const bool ok = a.x0 >= 0.0 && a.y0 >= 0.0 && a.x1 <= 1.0 && a.y1 <= 1.0 && a.x0 < a.x1 && a.y0 < a.y1;
    if (!ok) throw Error(ErrorCode::degenerate_aoi, "AOI must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
}

PixelWindow aoi_window(const AOI& aoi, int width, int height) {
    validate(aoi);
    const int x0 = static_cast<int>(std::floor(aoi.x0 * width));
    const int y0 = static_cast<int>(std::floor(aoi.y0 * height));
    const int x1 = std::min(width, static_cast<int>(std::ceil(aoi.x1 * width)));
    const int y1 = std::min(height, static_cast<int>(std::ceil(aoi.y1 * height)));
    if (x1 <= x0 || y1 <= y0) throw Error(ErrorCode::degenerate_aoi, "AOI rounds to an empty window");
    return {x0, y0, x1 - x0, y1 - y0};
}

RasterPatch extract(const RasterPatch& source, const PixelWindow& w) {
    if (w.width <= 0 || w.height <= 0 || w.x < 0 || w.y < 0 || w.x + w.width > source.width ||
        w.y + w.height > source.height)
        throw Error(ErrorCode::invalid_dims, "window outside source patch");
    RasterPatch out;
    out.width = w.width;
    out.height = w.height;
    out.channels = source.channels;
    out.pixels.resize(static_cast<std::size_t>(w.width) * w.height * source.channels);
    const std::size_t row = static_cast<std::size_t>(w.width) * source.channels;
    for (int y = 0; y < w.height; ++y) {
        const float* src = &source.pixels[(static_cast<std::size_t>(w.y + y) * source.width + w.x) * source.channels];
        std::copy(src, src + row, &out.pixels[static_cast<std::size_t>(y) * row]);
    }
    if (source.provenance) {
        out.provenance = *source.provenance;
        out.provenance->origin_x += w.x;
        out.provenance->origin_y += w.y;
    }
    return out;
}

RasterPatch crop_aoi(const RasterPatch& patch, const AOI& aoi) {
    return extract(patch, aoi_window(aoi, patch.width, patch.height));
}

namespace {

void check_nav_preconditions(const RasterPatch& base, const RasterPatch& current) {
    if (!current.provenance) throw Error(ErrorCode::missing_provenance, "patch has no base image provenance");
    const auto& p = *current.provenance;
    if (base.width != p.base_width || base.height != p.base_height)
        throw Error(ErrorCode::dimension_mismatch, "base image does not match provenance dimensions");
}

RasterPatch window_of_base(const RasterPatch& base, const Provenance& prov, const PixelWindow& w) {
    RasterPatch bare = base;
    bare.provenance.reset();
    RasterPatch out = extract(bare, w);
    out.provenance = Provenance{prov.base_image_id, w.x, w.y, prov.base_width, prov.base_height};
    return out;
}

}  // namespace

PixelWindow pan_window(const Provenance& prov, int width, int height, PanDirection direction,
                       double step_frac, bool* clamped) {
    if (!(step_frac > 0.0)) throw Error(ErrorCode::invalid_argument, "pan step must be positive");
    int x = prov.origin_x, y = prov.origin_y;
    switch (direction) {
        case PanDirection::left: x -= static_cast<int>(std::lround(step_frac * width)); break;
        case PanDirection::right: x += static_cast<int>(std::lround(step_frac * width)); break;
        case PanDirection::up: y -= static_cast<int>(std::lround(step_frac * height)); break;
        case PanDirection::down: y += static_cast<int>(std::lround(step_frac * height)); break;
    }
    const int cx = std::clamp(x, 0, prov.base_width - width);
    const int cy = std::clamp(y, 0, prov.base_height - height);
    if (clamped) *clamped = cx != x || cy != y;
    return {cx, cy, width, height};
}

PixelWindow zoom_window(const Provenance& prov, int width, int height, double factor, bool* clamped) {
    if (!(factor > 1.0)) throw Error(ErrorCode::invalid_argument, "zoom factor must be greater than 1");
    const long want_w = std::lround(factor * width);
    const long want_h = std::lround(factor * height);
    const int nw = static_cast<int>(std::min<long>(prov.base_width, want_w));
    const int nh = static_cast<int>(std::min<long>(prov.base_height, want_h));
    const int x = static_cast<int>(std::floor(prov.origin_x + (width - nw) / 2.0));
    const int y = static_cast<int>(std::floor(prov.origin_y + (height - nh) / 2.0));
    const int cx = std::clamp(x, 0, prov.base_width - nw);
    const int cy = std::clamp(y, 0, prov.base_height - nh);
    if (clamped) *clamped = nw != want_w || nh != want_h || cx != x || cy != y;
    return {cx, cy, nw, nh};
}

NavResult pan(const RasterPatch& base, const RasterPatch& current, PanDirection direction, double step_frac) {
    check_nav_preconditions(base, current);
    NavResult r;
    const auto w = pan_window(*current.provenance, current.width, current.height, direction, step_frac, &r.clamped);
    r.patch = window_of_base(base, *current.provenance, w);
    return r;
}

NavResult zoom_out(const RasterPatch& base, const RasterPatch& current, double factor) {
    check_nav_preconditions(base, current);
    NavResult r;
    const auto w = zoom_window(*current.provenance, current.width, current.height, factor, &r.clamped);
    r.patch = window_of_base(base, *current.provenance, w);
    return r;
}

// ---------------------------------------------------------------------------

void validate(const BBox& b) {
    const bool finite = std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.x_max) &&
                        std::isfinite(b.y_max);
    if (!finite || !(b.x_min < b.x_max) || !(b.y_min < b.y_max))
        throw Error(ErrorCode::invalid_box, "box requires x_min < x_max and y_min < y_max");
    if (b.score && !(*b.score >= 0.0 && *b.score <= 1.0))
        throw Error(ErrorCode::invalid_box, "box score must lie in [0,1]");
}

std::vector<BBox> normalize_bboxes(std::span<const BBox> boxes, Dims from, Dims to) {
    if (from.width <= 0 || from.height <= 0 || to.width <= 0 || to.height <= 0)
        throw Error(ErrorCode::invalid_dims, "image dimensions must be positive");
    const double sx = static_cast<double>(to.width) / from.width;
    const double sy = static_cast<double>(to.height) / from.height;
    std::vector<BBox> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) {
        BBox n = b;
        n.x_min = b.x_min * sx;
        n.x_max = b.x_max * sx;
        n.y_min = b.y_min * sy;
        n.y_max = b.y_max * sy;
        out.push_back(std::move(n));
    }
    return out;
}

namespace {

double intersection_area(const BBox& a, const BBox& b) {
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    return (w > 0 && h > 0) ? w * h : 0.0;
}

bool box_contains(const BBox& outer, const BBox& inner) {
    return inner.x_min >= outer.x_min && inner.y_min >= outer.y_min && inner.x_max <= outer.x_max &&
           inner.y_max <= outer.y_max;
}

bool box_contains(const BBox& outer, const Point2& p) {
    return p.x >= outer.x_min && p.x <= outer.x_max && p.y >= outer.y_min && p.y <= outer.y_max;
}

BBox clamp_to_frame(BBox b, Dims frame) {
    if (frame.width > 0 && frame.height > 0) {
        b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(frame.width));
        b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(frame.width));
        b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(frame.height));
        b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(frame.height));
    }
    validate(b);
    return b;
}

void check_point(const Point2& p, Dims frame) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw Error(ErrorCode::invalid_box, "non-finite point");
    if (frame.width > 0 && frame.height > 0 &&
        (p.x < 0 || p.y < 0 || p.x > frame.width || p.y > frame.height))
        throw Error(ErrorCode::invalid_box, "point outside frame");
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::string compass_direction(double dx, double dy) {
    static constexpr const char* kSectors[8] = {"right", "upper-right", "above", "upper-left",
                                                "left",  "lower-left",  "below", "lower-right"};
    const double angle = std::atan2(-dy, dx) * 180.0 / std::numbers::pi;  // counter-clockwise, up positive
    int sector = static_cast<int>(std::lround(angle / 45.0)) % 8;
    if (sector < 0) sector += 8;
    return kSectors[sector];
}

BoxRelation bbox_relationship(const Shape& a_in, const Shape& b_in, Dims frame) {
    if (frame.width < 0 || frame.height < 0) throw Error(ErrorCode::invalid_dims, "negative frame dims");
    BoxRelation r;
    auto center = [](const Shape& s) {
        if (const auto* b = std::get_if<BBox>(&s)) return Point2{b->cx(), b->cy()};
        return std::get<Point2>(s);
    };
    Shape a = a_in, b = b_in;
    if (auto* box = std::get_if<BBox>(&a)) *box = clamp_to_frame(*box, frame);
    else check_point(std::get<Point2>(a), frame);
    if (auto* box = std::get_if<BBox>(&b)) *box = clamp_to_frame(*box, frame);
    else check_point(std::get<Point2>(b), frame);

    const Point2 ca = center(a), cb = center(b);
    r.dx = cb.x - ca.x;
    r.dy = cb.y - ca.y;

    const auto* ba = std::get_if<BBox>(&a);
    const auto* bb = std::get_if<BBox>(&b);
    bool touching = false;
    if (ba && bb) {
        r.iou = iou(*ba, *bb);
        r.a_contains_b = box_contains(*ba, *bb);
        r.b_contains_a = box_contains(*bb, *ba);
        touching = intersection_area(*ba, *bb) > 0;
    } else if (ba) {
        r.a_contains_b = box_contains(*ba, std::get<Point2>(b));
    } else if (bb) {
        r.b_contains_a = box_contains(*bb, std::get<Point2>(a));
    } else {
        touching = ca == cb;
    }
    if (r.a_contains_b || r.b_contains_a) r.direction = "contained";
    else if (touching) r.direction = "overlapping";
    else r.direction = compass_direction(r.dx, r.dy);
    return r;
}

// ---------------------------------------------------------------------------

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void BinaryMask::fill_box(const BBox& box) {
    const int x0 = std::max(0, static_cast<int>(std::ceil(box.x_min - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(box.y_min - 0.5)));
    const int x1 = std::min(width, static_cast<int>(std::ceil(box.x_max - 0.5)));
    const int y1 = std::min(height, static_cast<int>(std::ceil(box.y_max - 0.5)));
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) set(x, y);
}

MaskRelation mask_relationship(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height)
        throw Error(ErrorCode::dimension_mismatch, "masks must have equal dimensions");
    MaskRelation r;
    double ax = 0, ay = 0, bx = 0, by = 0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            const bool pa = a.get(x, y), pb = b.get(x, y);
            if (pa) {
                ++r.a_count;
                ax += x + 0.5;
                ay += y + 0.5;
            }
            if (pb) {
                ++r.b_count;
                bx += x + 0.5;
                by += y + 0.5;
            }
            if (pa && pb) ++r.intersection;
            if (pa || pb) ++r.union_count;
        }
    }
    r.both_empty = r.union_count == 0;
    r.iou = r.union_count ? static_cast<double>(r.intersection) / r.union_count : 0.0;
    r.a_frac_in_b = r.a_count ? static_cast<double>(r.intersection) / r.a_count : 0.0;
    r.b_frac_in_a = r.b_count ? static_cast<double>(r.intersection) / r.b_count : 0.0;
    r.a_contains_b = r.b_count > 0 && r.intersection == r.b_count;
    r.b_contains_a = r.a_count > 0 && r.intersection == r.a_count;
    if (r.both_empty) r.relation = "both_empty";
    else if (r.a_contains_b && r.b_contains_a) r.relation = "equal";
    else if (r.a_contains_b) r.relation = "contains";
    else if (r.b_contains_a) r.relation = "contained_by";
    else if (r.intersection > 0) r.relation = "overlap";
    else r.relation = "disjoint";

    if (r.a_count == 0 || r.b_count == 0) {
        r.direction = "undefined";
    } else {
        const double dx = bx / r.b_count - ax / r.a_count;
        const double dy = by / r.b_count - ay / r.a_count;
        r.direction = (dx == 0 && dy == 0) ? "overlapping" : compass_direction(dx, dy);
    }
    return r;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'O', 'P', 'A', 'T', 'C', 'H', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::io_error, "truncated patch header");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_patch(const std::filesystem::path& path, const RasterPatch& patch) {
    patch.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(patch.width));
    put_u32(out, static_cast<std::uint32_t>(patch.height));
    put_u32(out, static_cast<std::uint32_t>(patch.channels));
    for (float f : patch.pixels) put_u32(out, std::bit_cast<std::uint32_t>(f));
    if (!out) throw Error(ErrorCode::io_error, "write failure on " + path.string());
}

RasterPatch read_patch(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw Error(ErrorCode::io_error, "not a patch file: " + path.string());
    RasterPatch p;
    p.width = static_cast<int>(get_u32(in));
    p.height = static_cast<int>(get_u32(in));
    p.channels = static_cast<int>(get_u32(in));
    if (p.width <= 0 || p.height <= 0 || p.width > 1 << 16 || p.height > 1 << 16 || (p.channels != 1 && p.channels != 3))
        throw Error(ErrorCode::invalid_dims, "bad patch header in " + path.string());
    p.pixels.resize(static_cast<std::size_t>(p.width) * p.height * p.channels);
    for (auto& f : p.pixels) f = std::bit_cast<float>(get_u32(in));
    return p;
}

void write_pnm(const std::filesystem::path& path, const RasterPatch& patch) {
    patch.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out << (patch.channels == 3 ? "P6" : "P5") << '\n' << patch.width << ' ' << patch.height << "\n255\n";
    for (float f : patch.pixels) {
        const auto v = static_cast<unsigned char>(std::lround(std::clamp(f, 0.0f, 1.0f) * 255.0f));
        out.put(static_cast<char>(v));
    }
}

}  // namespace eogym
