#include <algorithm>
#include <cmath>
#include <fstream>

#include "eogym/harness.hpp"
#include "eogym/rng.hpp"

namespace eogym {

using nlohmann::json;

json to_json(const FixtureSpec& s) {
    return {{"seed", s.seed},
            {"image_size", s.image_size},
            {"base_size", s.base_size},
            {"crop_size", s.crop_size},
            {"sequence_length", s.sequence_length},
            {"scene_count", s.scene_count},
            {"scene_size", s.scene_size},
            {"vocabulary", s.vocabulary}};
}

FixtureSpec fixture_spec_from_json(const json& j) {
    FixtureSpec s;
    s.seed = j.value("seed", s.seed);
    s.image_size = j.value("image_size", s.image_size);
    s.base_size = j.value("base_size", s.base_size);
    s.crop_size = j.value("crop_size", s.crop_size);
    s.sequence_length = j.value("sequence_length", s.sequence_length);
    s.scene_count = j.value("scene_count", s.scene_count);
    s.scene_size = j.value("scene_size", s.scene_size);
    if (j.contains("vocabulary")) s.vocabulary = j["vocabulary"].get<std::vector<std::string>>();
    return s;
}

namespace {

struct Rgb {
    float r, g, b;
};

Rgb color_of(const std::string& attribute) {
    if (attribute == "red") return {0.80f, 0.10f, 0.10f};
    if (attribute == "blue") return {0.15f, 0.25f, 0.80f};
    if (attribute == "white") return {0.92f, 0.92f, 0.92f};
    if (attribute == "yellow") return {0.90f, 0.85f, 0.20f};
    if (attribute == "green") return {0.20f, 0.60f, 0.25f};
    if (attribute == "gray") return {0.55f, 0.55f, 0.55f};
    if (attribute == "brown") return {0.45f, 0.30f, 0.15f};
    if (attribute == "charred") return {0.08f, 0.07f, 0.06f};
    return {0.10f, 0.30f, 0.50f};  // open water
}

std::string hex12(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf).substr(0, 12);
}

std::string content_id(const std::string& prefix, const RasterPatch& p) {
    const std::string_view bytes(reinterpret_cast<const char*>(p.pixels.data()), p.pixels.size() * sizeof(float));
    return prefix + "-" + hex12(fnv1a64(bytes, fnv1a64(prefix)));
}

RasterPatch optical_canvas(Rng& rng, int w, int h) {
    RasterPatch p = RasterPatch::filled(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float n = static_cast<float>(rng.uniform(-0.03, 0.03));
            p.at(x, y, 0) = 0.34f + n;
            p.at(x, y, 1) = 0.36f + n;
            p.at(x, y, 2) = 0.30f + n;
        }
    return p;
}

RasterPatch sar_canvas(Rng& rng, int w, int h) {
    RasterPatch p = RasterPatch::filled(w, h, 1);
    for (auto& v : p.pixels) v = static_cast<float>(std::min(1.0, 0.08 * -std::log(1.0 - rng.uniform())));
    return p;
}

void paint_optical(RasterPatch& p, const BBox& b, const std::string& attribute, Rng& rng) {
    const Rgb c = color_of(attribute);
    for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y)
        for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x) {
            const float n = static_cast<float>(rng.uniform(-0.02, 0.02));
            p.at(x, y, 0) = std::clamp(c.r + n, 0.0f, 1.0f);
            p.at(x, y, 1) = std::clamp(c.g + n, 0.0f, 1.0f);
            p.at(x, y, 2) = std::clamp(c.b + n, 0.0f, 1.0f);
        }
}

void paint_sar(RasterPatch& p, const BBox& b, Rng& rng) {
    for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y)
        for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x)
            p.at(x, y) = static_cast<float>(rng.uniform(0.75, 0.95));
}

bool overlaps(const BBox& a, const BBox& b, int margin) {
    return a.x_min < b.x_max + margin && b.x_min < a.x_max + margin && a.y_min < b.y_max + margin &&
           b.y_min < a.y_max + margin;
}

// Random integer box of side [lo, hi] inside `area`, clear of `taken` by `margin` pixels.
BBox place(Rng& rng, const BBox& area, int lo, int hi, const std::vector<BBox>& taken, const std::string& label,
           int margin = 2) {
    for (int attempt = 0; attempt < 5000; ++attempt) {
        const int w = rng.between(lo, hi), h = rng.between(lo, hi);
        const int x_hi = static_cast<int>(area.x_max) - w, y_hi = static_cast<int>(area.y_max) - h;
        if (x_hi < area.x_min || y_hi < area.y_min) continue;
        const int x = rng.between(static_cast<int>(area.x_min), x_hi);
        const int y = rng.between(static_cast<int>(area.y_min), y_hi);
        BBox b{double(x), double(y), double(x + w), double(y + h), label, std::nullopt};
        if (std::none_of(taken.begin(), taken.end(), [&](const BBox& t) { return overlaps(b, t, margin); })) return b;
    }
    throw Error(ErrorCode::invalid_argument, "fixture layout too crowded for '" + label + "'");
}

// Independent eight-way classifier by slope comparison (+y is down).
std::string compass8(double dx, double dy) {
    const double up = -dy, t = std::tan(std::acos(-1.0) / 8.0);
    if (std::fabs(up) <= t * std::fabs(dx)) return dx >= 0 ? "right" : "left";
    if (std::fabs(dx) <= t * std::fabs(up)) return up > 0 ? "above" : "below";
    if (up > 0) return dx > 0 ? "upper-right" : "upper-left";
    return dx > 0 ? "lower-right" : "lower-left";
}

// num/den to two decimals, half away from zero, in integer arithmetic.
std::string two_decimals(long num, long den) {
    const long hundredths = (200 * num + den) / (2 * den);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%ld.%02ld", hundredths / 100, hundredths % 100);
    return buf;
}

json box_arg(const BBox& b) {
    return json::array({static_cast<int>(b.x_min), static_cast<int>(b.y_min), static_cast<int>(b.x_max),
                        static_cast<int>(b.y_max)});
}

bool intersects_window(const BBox& b, int wx, int wy, int ww, int wh) {
    return b.x_min < wx + ww && b.x_max > wx && b.y_min < wy + wh && b.y_max > wy;
}

bool inside_window(const BBox& b, int wx, int wy, int ww, int wh) {
    return b.x_min >= wx && b.y_min >= wy && b.x_max <= wx + ww && b.y_max <= wy + wh;
}

struct Builder {
    const FixtureSpec& spec;
    std::filesystem::path dir;
    Rng rng;
    std::vector<DataLakeRecord> records;
    AnnotationStore annotations;
    std::vector<Task> tasks;

    Builder(const FixtureSpec& s, std::filesystem::path d) : spec(s), dir(std::move(d)), rng(s.seed) {}

    UtcTime day(int y, int m, int d) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
        return parse_rfc3339(buf);
    }

    DataLakeRecord save_image(const std::string& prefix, const RasterPatch& p, Modality modality, std::string sensor) {
        DataLakeRecord r;
        r.record_id = content_id(prefix, p);
        r.modality = modality;
        r.sensor = std::move(sensor);
        r.gsd_m = 0.5;
        r.path = "images/" + r.record_id + ".bin";
        write_patch(dir / r.path, p);
        return r;
    }

    void annotate(const std::string& id, std::vector<GroundTruthObject> objects, std::optional<std::string> scene = {}) {
        annotations.add({id, std::move(scene), std::move(objects)});
    }

    static GroundTruthObject obj(const BBox& b, std::optional<std::string> attribute = {},
                                 std::optional<std::string> damage = {}) {
        return {b.label, b, std::move(damage), std::move(attribute)};
    }

    static ReferenceCall call(std::string name, json args) { return {std::move(name), std::move(args)}; }

    void add_task(std::string id, std::string question, std::vector<std::string> start, DatasetFamily family,
                  EoTask eo, std::string answer, std::vector<ReferenceCall> calls, AnswerRule rule,
                  bool deferred = false) {
        Task t;
        t.task_id = std::move(id);
        t.question = std::move(question);
        t.start_records = std::move(start);
        t.dataset_family = family;
        t.eo_task = eo;
        t.reference_answer = std::move(answer);
        t.reference_calls = std::move(calls);
        t.L = static_cast<int>(t.reference_calls.size());
        t.deferred = deferred;
        t.answer_rule = std::move(rule);
        tasks.push_back(std::move(t));
    }

    static AnswerRule count_rule(int step = -1) {
        AnswerRule r;
        r.kind = AnswerRule::Kind::count;
        r.step = step;
        return r;
    }

    static AnswerRule value_rule(std::string field, int decimals = -1) {
        AnswerRule r;
        r.kind = AnswerRule::Kind::value;
        r.field = std::move(field);
        r.decimals = decimals;
        return r;
    }

    BBox full(int size) const { return {0, 0, double(size), double(size), {}, std::nullopt}; }

    std::string pick(const std::vector<std::string>& options) { return options[rng.below(options.size())]; }

    // --- single optical images ------------------------------------------------

    void harbor_image() {
        const int n = spec.image_size;
        RasterPatch p = optical_canvas(rng, n, n);
        std::vector<BBox> taken;
        std::vector<GroundTruthObject> objs;
        const BBox harbor = place(rng, full(n), 36, 44, taken, "harbor");
        taken.push_back(harbor);
        paint_optical(p, harbor, "water", rng);
        objs.push_back(obj(harbor));

        const BBox inner{harbor.x_min + 2, harbor.y_min + 2, harbor.x_max - 2, harbor.y_max - 2, {}, std::nullopt};
        const int ships = rng.between(2, 4);
        std::vector<BBox> ship_boxes;
        for (int i = 0; i < ships; ++i) {
            ship_boxes.push_back(place(rng, inner, 5, 9, ship_boxes, "ship", 1));
            paint_optical(p, ship_boxes.back(), "white", rng);
            objs.push_back(obj(ship_boxes.back(), "white"));
        }
        int vehicles = 0;
        for (const char* label : {"car", "truck"}) {
            const int count = std::string(label) == "car" ? rng.between(2, 4) : rng.between(1, 2);
            for (int i = 0; i < count; ++i) {
                taken.push_back(place(rng, full(n), 4, 7, taken, label));
                const std::string attr = pick({"blue", "red", "yellow", "white"});
                paint_optical(p, taken.back(), attr, rng);
                objs.push_back(obj(taken.back(), attr));
                ++vehicles;
            }
        }
        auto rec = save_image("dior", p, Modality::optical_rgb, "aerial");
        annotate(rec.record_id, objs, "harbor");
        const auto id = rec.record_id;
        records.push_back(std::move(rec));

        add_task("dior-count-ships", "How many ships are in this image?", {id}, DatasetFamily::dior,
                 EoTask::object_counting, std::to_string(ships),
                 {call("get_object_bbox_by_optical_image", {{"image", id}, {"target", "ship"}})}, count_rule());
        add_task("dior-count-vehicles", "How many vehicles (cars and trucks) are in this image?", {id},
                 DatasetFamily::dior, EoTask::object_counting, std::to_string(vehicles),
                 {call("get_object_bbox_by_optical_image", {{"image", id}, {"target", "vehicle"}})}, count_rule());
        add_task("dior-harbor-ships",
                 "How does the harbor area relate spatially to the ships: contains, contained_by, overlap or disjoint?",
                 {id}, DatasetFamily::dior, EoTask::geospatial_reasoning, "contains",
                 {call("get_object_mask_by_optical_image", {{"image", id}, {"target", "harbor"}}),
                  call("get_object_mask_by_optical_image", {{"image", id}, {"target", "ship"}}),
                  call("get_mask_geospatial_relationship", {{"mask_a", "mask-0"}, {"mask_b", "mask-1"}})},
                 value_rule("relation"));
        add_task("dior-scene", "What kind of scene does this image show?", {id}, DatasetFamily::dior,
                 EoTask::visual_understanding, "harbor", {call("analyze_optical_scene", {{"image", id}})},
                 value_rule("scene"));
    }

    void airport_image() {
        const int n = spec.image_size;
        RasterPatch p = optical_canvas(rng, n, n);
        std::vector<BBox> taken;
        std::vector<GroundTruthObject> objs;
        const BBox plane = place(rng, full(n), 14, 20, taken, "plane", 6);
        taken.push_back(plane);
        const BBox tank = place(rng, full(n), 9, 13, taken, "storage tank", 6);
        taken.push_back(tank);
        paint_optical(p, plane, "white", rng);
        paint_optical(p, tank, "gray", rng);
        objs.push_back(obj(plane, "white"));
        objs.push_back(obj(tank, "gray"));
        for (int i = rng.between(2, 3); i > 0; --i) {
            taken.push_back(place(rng, full(n), 4, 6, taken, "car"));
            paint_optical(p, taken.back(), "blue", rng);
            objs.push_back(obj(taken.back(), "blue"));
        }
        auto rec = save_image("dior", p, Modality::optical_rgb, "aerial");
        annotate(rec.record_id, objs, "airport");
        const auto id = rec.record_id;
        records.push_back(std::move(rec));

        const std::string dir = compass8(tank.cx() - plane.cx(), tank.cy() - plane.cy());
        add_task("dior-tank-direction", "In which compass direction does the storage tank lie as seen from the plane?",
                 {id}, DatasetFamily::dior, EoTask::geospatial_reasoning, dir,
                 {call("get_object_bbox_by_optical_image", {{"image", id}, {"target", "plane"}}),
                  call("get_object_bbox_by_optical_image", {{"image", id}, {"target", "storage tank"}}),
                  call("get_bbox_geospatial_relationship", {{"a", box_arg(plane)}, {"b", box_arg(tank)}})},
                 value_rule("direction"));
    }

    void dota_image() {
        const int n = spec.image_size;
        RasterPatch p = optical_canvas(rng, n, n);
        std::vector<BBox> taken;
        std::vector<GroundTruthObject> objs;
        const int ships = rng.between(2, 4), planes = rng.between(2, 3);
        for (int i = 0; i < ships; ++i) {
            taken.push_back(place(rng, full(n), 5, 9, taken, "ship"));
            paint_optical(p, taken.back(), "white", rng);
            objs.push_back(obj(taken.back(), "white"));
        }
        for (int i = 0; i < planes; ++i) {
            taken.push_back(place(rng, full(n), 10, 14, taken, "plane"));
            paint_optical(p, taken.back(), "gray", rng);
            objs.push_back(obj(taken.back(), "gray"));
        }
        auto rec = save_image("dota", p, Modality::optical_rgb, "aerial");
        annotate(rec.record_id, objs, "airport");
        const auto id = rec.record_id;
        records.push_back(std::move(rec));

        add_task("dota-ships-plus-planes", "How many ships and planes are there in total?", {id}, DatasetFamily::dota,
                 EoTask::object_counting, std::to_string(ships + planes),
                 {call("get_object_bbox_by_optical_image", {{"image", id}, {"target", "ship"}}),
                  call("get_object_bbox_by_optical_image", {{"image", id}, {"target", "plane"}}),
                  call("basic_calculator", {{"expression", std::to_string(ships) + "+" + std::to_string(planes)}})},
                 value_rule("value"));
    }

    void xview_image() {
        const int n = spec.image_size;
        RasterPatch p = optical_canvas(rng, n, n);
        std::vector<BBox> taken;
        std::vector<GroundTruthObject> objs;
        const int half = static_cast<int>(std::ceil(0.5 * n));
        int left_cars = 0;
        for (int i = rng.between(3, 6); i > 0; --i) {
            taken.push_back(place(rng, full(n), 4, 7, taken, "car"));
            paint_optical(p, taken.back(), "blue", rng);
            objs.push_back(obj(taken.back(), "blue"));
            if (intersects_window(taken.back(), 0, 0, half, n)) ++left_cars;
        }
        taken.push_back(place(rng, full(n), 7, 11, taken, "truck"));
        paint_optical(p, taken.back(), "red", rng);
        objs.push_back(obj(taken.back(), "red"));
        taken.push_back(place(rng, full(n), 10, 14, taken, "building"));
        paint_optical(p, taken.back(), "brown", rng);
        objs.push_back(obj(taken.back(), "brown"));

        auto rec = save_image("xview", p, Modality::optical_rgb, "satellite");
        annotate(rec.record_id, objs, "parking lot");
        const auto id = rec.record_id;
        records.push_back(std::move(rec));

        add_task("xview-left-cars", "How many cars lie at least partly in the left half of the image?", {id},
                 DatasetFamily::xview, EoTask::spatial_navigation, std::to_string(left_cars),
                 {call("crop_optical_or_sar_image", {{"image", id}, {"x0", 0}, {"y0", 0}, {"x1", 0.5}, {"y1", 1}}),
                  call("get_object_bbox_by_optical_image", {{"image", "img-0"}, {"target", "car"}})},
                 count_rule());
        add_task("xview-truck-color", "What color is the truck?", {id}, DatasetFamily::xview,
                 EoTask::visual_understanding, "red",
                 {call("describe_optical_object", {{"image", id}, {"target", "truck"}})}, value_rule("attribute"));
    }

    // --- temporal optical sequence --------------------------------------------

    void fmow_sequence() {
        const int n = spec.image_size, frames = std::max(3, spec.sequence_length);
        const GeoPoint where{37.7749 + rng.uniform(-0.01, 0.01), -122.4194 + rng.uniform(-0.01, 0.01)};
        std::vector<BBox> buildings;
        std::vector<int> counts;
        std::vector<std::string> ids;
        const std::string sequence = "fmow-" + hex12(rng.next_u64());
        for (int f = 0; f < frames; ++f) {
            const int add = f == 0 ? rng.between(2, 3) : rng.between(f == 2 ? 1 : 0, 2);
            for (int i = 0; i < add; ++i) buildings.push_back(place(rng, full(n), 8, 12, buildings, "building", 3));
            RasterPatch p = optical_canvas(rng, n, n);
            std::vector<GroundTruthObject> objs;
            for (const auto& b : buildings) {
                paint_optical(p, b, "brown", rng);
                objs.push_back(obj(b, "brown"));
            }
            std::vector<BBox> taken = buildings;
            for (int i = rng.between(1, 3); i > 0; --i) {
                taken.push_back(place(rng, full(n), 3, 5, taken, "car"));
                paint_optical(p, taken.back(), "white", rng);
                objs.push_back(obj(taken.back(), "white"));
            }
            auto rec = save_image("fmow", p, Modality::optical_rgb, "satellite");
            rec.location = where;
            rec.capture_time = UtcTime{day(2019, 1, 1).seconds + static_cast<std::int64_t>(f) * 90 * 86400};
            rec.sequence_id = sequence;
            rec.frame_index = f;
            annotate(rec.record_id, objs, "construction site");
            ids.push_back(rec.record_id);
            counts.push_back(static_cast<int>(buildings.size()));
            records.push_back(std::move(rec));
        }
        add_task("fmow-latest-buildings", "How many buildings are visible in the most recent image of this sequence?",
                 {ids[0]}, DatasetFamily::fmow, EoTask::temporal_reasoning, std::to_string(counts.back()),
                 {call("get_optical_image_list", {{"image", ids[0]}}),
                  call("get_object_bbox_by_optical_image", {{"image", ids.back()}, {"target", "building"}})},
                 count_rule());
        add_task("fmow-new-buildings", "How many more buildings are there in the next image than in this one?", {ids[1]},
                 DatasetFamily::fmow, EoTask::temporal_reasoning, std::to_string(counts[2] - counts[1]),
                 {call("get_next_optical_image", {{"image", ids[1]}}),
                  call("get_object_bbox_by_optical_image", {{"image", ids[1]}, {"target", "building"}}),
                  call("get_object_bbox_by_optical_image", {{"image", ids[2]}, {"target", "building"}}),
                  call("basic_calculator",
                       {{"expression", std::to_string(counts[2]) + "-" + std::to_string(counts[1])}})},
                 value_rule("value"));
    }

    // --- large base image with a window record ---------------------------------

    void fair1m_base() {
        const int n = spec.base_size, c = spec.crop_size;
        RasterPatch base = optical_canvas(rng, n, n);
        std::vector<BBox> taken;
        std::vector<GroundTruthObject> objs;
        for (int i = 0; i < 14; ++i) {
            const bool plane = i % 2 == 0;
            taken.push_back(place(rng, full(n), plane ? 9 : 5, plane ? 13 : 8, taken, plane ? "plane" : "ship"));
            paint_optical(base, taken.back(), plane ? "white" : "gray", rng);
            objs.push_back(obj(taken.back(), plane ? "white" : "gray"));
        }
        auto base_rec = save_image("fair1m", base, Modality::optical_rgb, "satellite");
        base_rec.location = GeoPoint{31.2304 + rng.uniform(-0.01, 0.01), 121.4737 + rng.uniform(-0.01, 0.01)};
        annotate(base_rec.record_id, objs, "airport");

        const int ox = (n - c) / 2, oy = (n - c) / 2;
        RasterPatch window = extract(base, {ox, oy, c, c});
        window.provenance.reset();
        auto crop_rec = save_image("fair1m", window, Modality::optical_rgb, "satellite");
        crop_rec.location = base_rec.location;
        crop_rec.base_image_id = BaseImageRef{base_rec.record_id, ox, oy};
        const auto crop_id = crop_rec.record_id;
        records.push_back(std::move(base_rec));
        records.push_back(std::move(crop_rec));

        // Window after a half-window move to the right, clamped to the base.
        const int rx = std::clamp(ox + static_cast<int>(std::lround(0.5 * c)), 0, n - c);
        int full_planes = 0;
        for (const auto& o : objs)
            if (o.label == "plane" && inside_window(o.box, rx, oy, c, c)) ++full_planes;
        AnswerRule visible = count_rule();
        visible.exclude_partial = true;
        add_task("fair1m-move-right", "Move the view right by half a window. How many planes are fully visible in the new view?",
                 {crop_id}, DatasetFamily::fair1m, EoTask::spatial_navigation, std::to_string(full_planes),
                 {call("move_right_optical_image", {{"image", crop_id}}),
                  call("get_object_bbox_by_optical_image", {{"image", "img-0"}, {"target", "plane"}})},
                 visible);

        // Window after doubling the extent around the same center.
        const int zw = std::min(n, static_cast<int>(std::lround(2.0 * c)));
        const int zx = std::clamp(static_cast<int>(std::floor(ox + (c - zw) / 2.0)), 0, n - zw);
        const int zy = std::clamp(static_cast<int>(std::floor(oy + (c - zw) / 2.0)), 0, n - zw);
        int ships = 0;
        for (const auto& o : objs)
            if (o.label == "ship" && intersects_window(o.box, zx, zy, zw, zw)) ++ships;
        add_task("fair1m-zoom-ships", "Zoom out by a factor of two. How many ships are visible, counting partly visible ones?",
                 {crop_id}, DatasetFamily::fair1m, EoTask::spatial_navigation, std::to_string(ships),
                 {call("zoom_out_optical_image", {{"image", crop_id}, {"factor", 2}}),
                  call("get_object_bbox_by_optical_image", {{"image", "img-0"}, {"target", "ship"}})},
                 count_rule());
    }

    // --- disaster pair ----------------------------------------------------------

    void xbd_pair() {
        const int n = spec.image_size;
        const GeoPoint where{18.4655 + rng.uniform(-0.01, 0.01), -66.1057 + rng.uniform(-0.01, 0.01)};
        std::vector<BBox> buildings;
        const int total = rng.between(5, 8);
        for (int i = 0; i < total; ++i) buildings.push_back(place(rng, full(n), 7, 11, buildings, "building", 3));
        static const std::vector<std::string> levels = {"no-damage", "minor-damage", "major-damage", "destroyed"};
        std::vector<std::string> damage;
        for (int i = 0; i < total; ++i) damage.push_back(i == 0 ? "destroyed" : i == 1 ? "no-damage" : pick(levels));

        RasterPatch pre = optical_canvas(rng, n, n), post = optical_canvas(rng, n, n);
        std::vector<GroundTruthObject> pre_objs, post_objs;
        for (int i = 0; i < total; ++i) {
            paint_optical(pre, buildings[i], "brown", rng);
            paint_optical(post, buildings[i], damage[i] == "destroyed" ? "charred" : "brown", rng);
            pre_objs.push_back(obj(buildings[i], "brown"));
            post_objs.push_back(obj(buildings[i], damage[i] == "destroyed" ? "charred" : "brown", damage[i]));
        }
        const std::string sequence = "xbd-" + hex12(rng.next_u64());
        auto pre_rec = save_image("xbd", pre, Modality::optical_rgb, "satellite");
        auto post_rec = save_image("xbd", post, Modality::optical_rgb, "satellite");
        pre_rec.location = post_rec.location = where;
        pre_rec.sequence_id = post_rec.sequence_id = sequence;
        pre_rec.frame_index = 0;
        post_rec.frame_index = 1;
        pre_rec.capture_time = day(2017, 9, 10);
        post_rec.capture_time = day(2017, 9, 24);
        annotate(pre_rec.record_id, pre_objs, "residential");
        annotate(post_rec.record_id, post_objs, "residential");
        const auto pre_id = pre_rec.record_id, post_id = post_rec.record_id;
        records.push_back(std::move(pre_rec));
        records.push_back(std::move(post_rec));

        const long destroyed = std::count(damage.begin(), damage.end(), "destroyed");
        const long intact = std::count(damage.begin(), damage.end(), "no-damage");
        AnswerRule destroyed_rule = count_rule();
        destroyed_rule.where = {{"damage", "destroyed"}};
        AnswerRule intact_rule = count_rule();
        intact_rule.where = {{"damage", "no-damage"}};
        add_task("xbd-destroyed", "How many buildings were destroyed by the event?", {pre_id, post_id},
                 DatasetFamily::xbd, EoTask::disaster_impact, std::to_string(destroyed),
                 {call("get_object_bbox_by_optical_image", {{"image", post_id}, {"target", "building"}})},
                 destroyed_rule);
        add_task("xbd-intact", "How many buildings show no damage after the event?", {pre_id, post_id},
                 DatasetFamily::xbd, EoTask::disaster_impact, std::to_string(intact),
                 {call("get_object_bbox_by_optical_image", {{"image", post_id}, {"target", "building"}})},
                 intact_rule);
        add_task("xbd-destroyed-fraction", "What fraction of the buildings were destroyed? Answer with two decimals.",
                 {pre_id, post_id}, DatasetFamily::xbd, EoTask::disaster_impact, two_decimals(destroyed, total),
                 {call("get_object_bbox_by_optical_image", {{"image", pre_id}, {"target", "building"}}),
                  call("get_object_bbox_by_optical_image", {{"image", post_id}, {"target", "building"}}),
                  call("basic_calculator",
                       {{"expression", std::to_string(destroyed) + "/" + std::to_string(total)}})},
                 value_rule("value", 2));
    }

    // --- optical / SAR pair and SAR-only images ----------------------------------

    void m4sar_pair() {
        const int n = spec.image_size;
        const GeoPoint where{1.2644 + rng.uniform(-0.01, 0.01), 103.8222 + rng.uniform(-0.01, 0.01)};
        RasterPatch optical = optical_canvas(rng, n, n), sar = sar_canvas(rng, n, n);
        std::vector<BBox> ships;
        const int total = rng.between(3, 5);
        for (int i = 0; i < total; ++i) ships.push_back(place(rng, full(n), 6, 10, ships, "ship"));
        std::vector<GroundTruthObject> opt_objs, sar_objs;
        for (int i = 0; i < total; ++i) {
            paint_optical(optical, ships[i], "white", rng);
            opt_objs.push_back(obj(ships[i], "white"));
            if (i == 0) continue;  // a ship-shaped cloud shadow: optical only
            paint_sar(sar, ships[i], rng);
            sar_objs.push_back(obj(ships[i]));
        }
        auto opt_rec = save_image("m4sar", optical, Modality::optical_rgb, "satellite");
        auto sar_rec = save_image("m4sar", sar, Modality::sar, "sentinel1");
        opt_rec.location = sar_rec.location = where;
        opt_rec.capture_time = sar_rec.capture_time = day(2022, 6, 1);
        opt_rec.companion_id = sar_rec.record_id;
        sar_rec.companion_id = opt_rec.record_id;
        annotate(opt_rec.record_id, opt_objs, "harbor");
        annotate(sar_rec.record_id, sar_objs);
        const auto opt_id = opt_rec.record_id, sar_id = sar_rec.record_id;
        records.push_back(std::move(opt_rec));
        records.push_back(std::move(sar_rec));

        const std::string confirmed = std::to_string(total - 1);
        add_task("m4sar-confirmed-ships", "How many ships are confirmed by both the optical image and its SAR pair?",
                 {opt_id}, DatasetFamily::m4sar, EoTask::visual_understanding, confirmed,
                 {call("get_sar_from_optical", {{"image", opt_id}}),
                  call("get_object_bbox_by_optical_sar_image", {{"optical", opt_id}, {"sar", sar_id}, {"target", "ship"}})},
                 count_rule());
        add_task("m4sar-from-sar",
                 "Starting from this SAR image, retrieve its optical pair and report how many ships appear in both.",
                 {sar_id}, DatasetFamily::m4sar, EoTask::visual_understanding, confirmed,
                 {call("get_optical_from_sar", {{"image", sar_id}}),
                  call("get_object_bbox_by_optical_sar_image", {{"optical", opt_id}, {"sar", sar_id}, {"target", "ship"}})},
                 count_rule());
    }

    void sardet_images() {
        const int n = spec.image_size;
        RasterPatch a = sar_canvas(rng, n, n);
        std::vector<BBox> taken;
        std::vector<GroundTruthObject> objs;
        const int ships = rng.between(3, 6);
        for (int i = 0; i < ships; ++i) {
            taken.push_back(place(rng, full(n), 5, 9, taken, "ship"));
            paint_sar(a, taken.back(), rng);
            objs.push_back(obj(taken.back()));
        }
        auto rec_a = save_image("sardet", a, Modality::sar, "gaofen3");
        annotate(rec_a.record_id, objs);
        const auto id_a = rec_a.record_id;
        records.push_back(std::move(rec_a));
        add_task("sardet-count-ships", "How many ships does this SAR image contain?", {id_a}, DatasetFamily::sardet,
                 EoTask::object_counting, std::to_string(ships),
                 {call("get_object_bbox_by_sar_image", {{"image", id_a}, {"target", "ship"}})}, count_rule());

        RasterPatch b = sar_canvas(rng, n, n);
        taken.clear();
        const BBox ship = place(rng, full(n), 6, 9, taken, "ship", 8);
        taken.push_back(ship);
        const BBox plane = place(rng, full(n), 10, 14, taken, "plane", 8);
        paint_sar(b, ship, rng);
        paint_sar(b, plane, rng);
        auto rec_b = save_image("sardet", b, Modality::sar, "gaofen3");
        annotate(rec_b.record_id, {obj(ship), obj(plane)});
        const auto id_b = rec_b.record_id;
        records.push_back(std::move(rec_b));
        add_task("sardet-plane-direction", "In which compass direction is the aircraft as seen from the ship?", {id_b},
                 DatasetFamily::sardet, EoTask::geospatial_reasoning,
                 compass8(plane.cx() - ship.cx(), plane.cy() - ship.cy()),
                 {call("get_object_bbox_by_sar_image", {{"image", id_b}, {"target", "ship"}}),
                  call("get_object_bbox_by_sar_image", {{"image", id_b}, {"target", "aircraft"}}),
                  call("get_bbox_geospatial_relationship", {{"a", box_arg(ship)}, {"b", box_arg(plane)}})},
                 value_rule("direction"));
    }

    // --- multispectral captures ---------------------------------------------------

    struct Zones {
        int vegetation;  // columns [0, vegetation)
        int water;       // columns [water, size)
    };

    void multispectral_site() {
        const int n = spec.scene_size, count = std::max(4, spec.scene_count);
        const GeoPoint where{-3.4653 + rng.uniform(-0.01, 0.01), -62.2159 + rng.uniform(-0.01, 0.01)};
        std::vector<Zones> zones;
        std::vector<std::string> ids;
        std::vector<UtcTime> times;
        for (int s = 0; s < count; ++s) {
            Zones z;
            z.vegetation = rng.between(n / 6, n / 2);
            z.water = rng.between(z.vegetation + 4, n - 4);
            // Surface reflectances for blue, green, red, NIR, SWIR1 per zone.
            static constexpr double veg[5] = {0.05, 0.10, 0.08, 0.50, 0.20};
            static constexpr double urban[5] = {0.15, 0.18, 0.20, 0.25, 0.35};
            static constexpr double water[5] = {0.08, 0.12, 0.05, 0.03, 0.01};
            static const char* bands[5] = {"B2", "B3", "B4", "B8", "B11"};
            std::vector<RasterPatch> planes(5, RasterPatch::filled(n, n, 1));
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const double* refl = x < z.vegetation ? veg : x >= z.water ? water : urban;
                    for (int b = 0; b < 5; ++b) planes[b].at(x, y) = static_cast<float>(refl[b] + rng.uniform(-0.003, 0.003));
                }
            std::uint64_t h = fnv1a64("ms");
            for (const auto& p : planes)
                h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p.pixels.data()), p.pixels.size() * 4), h);
            DataLakeRecord r;
            r.record_id = "ms-" + hex12(h);
            r.modality = Modality::multispectral_scene;
            r.sensor = "synthetic";
            r.gsd_m = 10.0;
            r.location = where;
            r.capture_time = UtcTime{day(2021, 3, 1).seconds + static_cast<std::int64_t>(s) * 30 * 86400};
            r.path = "scenes/" + r.record_id;
            std::filesystem::create_directories(dir / r.path);
            for (int b = 0; b < 5; ++b) {
                const std::string file = r.path + "/" + bands[b] + ".bin";
                write_patch(dir / file, planes[b]);
                r.band_files.push_back({bands[b], file});
            }
            zones.push_back(z);
            ids.push_back(r.record_id);
            times.push_back(*r.capture_time);
            records.push_back(std::move(r));
        }

        AnswerRule trend;
        trend.kind = AnswerRule::Kind::compare;
        trend.field = "fraction_above";
        trend.step = -1;
        trend.other_step = -2;
        add_task("ms-vegetation-trend",
                 "Did vegetation cover increase from the earliest to the latest capture at this site? Answer yes or no.",
                 {ids[0]}, DatasetFamily::multispectral, EoTask::temporal_reasoning,
                 zones.back().vegetation > zones.front().vegetation ? "yes" : "no",
                 {call("get_multispectral_list", {{"record_id", ids[0]}}),
                  call("compute_ndvi_by_multispectral", {{"scene", ids[0]}}),
                  call("compute_ndvi_by_multispectral", {{"scene", ids.back()}})},
                 trend, true);

        const std::string date3 = format_date(times[3]);
        add_task("ms-previous-vegetation",
                 "What fraction of the capture taken just before " + date3 +
                     " is vegetated according to NDVI? Answer with two decimals.",
                 {ids[3]}, DatasetFamily::multispectral, EoTask::temporal_reasoning,
                 two_decimals(zones[2].vegetation, n),
                 {call("get_previous_multispectral", {{"record_id", ids[3]}, {"reference_date", date3}}),
                  call("compute_ndvi_by_multispectral", {{"scene", ids[2]}})},
                 value_rule("fraction_above", 2));

        add_task("ms-next-water", "What fraction of the next capture after this one is covered by water? Answer with two decimals.",
                 {ids[1]}, DatasetFamily::multispectral, EoTask::temporal_reasoning,
                 two_decimals(n - zones[2].water, n),
                 {call("get_next_multispectral", {{"record_id", ids[1]}}),
                  call("compute_water_mask_by_multispectral", {{"scene", ids[2]}})},
                 value_rule("foreground_fraction", 2));

        add_task("ms-vegetation-direction", "In which direction does the vegetated area lie relative to the water?",
                 {ids.back()}, DatasetFamily::multispectral, EoTask::geospatial_reasoning, "left",
                 {call("compute_water_mask_by_multispectral", {{"scene", ids.back()}}),
                  call("compute_vegetation_mask_by_multispectral", {{"scene", ids.back()}}),
                  call("get_mask_geospatial_relationship", {{"mask_a", "mask-0"}, {"mask_b", "mask-1"}})},
                 value_rule("direction"));
    }
};

}  // namespace

FixtureFiles generate_fixtures(const FixtureSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.image_size < 48 || spec.scene_size < 24 || spec.crop_size < 16 || spec.base_size < spec.crop_size * 2)
        throw Error(ErrorCode::invalid_argument, "fixture dimensions too small");
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "scenes");

    Builder b(spec, out_dir);
    b.harbor_image();
    b.airport_image();
    b.dota_image();
    b.xview_image();
    b.fmow_sequence();
    b.fair1m_base();
    b.xbd_pair();
    b.m4sar_pair();
    b.sardet_images();
    b.multispectral_site();

    std::sort(b.records.begin(), b.records.end(),
              [](const DataLakeRecord& x, const DataLakeRecord& y) { return x.record_id < y.record_id; });
    FixtureFiles files;
    files.manifest = out_dir / "manifest.jsonl";
    files.annotations = out_dir / "annotations.jsonl";
    files.tasks = out_dir / "tasks.jsonl";
    write_manifest(files.manifest, b.records, ".");
    b.annotations.save(files.annotations);
    save_tasks(files.tasks, b.tasks);
    std::ofstream(out_dir / "spec.json", std::ios::binary) << to_json(spec).dump(2) << '\n';
    files.records = b.records.size();
    files.task_count = b.tasks.size();
    return files;
}

const Task& Environment::task(std::string_view task_id) const {
    for (const auto& t : tasks)
        if (t.task_id == task_id) return t;
    throw Error(ErrorCode::unknown_task, "unknown task '" + std::string(task_id) + "'");
}

Environment load_environment(const std::filesystem::path& dir, const EnvironmentOptions& opts) {
    auto built = build_index(dir / "manifest.jsonl");
    if (!built.violations.empty()) {
        const auto& v = built.violations.front();
        throw Error(v.code, "manifest violation at line " + std::to_string(v.line) + ": " + v.message);
    }
    Environment env;
    env.index = std::make_shared<const DataLakeIndex>(std::move(built.index));
    env.annotations = std::make_shared<const AnnotationStore>(AnnotationStore::load(dir / "annotations.jsonl"));
    std::shared_ptr<const SemanticFilter> filter = opts.filter;
    if (!filter)
        filter = opts.synonyms ? std::make_shared<SynonymFilter>(SynonymFilter::from_file(*opts.synonyms))
                               : std::make_shared<SynonymFilter>();
    env.toolkit = std::make_shared<const Toolkit>(env.index, env.annotations, filter,
                                                  std::make_shared<NoisyOracleDetector>(opts.detector));
    env.tasks = load_tasks(dir / "tasks.jsonl");
    for (const auto& t : env.tasks) validate_task(t, *env.index);
    return env;
}

}  // namespace eogym
