#include "eogym/toolkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>

#include "eogym/rng.hpp"

namespace eogym {

using nlohmann::json;

std::string_view to_string(ObservationStatus s) {
    switch (s) {
        case ObservationStatus::ok: return "ok";
        case ObservationStatus::empty: return "empty";
        case ObservationStatus::error: return "error";
    }
    return "error";
}

std::string_view to_string(PayloadKind k) {
    switch (k) {
        case PayloadKind::none: return "none";
        case PayloadKind::patch: return "patch";
        case PayloadKind::bboxes: return "bboxes";
        case PayloadKind::mask: return "mask";
        case PayloadKind::index_stats: return "index_stats";
        case PayloadKind::relation: return "relation";
        case PayloadKind::records: return "records";
        case PayloadKind::text: return "text";
        case PayloadKind::scalar: return "scalar";
    }
    return "none";
}

ObservationStatus parse_observation_status(std::string_view s) {
    for (auto v : {ObservationStatus::ok, ObservationStatus::empty, ObservationStatus::error})
        if (s == to_string(v)) return v;
    throw Error(ErrorCode::invalid_argument, "unknown observation status '" + std::string(s) + "'");
}

PayloadKind parse_payload_kind(std::string_view s) {
    for (auto v : {PayloadKind::none, PayloadKind::patch, PayloadKind::bboxes, PayloadKind::mask,
                   PayloadKind::index_stats, PayloadKind::relation, PayloadKind::records, PayloadKind::text,
                   PayloadKind::scalar})
        if (s == to_string(v)) return v;
    throw Error(ErrorCode::invalid_argument, "unknown payload kind '" + std::string(s) + "'");
}

Observation Observation::error(ErrorCode code, std::string message) {
    Observation o;
    o.status = ObservationStatus::error;
    o.message = std::move(message);
    o.error_code = std::string(to_string(code));
    return o;
}

Observation Observation::empty(std::string message) {
    Observation o;
    o.status = ObservationStatus::empty;
    o.message = std::move(message);
    return o;
}

Observation Observation::ok(PayloadKind kind, json payload, std::string message) {
    Observation o;
    o.status = ObservationStatus::ok;
    o.kind = kind;
    o.payload = std::move(payload);
    o.message = std::move(message);
    return o;
}

json to_json(const Observation& o) {
    json j = {{"status", std::string(to_string(o.status))},
              {"kind", std::string(to_string(o.kind))},
              {"payload", o.payload},
              {"message", o.message}};
    if (o.error_code) j["error_code"] = *o.error_code;
    return j;
}

Observation observation_from_json(const json& j) {
    Observation o;
    o.status = parse_observation_status(j.at("status").get<std::string>());
    o.kind = parse_payload_kind(j.value("kind", std::string{"none"}));
    o.payload = j.contains("payload") ? j["payload"] : json();
    o.message = j.value("message", std::string{});
    if (j.contains("error_code") && !j["error_code"].is_null()) o.error_code = j["error_code"].get<std::string>();
    return o;
}

std::string format_number(double v) {
    if (std::isfinite(v) && v == std::trunc(v) && std::fabs(v) < 1e15) {
        char buf[32];
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<long long>(v));
        return std::string(buf, end);
    }
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Calculator

namespace {

class ExpressionParser {
public:
    explicit ExpressionParser(std::string_view text) : s_(text) {}

    double parse() {
        const double v = expr();
        skip();
        if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
        if (!std::isfinite(v)) throw Error(ErrorCode::illegal_arguments, "expression result is not finite");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& why) const {
        throw Error(ErrorCode::illegal_arguments, "bad expression: " + why);
    }
    void skip() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }
    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    double expr() {
        double v = term();
        for (;;) {
            if (eat('+')) v += term();
            else if (eat('-')) v -= term();
            else return v;
        }
    }
    double term() {
        double v = factor();
        for (;;) {
            if (eat('*')) {
                v *= factor();
            } else if (eat('/')) {
                const double d = factor();
                if (d == 0.0) throw Error(ErrorCode::division_by_zero, "division by zero");
                v /= d;
            } else {
                return v;
            }
        }
    }
    double factor() {
        if (++depth_ > 200) fail("nesting too deep");
        double v;
        if (eat('-')) v = -factor();
        else if (eat('+')) v = factor();
        else if (eat('(')) {
            v = expr();
            if (!eat(')')) fail("missing ')'");
        } else {
            v = number();
        }
        --depth_;
        return v;
    }
    double number() {
        skip();
        const char* begin = s_.data() + pos_;
        const char* end = s_.data() + s_.size();
        double v = 0;
        auto [ptr, ec] = std::from_chars(begin, end, v);
        if (ec != std::errc() || ptr == begin) fail("expected a number");
        pos_ += static_cast<std::size_t>(ptr - begin);
        return v;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    int depth_ = 0;
};

}  // namespace

double evaluate_expression(std::string_view expression) {
    if (expression.find_first_not_of(" \t") == std::string_view::npos)
        throw Error(ErrorCode::illegal_arguments, "empty expression");
    return ExpressionParser(expression).parse();
}

// ---------------------------------------------------------------------------
// Execution

Toolkit::Toolkit(std::shared_ptr<const DataLakeIndex> index, std::shared_ptr<const AnnotationStore> annotations,
                 std::shared_ptr<const SemanticFilter> filter, std::shared_ptr<const Detector> detector)
    : index_(std::move(index)),
      annotations_(std::move(annotations)),
      filter_(std::move(filter)),
      detector_(std::move(detector)) {}

namespace {

// --- argument access -------------------------------------------------------

const json& arg(const json& args, const char* name) {
    auto it = args.find(name);
    if (it == args.end() || it->is_null())
        throw Error(ErrorCode::illegal_arguments, std::string("missing argument '") + name + "'");
    return *it;
}

std::string arg_string(const json& args, const char* name) {
    const auto& v = arg(args, name);
    if (!v.is_string()) throw Error(ErrorCode::illegal_arguments, std::string("argument '") + name + "' must be a string");
    return v.get<std::string>();
}

double arg_number(const json& args, const char* name) {
    const auto& v = arg(args, name);
    if (!v.is_number()) throw Error(ErrorCode::illegal_arguments, std::string("argument '") + name + "' must be a number");
    return v.get<double>();
}

std::optional<double> opt_number(const json& args, const char* name) {
    if (!args.contains(name) || args[name].is_null()) return std::nullopt;
    return arg_number(args, name);
}

int arg_int(const json& args, const char* name) {
    const double v = arg_number(args, name);
    if (v != std::trunc(v) || std::fabs(v) > 1e9)
        throw Error(ErrorCode::illegal_arguments, std::string("argument '") + name + "' must be an integer");
    return static_cast<int>(v);
}

BBox parse_box(const json& j) {
    BBox b;
    if (j.is_array() && j.size() == 4 && std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); })) {
        b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), {}, std::nullopt};
    } else if (j.is_object() && j.contains("x_min")) {
        try {
            b = {j.at("x_min").get<double>(), j.at("y_min").get<double>(), j.at("x_max").get<double>(),
                 j.at("y_max").get<double>(), j.value("label", std::string{}), std::nullopt};
            if (j.contains("score") && j["score"].is_number()) b.score = j["score"].get<double>();
        } catch (const json::exception&) {
            throw Error(ErrorCode::illegal_arguments, "box fields must be numbers");
        }
    } else {
        throw Error(ErrorCode::illegal_arguments, "box must be [x_min, y_min, x_max, y_max]");
    }
    validate(b);
    return b;
}

Shape parse_shape(const json& j) {
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
        return Point2{j[0].get<double>(), j[1].get<double>()};
    if (j.is_object() && j.contains("x") && j.contains("y") && !j.contains("x_min")) {
        if (!j["x"].is_number() || !j["y"].is_number())
            throw Error(ErrorCode::illegal_arguments, "point fields must be numbers");
        return Point2{j["x"].get<double>(), j["y"].get<double>()};
    }
    return parse_box(j);
}

// --- payload helpers -------------------------------------------------------

json record_json(const DataLakeRecord& r) {
    json j = {{"record_id", r.record_id}, {"modality", std::string(to_string(r.modality))}, {"sensor", r.sensor}};
    if (r.capture_time) j["capture_time"] = format_rfc3339(*r.capture_time);
    if (r.gsd_m) j["gsd_m"] = *r.gsd_m;
    if (r.location) j["location"] = {{"lat_deg", r.location->lat_deg}, {"lon_deg", r.location->lon_deg}};
    if (r.sequence_id) j["sequence_id"] = *r.sequence_id;
    if (r.frame_index) j["frame_index"] = *r.frame_index;
    return j;
}

Observation records_observation(const std::vector<DataLakeRecord>& recs) {
    json list = json::array();
    for (const auto& r : recs) list.push_back(record_json(r));
    json payload = {{"records", std::move(list)}, {"count", recs.size()}};
    if (recs.size() == 1) payload["record_id"] = recs.front().record_id;
    return Observation::ok(PayloadKind::records, std::move(payload));
}

json image_json(const std::string& handle, const ImageHandle& h) {
    const auto& p = *h.patch.provenance;
    return {{"handle", handle},
            {"modality", std::string(to_string(h.modality))},
            {"width", h.patch.width},
            {"height", h.patch.height},
            {"channels", h.patch.channels},
            {"base_image_id", p.base_image_id},
            {"origin_x", p.origin_x},
            {"origin_y", p.origin_y},
            {"base_width", p.base_width},
            {"base_height", p.base_height}};
}

struct WindowObject {
    GroundTruthObject object;  // box in patch coordinates
    bool partial = false;
};

std::vector<WindowObject> objects_in_window(const GroundTruthAnnotation& ann, const ImageHandle& img) {
    const auto& p = *img.patch.provenance;
    const double wx0 = p.origin_x, wy0 = p.origin_y;
    const double wx1 = wx0 + img.patch.width, wy1 = wy0 + img.patch.height;
    std::vector<WindowObject> out;
    for (const auto& o : ann.objects) {
        const double x0 = std::max(o.box.x_min, wx0), y0 = std::max(o.box.y_min, wy0);
        const double x1 = std::min(o.box.x_max, wx1), y1 = std::min(o.box.y_max, wy1);
        if (!(x1 > x0 && y1 > y0)) continue;
        WindowObject w{o, x0 != o.box.x_min || y0 != o.box.y_min || x1 != o.box.x_max || y1 != o.box.y_max};
        w.object.box = {x0 - wx0, y0 - wy0, x1 - wx0, y1 - wy0, o.label, std::nullopt};
        out.push_back(std::move(w));
    }
    return out;
}

json box_json(const BBox& b, const WindowObject* source) {
    json j = {{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}, {"label", b.label}};
    if (b.score) j["score"] = *b.score;
    if (source) {
        if (source->partial) j["partial"] = true;
        if (source->object.damage) j["damage"] = *source->object.damage;
    }
    return j;
}

json boxes_payload(const json& boxes, const ImageHandle& img) {
    return {{"boxes", boxes},
            {"count", boxes.size()},
            {"image_width", img.patch.width},
            {"image_height", img.patch.height}};
}

std::uint64_t call_seed(const ExecutionMode& mode, int call_index, const std::string& key, std::string_view target) {
    std::uint64_t h = fnv1a64(key);
    h = fnv1a64("|", h);
    h = fnv1a64(target, h);
    return mix_seed(mode.seed, h ^ static_cast<std::uint64_t>(call_index));
}

bool is_unverified_optical(const ExecutionMode& mode) { return mode.response == ResponseMode::unverified; }

}  // namespace

struct Toolkit::Impl {
    using Handler = Observation (*)(const Toolkit&, const json&, EpisodeContext&, const ExecutionMode&, int);

    // --- resolution ---------------------------------------------------------

    static ImageHandle resolve_image(const Toolkit& tk, const EpisodeContext& ctx, const std::string& ref) {
        if (auto it = ctx.images.find(ref); it != ctx.images.end()) return it->second;
        const auto* rec = tk.index_->find(ref);
        if (!rec) throw Error(ErrorCode::unknown_record, "no image or handle named '" + ref + "'");
        return tk.load_image(*rec);
    }

    static ImageHandle resolve_image_arg(const Toolkit& tk, const EpisodeContext& ctx, const json& args,
                                         const char* name, std::optional<Modality> want) {
        auto img = resolve_image(tk, ctx, arg_string(args, name));
        if (want && img.modality != *want)
            throw Error(ErrorCode::illegal_arguments, std::string("argument '") + name + "' must be a " +
                                                          std::string(to_string(*want)) + " image");
        return img;
    }

    // Record an image-valued argument refers to (handles map to their base record).
    static const DataLakeRecord& image_record(const Toolkit& tk, const EpisodeContext& ctx, const std::string& ref) {
        if (auto it = ctx.images.find(ref); it != ctx.images.end())
            return tk.index_->at(it->second.patch.provenance->base_image_id);
        return tk.index_->at(ref);
    }

    static RasterPatch load_base(const Toolkit& tk, const Provenance& prov) {
        const auto& rec = tk.index_->at(prov.base_image_id);
        RasterPatch base = read_patch(tk.index_->resolve(rec.path));
        base.provenance = Provenance{rec.record_id, 0, 0, base.width, base.height};
        return base;
    }

    static BandSet resolve_scene(const Toolkit& tk, const EpisodeContext& ctx, const std::string& ref) {
        if (auto it = ctx.scenes.find(ref); it != ctx.scenes.end()) return it->second;
        const auto* rec = tk.index_->find(ref);
        if (!rec) throw Error(ErrorCode::unknown_record, "no scene or handle named '" + ref + "'");
        return load_bandset(*tk.index_, *rec);
    }

    static const GroundTruthAnnotation& annotation_for(const Toolkit& tk, const ImageHandle& img) {
        const auto& key = img.patch.provenance->base_image_id;
        const auto* ann = tk.annotations_->find(key);
        if (!ann) throw Error(ErrorCode::no_ground_truth, "no ground truth for image '" + key + "'");
        return *ann;
    }

    static std::vector<WindowObject> matching_objects(const Toolkit& tk, const ImageHandle& img,
                                                      std::string_view target) {
        auto objs = objects_in_window(annotation_for(tk, img), img);
        std::set<std::string> labels;
        for (const auto& o : objs) labels.insert(o.object.label);
        const auto matched = tk.filter_->match(target, labels);
        std::erase_if(objs, [&](const WindowObject& o) { return !matched.contains(o.object.label); });
        return objs;
    }

    // Boxes plus the window objects they came from (nullptr for false positives).
    static std::vector<std::pair<BBox, const WindowObject*>> detections(
        const Toolkit& tk, const ImageHandle& img, const std::vector<WindowObject>& objs, std::string_view target,
        bool noisy, std::uint64_t seed) {
        std::vector<std::pair<BBox, const WindowObject*>> out;
        if (!noisy) {
            for (const auto& o : objs) out.emplace_back(o.object.box, &o);
            return out;
        }
        DetectionRequest req;
        req.image_key = img.patch.provenance->base_image_id;
        req.target = std::string(target);
        req.image = {img.patch.width, img.patch.height};
        req.seed = seed;
        for (const auto& o : objs) req.ground_truth.push_back(o.object.box);
        for (auto& d : tk.detector_->detect(req))
            out.emplace_back(std::move(d.box), d.source >= 0 ? &objs.at(static_cast<std::size_t>(d.source)) : nullptr);
        return out;
    }

    static Observation boxes_observation(const ImageHandle& img,
                                         const std::vector<std::pair<BBox, const WindowObject*>>& dets,
                                         std::string_view target) {
        if (dets.empty()) return Observation::empty("no '" + std::string(target) + "' objects detected");
        json boxes = json::array();
        for (const auto& [b, src] : dets) boxes.push_back(box_json(b, src));
        return Observation::ok(PayloadKind::bboxes, boxes_payload(boxes, img));
    }

    static std::string new_handle(const char* prefix, int call_index) {
        return std::string(prefix) + "-" + std::to_string(call_index);
    }

    static Observation store_image(EpisodeContext& ctx, ImageHandle img, int call_index, bool clamped = false,
                                   bool navigation = false) {
        const std::string handle = new_handle("img", call_index);
        json payload = image_json(handle, img);
        if (navigation) payload["clamped"] = clamped;
        ctx.images[handle] = std::move(img);
        return Observation::ok(PayloadKind::patch, std::move(payload),
                               clamped ? "window reached the base image edge" : "");
    }

    static Observation store_mask(EpisodeContext& ctx, BinaryMask mask, int call_index, json extra = json::object()) {
        const std::string handle = new_handle("mask", call_index);
        const std::size_t fg = mask.count();
        json payload = {{"handle", handle},
                        {"width", mask.width},
                        {"height", mask.height},
                        {"foreground_pixels", fg},
                        {"foreground_fraction",
                         static_cast<double>(fg) / (static_cast<double>(mask.width) * mask.height)}};
        payload.update(extra);
        ctx.masks[handle] = std::move(mask);
        return Observation::ok(PayloadKind::mask, std::move(payload));
    }

    // --- spatial planning ---------------------------------------------------

    static Observation crop_optical_or_sar(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                           const ExecutionMode&, int ci) {
        auto img = resolve_image_arg(tk, ctx, args, "image", std::nullopt);
        const AOI aoi{arg_number(args, "x0"), arg_number(args, "y0"), arg_number(args, "x1"), arg_number(args, "y1")};
        img.patch = crop_aoi(img.patch, aoi);
        return store_image(ctx, std::move(img), ci);
    }

    static Observation crop_multispectral(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                          const ExecutionMode&, int ci) {
        const auto scene = resolve_scene(tk, ctx, arg_string(args, "scene"));
        const AOI aoi{arg_number(args, "x0"), arg_number(args, "y0"), arg_number(args, "x1"), arg_number(args, "y1")};
        BandSet cropped = crop_bandset(scene, aoi);
        const std::string handle = new_handle("ms", ci);
        json bands = json::array();
        for (const auto& [name, _] : cropped.bands) bands.push_back(name);
        const auto& any = cropped.bands.begin()->second;
        json payload = {{"handle", handle},
                        {"width", any.width},
                        {"height", any.height},
                        {"platform", std::string(to_string(cropped.platform))},
                        {"bands", std::move(bands)}};
        ctx.scenes[handle] = std::move(cropped);
        return Observation::ok(PayloadKind::patch, std::move(payload));
    }

    template <PanDirection D>
    static Observation move(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&, int ci) {
        auto img = resolve_image_arg(tk, ctx, args, "image", Modality::optical_rgb);
        const double step = opt_number(args, "step_frac").value_or(0.5);
        const RasterPatch base = load_base(tk, *img.patch.provenance);
        auto nav = pan(base, img.patch, D, step);
        img.patch = std::move(nav.patch);
        return store_image(ctx, std::move(img), ci, nav.clamped, true);
    }

    static Observation zoom(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&, int ci) {
        auto img = resolve_image_arg(tk, ctx, args, "image", Modality::optical_rgb);
        const double factor = opt_number(args, "factor").value_or(2.0);
        const RasterPatch base = load_base(tk, *img.patch.provenance);
        auto nav = zoom_out(base, img.patch, factor);
        img.patch = std::move(nav.patch);
        return store_image(ctx, std::move(img), ci, nav.clamped, true);
    }

    // --- temporal fetching --------------------------------------------------

    static const DataLakeRecord& multispectral_anchor(const Toolkit& tk, const DataLakeRecord& rec) {
        if (rec.modality == Modality::multispectral_scene) return rec;
        if (!rec.location)
            throw Error(ErrorCode::no_temporal_group, "record '" + rec.record_id + "' has no location anchor");
        const auto nearest = tk.index_->nearest_record(*rec.location, {Modality::multispectral_scene});
        if (!nearest) throw Error(ErrorCode::no_temporal_group, "no multispectral captures indexed");
        return tk.index_->at(nearest->first.record_id);
    }

    static Observation ms_list(const Toolkit& tk, const json& args, EpisodeContext&, const ExecutionMode&, int) {
        const auto& anchor = multispectral_anchor(tk, tk.index_->at(arg_string(args, "record_id")));
        return records_observation(tk.index_->temporal_list(anchor.record_id));
    }

    template <Direction D>
    static Observation ms_neighbor(const Toolkit& tk, const json& args, EpisodeContext&, const ExecutionMode&, int) {
        const auto& rec = tk.index_->at(arg_string(args, "record_id"));
        const auto& anchor = multispectral_anchor(tk, rec);
        std::optional<UtcTime> reference;
        if (args.contains("reference_date") && !args["reference_date"].is_null()) {
            reference = parse_rfc3339(arg_string(args, "reference_date"));
        } else if (rec.modality != Modality::multispectral_scene) {
            reference = rec.capture_time;
        }
        std::optional<DataLakeRecord> found;
        if (reference) {
            const auto list = tk.index_->temporal_list(anchor.record_id);
            if (D == Direction::next) {
                for (const auto& r : list)
                    if (r.capture_time && *r.capture_time > *reference) {
                        found = r;
                        break;
                    }
            } else {
                for (auto it = list.rbegin(); it != list.rend(); ++it)
                    if (it->capture_time && *it->capture_time < *reference) {
                        found = *it;
                        break;
                    }
            }
        } else {
            found = tk.index_->temporal_neighbor(anchor.record_id, D);
        }
        if (!found) return Observation::empty("no multispectral capture in that direction");
        return records_observation({*found});
    }

    static const DataLakeRecord& optical_record(const Toolkit& tk, const EpisodeContext& ctx, const json& args) {
        const auto& rec = image_record(tk, ctx, arg_string(args, "image"));
        if (rec.modality != Modality::optical_rgb)
            throw Error(ErrorCode::illegal_arguments, "argument 'image' must be an optical_rgb record");
        return rec;
    }

    static Observation optical_list(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&,
                                    int) {
        return records_observation(tk.index_->temporal_list(optical_record(tk, ctx, args).record_id));
    }

    template <Direction D>
    static Observation optical_neighbor(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                        const ExecutionMode&, int) {
        const auto found = tk.index_->temporal_neighbor(optical_record(tk, ctx, args).record_id, D);
        if (!found) return Observation::empty("no optical frame in that direction");
        return records_observation({*found});
    }

    // --- cross-modal --------------------------------------------------------

    template <Modality From>
    static Observation switch_modality(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                       const ExecutionMode&, int) {
        const auto& rec = image_record(tk, ctx, arg_string(args, "image"));
        if (rec.modality != From)
            throw Error(ErrorCode::illegal_arguments,
                        "argument 'image' must be a " + std::string(to_string(From)) + " record");
        const auto partner = tk.index_->companion(rec.record_id);
        if (!partner) return Observation::empty("no aligned companion image");
        return records_observation({*partner});
    }

    // --- semantic -----------------------------------------------------------

    static Observation analyze_scene(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&,
                                     int) {
        const auto img = resolve_image_arg(tk, ctx, args, "image", Modality::optical_rgb);
        const auto& ann = annotation_for(tk, img);
        std::map<std::string, int> counts;
        for (const auto& o : objects_in_window(ann, img)) ++counts[o.object.label];
        std::string dominant = ann.scene.value_or("");
        if (dominant.empty()) {
            int best = 0;
            for (const auto& [label, n] : counts)
                if (n > best) {
                    best = n;
                    dominant = label;
                }
        }
        if (dominant.empty()) return Observation::empty("nothing recognizable in the image");
        std::string text = "Scene: " + dominant + ".";
        json labels = json::array();
        if (!counts.empty()) {
            text += " Object categories present:";
            bool first = true;
            for (const auto& [label, n] : counts) {
                text += (first ? " " : ", ") + label;
                first = false;
                labels.push_back(label);
            }
            text += ".";
        }
        return Observation::ok(PayloadKind::text, {{"text", text}, {"scene", dominant}, {"labels", labels}});
    }

    static Observation describe_object(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                       const ExecutionMode&, int) {
        const auto img = resolve_image_arg(tk, ctx, args, "image", Modality::optical_rgb);
        const std::string target = arg_string(args, "target");
        const auto objs = matching_objects(tk, img, target);
        std::map<std::string, int> counts;
        json attrs = json::array();
        for (const auto& o : objs) {
            const std::string a = o.object.attribute.value_or("unremarkable");
            attrs.push_back(a);
            ++counts[a];
        }
        if (objs.empty()) return Observation::empty("target '" + target + "' not visible");
        std::string top;
        int best = 0;
        for (const auto& [a, n] : counts)
            if (n > best) {
                best = n;
                top = a;
            }
        return Observation::ok(PayloadKind::text, {{"text", "The " + target + " appears " + top + "."},
                                                   {"target", target},
                                                   {"attribute", top},
                                                   {"attributes", attrs}});
    }

    // --- detection ----------------------------------------------------------

    static Observation bbox_optical(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                    const ExecutionMode& mode, int ci) {
        const auto img = resolve_image_arg(tk, ctx, args, "image", Modality::optical_rgb);
        const std::string target = arg_string(args, "target");
        if (is_unverified_optical(mode))
            return tk.detect_unverified(img, target, call_seed(mode, ci, img.patch.provenance->base_image_id, target));
        return tk.detect_verified(img, target);
    }

    // SAR detection has no unverified backend: always ground truth.
    static Observation bbox_sar(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&, int) {
        const auto img = resolve_image_arg(tk, ctx, args, "image", Modality::sar);
        return tk.detect_verified(img, arg_string(args, "target"));
    }

    static Observation bbox_optical_sar(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                        const ExecutionMode&, int) {
        const auto opt_img = resolve_image_arg(tk, ctx, args, "optical", Modality::optical_rgb);
        const auto sar_img = resolve_image_arg(tk, ctx, args, "sar", Modality::sar);
        const std::string target = arg_string(args, "target");
        const double thr = opt_number(args, "iou_threshold").value_or(0.5);
        if (!(thr >= 0.0 && thr <= 1.0)) throw Error(ErrorCode::illegal_arguments, "iou_threshold must lie in [0,1]");
        const auto optical_objs = matching_objects(tk, opt_img, target);
        const auto sar_objs = matching_objects(tk, sar_img, target);
        json boxes = json::array();
        for (const auto& o : optical_objs) {
            const bool confirmed = std::any_of(sar_objs.begin(), sar_objs.end(), [&](const WindowObject& s) {
                return iou(o.object.box, s.object.box) >= thr;
            });
            if (confirmed) boxes.push_back(box_json(o.object.box, &o));
        }
        if (boxes.empty()) return Observation::empty("no '" + target + "' objects confirmed in both modalities");
        return Observation::ok(PayloadKind::bboxes, boxes_payload(boxes, opt_img));
    }

    // --- masking ------------------------------------------------------------

    static Observation mask_for_target(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                       const ExecutionMode& mode, int ci, const std::string& target) {
        const auto img = resolve_image_arg(tk, ctx, args, "image", Modality::optical_rgb);
        const auto objs = matching_objects(tk, img, target);
        const bool noisy = is_unverified_optical(mode);
        const auto dets = detections(tk, img, objs, target, noisy,
                                     call_seed(mode, ci, img.patch.provenance->base_image_id, target));
        BinaryMask mask = BinaryMask::empty(img.patch.width, img.patch.height);
        for (const auto& [b, src] : dets) mask.fill_box(b);
        if (mask.count() == 0) return Observation::empty("no '" + target + "' pixels found");
        return store_mask(ctx, std::move(mask), ci, {{"target", target}, {"objects", dets.size()}});
    }

    static Observation building_mask(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                     const ExecutionMode& mode, int ci) {
        return mask_for_target(tk, args, ctx, mode, ci, "building");
    }
    static Observation road_mask(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode& mode,
                                 int ci) {
        return mask_for_target(tk, args, ctx, mode, ci, "road");
    }
    static Observation object_mask(const Toolkit& tk, const json& args, EpisodeContext& ctx,
                                   const ExecutionMode& mode, int ci) {
        return mask_for_target(tk, args, ctx, mode, ci, arg_string(args, "target"));
    }

    template <Theme T>
    static Observation theme_mask(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&,
                                  int ci) {
        const auto scene = resolve_scene(tk, ctx, arg_string(args, "scene"));
        const auto threshold = opt_number(args, "threshold");
        BinaryMask mask = thematic_mask(scene, T, threshold);
        const auto idx = theme_index_lookup(to_string(T)).index;
        return store_mask(ctx, std::move(mask), ci,
                          {{"theme", std::string(to_string(T))},
                           {"index", std::string(to_string(idx))},
                           {"threshold", threshold.value_or(default_threshold(idx))}});
    }

    // --- spectral -----------------------------------------------------------

    template <SpectralIndex I>
    static Observation index_stats(const Toolkit& tk, const json& args, EpisodeContext& ctx, const ExecutionMode&,
                                   int) {
        const std::string ref = arg_string(args, "scene");
        const auto scene = resolve_scene(tk, ctx, ref);
        const auto r = compute_index(scene, I, opt_number(args, "threshold"));
        if (r.stats.valid_pixels == 0) return Observation::empty("no pixels with a defined index value");
        json payload = {{"scene", ref},
                        {"index", std::string(to_string(I))},
                        {"mean", r.stats.mean},
                        {"median", r.stats.median},
                        {"fraction_above", r.stats.fraction_above},
                        {"threshold", r.threshold},
                        {"valid_pixels", r.stats.valid_pixels},
                        {"width", r.width},
                        {"height", r.height}};
        if (scene.capture_time) payload["capture_time"] = format_rfc3339(*scene.capture_time);
        return Observation::ok(PayloadKind::index_stats, std::move(payload));
    }

    static Observation theme_lookup(const Toolkit&, const json& args, EpisodeContext&, const ExecutionMode&, int) {
        const auto t = theme_index_lookup(arg_string(args, "theme"));
        json roles = json::array();
        for (auto r : t.required_roles) roles.push_back(std::string(to_string(r)));
        return Observation::ok(PayloadKind::text, {{"index", std::string(to_string(t.index))},
                                                   {"expression", t.expression},
                                                   {"required_roles", roles},
                                                   {"text", std::string(to_string(t.index)) + " = " + t.expression}});
    }

    // --- relation & measurement --------------------------------------------

    static Observation bbox_relation(const Toolkit&, const json& args, EpisodeContext&, const ExecutionMode&, int) {
        const Shape a = parse_shape(arg(args, "a"));
        const Shape b = parse_shape(arg(args, "b"));
        Dims frame{0, 0};
        if (args.contains("frame_width") || args.contains("frame_height")) {
            frame = {arg_int(args, "frame_width"), arg_int(args, "frame_height")};
            if (frame.width <= 0 || frame.height <= 0) throw Error(ErrorCode::invalid_dims, "frame dims must be positive");
        }
        const auto r = bbox_relationship(a, b, frame);
        return Observation::ok(PayloadKind::relation, {{"direction", r.direction},
                                                       {"iou", r.iou},
                                                       {"dx", r.dx},
                                                       {"dy", r.dy},
                                                       {"a_contains_b", r.a_contains_b},
                                                       {"b_contains_a", r.b_contains_a}});
    }

    static Observation mask_relation(const Toolkit&, const json& args, EpisodeContext& ctx, const ExecutionMode&,
                                     int) {
        auto get = [&](const char* name) -> const BinaryMask& {
            const std::string ref = arg_string(args, name);
            auto it = ctx.masks.find(ref);
            if (it == ctx.masks.end()) throw Error(ErrorCode::illegal_arguments, "unknown mask handle '" + ref + "'");
            return it->second;
        };
        const auto r = mask_relationship(get("mask_a"), get("mask_b"));
        return Observation::ok(PayloadKind::relation, {{"relation", r.relation},
                                                       {"iou", r.iou},
                                                       {"a_frac_in_b", r.a_frac_in_b},
                                                       {"b_frac_in_a", r.b_frac_in_a},
                                                       {"a_contains_b", r.a_contains_b},
                                                       {"b_contains_a", r.b_contains_a},
                                                       {"both_empty", r.both_empty},
                                                       {"direction", r.direction},
                                                       {"a_pixels", r.a_count},
                                                       {"b_pixels", r.b_count},
                                                       {"intersection_pixels", r.intersection}});
    }

    static Observation normalize_boxes(const Toolkit&, const json& args, EpisodeContext&, const ExecutionMode&, int) {
        const auto& list = arg(args, "boxes");
        if (!list.is_array()) throw Error(ErrorCode::illegal_arguments, "argument 'boxes' must be an array");
        std::vector<BBox> boxes;
        for (const auto& b : list) boxes.push_back(parse_box(b));
        const auto out = normalize_bboxes(boxes, {arg_int(args, "from_width"), arg_int(args, "from_height")},
                                          {arg_int(args, "to_width"), arg_int(args, "to_height")});
        json arr = json::array();
        for (const auto& b : out) arr.push_back(box_json(b, nullptr));
        return Observation::ok(PayloadKind::bboxes, {{"boxes", arr}, {"count", arr.size()}});
    }

    static Observation calculator(const Toolkit&, const json& args, EpisodeContext&, const ExecutionMode&, int) {
        const double v = evaluate_expression(arg_string(args, "expression"));
        return Observation::ok(PayloadKind::scalar, {{"value", v}, {"text", format_number(v)}});
    }

    static const std::map<std::string, Handler, std::less<>>& handlers() {
        static const std::map<std::string, Handler, std::less<>> table = {
            {"crop_multispectral_image", &crop_multispectral},
            {"crop_optical_or_sar_image", &crop_optical_or_sar},
            {"move_down_optical_image", &move<PanDirection::down>},
            {"move_left_optical_image", &move<PanDirection::left>},
            {"move_right_optical_image", &move<PanDirection::right>},
            {"move_up_optical_image", &move<PanDirection::up>},
            {"zoom_out_optical_image", &zoom},
            {"get_multispectral_list", &ms_list},
            {"get_next_multispectral", &ms_neighbor<Direction::next>},
            {"get_next_optical_image", &optical_neighbor<Direction::next>},
            {"get_optical_image_list", &optical_list},
            {"get_previous_multispectral", &ms_neighbor<Direction::previous>},
            {"get_previous_optical_image", &optical_neighbor<Direction::previous>},
            {"get_optical_from_sar", &switch_modality<Modality::sar>},
            {"get_sar_from_optical", &switch_modality<Modality::optical_rgb>},
            {"analyze_optical_scene", &analyze_scene},
            {"describe_optical_object", &describe_object},
            {"get_object_bbox_by_optical_image", &bbox_optical},
            {"get_object_bbox_by_sar_image", &bbox_sar},
            {"get_object_bbox_by_optical_sar_image", &bbox_optical_sar},
            {"get_building_mask_by_optical_image", &building_mask},
            {"get_road_mask_by_optical_image", &road_mask},
            {"get_object_mask_by_optical_image", &object_mask},
            {"compute_urban_mask_by_multispectral", &theme_mask<Theme::urban>},
            {"compute_vegetation_mask_by_multispectral", &theme_mask<Theme::vegetation>},
            {"compute_water_mask_by_multispectral", &theme_mask<Theme::water>},
            {"compute_ndbi_by_multispectral", &index_stats<SpectralIndex::ndbi>},
            {"compute_ndsi_by_multispectral", &index_stats<SpectralIndex::ndsi>},
            {"compute_ndvi_by_multispectral", &index_stats<SpectralIndex::ndvi>},
            {"compute_ndwi_by_multispectral", &index_stats<SpectralIndex::ndwi>},
            {"theme_index_lookup", &theme_lookup},
            {"get_bbox_geospatial_relationship", &bbox_relation},
            {"get_mask_geospatial_relationship", &mask_relation},
            {"normalize_bounding_boxes", &normalize_boxes},
            {"basic_calculator", &calculator},
        };
        return table;
    }
};

ImageHandle Toolkit::load_image(const DataLakeRecord& rec) const {
    if (rec.modality == Modality::multispectral_scene)
        throw Error(ErrorCode::illegal_arguments, "record '" + rec.record_id + "' is a multispectral scene, not an image");
    ImageHandle h;
    h.modality = rec.modality;
    h.patch = read_patch(index_->resolve(rec.path));
    if (rec.base_image_id) {
        const auto& base = index_->at(rec.base_image_id->record_id);
        const RasterPatch base_patch = read_patch(index_->resolve(base.path));
        h.patch.provenance = Provenance{base.record_id, rec.base_image_id->origin_x, rec.base_image_id->origin_y,
                                        base_patch.width, base_patch.height};
    } else {
        h.patch.provenance = Provenance{rec.record_id, 0, 0, h.patch.width, h.patch.height};
    }
    h.patch.validate();
    return h;
}

Observation Toolkit::detect_verified(const ImageHandle& image, std::string_view target) const {
    try {
        const auto objs = Impl::matching_objects(*this, image, target);
        return Impl::boxes_observation(image, Impl::detections(*this, image, objs, target, false, 0), target);
    } catch (const Error& e) {
        return Observation::error(e.code(), e.what());
    }
}

Observation Toolkit::detect_unverified(const ImageHandle& image, std::string_view target, std::uint64_t seed) const {
    try {
        const auto objs = Impl::matching_objects(*this, image, target);
        return Impl::boxes_observation(image, Impl::detections(*this, image, objs, target, true, seed), target);
    } catch (const Error& e) {
        return Observation::error(e.code(), e.what());
    }
}

Observation Toolkit::execute(const ToolCall& call, EpisodeContext& ctx, const ExecutionMode& mode) const {
    std::string backend = call.name;
    if (mode.rename) {
        const auto inv = inverse_rename_tool_name(call.name);
        if (!inv.mapped) return Observation::error(ErrorCode::unknown_tool, "unknown tool '" + call.name + "'");
        backend = inv.name;
    }
    const auto& table = Impl::handlers();
    const auto it = table.find(backend);
    if (it == table.end() || (!ctx.exposed.empty() && !ctx.exposed.contains(backend)))
        return Observation::error(ErrorCode::unknown_tool, "unknown tool '" + call.name + "'");

    json args;
    try {
        args = call.arguments.empty() ? json::object() : json::parse(call.arguments);
    } catch (const json::exception&) {
        return Observation::error(ErrorCode::illegal_arguments, "arguments are not valid JSON");
    }
    if (!args.is_object()) return Observation::error(ErrorCode::illegal_arguments, "arguments must be a JSON object");

    try {
        return it->second(*this, args, ctx, mode, call.call_index);
    } catch (const Error& e) {
        return Observation::error(e.code(), e.what());
    } catch (const json::exception& e) {
        return Observation::error(ErrorCode::illegal_arguments, e.what());
    } catch (const std::exception& e) {
        return Observation::error(ErrorCode::backend_failure, e.what());
    }
}

}  // namespace eogym
