#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <utility>

#include "eogym/toolkit.hpp"

namespace eogym {

using nlohmann::json;

std::string_view to_string(ToolGroup g) {
    switch (g) {
        case ToolGroup::spatial_planning: return "spatial_planning";
        case ToolGroup::temporal_fetching: return "temporal_fetching";
        case ToolGroup::crossmodal_switching: return "crossmodal_switching";
        case ToolGroup::semantic: return "semantic";
        case ToolGroup::detection: return "detection";
        case ToolGroup::masking: return "masking";
        case ToolGroup::spectral: return "spectral";
        case ToolGroup::relation_measure: return "relation_measure";
    }
    return "relation_measure";
}

bool is_gathering(ToolGroup g) {
    return g == ToolGroup::spatial_planning || g == ToolGroup::temporal_fetching ||
           g == ToolGroup::crossmodal_switching;
}

std::string_view to_string(DatasetFamily f) {
    switch (f) {
        case DatasetFamily::multispectral: return "multispectral";
        case DatasetFamily::fmow: return "fmow";
        case DatasetFamily::fair1m: return "fair1m";
        case DatasetFamily::dior: return "dior";
        case DatasetFamily::dota: return "dota";
        case DatasetFamily::xview: return "xview";
        case DatasetFamily::xbd: return "xbd";
        case DatasetFamily::m4sar: return "m4sar";
        case DatasetFamily::sardet: return "sardet";
    }
    return "dior";
}

const std::vector<DatasetFamily>& all_dataset_families() {
    static const std::vector<DatasetFamily> all = {
        DatasetFamily::multispectral, DatasetFamily::fmow, DatasetFamily::fair1m,
        DatasetFamily::dior,          DatasetFamily::dota, DatasetFamily::xview,
        DatasetFamily::xbd,           DatasetFamily::m4sar, DatasetFamily::sardet,
    };
    return all;
}

DatasetFamily parse_dataset_family(std::string_view text) {
    std::string t;
    for (char c : text)
        if (c != '-' && c != '_' && c != ' ') t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (t == "sardet100k") t = "sardet";
    for (auto f : all_dataset_families())
        if (t == to_string(f)) return f;
    throw Error(ErrorCode::unknown_family, "unknown dataset family '" + std::string(text) + "'");
}

std::string_view to_string(SchemaMode m) { return m == SchemaMode::skill ? "skill" : "all"; }
std::string_view to_string(ResponseMode m) { return m == ResponseMode::verified ? "verified" : "unverified"; }
std::string_view to_string(PromptMode m) { return m == PromptMode::simple ? "simple" : "detailed"; }

SchemaMode parse_schema_mode(std::string_view s) {
    if (s == "skill") return SchemaMode::skill;
    if (s == "all") return SchemaMode::all;
    throw Error(ErrorCode::invalid_argument, "schema set must be skill or all");
}

ResponseMode parse_response_mode(std::string_view s) {
    if (s == "verified") return ResponseMode::verified;
    if (s == "unverified") return ResponseMode::unverified;
    throw Error(ErrorCode::invalid_argument, "response mode must be verified or unverified");
}

PromptMode parse_prompt_mode(std::string_view s) {
    if (s == "simple") return PromptMode::simple;
    if (s == "detailed") return PromptMode::detailed;
    throw Error(ErrorCode::invalid_argument, "prompt mode must be simple or detailed");
}

json to_json(const ExecutionMode& m) {
    return {{"response", std::string(to_string(m.response))},
            {"prompt", std::string(to_string(m.prompt))},
            {"schema_set", std::string(to_string(m.schema_set))},
            {"rename", m.rename},
            {"seed", m.seed}};
}

ExecutionMode execution_mode_from_json(const json& j) {
    ExecutionMode m;
    if (!j.is_object()) return m;
    m.response = parse_response_mode(j.value("response", std::string{"verified"}));
    m.prompt = parse_prompt_mode(j.value("prompt", std::string{"simple"}));
    m.schema_set = parse_schema_mode(j.value("schema_set", std::string{"skill"}));
    m.rename = j.value("rename", false);
    m.seed = j.value("seed", std::uint64_t{0});
    return m;
}

// ---------------------------------------------------------------------------

namespace {

ToolParam req(std::string name, std::string type, std::string description) {
    return {std::move(name), std::move(type), std::move(description), true};
}
ToolParam opt(std::string name, std::string type, std::string description) {
    return {std::move(name), std::move(type), std::move(description), false};
}

std::vector<ToolParam> aoi_params(std::string ref_name, std::string ref_type, std::string ref_desc) {
    return {req(std::move(ref_name), std::move(ref_type), std::move(ref_desc)),
            req("x0", "number", "Left edge of the AOI, normalized to [0,1]."),
            req("y0", "number", "Top edge of the AOI, normalized to [0,1]."),
            req("x1", "number", "Right edge of the AOI, normalized to [0,1]."),
            req("y1", "number", "Bottom edge of the AOI, normalized to [0,1].")};
}

std::vector<ToolSchema> build_catalog() {
    const auto image = req("image", "image_ref", "Record id or image handle returned by an earlier call.");
    const auto optical = req("image", "image_ref", "Optical record id or image handle.");
    const auto target = req("target", "string", "Object category to look for, e.g. \"ship\".");
    const auto scene = req("scene", "scene_ref", "Multispectral scene record id or cropped scene handle.");
    const auto threshold = opt("threshold", "number", "Index threshold; foreground is strictly above it.");
    const auto step = opt("step_frac", "number", "Shift as a fraction of the window size (default 0.5).");
    const auto ms_record = req("record_id", "record_ref", "Multispectral scene id, or a geolocated optical record.");
    const auto ref_date = opt("reference_date", "date", "RFC 3339 date to search from instead of the record's own date.");

    using G = ToolGroup;
    return {
        // Spatial planning
        {"crop_multispectral_image", "Crop every band of a multispectral scene to a normalized AOI.",
         aoi_params("scene", "scene_ref", "Multispectral scene record id or handle."), G::spatial_planning},
        {"crop_optical_or_sar_image", "Crop an optical or SAR image to a normalized AOI for close inspection.",
         aoi_params("image", "image_ref", "Record id or image handle."), G::spatial_planning},
        {"move_down_optical_image", "Slide the current crop window down over its base image, keeping its size.",
         {optical, step}, G::spatial_planning},
        {"move_left_optical_image", "Slide the current crop window left over its base image, keeping its size.",
         {optical, step}, G::spatial_planning},
        {"move_right_optical_image", "Slide the current crop window right over its base image, keeping its size.",
         {optical, step}, G::spatial_planning},
        {"move_up_optical_image", "Slide the current crop window up over its base image, keeping its size.",
         {optical, step}, G::spatial_planning},
        {"zoom_out_optical_image", "Enlarge the current crop window around its center within the base image.",
         {optical, opt("factor", "number", "Growth factor of the window extent, > 1 (default 2).")},
         G::spatial_planning},
        // Temporal fetching
        {"get_multispectral_list", "List the multispectral captures available for a location, oldest first.",
         {ms_record}, G::temporal_fetching},
        {"get_next_multispectral", "Fetch the first multispectral capture after the reference date.",
         {ms_record, ref_date}, G::temporal_fetching},
        {"get_next_optical_image", "Fetch the next later RGB frame of the same optical sequence.",
         {optical}, G::temporal_fetching},
        {"get_optical_image_list", "List the RGB frames of an optical sequence in time order.",
         {optical}, G::temporal_fetching},
        {"get_previous_multispectral", "Fetch the latest multispectral capture before the reference date.",
         {ms_record, ref_date}, G::temporal_fetching},
        {"get_previous_optical_image", "Fetch the next earlier RGB frame of the same optical sequence.",
         {optical}, G::temporal_fetching},
        // Cross-modal switching
        {"get_optical_from_sar", "Return the co-registered optical image paired with a SAR image.",
         {req("image", "image_ref", "SAR record id.")}, G::crossmodal_switching},
        {"get_sar_from_optical", "Return the co-registered SAR image paired with an optical image.",
         {req("image", "image_ref", "Optical record id.")}, G::crossmodal_switching},
        // Semantic understanding
        {"analyze_optical_scene", "Summarize what kind of scene an optical image shows. Not for counting.",
         {optical}, G::semantic},
        {"describe_optical_object", "Describe visible attributes, such as color, of a target object.",
         {optical, target}, G::semantic},
        // Detection
        {"get_object_bbox_by_optical_image", "Detect target objects in an optical image; returns pixel boxes.",
         {optical, target}, G::detection},
        {"get_object_bbox_by_sar_image", "Detect target objects in a SAR image; returns pixel boxes.",
         {req("image", "image_ref", "SAR record id or image handle."), target}, G::detection},
        {"get_object_bbox_by_optical_sar_image",
         "Return optical boxes of the target that are confirmed by the paired SAR image.",
         {req("optical", "image_ref", "Optical record id or handle."),
          req("sar", "image_ref", "SAR record id or handle."), target,
          opt("iou_threshold", "number", "Minimum cross-modal IoU for a box to be kept (default 0.5).")},
         G::detection},
        // Masking
        {"get_building_mask_by_optical_image", "Segment buildings in an optical image as a binary mask.",
         {optical}, G::masking},
        {"get_road_mask_by_optical_image", "Segment roads in an optical image as a binary mask.",
         {optical}, G::masking},
        {"get_object_mask_by_optical_image", "Segment target objects in an optical image as a binary mask.",
         {optical, target}, G::masking},
        {"compute_urban_mask_by_multispectral", "Threshold NDBI into a built-up area mask.",
         {scene, threshold}, G::masking},
        {"compute_vegetation_mask_by_multispectral", "Threshold NDVI into a vegetation mask.",
         {scene, threshold}, G::masking},
        {"compute_water_mask_by_multispectral", "Threshold NDWI into a water mask.", {scene, threshold},
         G::masking},
        // Spectral analysis
        {"compute_ndbi_by_multispectral", "NDBI statistics (built-up) for a multispectral scene.",
         {scene, threshold}, G::spectral},
        {"compute_ndsi_by_multispectral", "NDSI statistics (snow and ice) for a multispectral scene.",
         {scene, threshold}, G::spectral},
        {"compute_ndvi_by_multispectral", "NDVI statistics (vegetation) for a multispectral scene.",
         {scene, threshold}, G::spectral},
        {"compute_ndwi_by_multispectral", "NDWI statistics (water) for a multispectral scene.",
         {scene, threshold}, G::spectral},
        {"theme_index_lookup", "Name the spectral index, its expression and the bands to use for a theme.",
         {req("theme", "string", "One of vegetation, water, urban, snow.")}, G::spectral},
        // Relationship and measurement
        {"get_bbox_geospatial_relationship", "Relative position, overlap and IoU of two boxes or points.",
         {req("a", "box_or_point", "[x_min, y_min, x_max, y_max] or [x, y]."),
          req("b", "box_or_point", "[x_min, y_min, x_max, y_max] or [x, y]."),
          opt("frame_width", "integer", "Image width used to clamp the inputs."),
          opt("frame_height", "integer", "Image height used to clamp the inputs.")},
         G::relation_measure},
        {"get_mask_geospatial_relationship", "Overlap, containment and relative position of two masks.",
         {req("mask_a", "mask_ref", "Mask handle."), req("mask_b", "mask_ref", "Mask handle.")},
         G::relation_measure},
        {"normalize_bounding_boxes", "Rescale pixel boxes from one image size to another.",
         {req("boxes", "box_list", "Boxes as [x_min, y_min, x_max, y_max] arrays or objects."),
          req("from_width", "integer", "Source image width."), req("from_height", "integer", "Source image height."),
          req("to_width", "integer", "Target image width."), req("to_height", "integer", "Target image height.")},
         G::relation_measure},
        {"basic_calculator", "Evaluate an arithmetic expression with + - * / and parentheses.",
         {req("expression", "expression", "For example \"(3+5)/2\".")}, G::relation_measure},
    };
}

constexpr std::array<std::pair<std::string_view, std::string_view>, 10> kRenameRules = {{
    {"get", "access"},
    {"compute", "derive"},
    {"analyze", "inspect"},
    {"describe", "characterize"},
    {"crop", "clip"},
    {"move", "shift"},
    {"zoom", "widen"},
    {"normalize", "standardize"},
    {"theme", "topic"},
    {"basic", "simple"},
}};

RenamedName map_first_token(std::string_view name, bool forward) {
    const auto cut = name.find('_');
    const std::string_view head = name.substr(0, cut);
    const std::string_view tail = cut == std::string_view::npos ? std::string_view{} : name.substr(cut);
    for (const auto& [from, to] : kRenameRules) {
        if (head == (forward ? from : to)) return {std::string(forward ? to : from) + std::string(tail), true};
    }
    return {std::string(name), false};
}

}  // namespace

const std::vector<ToolSchema>& tool_catalog() {
    static const std::vector<ToolSchema> catalog = build_catalog();
    return catalog;
}

const ToolSchema* find_tool(std::string_view name) {
    for (const auto& s : tool_catalog())
        if (s.name == name) return &s;
    return nullptr;
}

const std::vector<std::string>& skill_tools(DatasetFamily family) {
    static const std::map<DatasetFamily, std::vector<std::string>> table = {
        {DatasetFamily::multispectral,
         {"get_multispectral_list", "get_previous_multispectral", "get_next_multispectral",
          "crop_multispectral_image", "compute_ndvi_by_multispectral", "compute_ndwi_by_multispectral",
          "compute_ndbi_by_multispectral", "compute_ndsi_by_multispectral", "compute_water_mask_by_multispectral",
          "compute_vegetation_mask_by_multispectral", "compute_urban_mask_by_multispectral",
          "get_bbox_geospatial_relationship", "get_mask_geospatial_relationship", "basic_calculator",
          "theme_index_lookup"}},
        {DatasetFamily::fmow,
         {"get_optical_image_list", "get_previous_optical_image", "get_next_optical_image",
          "crop_optical_or_sar_image", "get_object_bbox_by_optical_image", "get_object_mask_by_optical_image",
          "get_road_mask_by_optical_image", "get_building_mask_by_optical_image",
          "get_bbox_geospatial_relationship", "get_mask_geospatial_relationship", "basic_calculator",
          "normalize_bounding_boxes"}},
        {DatasetFamily::fair1m,
         {"crop_optical_or_sar_image", "zoom_out_optical_image", "move_up_optical_image",
          "move_down_optical_image", "move_left_optical_image", "move_right_optical_image", "basic_calculator",
          "get_object_bbox_by_optical_image", "get_bbox_geospatial_relationship",
          "get_mask_geospatial_relationship", "get_object_mask_by_optical_image"}},
        {DatasetFamily::dior,
         {"crop_optical_or_sar_image", "get_object_bbox_by_optical_image", "get_object_mask_by_optical_image",
          "get_road_mask_by_optical_image", "get_building_mask_by_optical_image",
          "get_bbox_geospatial_relationship", "get_mask_geospatial_relationship", "basic_calculator",
          "analyze_optical_scene", "describe_optical_object"}},
        {DatasetFamily::xbd,
         {"crop_optical_or_sar_image", "get_object_bbox_by_optical_image", "get_object_mask_by_optical_image",
          "get_building_mask_by_optical_image", "get_bbox_geospatial_relationship",
          "get_mask_geospatial_relationship", "basic_calculator", "analyze_optical_scene",
          "describe_optical_object"}},
        {DatasetFamily::m4sar,
         {"get_object_bbox_by_optical_sar_image", "get_optical_from_sar", "get_sar_from_optical",
          "crop_optical_or_sar_image", "get_bbox_geospatial_relationship", "get_mask_geospatial_relationship",
          "basic_calculator"}},
        {DatasetFamily::sardet,
         {"crop_optical_or_sar_image", "get_object_bbox_by_sar_image", "get_bbox_geospatial_relationship",
          "basic_calculator", "get_mask_geospatial_relationship"}},
    };
    switch (family) {
        case DatasetFamily::dota:
        case DatasetFamily::xview: return table.at(DatasetFamily::dior);
        default: return table.at(family);
    }
}

std::vector<ToolSchema> schema_set(DatasetFamily family, SchemaMode mode, bool rename) {
    std::vector<ToolSchema> out;
    if (mode == SchemaMode::all) {
        out = tool_catalog();
    } else {
        const auto& names = skill_tools(family);
        // Keep catalog order so the exposed list is stable regardless of table order.
        for (const auto& s : tool_catalog())
            if (std::find(names.begin(), names.end(), s.name) != names.end()) out.push_back(s);
    }
    if (rename)
        for (auto& s : out) s = rename_schema(s);
    return out;
}

RenamedName rename_tool_name(std::string_view backend_name) { return map_first_token(backend_name, true); }

RenamedName inverse_rename_tool_name(std::string_view alias) { return map_first_token(alias, false); }

ToolSchema rename_schema(const ToolSchema& schema) {
    ToolSchema out = schema;
    out.name = rename_tool_name(schema.name).name;
    return out;
}

namespace {

json param_schema(const ToolParam& p) {
    json s;
    if (p.type == "number") s["type"] = "number";
    else if (p.type == "integer") s["type"] = "integer";
    else if (p.type == "box_or_point") s = {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 2}, {"maxItems", 4}};
    else if (p.type == "box_list")
        s = {{"type", "array"}, {"items", {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 4}, {"maxItems", 4}}}};
    else s["type"] = "string";
    s["description"] = p.description;
    return s;
}

}  // namespace

json function_manifest(const std::vector<ToolSchema>& schemas) {
    json tools = json::array();
    for (const auto& s : schemas) {
        json props = json::object();
        json required = json::array();
        for (const auto& p : s.params) {
            props[p.name] = param_schema(p);
            if (p.required) required.push_back(p.name);
        }
        tools.push_back({{"type", "function"},
                         {"function",
                          {{"name", s.name},
                           {"description", s.description},
                           {"parameters", {{"type", "object"}, {"properties", props}, {"required", required}}}}}});
    }
    return tools;
}

}  // namespace eogym
