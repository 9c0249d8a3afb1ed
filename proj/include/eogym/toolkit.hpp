#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "eogym/datalake.hpp"
#include "eogym/raster.hpp"
#include "eogym/spectral.hpp"
#include "json.hpp"

namespace eogym {

enum class ToolGroup {
    spatial_planning,
    temporal_fetching,
    crossmodal_switching,
    semantic,
    detection,
    masking,
    spectral,
    relation_measure,
};

std::string_view to_string(ToolGroup g);
bool is_gathering(ToolGroup g);

enum class DatasetFamily { multispectral, fmow, fair1m, dior, dota, xview, xbd, m4sar, sardet };

std::string_view to_string(DatasetFamily f);
DatasetFamily parse_dataset_family(std::string_view text);  // throws Error(unknown_family)
const std::vector<DatasetFamily>& all_dataset_families();

struct ToolParam {
    std::string name;
    std::string type;  // semantic type: image_ref, scene_ref, mask_ref, record_ref, number, string, box, ...
    std::string description;
    bool required = true;

    bool operator==(const ToolParam&) const = default;
};

struct ToolSchema {
    std::string name;
    std::string description;
    std::vector<ToolParam> params;
    ToolGroup group = ToolGroup::relation_measure;

    bool operator==(const ToolSchema&) const = default;
};

// The 35 registered tools in catalog order.
const std::vector<ToolSchema>& tool_catalog();
const ToolSchema* find_tool(std::string_view backend_name);

enum class SchemaMode { skill, all };
enum class ResponseMode { verified, unverified };
enum class PromptMode { simple, detailed };

std::string_view to_string(SchemaMode m);
std::string_view to_string(ResponseMode m);
std::string_view to_string(PromptMode m);
SchemaMode parse_schema_mode(std::string_view s);
ResponseMode parse_response_mode(std::string_view s);
PromptMode parse_prompt_mode(std::string_view s);

struct ExecutionMode {
    ResponseMode response = ResponseMode::verified;
    PromptMode prompt = PromptMode::simple;
    SchemaMode schema_set = SchemaMode::skill;
    bool rename = false;
    std::uint64_t seed = 0;

    bool operator==(const ExecutionMode&) const = default;
};

nlohmann::json to_json(const ExecutionMode& m);
ExecutionMode execution_mode_from_json(const nlohmann::json& j);

// Backend tool names exposed to a dataset family under Skill tools.
const std::vector<std::string>& skill_tools(DatasetFamily family);

std::vector<ToolSchema> schema_set(DatasetFamily family, SchemaMode mode, bool rename);

struct RenamedName {
    std::string name;
    bool mapped = false;  // false when the first token has no alias
};

RenamedName rename_tool_name(std::string_view backend_name);
// Model-facing alias back to the backend name; unmapped names pass through.
RenamedName inverse_rename_tool_name(std::string_view alias);
ToolSchema rename_schema(const ToolSchema& schema);

// Chat-completion style function list: [{"type":"function","function":{name, description, parameters}}].
nlohmann::json function_manifest(const std::vector<ToolSchema>& schemas);

// ---------------------------------------------------------------------------
// Ground truth

struct GroundTruthObject {
    std::string label;
    BBox box;
    std::optional<std::string> damage;
    std::optional<std::string> attribute;

    bool operator==(const GroundTruthObject&) const = default;
};

struct GroundTruthAnnotation {
    std::string record_id;
    std::optional<std::string> scene;
    std::vector<GroundTruthObject> objects;
};

class AnnotationStore {
public:
    void add(GroundTruthAnnotation a);
    const GroundTruthAnnotation* find(std::string_view record_id) const;
    std::size_t size() const { return by_id_.size(); }

    static AnnotationStore load(const std::filesystem::path& jsonl);
    void save(const std::filesystem::path& jsonl) const;

private:
    std::map<std::string, GroundTruthAnnotation, std::less<>> by_id_;
};

// ---------------------------------------------------------------------------
// Pluggable semantic target filter and detector backends

class SemanticFilter {
public:
    virtual ~SemanticFilter() = default;
    // Subset of `labels` that the target refers to.
    virtual std::set<std::string> match(std::string_view target, const std::set<std::string>& labels) const = 0;
};

// Normalized string match plus a hypernym table (e.g. vehicle -> car, truck).
class SynonymFilter final : public SemanticFilter {
public:
    SynonymFilter();  // built-in table
    explicit SynonymFilter(std::map<std::string, std::set<std::string>> table);

    // Text format: one "term: label, label, ..." entry per line, '#' comments.
    static SynonymFilter from_file(const std::filesystem::path& path);
    static SynonymFilter parse(std::string_view text);
    static std::string normalize(std::string_view text);

    std::set<std::string> match(std::string_view target, const std::set<std::string>& labels) const override;

    const std::map<std::string, std::set<std::string>>& table() const { return table_; }

private:
    std::map<std::string, std::set<std::string>> table_;
};

struct DetectionRequest {
    std::string image_key;  // base image id the boxes belong to
    std::string target;
    std::vector<BBox> ground_truth;  // label-filtered boxes in patch coordinates
    Dims image;
    std::uint64_t seed = 0;
};

struct Detection {
    BBox box;
    int source = -1;  // index into DetectionRequest::ground_truth, -1 for a false positive

    bool operator==(const Detection&) const = default;
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual std::vector<Detection> detect(const DetectionRequest& request) const = 0;
};

// Perturbs ground truth: Gaussian corner jitter, random drops and false positives.
class NoisyOracleDetector final : public Detector {
public:
    struct Params {
        double jitter_px = 2.0;
        double drop_prob = 0.15;
        double false_positive_rate = 0.1;
    };

    NoisyOracleDetector() = default;
    explicit NoisyOracleDetector(Params p) : params_(p) {}

    std::vector<Detection> detect(const DetectionRequest& request) const override;
    const Params& params() const { return params_; }

private:
    Params params_;
};

// ---------------------------------------------------------------------------
// Observations and execution

enum class ObservationStatus { ok, empty, error };
enum class PayloadKind { none, patch, bboxes, mask, index_stats, relation, records, text, scalar };

std::string_view to_string(ObservationStatus s);
std::string_view to_string(PayloadKind k);
ObservationStatus parse_observation_status(std::string_view s);
PayloadKind parse_payload_kind(std::string_view s);

struct Observation {
    ObservationStatus status = ObservationStatus::ok;
    PayloadKind kind = PayloadKind::none;
    nlohmann::json payload;  // null unless status == ok
    std::string message;
    std::optional<std::string> error_code;

    static Observation error(ErrorCode code, std::string message);
    static Observation empty(std::string message);
    static Observation ok(PayloadKind kind, nlohmann::json payload, std::string message = {});

    bool operator==(const Observation&) const = default;
};

nlohmann::json to_json(const Observation& o);
Observation observation_from_json(const nlohmann::json& j);

struct ToolCall {
    std::string name;
    std::string arguments;  // raw structured text as sent by the agent
    int call_index = 0;

    bool operator==(const ToolCall&) const = default;
};

struct ImageHandle {
    RasterPatch patch;  // provenance always set
    Modality modality = Modality::optical_rgb;
};

// Mutable per-episode state. Never shared between episodes.
struct EpisodeContext {
    DatasetFamily family = DatasetFamily::dior;
    std::set<std::string> exposed;  // backend names; empty means every tool
    std::map<std::string, ImageHandle> images;
    std::map<std::string, BinaryMask> masks;
    std::map<std::string, BandSet> scenes;
};

class Toolkit {
public:
    Toolkit(std::shared_ptr<const DataLakeIndex> index, std::shared_ptr<const AnnotationStore> annotations,
            std::shared_ptr<const SemanticFilter> filter = std::make_shared<SynonymFilter>(),
            std::shared_ptr<const Detector> detector = std::make_shared<NoisyOracleDetector>());

    const DataLakeIndex& index() const { return *index_; }
    const AnnotationStore& annotations() const { return *annotations_; }

    // Never throws for tool-level failures; they come back as error observations.
    Observation execute(const ToolCall& call, EpisodeContext& ctx, const ExecutionMode& mode) const;

    // Ground-truth boxes for `image` filtered by the semantic target filter.
    Observation detect_verified(const ImageHandle& image, std::string_view target) const;
    Observation detect_unverified(const ImageHandle& image, std::string_view target, std::uint64_t seed) const;

    // Loads an optical/SAR record (or a window of its base image) as a handle.
    ImageHandle load_image(const DataLakeRecord& record) const;

private:
    struct Impl;
    std::shared_ptr<const DataLakeIndex> index_;
    std::shared_ptr<const AnnotationStore> annotations_;
    std::shared_ptr<const SemanticFilter> filter_;
    std::shared_ptr<const Detector> detector_;
};

// Arithmetic over + - * / and parentheses. Throws Error(illegal_arguments / division_by_zero).
double evaluate_expression(std::string_view expression);

// Shortest text that round-trips the value; integers print without a decimal point.
std::string format_number(double v);

}  // namespace eogym
