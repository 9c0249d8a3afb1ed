#include "eogym/episode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace eogym {

using nlohmann::json;

std::string_view to_string(EoTask t) {
    switch (t) {
        case EoTask::disaster_impact: return "disaster_impact";
        case EoTask::temporal_reasoning: return "temporal_reasoning";
        case EoTask::spatial_navigation: return "spatial_navigation";
        case EoTask::visual_understanding: return "visual_understanding";
        case EoTask::object_counting: return "object_counting";
        case EoTask::geospatial_reasoning: return "geospatial_reasoning";
    }
    return "object_counting";
}

const std::vector<EoTask>& all_eo_tasks() {
    static const std::vector<EoTask> all = {EoTask::disaster_impact,      EoTask::temporal_reasoning,
                                            EoTask::spatial_navigation,   EoTask::visual_understanding,
                                            EoTask::object_counting,      EoTask::geospatial_reasoning};
    return all;
}

EoTask parse_eo_task(std::string_view s) {
    for (auto t : all_eo_tasks())
        if (s == to_string(t)) return t;
    throw Error(ErrorCode::invalid_argument, "unknown EO task '" + std::string(s) + "'");
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::answered: return "answered";
        case Termination::budget_exhausted: return "budget_exhausted";
        case Termination::aborted: return "aborted";
    }
    return "aborted";
}

Termination parse_termination(std::string_view s) {
    for (auto t : {Termination::answered, Termination::budget_exhausted, Termination::aborted})
        if (s == to_string(t)) return t;
    throw Error(ErrorCode::invalid_argument, "unknown termination '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Answer rules

namespace {

std::string_view kind_name(AnswerRule::Kind k) {
    switch (k) {
        case AnswerRule::Kind::literal: return "literal";
        case AnswerRule::Kind::count: return "count";
        case AnswerRule::Kind::value: return "value";
        case AnswerRule::Kind::compare: return "compare";
    }
    return "literal";
}

AnswerRule::Kind parse_kind(std::string_view s) {
    for (auto k : {AnswerRule::Kind::literal, AnswerRule::Kind::count, AnswerRule::Kind::value,
                   AnswerRule::Kind::compare})
        if (s == kind_name(k)) return k;
    throw Error(ErrorCode::invalid_argument, "unknown answer rule '" + std::string(s) + "'");
}

const Observation* pick(const std::vector<Observation>& obs, int step) {
    const int n = static_cast<int>(obs.size());
    const int i = step < 0 ? n + step : step;
    if (i < 0 || i >= n) return nullptr;
    return &obs[static_cast<std::size_t>(i)];
}

std::optional<double> numeric_field(const Observation* o, const std::string& field) {
    if (!o || o->status != ObservationStatus::ok || !o->payload.is_object()) return std::nullopt;
    auto it = o->payload.find(field);
    if (it == o->payload.end() || !it->is_number()) return std::nullopt;
    return it->get<double>();
}

std::string round_to(double v, int decimals) {
    if (decimals < 0) return format_number(v);
    const double scale = std::pow(10.0, decimals);
    double r = std::round(v * scale) / scale;
    if (r == 0.0) r = 0.0;  // drop negative zero
    if (decimals == 0) return format_number(r);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, r);
    return buf;
}

}  // namespace

json to_json(const AnswerRule& r) {
    json j = {{"kind", std::string(kind_name(r.kind))}};
    if (r.kind == AnswerRule::Kind::literal) return j;
    j["step"] = r.step;
    if (!r.field.empty()) j["field"] = r.field;
    if (r.exclude_partial) j["exclude_partial"] = true;
    if (!r.where.empty()) j["where"] = r.where;
    if (r.decimals >= 0) j["decimals"] = r.decimals;
    if (r.kind == AnswerRule::Kind::compare) {
        j["other_step"] = r.other_step;
        j["if_greater"] = r.if_greater;
        j["if_less"] = r.if_less;
        j["if_equal"] = r.if_equal;
    }
    return j;
}

AnswerRule answer_rule_from_json(const json& j) {
    AnswerRule r;
    r.kind = parse_kind(j.value("kind", std::string{"literal"}));
    r.step = j.value("step", -1);
    r.field = j.value("field", std::string{});
    r.exclude_partial = j.value("exclude_partial", false);
    if (j.contains("where")) r.where = j["where"];
    r.decimals = j.value("decimals", -1);
    r.other_step = j.value("other_step", -2);
    r.if_greater = j.value("if_greater", std::string{"yes"});
    r.if_less = j.value("if_less", std::string{"no"});
    r.if_equal = j.value("if_equal", std::string{"no"});
    return r;
}

std::optional<std::string> apply_answer_rule(const AnswerRule& rule, const std::vector<Observation>& observations) {
    switch (rule.kind) {
        case AnswerRule::Kind::literal: return std::nullopt;
        case AnswerRule::Kind::count: {
            const Observation* o = pick(observations, rule.step);
            if (!o) return std::nullopt;
            if (o->status == ObservationStatus::empty) return std::string("0");
            if (o->status != ObservationStatus::ok) return std::nullopt;
            if (o->payload.contains("boxes")) {
                long n = 0;
                for (const auto& b : o->payload["boxes"]) {
                    if (rule.exclude_partial && b.value("partial", false)) continue;
                    bool keep = true;
                    for (const auto& [k, v] : rule.where.items())
                        if (!b.contains(k) || b[k] != v) keep = false;
                    if (keep) ++n;
                }
                return std::to_string(n);
            }
            if (auto c = numeric_field(o, "count")) return format_number(*c);
            return std::nullopt;
        }
        case AnswerRule::Kind::value: {
            const Observation* o = pick(observations, rule.step);
            if (!o || o->status != ObservationStatus::ok || !o->payload.is_object()) return std::nullopt;
            auto it = o->payload.find(rule.field);
            if (it == o->payload.end()) return std::nullopt;
            if (it->is_string()) return it->get<std::string>();
            if (it->is_boolean()) return std::string(it->get<bool>() ? "yes" : "no");
            if (it->is_number()) return round_to(it->get<double>(), rule.decimals);
            return std::nullopt;
        }
        case AnswerRule::Kind::compare: {
            const auto a = numeric_field(pick(observations, rule.step), rule.field);
            const auto b = numeric_field(pick(observations, rule.other_step), rule.field);
            if (!a || !b) return std::nullopt;
            if (*a > *b) return rule.if_greater;
            if (*a < *b) return rule.if_less;
            return rule.if_equal;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tasks

std::vector<std::string> Task::reference_tools() const {
    std::vector<std::string> out;
    for (const auto& c : reference_calls) out.push_back(c.name);
    return out;
}

json to_json(const Task& t) {
    json calls = json::array();
    for (const auto& c : t.reference_calls) calls.push_back({{"name", c.name}, {"arguments", c.arguments}});
    return {{"task_id", t.task_id},
            {"question", t.question},
            {"start_records", t.start_records},
            {"dataset_family", std::string(to_string(t.dataset_family))},
            {"eo_task", std::string(to_string(t.eo_task))},
            {"reference_answer", t.reference_answer},
            {"reference_calls", std::move(calls)},
            {"L", t.L},
            {"deferred", t.deferred},
            {"answer_rule", to_json(t.answer_rule)}};
}

Task task_from_json(const json& j) {
    Task t;
    try {
        t.task_id = j.at("task_id").get<std::string>();
        t.question = j.at("question").get<std::string>();
        t.start_records = j.at("start_records").get<std::vector<std::string>>();
        t.dataset_family = parse_dataset_family(j.at("dataset_family").get<std::string>());
        t.eo_task = parse_eo_task(j.at("eo_task").get<std::string>());
        t.reference_answer = j.value("reference_answer", std::string{});
        for (const auto& c : j.at("reference_calls"))
            t.reference_calls.push_back({c.at("name").get<std::string>(), c.value("arguments", json::object())});
        t.L = j.value("L", static_cast<int>(t.reference_calls.size()));
        t.deferred = j.value("deferred", false);
        if (j.contains("answer_rule")) t.answer_rule = answer_rule_from_json(j["answer_rule"]);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("bad task: ") + e.what());
    }
    return t;
}

std::vector<Task> load_tasks(const std::filesystem::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw Error(ErrorCode::io_error, "cannot open tasks " + jsonl.string());
    std::vector<Task> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(task_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::invalid_argument, jsonl.string() + ": " + e.what());
        }
    }
    return out;
}

void save_tasks(const std::filesystem::path& jsonl, const std::vector<Task>& tasks) {
    std::ofstream out(jsonl, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + jsonl.string());
    for (const auto& t : tasks) out << to_json(t).dump() << '\n';
}

void validate_task(const Task& task, const DataLakeIndex& index) {
    if (task.L < 1) throw Error(ErrorCode::invalid_argument, "task '" + task.task_id + "' has L < 1");
    if (static_cast<std::size_t>(task.L) != task.reference_calls.size())
        throw Error(ErrorCode::invalid_argument, "task '" + task.task_id + "' L differs from its reference calls");
    if (task.start_records.empty())
        throw Error(ErrorCode::missing_start_record, "task '" + task.task_id + "' has no start record");
    for (const auto& id : task.start_records)
        if (!index.find(id))
            throw Error(ErrorCode::missing_start_record, "task '" + task.task_id + "' start record '" + id + "' not indexed");
}

std::string resolve_reference_answer(const Toolkit& toolkit, const Task& task) {
    EpisodeContext ctx;
    ctx.family = task.dataset_family;
    ExecutionMode mode;
    std::vector<Observation> obs;
    int i = 0;
    for (const auto& c : task.reference_calls) obs.push_back(toolkit.execute({c.name, c.arguments.dump(), i++}, ctx, mode));
    if (task.answer_rule.kind == AnswerRule::Kind::literal) return task.reference_answer;
    auto answer = apply_answer_rule(task.answer_rule, obs);
    if (!answer)
        throw Error(ErrorCode::backend_failure, "reference calls of task '" + task.task_id + "' do not yield an answer");
    return *answer;
}

// ---------------------------------------------------------------------------
// Trajectories

json to_json(const Trajectory& t) {
    json steps = json::array();
    for (const auto& s : t.steps) {
        json js = {{"call", {{"name", s.call.name}, {"arguments", s.call.arguments}, {"call_index", s.call.call_index}}},
                   {"observation", to_json(s.observation)}};
        if (s.rationale) js["rationale"] = *s.rationale;
        steps.push_back(std::move(js));
    }
    json j = {{"schema_version", t.schema_version},
              {"task_id", t.task_id},
              {"dataset_family", std::string(to_string(t.dataset_family))},
              {"eo_task", std::string(to_string(t.eo_task))},
              {"config", to_json(t.config)},
              {"max_calls", t.max_calls},
              {"attempt", t.attempt},
              {"steps", std::move(steps)},
              {"final_answer", t.final_answer ? json(*t.final_answer) : json()},
              {"termination", t.termination ? json(std::string(to_string(*t.termination))) : json()},
              {"seed", t.seed},
              {"zero_call", t.zero_call}};
    if (t.resolved_reference) j["resolved_reference"] = *t.resolved_reference;
    return j;
}

Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    try {
        t.schema_version = j.at("schema_version").get<int>();
        if (t.schema_version != kTrajectorySchemaVersion)
            throw Error(ErrorCode::invalid_argument,
                        "unsupported trajectory schema version " + std::to_string(t.schema_version));
        t.task_id = j.at("task_id").get<std::string>();
        t.dataset_family = parse_dataset_family(j.at("dataset_family").get<std::string>());
        t.eo_task = parse_eo_task(j.at("eo_task").get<std::string>());
        t.config = execution_mode_from_json(j.at("config"));
        t.max_calls = j.value("max_calls", kEvalBudget);
        t.attempt = j.value("attempt", 0);
        for (const auto& s : j.at("steps")) {
            Step st;
            if (s.contains("rationale") && !s["rationale"].is_null()) st.rationale = s["rationale"].get<std::string>();
            const auto& c = s.at("call");
            st.call = {c.at("name").get<std::string>(), c.at("arguments").get<std::string>(),
                       c.at("call_index").get<int>()};
            st.observation = observation_from_json(s.at("observation"));
            t.steps.push_back(std::move(st));
        }
        if (j.contains("final_answer") && !j["final_answer"].is_null())
            t.final_answer = j["final_answer"].get<std::string>();
        if (j.contains("termination") && !j["termination"].is_null())
            t.termination = parse_termination(j["termination"].get<std::string>());
        t.seed = j.value("seed", std::uint64_t{0});
        t.zero_call = j.value("zero_call", false);
        if (j.contains("resolved_reference")) t.resolved_reference = j["resolved_reference"].get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("bad trajectory: ") + e.what());
    }
    return t;
}

std::string trajectory_line(const Trajectory& t) { return to_json(t).dump(); }

std::vector<Trajectory> load_trajectories(const std::filesystem::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw Error(ErrorCode::io_error, "cannot open trajectories " + jsonl.string());
    std::vector<Trajectory> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(trajectory_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::invalid_argument, jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void append_trajectory(const std::filesystem::path& jsonl, const Trajectory& t) {
    std::ofstream out(jsonl, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + jsonl.string());
    out << trajectory_line(t) << '\n';
}

std::vector<std::string> backend_tool_sequence(const Trajectory& t) {
    std::vector<std::string> out;
    for (const auto& s : t.steps)
        out.push_back(t.config.rename ? inverse_rename_tool_name(s.call.name).name : s.call.name);
    return out;
}

// ---------------------------------------------------------------------------
// Session

json to_json(const InitialObservation& o) {
    json images = json::array();
    for (const auto& r : o.start_images) {
        json ji = {{"record_id", r.record_id}, {"modality", std::string(to_string(r.modality))}, {"sensor", r.sensor}};
        if (r.capture_time) ji["capture_time"] = format_rfc3339(*r.capture_time);
        images.push_back(std::move(ji));
    }
    return {{"system_prompt", o.system_prompt},
            {"question", o.question},
            {"start_images", std::move(images)},
            {"tools", function_manifest(o.schemas)},
            {"max_calls", o.max_calls}};
}

EpisodeSession::EpisodeSession(std::shared_ptr<const Toolkit> toolkit, Task task, ExecutionMode mode, int max_calls,
                               int attempt)
    : toolkit_(std::move(toolkit)), task_(std::move(task)), mode_(mode), max_calls_(max_calls) {
    if (max_calls_ <= 0) throw Error(ErrorCode::invalid_argument, "budget must be positive");
    validate_task(task_, toolkit_->index());

    initial_.system_prompt = std::string(system_prompt(mode_.prompt));
    initial_.question = task_.question;
    for (const auto& id : task_.start_records) initial_.start_images.push_back(toolkit_->index().at(id));
    initial_.schemas = schema_set(task_.dataset_family, mode_.schema_set, mode_.rename);
    initial_.max_calls = max_calls_;

    ctx_.family = task_.dataset_family;
    for (const auto& s : schema_set(task_.dataset_family, mode_.schema_set, false)) ctx_.exposed.insert(s.name);

    trajectory_.task_id = task_.task_id;
    trajectory_.dataset_family = task_.dataset_family;
    trajectory_.eo_task = task_.eo_task;
    trajectory_.config = mode_;
    trajectory_.max_calls = max_calls_;
    trajectory_.attempt = attempt;
    trajectory_.seed = mode_.seed;
}

void EpisodeSession::require_open() const {
    if (closed()) throw Error(ErrorCode::session_closed, "episode for task '" + task_.task_id + "' is closed");
}

StepResult EpisodeSession::step(std::string name, std::string arguments, std::optional<std::string> rationale) {
    require_open();
    if (calls_remaining() <= 0) {
        trajectory_.termination = Termination::budget_exhausted;
        throw Error(ErrorCode::budget_exhausted, "call budget of " + std::to_string(max_calls_) + " exhausted");
    }
    ToolCall call{std::move(name), std::move(arguments), static_cast<int>(trajectory_.steps.size())};
    Observation obs = toolkit_->execute(call, ctx_, mode_);
    trajectory_.steps.push_back({std::move(rationale), call, obs});
    return {std::move(obs), call.call_index, calls_remaining()};
}

Trajectory EpisodeSession::finalize(std::string answer) {
    require_open();
    trajectory_.final_answer = std::move(answer);
    trajectory_.termination = Termination::answered;
    trajectory_.zero_call = trajectory_.steps.empty();
    if (task_.deferred) trajectory_.resolved_reference = resolve_reference_answer(*toolkit_, task_);
    return trajectory_;
}

Trajectory EpisodeSession::abort() {
    if (!closed()) {
        trajectory_.termination = Termination::aborted;
        trajectory_.zero_call = trajectory_.steps.empty();
    }
    return trajectory_;
}

// ---------------------------------------------------------------------------
// Structural validation

bool ValidationReport::has(std::string_view code) const {
    return std::any_of(issues.begin(), issues.end(), [&](const ValidationIssue& i) { return i.code == code; });
}

std::vector<std::string> core_tools(DatasetFamily family) {
    std::vector<std::string> out;
    for (const auto& name : skill_tools(family)) {
        const auto* schema = find_tool(name);
        if (schema && schema->group != ToolGroup::relation_measure) out.push_back(name);
    }
    return out;
}

ValidationReport validate_structure(const Trajectory& t) {
    ValidationReport r;
    auto fail = [&](std::string code, std::string category = {}) {
        r.valid = false;
        r.issues.push_back({std::move(code), std::move(category)});
    };

    const auto names = backend_tool_sequence(t);
    bool any_valid_step = false;
    bool any_ok = false;
    bool bad_payload = false;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        bool payload_ok = true;
        try {
            payload_ok = json::parse(s.call.arguments).is_object();
        } catch (const json::exception&) {
            payload_ok = false;
        }
        if (!payload_ok) bad_payload = true;
        if (payload_ok && find_tool(names[i])) any_valid_step = true;
        if (s.observation.status == ObservationStatus::ok) any_ok = true;
    }
    if (!any_valid_step) fail("no-tool-step");
    if (!t.steps.empty() && !any_ok) fail("no-successful-observation", std::string(kNoSuccessfulObservation));
    if (bad_payload) fail("invalid-payload");
    const auto core = core_tools(t.dataset_family);
    const bool has_core = std::any_of(names.begin(), names.end(), [&](const std::string& n) {
        return std::find(core.begin(), core.end(), n) != core.end();
    });
    if (!t.steps.empty() && !has_core) fail("missing-core-tool");
    return r;
}

}  // namespace eogym
