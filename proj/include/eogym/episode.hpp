#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eogym/toolkit.hpp"
#include "json.hpp"

namespace eogym {

inline constexpr int kEvalBudget = 15;
inline constexpr int kSynthesisBudget = 50;
inline constexpr int kTrajectorySchemaVersion = 1;

enum class EoTask {
    disaster_impact,
    temporal_reasoning,
    spatial_navigation,
    visual_understanding,
    object_counting,
    geospatial_reasoning,
};

std::string_view to_string(EoTask t);
EoTask parse_eo_task(std::string_view s);
const std::vector<EoTask>& all_eo_tasks();

// The verbatim system prompt for a prompt configuration.
std::string_view system_prompt(PromptMode mode);

// How a final answer is read off the observations of a reference call sequence.
struct AnswerRule {
    enum class Kind {
        literal,  // the stored reference answer, no tool output involved
        count,    // number of boxes (optionally filtered) or listed records
        value,    // a payload field, numbers optionally rounded
        compare,  // numeric field of `step` against the same field of `other_step`
    };
    Kind kind = Kind::literal;
    int step = -1;  // negative values count from the end
    std::string field;
    bool exclude_partial = false;
    nlohmann::json where = nlohmann::json::object();  // box fields that must match for `count`
    int decimals = -1;
    int other_step = -2;
    std::string if_greater = "yes";
    std::string if_less = "no";
    std::string if_equal = "no";

    bool operator==(const AnswerRule&) const = default;
};

nlohmann::json to_json(const AnswerRule& r);
AnswerRule answer_rule_from_json(const nlohmann::json& j);

// Answer text, or nullopt when a referenced observation is not ok or lacks the field.
std::optional<std::string> apply_answer_rule(const AnswerRule& rule, const std::vector<Observation>& observations);

struct ReferenceCall {
    std::string name;  // backend name
    nlohmann::json arguments = nlohmann::json::object();

    bool operator==(const ReferenceCall&) const = default;
};

struct Task {
    std::string task_id;
    std::string question;
    std::vector<std::string> start_records;
    DatasetFamily dataset_family = DatasetFamily::dior;
    EoTask eo_task = EoTask::object_counting;
    std::string reference_answer;
    std::vector<ReferenceCall> reference_calls;
    int L = 1;
    bool deferred = false;
    AnswerRule answer_rule;

    std::vector<std::string> reference_tools() const;
    bool operator==(const Task&) const = default;
};

nlohmann::json to_json(const Task& t);
Task task_from_json(const nlohmann::json& j);
std::vector<Task> load_tasks(const std::filesystem::path& jsonl);
void save_tasks(const std::filesystem::path& jsonl, const std::vector<Task>& tasks);

// Throws Error(invalid_argument) for L < 1 or a call count mismatch, Error(missing_start_record) otherwise.
void validate_task(const Task& task, const DataLakeIndex& index);

// Runs the reference calls in a fresh verified context and applies the answer rule.
std::string resolve_reference_answer(const Toolkit& toolkit, const Task& task);

enum class Termination { answered, budget_exhausted, aborted };

std::string_view to_string(Termination t);
Termination parse_termination(std::string_view s);

struct Step {
    std::optional<std::string> rationale;
    ToolCall call;
    Observation observation;

    bool operator==(const Step&) const = default;
};

struct Trajectory {
    int schema_version = kTrajectorySchemaVersion;
    std::string task_id;
    DatasetFamily dataset_family = DatasetFamily::dior;
    EoTask eo_task = EoTask::object_counting;
    ExecutionMode config;
    int max_calls = kEvalBudget;
    int attempt = 0;
    std::vector<Step> steps;
    std::optional<std::string> final_answer;
    std::optional<Termination> termination;
    std::uint64_t seed = 0;
    bool zero_call = false;
    std::optional<std::string> resolved_reference;  // deferred tasks only

    bool operator==(const Trajectory&) const = default;
};

nlohmann::json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);
std::string trajectory_line(const Trajectory& t);
std::vector<Trajectory> load_trajectories(const std::filesystem::path& jsonl);
void append_trajectory(const std::filesystem::path& jsonl, const Trajectory& t);

// Tool names of the steps, mapped back to backend names when the run was renamed.
std::vector<std::string> backend_tool_sequence(const Trajectory& t);

struct InitialObservation {
    std::string system_prompt;
    std::string question;
    std::vector<DataLakeRecord> start_images;
    std::vector<ToolSchema> schemas;
    int max_calls = kEvalBudget;
};

nlohmann::json to_json(const InitialObservation& o);

struct StepResult {
    Observation observation;
    int call_index = 0;
    int calls_remaining = 0;
};

// One episode: reset happens in the constructor, then step* and finalize (or abort).
class EpisodeSession {
public:
    EpisodeSession(std::shared_ptr<const Toolkit> toolkit, Task task, ExecutionMode mode,
                   int max_calls = kEvalBudget, int attempt = 0);

    const InitialObservation& initial() const { return initial_; }
    const Task& task() const { return task_; }
    const Trajectory& trajectory() const { return trajectory_; }
    bool closed() const { return trajectory_.termination.has_value(); }
    int calls_remaining() const { return max_calls_ - static_cast<int>(trajectory_.steps.size()); }

    // Throws Error(session_closed) after close and Error(budget_exhausted) past the budget,
    // which also closes the episode.
    StepResult step(std::string name, std::string arguments, std::optional<std::string> rationale = std::nullopt);
    Trajectory finalize(std::string answer);
    Trajectory abort();

private:
    void require_open() const;

    std::shared_ptr<const Toolkit> toolkit_;
    Task task_;
    ExecutionMode mode_;
    int max_calls_;
    InitialObservation initial_;
    EpisodeContext ctx_;
    Trajectory trajectory_;
};

struct ValidationIssue {
    std::string code;      // no-tool-step, no-successful-observation, invalid-payload, missing-core-tool
    std::string category;  // reviewer failure category name, when one applies

    bool operator==(const ValidationIssue&) const = default;
};

struct ValidationReport {
    bool valid = true;
    std::vector<ValidationIssue> issues;

    bool has(std::string_view code) const;
};

inline constexpr std::string_view kNoSuccessfulObservation = "No successful observation";

// Evidence tools of a family: its skill tools outside the relation/measurement group.
std::vector<std::string> core_tools(DatasetFamily family);

ValidationReport validate_structure(const Trajectory& t);

}  // namespace eogym
