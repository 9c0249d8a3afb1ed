#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eogym/episode.hpp"
#include "eogym/judge.hpp"
#include "json.hpp"

namespace eogym {

// Non-negative fraction in lowest terms.
struct Rational {
    std::uint64_t num = 0;
    std::uint64_t den = 1;

    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational&) const = default;
};

// 1 - C(n-c, k) / C(n, k), exactly. Throws Error(invalid_argument) unless 0 <= c <= n and 1 <= k <= n.
Rational pass_at_k_exact(int n, int c, int k);
double pass_at_k(int n, int c, int k);

struct Attempt {
    bool correct = false;  // judge verdict on the final answer
    bool zero_call = false;
    std::optional<std::string> answer;
    std::vector<std::string> tools;  // backend names in call order
    int calls = 0;
    int illegal_calls = 0;

    // Zero-call attempts never count, whatever the judge said.
    bool success() const { return correct && !zero_call; }
};

struct QuestionResult {
    std::string task_id;
    std::string question;
    std::string reference_answer;
    EoTask eo_task = EoTask::object_counting;
    std::vector<Attempt> attempts;  // generation order
    std::vector<std::string> reference_tools;
    int L = 1;
};

// Attempts up to and including the first success, or all of them.
std::span<const Attempt> consumed_attempts(const QuestionResult& q);

// Success iff any of the first min(k, generated) attempts succeeds. Mean over questions.
double pass_at_k_early_stopped(std::span<const QuestionResult> results, int k);
// Mean of the unbiased estimator; every question needs at least k attempts.
double pass_at_k_unbiased(std::span<const QuestionResult> results, int k);

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;

    bool operator==(const ConfidenceInterval&) const = default;
};

// Percentile interval of the resampled mean; resample b uses seed mix_seed(seed, b).
ConfidenceInterval bootstrap_ci(std::span<const double> values, int resamples = 1000, double level = 0.95,
                                std::uint64_t seed = 0);

struct ToolMatch {
    bool exact = false;
    bool in_order = false;  // reference is a subsequence of the prediction
    bool any = false;       // reference multiset is covered by the prediction

    bool operator==(const ToolMatch&) const = default;
};

ToolMatch tool_match(std::span<const std::string> predicted, std::span<const std::string> reference);

struct Diagnostics {
    double tool_call_ratio = 0.0;
    double illegal_rate = 0.0;
    double tool_exact = 0.0;
    double tool_in_order = 0.0;
    double tool_any = 0.0;
    double zero_call_rate = 0.0;
};

Diagnostics diagnostics(std::span<const QuestionResult> results);

// Votes of answered, non-zero-call attempts clustered by judge equivalence; the largest cluster
// wins, ties go to the cluster seen first, and its earliest answer is judged against the reference.
bool self_consistency(const QuestionResult& q, const Judge& judge);

std::string l_bucket(int L);  // "1", "2", "3", "4+"

struct PassAtK {
    int k = 1;
    double value = 0.0;
    ConfidenceInterval ci;
};

struct GroupReport {
    std::string key;
    std::size_t questions = 0;
    std::vector<PassAtK> pass;
    Diagnostics diag;
    double self_consistency = 0.0;
};

struct EvalReport {
    std::size_t questions = 0;
    std::size_t attempts = 0;
    std::vector<PassAtK> pass;
    Diagnostics diag;
    double self_consistency = 0.0;
    std::vector<GroupReport> by_task;
    std::vector<GroupReport> by_L;
    int resamples = 1000;
    std::uint64_t seed = 0;
};

struct ReportOptions {
    std::vector<int> ks = {1, 2, 3};
    int resamples = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
};

GroupReport summarize(std::string key, std::span<const QuestionResult> results, const Judge& judge,
                      const ReportOptions& opts);
EvalReport build_report(std::span<const QuestionResult> results, const Judge& judge, const ReportOptions& opts = {});

nlohmann::json to_json(const EvalReport& r);
std::string format_table(const EvalReport& r);
std::string to_csv(const EvalReport& r);

// Groups trajectories by task (file order = attempt order) and judges each final answer.
std::vector<QuestionResult> collect_results(const std::vector<Task>& tasks, const std::vector<Trajectory>& trajectories,
                                            const Judge& judge);

}  // namespace eogym
