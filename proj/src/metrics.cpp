#include "eogym/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "eogym/rng.hpp"

namespace eogym {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Pass@k

namespace {

unsigned __int128 gcd128(unsigned __int128 a, unsigned __int128 b) {
    while (b != 0) {
        const auto t = a % b;
        a = b;
        b = t;
    }
    return a;
}

}  // namespace

Rational pass_at_k_exact(int n, int c, int k) {
    if (n < 0 || c < 0 || c > n) throw Error(ErrorCode::invalid_argument, "pass@k needs 0 <= c <= n");
    if (k < 1 || k > n) throw Error(ErrorCode::invalid_argument, "pass@k needs 1 <= k <= n");
    if (n - c < k) return {1, 1};
    // C(n-c,k)/C(n,k) = prod_{i<k} (n-c-i)/(n-i)
    unsigned __int128 num = 1, den = 1;
    for (int i = 0; i < k; ++i) {
        num *= static_cast<unsigned>(n - c - i);
        den *= static_cast<unsigned>(n - i);
        const auto g = gcd128(num, den);
        num /= g;
        den /= g;
        if (num > UINT64_MAX / 1024 || den > UINT64_MAX / 1024)
            throw Error(ErrorCode::invalid_argument, "pass@k operands too large for exact evaluation");
    }
    const auto n64 = static_cast<std::uint64_t>(num), d64 = static_cast<std::uint64_t>(den);
    const auto diff = d64 - n64;
    const auto g = std::gcd(diff, d64);
    return {diff / g, d64 / g};
}

double pass_at_k(int n, int c, int k) {
    if (n <= 40) return pass_at_k_exact(n, c, k).to_double();
    if (c < 0 || c > n || k < 1 || k > n) throw Error(ErrorCode::invalid_argument, "pass@k needs 0 <= c <= n, 1 <= k <= n");
    double keep = 1.0;
    for (int i = 0; i < k; ++i) keep *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    return 1.0 - keep;
}

std::span<const Attempt> consumed_attempts(const QuestionResult& q) {
    std::size_t i = 0;
    while (i < q.attempts.size()) {
        if (q.attempts[i++].success()) break;
    }
    return {q.attempts.data(), i};
}

namespace {

void require_nonempty(std::span<const QuestionResult> results) {
    if (results.empty()) throw Error(ErrorCode::empty_input, "no question results");
}

double early_indicator(const QuestionResult& q, int k) {
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(k), q.attempts.size());
    for (std::size_t i = 0; i < m; ++i)
        if (q.attempts[i].success()) return 1.0;
    return 0.0;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double pass_at_k_early_stopped(std::span<const QuestionResult> results, int k) {
    require_nonempty(results);
    if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be positive");
    std::vector<double> ind;
    for (const auto& q : results) ind.push_back(early_indicator(q, k));
    return mean(ind);
}

double pass_at_k_unbiased(std::span<const QuestionResult> results, int k) {
    require_nonempty(results);
    std::vector<double> v;
    for (const auto& q : results) {
        const int n = static_cast<int>(q.attempts.size());
        const int c = static_cast<int>(std::count_if(q.attempts.begin(), q.attempts.end(),
                                                     [](const Attempt& a) { return a.success(); }));
        v.push_back(pass_at_k(n, c, k));
    }
    return mean(v);
}

// ---------------------------------------------------------------------------
// Bootstrap

ConfidenceInterval bootstrap_ci(std::span<const double> values, int resamples, double level, std::uint64_t seed) {
    if (values.empty()) throw Error(ErrorCode::empty_input, "bootstrap over no values");
    if (resamples < 1) throw Error(ErrorCode::invalid_argument, "resamples must be positive");
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::invalid_argument, "level must lie in (0,1)");
    const std::size_t n = values.size();
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (int b = 0; b < resamples; ++b) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(b)));
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
        means[static_cast<std::size_t>(b)] = s / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    auto quantile = [&](double p) {
        const double h = (static_cast<double>(means.size()) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, means.size() - 1);
        return means[lo] + (h - static_cast<double>(lo)) * (means[hi] - means[lo]);
    };
    const double alpha = (1.0 - level) / 2.0;
    return {quantile(alpha), quantile(1.0 - alpha)};
}

// ---------------------------------------------------------------------------
// Tool matching and diagnostics

ToolMatch tool_match(std::span<const std::string> predicted, std::span<const std::string> reference) {
    ToolMatch m;
    m.exact = std::equal(predicted.begin(), predicted.end(), reference.begin(), reference.end());
    std::size_t j = 0;
    for (std::size_t i = 0; i < predicted.size() && j < reference.size(); ++i)
        if (predicted[i] == reference[j]) ++j;
    m.in_order = j == reference.size();
    std::map<std::string_view, long> need;
    for (const auto& r : reference) ++need[r];
    for (const auto& p : predicted)
        if (auto it = need.find(p); it != need.end()) --it->second;
    m.any = std::all_of(need.begin(), need.end(), [](const auto& kv) { return kv.second <= 0; });
    return m;
}

Diagnostics diagnostics(std::span<const QuestionResult> results) {
    require_nonempty(results);
    std::vector<double> ratio, illegal, exact, in_order, any;
    std::size_t generated = 0, zero = 0;
    for (const auto& q : results) {
        if (q.L < 1) throw Error(ErrorCode::invalid_argument, "task '" + q.task_id + "' has L < 1");
        for (const auto& a : q.attempts) {
            ++generated;
            if (a.zero_call) ++zero;
        }
        const auto consumed = consumed_attempts(q);
        if (consumed.empty()) continue;
        std::vector<double> r, e, o, y;
        long calls = 0, bad = 0;
        for (const auto& a : consumed) {
            r.push_back(static_cast<double>(a.calls) / q.L);
            calls += a.calls;
            bad += a.illegal_calls;
            const auto m = tool_match(a.tools, q.reference_tools);
            e.push_back(m.exact);
            o.push_back(m.in_order);
            y.push_back(m.any);
        }
        ratio.push_back(mean(r));
        illegal.push_back(calls ? static_cast<double>(bad) / static_cast<double>(calls) : 0.0);
        exact.push_back(mean(e));
        in_order.push_back(mean(o));
        any.push_back(mean(y));
    }
    Diagnostics d;
    d.tool_call_ratio = mean(ratio);
    d.illegal_rate = mean(illegal);
    d.tool_exact = mean(exact);
    d.tool_in_order = mean(in_order);
    d.tool_any = mean(any);
    d.zero_call_rate = generated ? static_cast<double>(zero) / static_cast<double>(generated) : 0.0;
    return d;
}

// ---------------------------------------------------------------------------
// Self-consistency

bool self_consistency(const QuestionResult& q, const Judge& judge) {
    std::vector<std::string> votes;
    for (const auto& a : q.attempts)
        if (a.answer && !a.zero_call) votes.push_back(*a.answer);
    if (votes.empty()) return false;

    std::vector<std::size_t> parent(votes.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < votes.size(); ++i)
        for (std::size_t j = i + 1; j < votes.size(); ++j)
            if (find(i) != find(j) && judge.judge(q.question, votes[i], votes[j]).is_same_meaning)
                parent[std::max(find(i), find(j))] = std::min(find(i), find(j));

    // Roots are the earliest member of each cluster, so scanning in order visits clusters by first appearance.
    std::map<std::size_t, std::size_t> size;
    for (std::size_t i = 0; i < votes.size(); ++i) ++size[find(i)];
    std::size_t best = find(0);
    for (std::size_t i = 0; i < votes.size(); ++i) {
        const auto r = find(i);
        if (size[r] > size[best]) best = r;
    }
    return judge.judge(q.question, q.reference_answer, votes[best]).is_same_meaning;
}

// ---------------------------------------------------------------------------
// Reports

std::string l_bucket(int L) {
    if (L <= 1) return "1";
    if (L == 2) return "2";
    if (L == 3) return "3";
    return "4+";
}

GroupReport summarize(std::string key, std::span<const QuestionResult> results, const Judge& judge,
                      const ReportOptions& opts) {
    require_nonempty(results);
    GroupReport g;
    g.key = std::move(key);
    g.questions = results.size();
    for (int k : opts.ks) {
        std::vector<double> ind;
        for (const auto& q : results) ind.push_back(early_indicator(q, k));
        PassAtK p;
        p.k = k;
        p.value = mean(ind);
        p.ci = bootstrap_ci(ind, opts.resamples, opts.level, mix_seed(opts.seed, static_cast<std::uint64_t>(k)));
        g.pass.push_back(p);
    }
    g.diag = diagnostics(results);
    std::vector<double> sc;
    for (const auto& q : results) sc.push_back(self_consistency(q, judge) ? 1.0 : 0.0);
    g.self_consistency = mean(sc);
    return g;
}

EvalReport build_report(std::span<const QuestionResult> results, const Judge& judge, const ReportOptions& opts) {
    require_nonempty(results);
    EvalReport r;
    auto all = summarize("all", results, judge, opts);
    r.questions = all.questions;
    for (const auto& q : results) r.attempts += q.attempts.size();
    r.pass = std::move(all.pass);
    r.diag = all.diag;
    r.self_consistency = all.self_consistency;
    r.resamples = opts.resamples;
    r.seed = opts.seed;

    for (auto t : all_eo_tasks()) {
        std::vector<QuestionResult> group;
        for (const auto& q : results)
            if (q.eo_task == t) group.push_back(q);
        if (!group.empty()) r.by_task.push_back(summarize(std::string(to_string(t)), group, judge, opts));
    }
    for (const char* b : {"1", "2", "3", "4+"}) {
        std::vector<QuestionResult> group;
        for (const auto& q : results)
            if (l_bucket(q.L) == b) group.push_back(q);
        if (!group.empty()) r.by_L.push_back(summarize(b, group, judge, opts));
    }
    return r;
}

namespace {

json pass_json(const std::vector<PassAtK>& pass) {
    json out = json::array();
    for (const auto& p : pass) out.push_back({{"k", p.k}, {"value", p.value}, {"ci_lo", p.ci.lo}, {"ci_hi", p.ci.hi}});
    return out;
}

json diag_json(const Diagnostics& d) {
    return {{"tool_call_ratio", d.tool_call_ratio}, {"illegal_rate", d.illegal_rate}, {"tool_exact", d.tool_exact},
            {"tool_in_order", d.tool_in_order},     {"tool_any", d.tool_any},         {"zero_call_rate", d.zero_call_rate}};
}

json group_json(const GroupReport& g) {
    return {{"key", g.key},
            {"questions", g.questions},
            {"pass_at_k", pass_json(g.pass)},
            {"diagnostics", diag_json(g.diag)},
            {"self_consistency", g.self_consistency}};
}

std::string fixed(double v, int decimals = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string pad(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

}  // namespace

json to_json(const EvalReport& r) {
    json by_task = json::array(), by_L = json::array();
    for (const auto& g : r.by_task) by_task.push_back(group_json(g));
    for (const auto& g : r.by_L) by_L.push_back(group_json(g));
    return {{"questions", r.questions},
            {"attempts", r.attempts},
            {"pass_at_k", pass_json(r.pass)},
            {"diagnostics", diag_json(r.diag)},
            {"self_consistency", r.self_consistency},
            {"by_task", std::move(by_task)},
            {"by_L", std::move(by_L)},
            {"bootstrap", {{"resamples", r.resamples}, {"seed", r.seed}}}};
}

std::string format_table(const EvalReport& r) {
    std::vector<const GroupReport*> rows;
    GroupReport all{"all", r.questions, r.pass, r.diag, r.self_consistency};
    rows.push_back(&all);
    for (const auto& g : r.by_task) rows.push_back(&g);
    for (const auto& g : r.by_L) rows.push_back(&g);

    std::string out = pad("group", 22) + pad("n", 5);
    for (const auto& p : r.pass) out += pad("pass@" + std::to_string(p.k) + " [95% CI]", 24);
    out += pad("ratio", 8) + pad("illegal", 9) + pad("exact", 7) + pad("order", 7) + pad("any", 7) + pad("zero", 7) +
           "sc\n";
    for (const auto* g : rows) {
        std::string key = g->key;
        if (g != rows.front() && g->key.size() <= 2) key = "L=" + key;
        out += pad(key, 22) + pad(std::to_string(g->questions), 5);
        for (const auto& p : g->pass)
            out += pad(fixed(p.value, 2) + " [" + fixed(p.ci.lo, 2) + ", " + fixed(p.ci.hi, 2) + "]", 24);
        out += pad(fixed(g->diag.tool_call_ratio, 2), 8) + pad(fixed(g->diag.illegal_rate), 9) +
               pad(fixed(g->diag.tool_exact, 2), 7) + pad(fixed(g->diag.tool_in_order, 2), 7) +
               pad(fixed(g->diag.tool_any, 2), 7) + pad(fixed(g->diag.zero_call_rate, 2), 7) +
               fixed(g->self_consistency, 2) + "\n";
    }
    return out;
}

std::string to_csv(const EvalReport& r) {
    std::string out = "group,key,questions";
    for (const auto& p : r.pass) {
        const auto k = std::to_string(p.k);
        out += ",pass_at_" + k + ",pass_at_" + k + "_lo,pass_at_" + k + "_hi";
    }
    out += ",tool_call_ratio,illegal_rate,tool_exact,tool_in_order,tool_any,zero_call_rate,self_consistency\n";
    auto row = [&](const char* group, const GroupReport& g) {
        out += std::string(group) + "," + g.key + "," + std::to_string(g.questions);
        for (const auto& p : g.pass) out += "," + format_number(p.value) + "," + format_number(p.ci.lo) + "," + format_number(p.ci.hi);
        for (double v : {g.diag.tool_call_ratio, g.diag.illegal_rate, g.diag.tool_exact, g.diag.tool_in_order,
                         g.diag.tool_any, g.diag.zero_call_rate, g.self_consistency})
            out += "," + format_number(v);
        out += "\n";
    };
    row("overall", GroupReport{"all", r.questions, r.pass, r.diag, r.self_consistency});
    for (const auto& g : r.by_task) row("task", g);
    for (const auto& g : r.by_L) row("L", g);
    return out;
}

std::vector<QuestionResult> collect_results(const std::vector<Task>& tasks, const std::vector<Trajectory>& trajectories,
                                            const Judge& judge) {
    if (trajectories.empty()) throw Error(ErrorCode::empty_input, "no trajectories to evaluate");
    std::map<std::string, const Task*> by_id;
    for (const auto& t : tasks) by_id[t.task_id] = &t;
    std::map<std::string, std::vector<const Trajectory*>> grouped;
    for (const auto& tr : trajectories) {
        if (!by_id.contains(tr.task_id)) throw Error(ErrorCode::unknown_task, "trajectory for unknown task '" + tr.task_id + "'");
        grouped[tr.task_id].push_back(&tr);
    }
    std::vector<QuestionResult> out;
    for (const auto& task : tasks) {
        auto it = grouped.find(task.task_id);
        if (it == grouped.end()) continue;
        auto& list = it->second;
        std::stable_sort(list.begin(), list.end(), [](const Trajectory* a, const Trajectory* b) { return a->attempt < b->attempt; });
        QuestionResult q;
        q.task_id = task.task_id;
        q.question = task.question;
        q.reference_answer = task.reference_answer;
        q.eo_task = task.eo_task;
        q.reference_tools = task.reference_tools();
        q.L = task.L;
        for (const auto* tr : list) {
            Attempt a;
            const std::string reference = tr->resolved_reference.value_or(task.reference_answer);
            if (tr->resolved_reference) q.reference_answer = *tr->resolved_reference;
            a.answer = tr->final_answer;
            a.zero_call = tr->steps.empty();
            a.correct = tr->final_answer && judge.judge(task.question, reference, *tr->final_answer).is_same_meaning;
            a.tools = backend_tool_sequence(*tr);
            a.calls = static_cast<int>(tr->steps.size());
            a.illegal_calls = static_cast<int>(std::count_if(tr->steps.begin(), tr->steps.end(), [](const Step& s) {
                return s.observation.status != ObservationStatus::ok;
            }));
            q.attempts.push_back(std::move(a));
        }
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace eogym
