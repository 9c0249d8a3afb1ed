// Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "eogym/harness.hpp"
#include "eogym/rng.hpp"
#include "test_support.hpp"

using namespace eogym;
namespace tst = eogym::testing;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

class Check {
public:
    void require(bool cond, const std::string& what) {
        if (!cond && ok_) {
            ok_ = false;
            first_ = what;
        }
        if (!cond) ++violations_;
    }
    Outcome done(std::string summary) const {
        if (ok_) return {true, std::move(summary)};
        return {false, first_ + " (" + std::to_string(violations_) + " violations)"};
    }

private:
    bool ok_ = true;
    std::string first_;
    long violations_ = 0;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

Outcome pass_at_k_oracle() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    int cases = 0;
    for (int n = 1; n <= 10; ++n)
        for (int correct = 0; correct <= n; ++correct)
            for (int k = 1; k <= n; ++k) {
                const auto oracle = tst::pass_at_k_by_enumeration(n, correct, k);
                const auto exact = pass_at_k_exact(n, correct, k);
                c.require(tst::same_value(oracle, exact), "exact mismatch at n=" + std::to_string(n) +
                                                              " c=" + std::to_string(correct) + " k=" + std::to_string(k));
                c.require(pass_at_k(n, correct, k) == exact.to_double(), "double path differs from exact");
                ++cases;
            }
    const double secs = seconds_since(t0);
    c.require(secs < 1.0, "took " + fmt(secs, 3) + " s");
    return c.done(std::to_string(cases) + " cases in " + fmt(secs, 3) + " s");
}

Outcome kappa_reproduction() {
    Check c;
    const AgreementCounts gpt{263, 20, 26, 291}, lite{149, 134, 1, 316};
    const double a1 = observed_agreement(gpt), k1 = cohens_kappa(gpt);
    const double a2 = observed_agreement(lite), k2 = cohens_kappa(lite);
    c.require(std::abs(a1 - 0.923) <= 0.001, "agreement " + fmt(a1));
    c.require(std::abs(k1 - 0.846) <= 0.001, "kappa " + fmt(k1));
    c.require(std::abs(a2 - 0.775) <= 0.001, "agreement " + fmt(a2));
    c.require(std::abs(k2 - 0.537) <= 0.002, "kappa " + fmt(k2));
    return c.done("0.923/" + fmt(k1, 3) + " and " + fmt(a2, 3) + "/" + fmt(k2, 3));
}

Outcome schema_counts() {
    Check c;
    const std::vector<std::pair<DatasetFamily, std::size_t>> expected = {
        {DatasetFamily::multispectral, 15}, {DatasetFamily::fmow, 12}, {DatasetFamily::fair1m, 11},
        {DatasetFamily::dior, 10},          {DatasetFamily::dota, 10}, {DatasetFamily::xview, 10},
        {DatasetFamily::xbd, 9},            {DatasetFamily::m4sar, 7}, {DatasetFamily::sardet, 5}};
    std::string counts;
    for (const auto& [family, n] : expected) {
        const auto got = schema_set(family, SchemaMode::skill, false).size();
        c.require(got == n, std::string(to_string(family)) + " has " + std::to_string(got));
        c.require(schema_set(family, SchemaMode::all, false).size() == 35, "all-mode size");
        counts += (counts.empty() ? "" : "/") + std::to_string(got);
    }
    std::size_t gathering = 0;
    for (const auto& s : tool_catalog()) gathering += is_gathering(s.group);
    c.require(tool_catalog().size() == 35, "catalog size");
    c.require(gathering == 15, "gathering " + std::to_string(gathering));
    return c.done(counts + "; all=35; " + std::to_string(gathering) + "+" +
                  std::to_string(tool_catalog().size() - gathering));
}

Outcome rename_invariance() {
    Check c;
    const auto& env = tst::fixture_env();
    int compared = 0;
    for (const auto schema : {SchemaMode::skill, SchemaMode::all})
        for (const auto prompt : {PromptMode::simple, PromptMode::detailed})
            for (const auto& task : env.tasks) {
                ExecutionMode plain;
                plain.schema_set = schema;
                plain.prompt = prompt;
                plain.seed = attempt_seed(11, task.task_id, 0);
                ExecutionMode renamed = plain;
                renamed.rename = true;
                auto a1 = make_agent(AgentPolicy::optimal, task, plain, plain.seed);
                auto a2 = make_agent(AgentPolicy::optimal, task, renamed, renamed.seed);
                const auto t1 = run_episode(env.toolkit, task, plain, *a1);
                const auto t2 = run_episode(env.toolkit, task, renamed, *a2);
                bool same = backend_tool_sequence(t1) == backend_tool_sequence(t2) &&
                            t1.steps.size() == t2.steps.size() && t1.final_answer == t2.final_answer &&
                            t1.termination == t2.termination;
                std::string where = same ? "" : "sequence or answer";
                for (std::size_t i = 0; same && i < t1.steps.size(); ++i) {
                    if (!(t1.steps[i].observation == t2.steps[i].observation)) where = "observation";
                    else if (t1.steps[i].call.arguments != t2.steps[i].call.arguments) where = "arguments";
                    else if (t1.steps[i].rationale != t2.steps[i].rationale) where = "rationale";
                    same = where.empty();
                    if (!same) where += " at step " + std::to_string(i);
                }
                c.require(same, "trajectories differ for " + task.task_id + " (" + where + ")");
                c.require(t1.steps.empty() || t2.steps.empty() || t2.steps[0].call.name != t1.steps[0].call.name,
                          "renamed run used backend names");
                ++compared;
            }
    return c.done(std::to_string(compared) + " paired episodes identical");
}

Outcome end_to_end() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = tst::temp_dir("accept");
    generate_fixtures(FixtureSpec{}, dir);
    const auto env = load_environment(dir);
    std::set<EoTask> kinds;
    for (const auto& t : env.tasks) kinds.insert(t.eo_task);
    c.require(env.tasks.size() >= 20, "only " + std::to_string(env.tasks.size()) + " tasks");
    c.require(kinds.size() == all_eo_tasks().size(), "task families covered: " + std::to_string(kinds.size()));

    EvalOptions opts;
    opts.report.resamples = 200;
    const auto best = run_eval(env, scripted_agents(AgentPolicy::optimal), ExactJudge{}, opts);
    c.require(best.report.pass.at(0).k == 1 && best.report.pass.at(0).value == 1.0,
              "optimal Pass@1 " + fmt(best.report.pass.at(0).value));
    const auto zero = run_eval(env, scripted_agents(AgentPolicy::zero_call), ExactJudge{}, opts);
    for (const auto& p : zero.report.pass) c.require(p.value == 0.0, "zero_call Pass@" + std::to_string(p.k) + " > 0");
    c.require(zero.report.diag.zero_call_rate == 1.0, "zero_call_rate " + fmt(zero.report.diag.zero_call_rate));
    const double secs = seconds_since(t0);
    c.require(secs < 60.0, "took " + fmt(secs, 1) + " s");
    return c.done(std::to_string(env.tasks.size()) + " tasks, " + std::to_string(kinds.size()) +
                  " task families, optimal Pass@1=1, zero_call Pass@k=0, " + fmt(secs, 2) + " s");
}

Outcome spectral_correctness() {
    Check c;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = tst::random_bandset(seed, 16, 12);
        for (auto idx : {SpectralIndex::ndvi, SpectralIndex::ndwi, SpectralIndex::ndbi, SpectralIndex::ndsi}) {
            const auto [r1, r2] = index_roles(idx);
            const auto& a = s.band(*band_for_role(s.platform, r1));
            const auto& b = s.band(*band_for_role(s.platform, r2));
            const auto oracle = tst::scalar_normalized_difference(a, b);
            const auto got = compute_index(s, idx).values;
            for (std::size_t i = 0; i < oracle.size(); ++i) {
                if (std::isnan(oracle[i])) c.require(std::isnan(got[i]), "NaN mismatch");
                else c.require(std::abs(got[i] - oracle[i]) <= 1e-6, "value mismatch");
            }
            // Swapping the two bands negates every value.
            BandSet swapped = s;
            std::swap(swapped.bands[*band_for_role(s.platform, r1)], swapped.bands[*band_for_role(s.platform, r2)]);
            const auto neg = compute_index(swapped, idx).values;
            for (std::size_t i = 0; i < got.size(); ++i)
                c.require(std::isnan(got[i]) ? std::isnan(neg[i]) : neg[i] == -got[i], "antisymmetry");
        }
        for (const auto theme : {Theme::vegetation, Theme::water, Theme::urban, Theme::snow}) {
            BinaryMask prev = thematic_mask(s, theme, -1.0);
            for (int step = 1; step <= 20; ++step) {
                const auto m = thematic_mask(s, theme, -1.0 + 0.1 * step);
                for (std::size_t i = 0; i < m.bits.size(); ++i) c.require(m.bits[i] <= prev.bits[i], "monotonicity");
                prev = m;
            }
        }
    }
    return c.done("100 seeds x 4 indices");
}

Outcome geometry_properties() {
    Check c;
    Rng rng(2024);
    constexpr int kCases = 1000;
    auto base_patch = [](int w, int h) {
        RasterPatch p = RasterPatch::filled(w, h, 1);
        for (std::size_t i = 0; i < p.pixels.size(); ++i) p.pixels[i] = static_cast<float>(i % 9973) / 9973.0f;
        p.provenance = Provenance{"base", 0, 0, w, h};
        return p;
    };
    const PanDirection opposite[] = {PanDirection::down, PanDirection::up, PanDirection::right, PanDirection::left};

    for (int i = 0; i < kCases; ++i) {
        // Crop: pixels match the base at the recorded origin, and crops compose.
        const int w = rng.between(8, 64), h = rng.between(8, 64);
        const auto base = base_patch(w, h);
        const double x0 = rng.uniform(0, 0.8), y0 = rng.uniform(0, 0.8);
        const AOI a{x0, y0, rng.uniform(x0 + 0.1, 1.0), rng.uniform(y0 + 0.1, 1.0)};
        const auto c1 = crop_aoi(base, a);
        const auto& p1 = *c1.provenance;
        c.require(PixelWindow{0, 0, w, h}.contains({p1.origin_x, p1.origin_y, c1.width, c1.height}), "crop containment");
        c.require(c1.at(c1.width - 1, c1.height - 1) == base.at(p1.origin_x + c1.width - 1, p1.origin_y + c1.height - 1),
                  "crop pixel lookup");
        const auto c2 = crop_aoi(c1, AOI{0.25, 0.25, 1.0, 1.0});
        const auto inner = aoi_window(AOI{0.25, 0.25, 1.0, 1.0}, c1.width, c1.height);
        c.require(c2 == extract(base, {p1.origin_x + inner.x, p1.origin_y + inner.y, inner.width, inner.height}),
                  "provenance composition");

        // Pan: stays inside the base; an unclamped move is undone by the opposite move.
        const int bw = rng.between(20, 400), bh = rng.between(20, 400);
        const int ww = rng.between(1, bw), wh = rng.between(1, bh);
        const Provenance p{"b", rng.between(0, bw - ww), rng.between(0, bh - wh), bw, bh};
        const auto dir = static_cast<PanDirection>(rng.below(4));
        bool clamped = false;
        const auto moved = pan_window(p, ww, wh, dir, 0.5, &clamped);
        c.require(PixelWindow{0, 0, bw, bh}.contains(moved), "pan containment");
        if (!clamped) {
            bool back_clamped = false;
            const auto back = pan_window({"b", moved.x, moved.y, bw, bh}, ww, wh, opposite[static_cast<int>(dir)], 0.5,
                                         &back_clamped);
            c.require(!back_clamped && back == PixelWindow{p.origin_x, p.origin_y, ww, wh}, "pan round trip");
        }

        // Zoom: result contains the window and stays inside the base.
        const auto z = zoom_window(p, ww, wh, rng.uniform(1.2, 4.0));
        c.require(PixelWindow{0, 0, bw, bh}.contains(z) && z.contains({p.origin_x, p.origin_y, ww, wh}), "zoom containment");

        // Tool matching chain.
        const std::vector<std::string> names = {"a", "b", "c", "d"};
        std::vector<std::string> pred, ref;
        for (int k = rng.between(0, 6); k > 0; --k) pred.push_back(names[rng.below(4)]);
        for (int k = rng.between(1, 4); k > 0; --k) ref.push_back(names[rng.below(4)]);
        if (rng.bernoulli(0.3)) ref = pred.empty() ? ref : pred;
        const auto m = tool_match(pred, ref);
        c.require(!m.exact || m.in_order, "exact without in-order");
        c.require(!m.in_order || m.any, "in-order without any");
        c.require(m.in_order == tst::brute_subsequence(pred, ref) && m.any == tst::brute_multiset_cover(pred, ref),
                  "tool match oracle");

        // Boxes: containment implies positive IoU.
        auto rbox = [&] {
            const double bx0 = rng.uniform(0, 90), by0 = rng.uniform(0, 90);
            return BBox{bx0, by0, rng.uniform(bx0 + 0.5, 100), rng.uniform(by0 + 0.5, 100), "", std::nullopt};
        };
        const BBox b1 = rbox();
        BBox b2 = rng.bernoulli(0.5) ? rbox()
                                     : BBox{b1.x_min + 0.25 * b1.width(), b1.y_min + 0.25 * b1.height(),
                                            b1.x_max - 0.25 * b1.width(), b1.y_max - 0.25 * b1.height(), "", std::nullopt};
        const auto rel = bbox_relationship(b1, b2, Dims{100, 100});
        if (rel.direction == "contained") c.require(rel.iou > 0.0, "contained with zero IoU");
    }
    return c.done(std::to_string(kCases) + " cases per property");
}

Outcome early_stopping_consistency() {
    Check c;
    Rng rng(77);
    std::vector<QuestionResult> full, early;
    full.reserve(10000);
    early.reserve(10000);
    for (int q = 0; q < 10000; ++q) {
        const double p = rng.uniform();
        QuestionResult fq, eq;
        fq.task_id = eq.task_id = "q" + std::to_string(q);
        for (int i = 0; i < 10; ++i) {
            Attempt a;
            a.correct = rng.bernoulli(p);
            a.calls = 1;
            fq.attempts.push_back(a);
        }
        // The early-stopped run generates the same rollouts but halts at the first success.
        for (const auto& a : fq.attempts) {
            eq.attempts.push_back(a);
            if (a.success() || eq.attempts.size() == 3) break;
        }
        full.push_back(std::move(fq));
        early.push_back(std::move(eq));
    }
    const double es = pass_at_k_early_stopped(early, 3);
    const double ub = pass_at_k_unbiased(full, 3);
    c.require(std::abs(es - ub) <= 0.02, "difference " + fmt(std::abs(es - ub)));
    return c.done("early " + fmt(es, 4) + " vs unbiased " + fmt(ub, 4));
}

Outcome determinism() {
    Check c;
    // Two independently generated corpora stand in for two hosts.
    std::vector<std::string> reports;
    for (int host = 0; host < 2; ++host) {
        const auto dir = tst::temp_dir("host");
        generate_fixtures(FixtureSpec{}, dir);
        const auto env = load_environment(dir);
        for (int rep = 0; rep < 2; ++rep) {
            EvalOptions opts;
            opts.seed = 42;
            opts.report.seed = 42;
            opts.report.resamples = 500;
            const auto run = run_eval(env, scripted_agents(AgentPolicy::random_legal), ExactJudge{}, opts);
            std::string blob;
            for (const auto& t : run.trajectories) blob += trajectory_line(t) + "\n";
            const auto results = collect_results(env.tasks, run.trajectories, ExactJudge{});
            const auto report = build_report(results, ExactJudge{}, opts.report);
            blob += to_json(report).dump(2) + "\n" + to_csv(report) + format_table(report);
            reports.push_back(std::move(blob));
        }
    }
    for (std::size_t i = 1; i < reports.size(); ++i) c.require(reports[i] == reports[0], "report bytes differ");
    return c.done(std::to_string(reports.size()) + " reports byte-identical (" + std::to_string(reports[0].size()) +
                  " bytes)");
}

Outcome structural_validation() {
    Check c;
    const auto& env = tst::fixture_env();
    int golden = 0, flagged = 0, checked = 0;
    std::size_t persisted = 0;

    EvalOptions opts;
    opts.report.resamples = 50;
    const auto best = run_eval(env, scripted_agents(AgentPolicy::optimal), ExactJudge{}, opts);
    for (const auto& t : best.trajectories) {
        c.require(!validate_structure(t).has("no-successful-observation"), "golden trajectory flagged: " + t.task_id);
        ++golden;
    }

    // Random and runaway agents give a mix of all-error, partly successful and over-long trajectories.
    struct Runaway : Agent {
        AgentAction act(const InitialObservation&, const std::vector<Step>&) override {
            return AgentAction::call("no_such_tool", "{}");
        }
    };
    const AgentFactory runaway = [](const Task&, const ExecutionMode&, std::uint64_t) {
        return std::make_unique<Runaway>();
    };
    const auto log = tst::temp_dir("persist") / "traj.jsonl";
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        opts.seed = seed;
        for (const auto& factory : {scripted_agents(AgentPolicy::random_legal), runaway}) {
            const auto run = run_eval(env, factory, ExactJudge{}, opts);
            for (const auto& t : run.trajectories) append_trajectory(log, t);
        }
    }
    for (const auto& t : load_trajectories(log)) {
        bool any_ok = false, all_error = !t.steps.empty();
        for (const auto& s : t.steps) {
            any_ok |= s.observation.status == ObservationStatus::ok;
            all_error &= s.observation.status == ObservationStatus::error;
        }
        const bool raised = validate_structure(t).has("no-successful-observation");
        c.require(raised == (!t.steps.empty() && !any_ok), "category mismatch on " + t.task_id);
        if (all_error) c.require(raised, "all-error trajectory not flagged");
        flagged += raised;
        c.require(static_cast<int>(t.steps.size()) <= kEvalBudget, "budget exceeded");
        ++persisted;
        ++checked;
    }
    return c.done(std::to_string(golden) + " golden clean, " + std::to_string(flagged) + "/" +
                  std::to_string(checked) + " flagged, max steps <= 15 over " + std::to_string(persisted) +
                  " persisted");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"pass@k matches subset enumeration", pass_at_k_oracle},
        {"kappa reproduction", kappa_reproduction},
        {"skill schema counts", schema_counts},
        {"rename invariance", rename_invariance},
        {"end-to-end fixture suite", end_to_end},
        {"spectral correctness", spectral_correctness},
        {"geometry properties", geometry_properties},
        {"early-stopping consistency", early_stopping_consistency},
        {"deterministic reports", determinism},
        {"structural validation", structural_validation},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.ok;
        std::cout << (o.ok ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
