#include "eogym/harness.hpp"
#include "eogym/rng.hpp"

namespace eogym {

std::uint64_t attempt_seed(std::uint64_t seed, std::string_view task_id, int attempt) {
    return mix_seed(mix_seed(seed, fnv1a64(task_id)), static_cast<std::uint64_t>(attempt));
}

Trajectory run_episode(std::shared_ptr<const Toolkit> toolkit, const Task& task, const ExecutionMode& mode, Agent& agent,
                       int max_calls, int attempt) {
    EpisodeSession session(std::move(toolkit), task, mode, max_calls, attempt);
    while (true) {
        AgentAction action;
        try {
            action = agent.act(session.initial(), session.trajectory().steps);
        } catch (const std::exception&) {
            return session.abort();
        }
        if (action.is_final) return session.finalize(std::move(action.answer));
        try {
            session.step(std::move(action.name), std::move(action.arguments), std::move(action.rationale));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::budget_exhausted) throw;
            return session.trajectory();
        }
    }
}

EvalRun run_eval(const Environment& env, const AgentFactory& agents, const Judge& judge, const EvalOptions& opts) {
    if (opts.k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
    EvalRun run;
    for (const auto& task : env.tasks) {
        for (int attempt = 0; attempt < opts.k; ++attempt) {
            ExecutionMode mode = opts.mode;
            mode.seed = attempt_seed(opts.seed, task.task_id, attempt);
            auto agent = agents(task, mode, mode.seed);
            Trajectory t = run_episode(env.toolkit, task, mode, *agent, opts.max_calls, attempt);
            bool success = false;
            if (t.final_answer && !t.zero_call) {
                const std::string& reference = t.resolved_reference ? *t.resolved_reference : task.reference_answer;
                success = judge.judge(task.question, reference, *t.final_answer).is_same_meaning;
            }
            run.trajectories.push_back(std::move(t));
            if (success) break;
        }
    }
    run.results = collect_results(env.tasks, run.trajectories, judge);
    run.report = build_report(run.results, judge, opts.report);
    return run;
}

AgentFactory scripted_agents(AgentPolicy policy) {
    return [policy](const Task& task, const ExecutionMode& mode, std::uint64_t seed) {
        return make_agent(policy, task, mode, seed);
    };
}

}  // namespace eogym
