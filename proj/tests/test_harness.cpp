#include <gtest/gtest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "eogym/harness.hpp"
#include "httplib.h"
#include "test_support.hpp"

using namespace eogym;
using nlohmann::json;

namespace {

const Environment& env() { return eogym::testing::fixture_env(); }

std::shared_ptr<SessionManager> manager(ServiceConfig cfg = {}) {
    return std::make_shared<SessionManager>(env().toolkit, env().tasks, cfg);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CommandResult {
    int status = -1;
    std::string out;
};

CommandResult run_cli(const std::string& args) {
    const std::string cmd = std::string(EOGYM_CLI) + " " + args + " 2>&1";
    CommandResult r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int raw = ::pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string eval_json(AgentPolicy policy, std::uint64_t seed) {
    EvalOptions opts;
    opts.seed = seed;
    opts.report.resamples = 200;
    const auto run = run_eval(env(), scripted_agents(policy), ExactJudge{}, opts);
    std::string out;
    for (const auto& t : run.trajectories) out += trajectory_line(t) + "\n";
    return out + to_json(run.report).dump();
}

}  // namespace

TEST(Fixtures, DeterministicAndComplete) {
    const auto a = eogym::testing::temp_dir("fx");
    const auto b = eogym::testing::temp_dir("fx");
    const auto fa = generate_fixtures(FixtureSpec{}, a);
    generate_fixtures(FixtureSpec{}, b);
    for (const char* name : {"manifest.jsonl", "annotations.jsonl", "tasks.jsonl", "spec.json"})
        EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
    std::size_t files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        EXPECT_EQ(slurp(e.path()), slurp(b / std::filesystem::relative(e.path(), a))) << e.path();
    }
    EXPECT_GT(files, fa.records);
    std::set<DatasetFamily> families;
    for (const auto& t : env().tasks) families.insert(t.dataset_family);
    EXPECT_EQ(families.size(), all_dataset_families().size());
    EXPECT_GE(env().tasks.size(), 20u);
    EXPECT_EQ(fixture_spec_from_json(to_json(FixtureSpec{})), FixtureSpec{});
}

TEST(Fixtures, SeedChangesContentAndTinySpecFails) {
    FixtureSpec other;
    other.seed = 8;
    const auto dir = eogym::testing::temp_dir("fx");
    generate_fixtures(other, dir);
    EXPECT_NE(slurp(dir / "manifest.jsonl"), slurp(eogym::testing::fixture_dir() / "manifest.jsonl"));
    FixtureSpec tiny;
    tiny.image_size = 8;
    EXPECT_ANY_THROW(generate_fixtures(tiny, eogym::testing::temp_dir("fx")));
}

TEST(Agents, FinalAnswerExtraction) {
    EXPECT_EQ(extract_final_answer("I counted them.\nFinal Answer: 4"), "4");
    EXPECT_EQ(extract_final_answer("final answer: **red**"), "red");
    EXPECT_EQ(extract_final_answer("Final answer: 2\nFinal Answer: 3"), "3");
    EXPECT_EQ(extract_final_answer("  just text  "), "just text");
    EXPECT_EQ(parse_agent_policy("random_legal"), AgentPolicy::random_legal);
    EXPECT_THROW(parse_agent_policy("oracle"), Error);
}

TEST(Agents, OptimalSolvesEveryTask) {
    const auto run = run_eval(env(), scripted_agents(AgentPolicy::optimal), ExactJudge{}, {});
    EXPECT_EQ(run.report.pass.at(0).value, 1.0);
    EXPECT_EQ(run.trajectories.size(), env().tasks.size());
    for (const auto& t : run.trajectories) EXPECT_TRUE(validate_structure(t).valid) << t.task_id;
}

TEST(Agents, ZeroCallNeverPasses) {
    const auto run = run_eval(env(), scripted_agents(AgentPolicy::zero_call), ExactJudge{}, {});
    for (const auto& p : run.report.pass) EXPECT_EQ(p.value, 0.0);
    EXPECT_EQ(run.report.diag.zero_call_rate, 1.0);
    EXPECT_EQ(run.trajectories.size(), 3 * env().tasks.size());
}

TEST(Agents, RandomAgentReportIsDeterministic) {
    EXPECT_EQ(eval_json(AgentPolicy::random_legal, 3), eval_json(AgentPolicy::random_legal, 3));
    EXPECT_NE(eval_json(AgentPolicy::random_legal, 3), eval_json(AgentPolicy::random_legal, 4));
}

TEST(Agents, ThrowingAgentAbortsAttempt) {
    struct Broken : Agent {
        int calls = 0;
        AgentAction act(const InitialObservation&, const std::vector<Step>&) override {
            if (calls++ == 0) return AgentAction::call("basic_calculator", R"({"expression":"1"})");
            throw std::runtime_error("model went away");
        }
    };
    Broken agent;
    const auto t = run_episode(env().toolkit, env().tasks.front(), {}, agent);
    EXPECT_EQ(t.termination, Termination::aborted);
    EXPECT_EQ(t.steps.size(), 1u);
    EXPECT_FALSE(t.final_answer);
}

TEST(Agents, RunawayAgentStopsAtBudget) {
    struct Loop : Agent {
        AgentAction act(const InitialObservation&, const std::vector<Step>&) override {
            return AgentAction::call("basic_calculator", R"({"expression":"1"})");
        }
    };
    Loop agent;
    const auto t = run_episode(env().toolkit, env().tasks.front(), {}, agent);
    EXPECT_EQ(t.termination, Termination::budget_exhausted);
    EXPECT_EQ(t.steps.size(), static_cast<std::size_t>(kEvalBudget));
}

TEST(Service, ResetStepFinal) {
    const auto log = eogym::testing::temp_dir("svc") / "log.jsonl";
    ServiceConfig cfg;
    cfg.trajectory_log = log;
    auto m = manager(cfg);
    const auto& task = env().task("dior-count-ships");
    const json opened = m->handle({{"kind", "reset"}, {"task_id", task.task_id}});
    ASSERT_EQ(opened["kind"], "observation");
    const auto sid = opened["session_id"].get<std::string>();
    EXPECT_EQ(opened["calls_remaining"], kEvalBudget);
    EXPECT_EQ(opened["initial"]["question"], task.question);
    for (int i = 0; i < 3; ++i) {
        const json r = m->handle({{"kind", "step"}, {"session_id", sid}, {"call_index", i},
                                  {"name", "basic_calculator"}, {"arguments", {{"expression", "2*3"}}}});
        ASSERT_EQ(r["kind"], "observation") << r.dump();
        EXPECT_EQ(r["observation"]["payload"]["value"], 6.0);
    }
    const json done = m->handle({{"kind", "final"}, {"session_id", sid}, {"answer", "6"}});
    ASSERT_EQ(done["kind"], "final");
    EXPECT_EQ(done["trajectory"]["steps"].size(), 3u);
    EXPECT_EQ(m->open_sessions(), 0u);
    const auto saved = load_trajectories(log);
    ASSERT_EQ(saved.size(), 1u);
    EXPECT_EQ(saved[0].steps.size(), 3u);
    EXPECT_EQ(m->handle({{"kind", "final"}, {"session_id", sid}, {"answer", "6"}})["code"], "unknown-session");
}

TEST(Service, ProtocolErrors) {
    auto m = manager();
    EXPECT_EQ(m->handle({{"kind", "step"}, {"call_index", 0}, {"name", "basic_calculator"}})["code"], "protocol-error");
    EXPECT_EQ(m->handle(json::array())["code"], "protocol-error");
    EXPECT_EQ(m->handle({{"kind", "dance"}})["code"], "protocol-error");
    EXPECT_EQ(m->handle({{"kind", "reset"}, {"task_id", "nope"}})["code"], "unknown-task");
    EXPECT_EQ(m->handle({{"kind", "step"}, {"session_id", "s-99"}, {"call_index", 0}, {"name", "x"}})["code"],
              "unknown-session");

    const auto sid = m->handle({{"kind", "reset"}, {"task_id", env().tasks[0].task_id}})["session_id"].get<std::string>();
    const json skip = m->handle({{"kind", "step"}, {"session_id", sid}, {"call_index", 2}, {"name", "basic_calculator"}});
    EXPECT_EQ(skip["code"], "protocol-error");
    EXPECT_EQ(m->open_sessions(), 0u);
    ASSERT_EQ(m->finished().size(), 1u);
    EXPECT_EQ(m->finished()[0].termination, Termination::aborted);
}

TEST(Service, BudgetExhaustionReturnsTrajectory) {
    ServiceConfig cfg;
    cfg.max_calls = 2;
    auto m = manager(cfg);
    const json opened = m->handle({{"kind", "reset"}, {"task_id", env().tasks[0].task_id}, {"max_calls", 50}});
    EXPECT_EQ(opened["calls_remaining"], 2);
    const auto sid = opened["session_id"].get<std::string>();
    for (int i = 0; i < 2; ++i)
        m->handle({{"kind", "step"}, {"session_id", sid}, {"call_index", i}, {"name", "basic_calculator"},
                   {"arguments", R"({"expression":"1"})"}});
    const json over = m->handle({{"kind", "step"}, {"session_id", sid}, {"call_index", 2}, {"name", "basic_calculator"},
                                 {"arguments", R"({"expression":"1"})"}});
    EXPECT_EQ(over["code"], "budget-exhausted");
    EXPECT_EQ(over["trajectory"]["steps"].size(), 2u);
    EXPECT_EQ(m->open_sessions(), 0u);
}

TEST(Service, InterleavedSessionsStayIndependent) {
    auto m = manager();
    ExecutionMode a_mode, b_mode;
    a_mode.seed = 1;
    b_mode.seed = 2;
    b_mode.rename = true;
    const auto a = m->handle({{"kind", "reset"}, {"task_id", "dior-count-ships"}, {"config", to_json(a_mode)}})["session_id"].get<std::string>();
    const auto b = m->handle({{"kind", "reset"}, {"task_id", "fair1m-zoom-ships"}, {"config", to_json(b_mode)}})["session_id"].get<std::string>();
    EXPECT_NE(a, b);
    const auto& ta = env().task("dior-count-ships");
    json ra = m->handle({{"kind", "step"}, {"session_id", a}, {"call_index", 0}, {"name", "crop_optical_or_sar_image"},
                         {"arguments", {{"image", ta.start_records[0]}, {"x0", 0}, {"y0", 0}, {"x1", 0.5}, {"y1", 0.5}}}});
    ASSERT_EQ(ra["observation"]["status"], "ok");
    // The handle from session a is unknown in session b.
    json rb = m->handle({{"kind", "step"}, {"session_id", b}, {"call_index", 0}, {"name", "widen_out_optical_image"},
                         {"arguments", {{"image", "img-0"}}}});
    EXPECT_EQ(rb["observation"]["status"], "error");
    const auto fa = trajectory_from_json(m->handle({{"kind", "final"}, {"session_id", a}, {"answer", "1"}})["trajectory"]);
    const auto fb = trajectory_from_json(m->handle({{"kind", "final"}, {"session_id", b}, {"answer", "2"}})["trajectory"]);
    EXPECT_EQ(fa.task_id, "dior-count-ships");
    EXPECT_EQ(fb.task_id, "fair1m-zoom-ships");
    EXPECT_EQ(fa.seed, 1u);
    EXPECT_EQ(fb.seed, 2u);
    EXPECT_EQ(fa.steps.size(), 1u);
    EXPECT_EQ(fb.steps.size(), 1u);
    EXPECT_EQ(fb.steps[0].call.name, "widen_out_optical_image");
}

TEST(Service, IdleSessionsAreReaped) {
    ServiceConfig cfg;
    cfg.idle_timeout = std::chrono::milliseconds(50);
    auto m = manager(cfg);
    m->handle({{"kind", "reset"}, {"task_id", env().tasks[0].task_id}});
    m->handle({{"kind", "reset"}, {"task_id", env().tasks[1].task_id}});
    EXPECT_EQ(m->reap_idle(std::chrono::steady_clock::now()), 0u);
    EXPECT_EQ(m->reap_idle(std::chrono::steady_clock::now() + std::chrono::seconds(1)), 2u);
    EXPECT_EQ(m->open_sessions(), 0u);
    for (const auto& t : m->finished()) {
        EXPECT_EQ(t.termination, Termination::aborted);
        EXPECT_TRUE(t.zero_call);
    }
}

TEST(Framing, RoundTripOverSocketPair) {
    int fds[2];
    ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
    const std::string big(200000, 'x');
    std::thread writer([&] {
        write_frame(fds[0], "{}");
        write_frame(fds[0], big);
        write_frame(fds[0], "");
        ::close(fds[0]);
    });
    EXPECT_EQ(read_frame(fds[1]), "{}");
    EXPECT_EQ(read_frame(fds[1]), big);
    EXPECT_EQ(read_frame(fds[1]), "");
    EXPECT_EQ(read_frame(fds[1]), std::nullopt);
    writer.join();
    ::close(fds[1]);
}

TEST(Framing, OversizedFrameRejected) {
    int fds[2];
    ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
    write_frame(fds[0], std::string(100, 'y'));
    EXPECT_THROW(read_frame(fds[1], 10), Error);
    ::close(fds[0]);
    ::close(fds[1]);
}

TEST(Tcp, RemoteEpisodesMatchInProcess) {
    auto m = manager();
    TcpServer server(m, "127.0.0.1", 0);
    server.start();
    ASSERT_GT(server.port(), 0);
    TcpClient client("127.0.0.1", server.port());
    for (const auto policy : {AgentPolicy::optimal, AgentPolicy::random_legal}) {
        for (const auto& task : env().tasks) {
            ExecutionMode mode;
            mode.seed = attempt_seed(5, task.task_id, 0);
            auto remote_agent = make_agent(policy, task, mode, mode.seed);
            auto local_agent = make_agent(policy, task, mode, mode.seed);
            const auto remote = run_remote_episode(client, task, mode, *remote_agent);
            const auto local = run_episode(env().toolkit, task, mode, *local_agent);
            EXPECT_EQ(trajectory_line(remote), trajectory_line(local)) << task.task_id;
        }
    }
    EXPECT_EQ(m->open_sessions(), 0u);
    server.stop();
}

TEST(Tcp, DisconnectAbortsOwnedSessions) {
    auto m = manager();
    TcpServer server(m, "127.0.0.1", 0);
    server.start();
    {
        TcpClient client("127.0.0.1", server.port());
        const json r = client.request({{"kind", "reset"}, {"task_id", env().tasks[0].task_id}});
        EXPECT_EQ(r["kind"], "observation");
        EXPECT_EQ(m->open_sessions(), 1u);
    }
    for (int i = 0; i < 100 && m->open_sessions() > 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    EXPECT_EQ(m->open_sessions(), 0u);
    EXPECT_EQ(m->finished().size(), 1u);
    server.stop();
    EXPECT_THROW(TcpClient("127.0.0.1", server.port()), Error);
}

TEST(Http, SessionLifecycle) {
    auto m = manager();
    HttpFacade http(m, env().tasks);
    http.start("127.0.0.1", 0);
    httplib::Client c("127.0.0.1", http.port());
    auto tasks = c.Get("/v1/tasks");
    ASSERT_TRUE(tasks);
    EXPECT_EQ(json::parse(tasks->body).size(), env().tasks.size());

    auto opened = c.Post("/v1/sessions", json{{"task_id", "dior-count-ships"}}.dump(), "application/json");
    ASSERT_TRUE(opened);
    EXPECT_EQ(opened->status, 200);
    const auto sid = json::parse(opened->body)["session_id"].get<std::string>();
    auto step = c.Post("/v1/sessions/" + sid + "/step",
                       json{{"call_index", 0}, {"name", "basic_calculator"}, {"arguments", {{"expression", "3+4"}}}}.dump(),
                       "application/json");
    ASSERT_TRUE(step);
    EXPECT_EQ(json::parse(step->body)["observation"]["payload"]["value"], 7.0);
    auto done = c.Post("/v1/sessions/" + sid + "/final", json{{"answer", "7"}}.dump(), "application/json");
    ASSERT_TRUE(done);
    EXPECT_EQ(json::parse(done->body)["trajectory"]["final_answer"], "7");

    auto missing = c.Post("/v1/sessions/" + sid + "/step", json{{"call_index", 1}, {"name", "x"}}.dump(), "application/json");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    auto bad = c.Post("/v1/sessions", "not json", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    http.stop();
}

TEST(Cli, EmptyTrajectoryFileIsAnError) {
    const auto dir = eogym::testing::temp_dir("cli");
    std::ofstream(dir / "empty.jsonl").close();
    const auto r = run_cli("eval --data " + eogym::testing::fixture_dir().string() + " --trajectories " +
                           (dir / "empty.jsonl").string());
    EXPECT_EQ(r.status, 2) << r.out;
    EXPECT_NE(r.out.find("empty-input"), std::string::npos) << r.out;
}

TEST(Cli, RenameAuditHasNoDiffs) {
    const auto r = run_cli("rename-audit --data " + eogym::testing::fixture_dir().string());
    EXPECT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("\"diffs\": 0"), std::string::npos) << r.out;
}

TEST(Cli, RunThenEvalOptimal) {
    const auto dir = eogym::testing::temp_dir("cli");
    const auto data = eogym::testing::fixture_dir().string();
    const auto run = run_cli("run --data " + data + " --agent optimal -k 1 -o " + (dir / "t.jsonl").string());
    ASSERT_EQ(run.status, 0) << run.out;
    const auto ev = run_cli("eval --data " + data + " --trajectories " + (dir / "t.jsonl").string() + " --json " +
                            (dir / "r.json").string());
    ASSERT_EQ(ev.status, 0) << ev.out;
    const json report = json::parse(slurp(dir / "r.json"));
    EXPECT_EQ(report["questions"], env().tasks.size());
}
