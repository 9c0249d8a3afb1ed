#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "eogym/harness.hpp"

using namespace eogym;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

struct ModeFlags {
    std::string response = "verified";
    std::string prompt = "simple";
    std::string schema = "skill";
    bool rename = false;

    void add(CLI::App* app) {
        app->add_option("--response", response, "verified | unverified")->capture_default_str();
        app->add_option("--prompt", prompt, "simple | detailed")->capture_default_str();
        app->add_option("--schema", schema, "skill | all")->capture_default_str();
        app->add_flag("--rename", rename, "Expose renamed tool names");
    }
    ExecutionMode mode() const {
        ExecutionMode m;
        m.response = parse_response_mode(response);
        m.prompt = parse_prompt_mode(prompt);
        m.schema_set = parse_schema_mode(schema);
        m.rename = rename;
        return m;
    }
};

struct ChatFlags {
    std::string url, model, api_key;

    void add(CLI::App* app, const std::string& prefix) {
        app->add_option("--" + prefix + "-url", url, "Chat-completion base URL (http only)");
        app->add_option("--" + prefix + "-model", model, "Model name");
        app->add_option("--" + prefix + "-api-key", api_key, "Bearer token");
    }
    ChatConfig config() const {
        ChatConfig c = ChatConfig::from_env();
        if (!url.empty()) c.base_url = url;
        if (!model.empty()) c.model = model;
        if (!api_key.empty()) c.api_key = api_key;
        return c;
    }
};

std::unique_ptr<Judge> make_judge(const std::string& backend, const ChatFlags& chat) {
    if (parse_judge_backend(backend) == JudgeBackend::remote)
        return std::make_unique<RemoteJudge>(std::make_shared<ChatClient>(chat.config()));
    return std::make_unique<ExactJudge>();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path + "'");
    out << text;
}

int cmd_index(const std::string& manifest) {
    auto built = build_index(std::filesystem::path(manifest));
    json counts = json::object();
    for (const auto& [m, n] : built.index.modality_counts()) counts[std::string(to_string(m))] = n;
    json violations = json::array();
    for (const auto& v : built.violations)
        violations.push_back({{"line", v.line},
                              {"code", std::string(to_string(v.code))},
                              {"record_id", v.record_id},
                              {"message", v.message}});
    const json summary = {{"lines_read", built.lines_read},
                          {"records", built.index.size()},
                          {"modalities", counts},
                          {"violations", violations}};
    std::cout << summary.dump(2) << '\n';
    return built.violations.empty() ? 0 : 1;
}

int cmd_synthcheck(const std::string& path) {
    const auto trajectories = load_trajectories(path);
    std::size_t valid = 0;
    json invalid = json::array();
    std::map<std::string, std::size_t> by_code;
    for (const auto& t : trajectories) {
        const auto report = validate_structure(t);
        if (report.valid) {
            ++valid;
            continue;
        }
        json issues = json::array();
        for (const auto& i : report.issues) {
            ++by_code[i.code];
            json ji = {{"code", i.code}};
            if (!i.category.empty()) ji["category"] = i.category;
            issues.push_back(std::move(ji));
        }
        invalid.push_back({{"task_id", t.task_id}, {"attempt", t.attempt}, {"issues", std::move(issues)}});
    }
    const json summary = {{"trajectories", trajectories.size()},
                          {"valid", valid},
                          {"invalid", trajectories.size() - valid},
                          {"issue_counts", by_code},
                          {"details", invalid}};
    std::cout << summary.dump(2) << '\n';
    return valid == trajectories.size() ? 0 : 1;
}

void emit_report(const EvalReport& report, const std::string& json_out, const std::string& csv_out) {
    if (!json_out.empty()) write_text(json_out, to_json(report).dump(2) + "\n");
    if (!csv_out.empty()) write_text(csv_out, to_csv(report));
    std::cout << format_table(report);
}

int cmd_serve(const std::string& data, const std::string& host, int port, int http_port, int max_calls,
              long idle_ms, const std::string& log) {
    auto env = load_environment(data);
    ServiceConfig config;
    config.max_calls = max_calls;
    config.idle_timeout = std::chrono::milliseconds(idle_ms);
    if (!log.empty()) config.trajectory_log = log;
    auto manager = std::make_shared<SessionManager>(env.toolkit, env.tasks, config);
    TcpServer tcp(manager, host, port);
    tcp.start();
    std::unique_ptr<HttpFacade> http;
    if (http_port >= 0) {
        http = std::make_unique<HttpFacade>(manager, env.tasks);
        http->start(host, http_port);
    }
    json ready = {{"tcp_port", tcp.port()}};
    if (http) ready["http_port"] = http->port();
    std::cout << ready.dump() << std::endl;
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (http) http->stop();
    tcp.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tool-using agent environment for Earth-observation imagery"};
    app.set_config("--config", "", "Read options from a TOML/INI file");
    app.require_subcommand(1);

    std::string manifest;
    auto* index = app.add_subcommand("index", "Build and validate a data-lake manifest");
    index->add_option("manifest", manifest, "Manifest JSON-lines file")->required();

    std::string out_dir, spec_file;
    std::uint64_t fixture_seed = FixtureSpec{}.seed;
    auto* fixtures = app.add_subcommand("fixtures", "Generate the synthetic fixture corpus and tasks");
    fixtures->add_option("--out", out_dir, "Output directory")->required();
    fixtures->add_option("--seed", fixture_seed, "Generator seed")->capture_default_str();
    fixtures->add_option("--spec", spec_file, "FixtureSpec JSON file (overrides --seed)");

    std::string data = "fixtures", host = "127.0.0.1", log;
    int port = 7070, http_port = -1, max_calls = kEvalBudget;
    long idle_ms = 300000;
    auto* serve = app.add_subcommand("serve", "Serve episodes over TCP (and optionally HTTP)");
    serve->add_option("--data", data, "Fixture directory")->capture_default_str();
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port, "TCP port, 0 for ephemeral")->capture_default_str();
    serve->add_option("--http-port", http_port, "HTTP facade port, -1 disables, 0 for ephemeral")->capture_default_str();
    serve->add_option("--max-calls", max_calls, "Tool-call budget")->capture_default_str();
    serve->add_option("--idle-timeout-ms", idle_ms)->capture_default_str();
    serve->add_option("--log", log, "Append finished trajectories to this file");

    std::string agent = "optimal", task_id, trajectories_out, judge_backend = "exact", remote;
    int k = 3;
    std::uint64_t seed = 0;
    ModeFlags run_mode;
    ChatFlags agent_chat, run_judge_chat;
    auto* run = app.add_subcommand("run", "Run an agent over fixture tasks and store trajectories");
    run->add_option("--data", data, "Fixture directory")->capture_default_str();
    run->add_option("--agent", agent, "optimal | zero_call | random_legal | greedy_heuristic | chat")
        ->capture_default_str();
    run->add_option("--task", task_id, "Single task id (default: all)");
    run->add_option("-k,--attempts", k, "Attempts per task, early-stopped")->capture_default_str();
    run->add_option("--seed", seed)->capture_default_str();
    run->add_option("--max-calls", max_calls)->capture_default_str();
    run->add_option("--judge", judge_backend, "exact | remote (used for early stopping)")->capture_default_str();
    run->add_option("--remote", remote, "host:port of an episode service instead of in-process");
    run->add_option("-o,--trajectories", trajectories_out, "Output JSON-lines file")->required();
    run_mode.add(run);
    agent_chat.add(run, "agent");
    run_judge_chat.add(run, "judge");

    std::string trajectories_in, json_out, csv_out;
    ReportOptions report_opts;
    ChatFlags eval_judge_chat;
    auto* eval = app.add_subcommand("eval", "Score stored trajectories and write a report");
    eval->add_option("--data", data, "Fixture directory")->capture_default_str();
    eval->add_option("--trajectories", trajectories_in)->required();
    eval->add_option("--judge", judge_backend, "exact | remote")->capture_default_str();
    eval->add_option("--resamples", report_opts.resamples)->capture_default_str();
    eval->add_option("--seed", report_opts.seed)->capture_default_str();
    eval->add_option("--ks", report_opts.ks)->capture_default_str();
    eval->add_option("--json", json_out, "Report JSON path");
    eval->add_option("--csv", csv_out, "Report CSV path");
    eval_judge_chat.add(eval, "judge");

    auto* synthcheck = app.add_subcommand("synthcheck", "Structural validation of a trajectory file");
    synthcheck->add_option("trajectories", trajectories_in)->required();

    ModeFlags audit_mode;
    auto* audit = app.add_subcommand("rename-audit", "Run an agent with and without tool renaming and diff");
    audit->add_option("--data", data, "Fixture directory")->capture_default_str();
    audit->add_option("--agent", agent, "Scripted policy")->capture_default_str();
    audit->add_option("--seed", seed)->capture_default_str();
    audit_mode.add(audit);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*index) return cmd_index(manifest);
        if (*synthcheck) return cmd_synthcheck(trajectories_in);
        if (*fixtures) {
            FixtureSpec spec;
            spec.seed = fixture_seed;
            if (!spec_file.empty()) {
                std::ifstream in(spec_file);
                if (!in) throw Error(ErrorCode::io_error, "cannot read '" + spec_file + "'");
                spec = fixture_spec_from_json(json::parse(in));
            }
            const auto files = generate_fixtures(spec, out_dir);
            std::cout << json{{"records", files.records}, {"tasks", files.task_count}, {"dir", out_dir}}.dump() << '\n';
            return 0;
        }
        if (*serve) return cmd_serve(data, host, port, http_port, max_calls, idle_ms, log);
        if (*run) {
            auto env = load_environment(data);
            if (!task_id.empty()) env.tasks = {env.task(task_id)};
            const auto judge = make_judge(judge_backend, run_judge_chat);
            AgentFactory factory;
            if (agent == "chat") {
                const auto cfg = agent_chat.config();
                factory = [cfg](const Task&, const ExecutionMode&, std::uint64_t) {
                    return std::make_unique<ChatAgent>(cfg);
                };
            } else {
                factory = scripted_agents(parse_agent_policy(agent));
            }
            EvalOptions opts;
            opts.mode = run_mode.mode();
            opts.k = k;
            opts.max_calls = max_calls;
            opts.seed = seed;
            std::vector<Trajectory> out;
            if (remote.empty()) {
                out = run_eval(env, factory, *judge, opts).trajectories;
            } else {
                const auto colon = remote.rfind(':');
                if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "--remote needs host:port");
                TcpClient client(remote.substr(0, colon), std::stoi(remote.substr(colon + 1)));
                for (const auto& task : env.tasks)
                    for (int attempt = 0; attempt < k; ++attempt) {
                        ExecutionMode mode = opts.mode;
                        mode.seed = attempt_seed(seed, task.task_id, attempt);
                        auto a = factory(task, mode, mode.seed);
                        out.push_back(run_remote_episode(client, task, mode, *a, attempt));
                        const auto& t = out.back();
                        const auto& ref = t.resolved_reference ? *t.resolved_reference : task.reference_answer;
                        if (t.final_answer && !t.zero_call &&
                            judge->judge(task.question, ref, *t.final_answer).is_same_meaning)
                            break;
                    }
            }
            std::filesystem::remove(trajectories_out);
            for (const auto& t : out) append_trajectory(trajectories_out, t);
            std::cout << json{{"trajectories", out.size()}, {"file", trajectories_out}}.dump() << '\n';
            return 0;
        }
        if (*eval) {
            const auto env = load_environment(data);
            const auto judge = make_judge(judge_backend, eval_judge_chat);
            const auto trajectories = load_trajectories(trajectories_in);
            const auto results = collect_results(env.tasks, trajectories, *judge);
            emit_report(build_report(results, *judge, report_opts), json_out, csv_out);
            return 0;
        }
        if (*audit) {
            const auto env = load_environment(data);
            const auto policy = parse_agent_policy(agent);
            json diffs = json::array();
            for (const auto& task : env.tasks) {
                ExecutionMode plain = audit_mode.mode(), renamed = plain;
                plain.rename = false;
                renamed.rename = true;
                plain.seed = renamed.seed = attempt_seed(seed, task.task_id, 0);
                auto a = make_agent(policy, task, plain, plain.seed);
                auto b = make_agent(policy, task, renamed, renamed.seed);
                const auto ta = run_episode(env.toolkit, task, plain, *a);
                const auto tb = run_episode(env.toolkit, task, renamed, *b);
                json d = json::object();
                if (backend_tool_sequence(ta) != backend_tool_sequence(tb)) d["tools"] = true;
                if (ta.final_answer != tb.final_answer) d["final_answer"] = true;
                bool obs_differ = ta.steps.size() != tb.steps.size();
                for (std::size_t i = 0; !obs_differ && i < ta.steps.size(); ++i)
                    obs_differ = ta.steps[i].observation != tb.steps[i].observation ||
                                 ta.steps[i].call.arguments != tb.steps[i].call.arguments;
                if (obs_differ) d["observations"] = true;
                if (!d.empty()) {
                    d["task_id"] = task.task_id;
                    diffs.push_back(std::move(d));
                }
            }
            std::cout << json{{"tasks", env.tasks.size()}, {"diffs", diffs.size()}, {"details", diffs}}.dump(2)
                      << '\n';
            return diffs.empty() ? 0 : 1;
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 3;
    }
    return 0;
}
