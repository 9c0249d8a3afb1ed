#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "eogym/episode.hpp"
#include "eogym/judge.hpp"
#include "eogym/metrics.hpp"
#include "eogym/toolkit.hpp"
#include "json.hpp"

namespace eogym {

// ---------------------------------------------------------------------------
// Fixtures

struct FixtureSpec {
    std::uint64_t seed = 7;
    int image_size = 96;       // single optical/SAR images
    int base_size = 160;       // large base image for navigation tasks
    int crop_size = 64;        // window record cut from the base image
    int sequence_length = 4;   // optical frames per temporal sequence
    int scene_count = 5;       // dated multispectral captures per location
    int scene_size = 48;
    std::vector<std::string> vocabulary = {"ship", "car", "truck", "plane", "storage tank", "building", "harbor"};

    bool operator==(const FixtureSpec&) const = default;
};

nlohmann::json to_json(const FixtureSpec& s);
FixtureSpec fixture_spec_from_json(const nlohmann::json& j);

struct FixtureFiles {
    std::filesystem::path manifest;
    std::filesystem::path annotations;
    std::filesystem::path tasks;
    std::size_t records = 0;
    std::size_t task_count = 0;
};

// Writes manifest.jsonl, annotations.jsonl, tasks.jsonl, spec.json and the raster files under out_dir.
FixtureFiles generate_fixtures(const FixtureSpec& spec, const std::filesystem::path& out_dir);

struct Environment {
    std::shared_ptr<const DataLakeIndex> index;
    std::shared_ptr<const AnnotationStore> annotations;
    std::shared_ptr<const Toolkit> toolkit;
    std::vector<Task> tasks;

    const Task& task(std::string_view task_id) const;  // throws Error(unknown_task)
};

struct EnvironmentOptions {
    std::optional<std::filesystem::path> synonyms;  // synonym table file
    NoisyOracleDetector::Params detector;
    std::shared_ptr<const SemanticFilter> filter;  // overrides `synonyms` when set
};

// Loads <dir>/manifest.jsonl, annotations.jsonl and tasks.jsonl. Throws on index violations.
Environment load_environment(const std::filesystem::path& dir, const EnvironmentOptions& opts = {});

// ---------------------------------------------------------------------------
// Agents

enum class AgentPolicy { optimal, zero_call, random_legal, greedy_heuristic };

std::string_view to_string(AgentPolicy p);
AgentPolicy parse_agent_policy(std::string_view s);

struct AgentAction {
    bool is_final = false;
    std::string name;       // tool name as exposed to the agent
    std::string arguments;  // raw JSON text
    std::optional<std::string> rationale;
    std::string answer;

    static AgentAction call(std::string name, std::string arguments, std::optional<std::string> rationale = {});
    static AgentAction final_answer(std::string answer);
};

class Agent {
public:
    virtual ~Agent() = default;
    virtual AgentAction act(const InitialObservation& initial, const std::vector<Step>& history) = 0;
};

// Scripted agents see the task (optimal replays its reference calls).
std::unique_ptr<Agent> make_agent(AgentPolicy policy, const Task& task, const ExecutionMode& mode, std::uint64_t seed);

// Drives a chat-completion endpoint with function calling.
class ChatAgent final : public Agent {
public:
    explicit ChatAgent(ChatConfig config);
    AgentAction act(const InitialObservation& initial, const std::vector<Step>& history) override;

private:
    std::shared_ptr<ChatClient> client_;
    ChatConfig config_;
};

// Parses "Final Answer: ..." out of free text; falls back to the trimmed text.
std::string extract_final_answer(std::string_view text);

// ---------------------------------------------------------------------------
// Episodes and evaluation

std::uint64_t attempt_seed(std::uint64_t seed, std::string_view task_id, int attempt);

Trajectory run_episode(std::shared_ptr<const Toolkit> toolkit, const Task& task, const ExecutionMode& mode, Agent& agent,
                       int max_calls = kEvalBudget, int attempt = 0);

struct EvalOptions {
    ExecutionMode mode;
    int k = 3;
    int max_calls = kEvalBudget;
    std::uint64_t seed = 0;
    ReportOptions report;
};

using AgentFactory = std::function<std::unique_ptr<Agent>(const Task& task, const ExecutionMode& mode, std::uint64_t seed)>;

struct EvalRun {
    std::vector<Trajectory> trajectories;  // task order, then attempt order
    std::vector<QuestionResult> results;
    EvalReport report;
};

// Up to k attempts per task, stopping at the first correct answer. A failing agent aborts the attempt.
EvalRun run_eval(const Environment& env, const AgentFactory& agents, const Judge& judge, const EvalOptions& opts);
AgentFactory scripted_agents(AgentPolicy policy);

// ---------------------------------------------------------------------------
// Session service

struct ServiceConfig {
    int max_calls = kEvalBudget;
    std::chrono::milliseconds idle_timeout{std::chrono::minutes(5)};
    std::optional<std::filesystem::path> trajectory_log;
};

// Thread-safe dispatcher for wire messages {kind: reset|step|final|observation|error, session_id, ...}.
class SessionManager {
public:
    SessionManager(std::shared_ptr<const Toolkit> toolkit, std::vector<Task> tasks, ServiceConfig config);

    nlohmann::json handle(const nlohmann::json& message);
    // Aborts and persists sessions idle for longer than the timeout. Returns how many were reaped.
    std::size_t reap_idle(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());
    // Aborts and persists a session (for example on disconnect). No-op for unknown ids.
    void abort_session(const std::string& session_id);

    std::size_t open_sessions() const;
    std::vector<Trajectory> finished() const;

private:
    struct Session {
        std::mutex mu;
        std::unique_ptr<EpisodeSession> episode;
        std::chrono::steady_clock::time_point last_active;
        int next_call_index = 0;
    };

    nlohmann::json reset(const nlohmann::json& m);
    nlohmann::json step(const nlohmann::json& m);
    nlohmann::json final_answer(const nlohmann::json& m);
    std::shared_ptr<Session> lookup(const std::string& id);
    void close(const std::string& id, const Trajectory& t);

    std::shared_ptr<const Toolkit> toolkit_;
    std::map<std::string, Task> tasks_;
    ServiceConfig config_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::vector<Trajectory> finished_;
    std::uint64_t next_id_ = 1;
};

nlohmann::json wire_error(const std::string& session_id, ErrorCode code, const std::string& message);

// Length-prefixed (4-byte big-endian) JSON over TCP. One thread per connection.
class TcpServer {
public:
    TcpServer(std::shared_ptr<SessionManager> manager, std::string host, int port);
    ~TcpServer();

    void start();  // binds; throws Error(io_error) on failure
    void stop();
    int port() const { return port_; }  // actual port after start (0 requests an ephemeral one)

private:
    void accept_loop();
    void serve_connection(int fd);

    std::shared_ptr<SessionManager> manager_;
    std::string host_;
    int port_;
    int listen_fd_ = -1;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::thread reaper_;
    std::mutex conn_mu_;
    std::vector<std::thread> connections_;
    std::vector<int> connection_fds_;
};

class TcpClient {
public:
    TcpClient(const std::string& host, int port);  // throws Error(io_error)
    ~TcpClient();
    TcpClient(const TcpClient&) = delete;
    TcpClient& operator=(const TcpClient&) = delete;

    nlohmann::json request(const nlohmann::json& message);

private:
    int fd_ = -1;
};

// Frame helpers, exposed for tests. read_frame returns nullopt on clean EOF.
void write_frame(int fd, const std::string& payload);
std::optional<std::string> read_frame(int fd, std::size_t max_bytes = 64u << 20);

// HTTP facade: POST /v1/sessions, POST /v1/sessions/<id>/step, POST /v1/sessions/<id>/final, GET /v1/tasks.
class HttpFacade {
public:
    HttpFacade(std::shared_ptr<SessionManager> manager, std::vector<Task> tasks);
    ~HttpFacade();

    void start(const std::string& host, int port);  // port 0 picks an ephemeral port
    void stop();
    int port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

// Runs one episode through a TCP service with the given agent.
Trajectory run_remote_episode(TcpClient& client, const Task& task, const ExecutionMode& mode, Agent& agent,
                              int attempt = 0);

}  // namespace eogym
