#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <set>

#include "eogym/harness.hpp"
#include "httplib.h"

namespace eogym {

using nlohmann::json;

json wire_error(const std::string& session_id, ErrorCode code, const std::string& message) {
    json j = {{"kind", "error"}, {"code", std::string(to_string(code))}, {"message", message}};
    if (!session_id.empty()) j["session_id"] = session_id;
    return j;
}

SessionManager::SessionManager(std::shared_ptr<const Toolkit> toolkit, std::vector<Task> tasks, ServiceConfig config)
    : toolkit_(std::move(toolkit)), config_(std::move(config)) {
    if (config_.max_calls <= 0) throw Error(ErrorCode::invalid_argument, "budget must be positive");
    for (auto& t : tasks) {
        const std::string id = t.task_id;
        tasks_.emplace(id, std::move(t));
    }
}

json SessionManager::handle(const json& message) {
    const std::string sid = message.is_object() ? message.value("session_id", std::string{}) : std::string{};
    try {
        if (!message.is_object() || !message.contains("kind") || !message["kind"].is_string())
            throw Error(ErrorCode::protocol_error, "message must be an object with a string 'kind'");
        const auto kind = message["kind"].get<std::string>();
        if (kind == "reset") return reset(message);
        if (kind == "step") return step(message);
        if (kind == "final") return final_answer(message);
        throw Error(ErrorCode::protocol_error, "unexpected message kind '" + kind + "'");
    } catch (const Error& e) {
        return wire_error(sid, e.code(), e.what());
    } catch (const json::exception& e) {
        return wire_error(sid, ErrorCode::protocol_error, e.what());
    }
}

json SessionManager::reset(const json& m) {
    const auto task_id = m.at("task_id").get<std::string>();
    const auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw Error(ErrorCode::unknown_task, "unknown task '" + task_id + "'");
    const ExecutionMode mode = m.contains("config") ? execution_mode_from_json(m["config"]) : ExecutionMode{};
    const int max_calls = std::min(m.value("max_calls", config_.max_calls), config_.max_calls);
    auto session = std::make_shared<Session>();
    session->episode = std::make_unique<EpisodeSession>(toolkit_, it->second, mode, max_calls, m.value("attempt", 0));
    session->last_active = std::chrono::steady_clock::now();
    json initial = to_json(session->episode->initial());
    std::string id;
    {
        std::lock_guard lock(mu_);
        id = "s-" + std::to_string(next_id_++);
        sessions_[id] = session;
    }
    return {{"kind", "observation"}, {"session_id", id}, {"initial", std::move(initial)}, {"calls_remaining", max_calls}};
}

std::shared_ptr<SessionManager::Session> SessionManager::lookup(const std::string& id) {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::unknown_session, "unknown or closed session '" + id + "'");
    return it->second;
}

void SessionManager::close(const std::string& id, const Trajectory& t) {
    std::lock_guard lock(mu_);
    if (sessions_.erase(id) == 0) return;
    finished_.push_back(t);
    if (config_.trajectory_log) append_trajectory(*config_.trajectory_log, t);
}

json SessionManager::step(const json& m) {
    const auto id = m.at("session_id").get<std::string>();
    auto session = lookup(id);
    std::lock_guard lock(session->mu);
    if (session->episode->closed()) throw Error(ErrorCode::session_closed, "session '" + id + "' is closed");
    session->last_active = std::chrono::steady_clock::now();

    const int expected = session->next_call_index;
    if (!m.contains("call_index") || !m["call_index"].is_number_integer() || m["call_index"].get<int>() != expected) {
        close(id, session->episode->abort());
        throw Error(ErrorCode::protocol_error, "expected call_index " + std::to_string(expected));
    }
    const auto& a = m.contains("arguments") ? m["arguments"] : json::object();
    std::optional<std::string> rationale;
    if (m.contains("rationale") && m["rationale"].is_string()) rationale = m["rationale"].get<std::string>();
    try {
        auto r = session->episode->step(m.at("name").get<std::string>(), a.is_string() ? a.get<std::string>() : a.dump(),
                                        std::move(rationale));
        session->next_call_index = r.call_index + 1;
        return {{"kind", "observation"},
                {"session_id", id},
                {"call_index", r.call_index},
                {"observation", to_json(r.observation)},
                {"calls_remaining", r.calls_remaining}};
    } catch (const Error& e) {
        if (e.code() != ErrorCode::budget_exhausted) throw;
        const Trajectory t = session->episode->trajectory();
        close(id, t);
        json err = wire_error(id, e.code(), e.what());
        err["trajectory"] = to_json(t);
        return err;
    }
}

json SessionManager::final_answer(const json& m) {
    const auto id = m.at("session_id").get<std::string>();
    auto session = lookup(id);
    std::lock_guard lock(session->mu);
    const Trajectory t = session->episode->finalize(m.at("answer").get<std::string>());
    close(id, t);
    return {{"kind", "final"}, {"session_id", id}, {"trajectory", to_json(t)}};
}

void SessionManager::abort_session(const std::string& session_id) {
    std::shared_ptr<Session> session;
    {
        std::lock_guard lock(mu_);
        const auto it = sessions_.find(session_id);
        if (it == sessions_.end()) return;
        session = it->second;
    }
    std::lock_guard lock(session->mu);
    if (session->episode->closed()) return;
    close(session_id, session->episode->abort());
}

std::size_t SessionManager::reap_idle(std::chrono::steady_clock::time_point now) {
    std::vector<std::string> idle;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, s] : sessions_) {
            std::unique_lock slock(s->mu, std::try_to_lock);
            if (slock.owns_lock() && now - s->last_active > config_.idle_timeout) idle.push_back(id);
        }
    }
    for (const auto& id : idle) abort_session(id);
    return idle.size();
}

std::size_t SessionManager::open_sessions() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
}

std::vector<Trajectory> SessionManager::finished() const {
    std::lock_guard lock(mu_);
    return finished_;
}

// ---------------------------------------------------------------------------
// Framing

namespace {

bool write_all(int fd, const char* data, std::size_t n) {
    while (n > 0) {
        const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
        if (w < 0 && errno == EINTR) continue;
        if (w <= 0) return false;
        data += w;
        n -= static_cast<std::size_t>(w);
    }
    return true;
}

// 1 on success, 0 on EOF before any byte, -1 on error or truncation.
int read_all(int fd, char* data, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd, data + got, n - got, 0);
        if (r < 0 && errno == EINTR) continue;
        if (r == 0) return got == 0 ? 0 : -1;
        if (r < 0) return -1;
        got += static_cast<std::size_t>(r);
    }
    return 1;
}

}  // namespace

void write_frame(int fd, const std::string& payload) {
    if (payload.size() > 0xffffffffu) throw Error(ErrorCode::protocol_error, "frame too large");
    const auto n = static_cast<std::uint32_t>(payload.size());
    const unsigned char header[4] = {static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16),
                                     static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
    if (!write_all(fd, reinterpret_cast<const char*>(header), 4) || !write_all(fd, payload.data(), payload.size()))
        throw Error(ErrorCode::io_error, "failed to write frame");
}

std::optional<std::string> read_frame(int fd, std::size_t max_bytes) {
    unsigned char header[4];
    const int h = read_all(fd, reinterpret_cast<char*>(header), 4);
    if (h == 0) return std::nullopt;
    if (h < 0) throw Error(ErrorCode::io_error, "truncated frame header");
    const std::size_t n = (std::size_t{header[0]} << 24) | (std::size_t{header[1]} << 16) |
                          (std::size_t{header[2]} << 8) | std::size_t{header[3]};
    if (n > max_bytes) throw Error(ErrorCode::protocol_error, "frame of " + std::to_string(n) + " bytes exceeds limit");
    std::string payload(n, '\0');
    if (n > 0 && read_all(fd, payload.data(), n) != 1) throw Error(ErrorCode::io_error, "truncated frame body");
    return payload;
}

// ---------------------------------------------------------------------------
// TCP server and client

TcpServer::TcpServer(std::shared_ptr<SessionManager> manager, std::string host, int port)
    : manager_(std::move(manager)), host_(std::move(host)), port_(port) {}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::io_error, std::string("socket: ") + std::strerror(errno));
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port_));
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw Error(ErrorCode::io_error, "invalid IPv4 address '" + host_ + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
        const std::string why = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw Error(ErrorCode::io_error, "cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    reaper_ = std::thread([this] {
        while (running_) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
            manager_->reap_idle();
        }
    });
}

void TcpServer::stop() {
    if (!running_.exchange(false)) return;
    if (acceptor_.joinable()) acceptor_.join();
    if (reaper_.joinable()) reaper_.join();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(conn_mu_);
        for (int fd : connection_fds_) ::shutdown(fd, SHUT_RDWR);
        threads.swap(connections_);
    }
    for (auto& t : threads) t.join();
}

void TcpServer::accept_loop() {
    while (running_) {
        pollfd p{listen_fd_, POLLIN, 0};
        if (::poll(&p, 1, 100) <= 0) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        std::lock_guard lock(conn_mu_);
        connection_fds_.push_back(fd);
        connections_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void TcpServer::serve_connection(int fd) {
    std::set<std::string> owned;
    try {
        while (running_) {
            const auto frame = read_frame(fd);
            if (!frame) break;
            json reply;
            try {
                reply = manager_->handle(json::parse(*frame));
            } catch (const json::parse_error& e) {
                reply = wire_error("", ErrorCode::protocol_error, e.what());
            }
            if (reply.value("kind", "") == "observation" && reply.contains("initial"))
                owned.insert(reply["session_id"].get<std::string>());
            write_frame(fd, reply.dump());
        }
    } catch (const Error&) {
    }
    for (const auto& id : owned) manager_->abort_session(id);
    std::lock_guard lock(conn_mu_);
    std::erase(connection_fds_, fd);
    ::close(fd);
}

TcpClient::TcpClient(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error(ErrorCode::io_error, std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1 ||
        ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw Error(ErrorCode::io_error, "cannot connect to " + host + ":" + std::to_string(port));
    }
}

TcpClient::~TcpClient() {
    if (fd_ >= 0) ::close(fd_);
}

json TcpClient::request(const json& message) {
    write_frame(fd_, message.dump());
    const auto reply = read_frame(fd_);
    if (!reply) throw Error(ErrorCode::io_error, "server closed the connection");
    return json::parse(*reply);
}

// ---------------------------------------------------------------------------
// HTTP facade

struct HttpFacade::Impl {
    httplib::Server server;
    std::thread thread;
};

HttpFacade::HttpFacade(std::shared_ptr<SessionManager> manager, std::vector<Task> tasks) : impl_(std::make_unique<Impl>()) {
    auto reply = [](httplib::Response& res, const json& body) {
        if (body.value("kind", "") == "error") {
            const auto code = body.value("code", "");
            res.status = code == "unknown-session" || code == "unknown-task" ? 404 : 400;
        }
        res.set_content(body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req) {
        auto body = json::parse(req.body.empty() ? std::string("{}") : req.body, nullptr, false);
        return body.is_object() ? body : json();
    };
    impl_->server.Post("/v1/sessions", [=](const httplib::Request& req, httplib::Response& res) {
        json body = parse(req);
        if (body.is_object()) body["kind"] = "reset";
        reply(res, manager->handle(body));
    });
    impl_->server.Post(R"(/v1/sessions/([^/]+)/step)", [=](const httplib::Request& req, httplib::Response& res) {
        json body = parse(req);
        if (body.is_object()) {
            body["kind"] = "step";
            body["session_id"] = req.matches[1].str();
        }
        reply(res, manager->handle(body));
    });
    impl_->server.Post(R"(/v1/sessions/([^/]+)/final)", [=](const httplib::Request& req, httplib::Response& res) {
        json body = parse(req);
        if (body.is_object()) {
            body["kind"] = "final";
            body["session_id"] = req.matches[1].str();
        }
        reply(res, manager->handle(body));
    });
    json listing = json::array();
    for (const auto& t : tasks)
        listing.push_back({{"task_id", t.task_id},
                           {"question", t.question},
                           {"dataset_family", std::string(to_string(t.dataset_family))},
                           {"eo_task", std::string(to_string(t.eo_task))},
                           {"start_records", t.start_records}});
    impl_->server.Get("/v1/tasks", [listing = listing.dump()](const httplib::Request&, httplib::Response& res) {
        res.set_content(listing, "application/json");
    });
}

HttpFacade::~HttpFacade() { stop(); }

void HttpFacade::start(const std::string& host, int port) {
    if (port == 0) port_ = impl_->server.bind_to_any_port(host);
    else port_ = impl_->server.bind_to_port(host, port) ? port : -1;
    if (port_ <= 0) throw Error(ErrorCode::io_error, "cannot bind HTTP facade on " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void HttpFacade::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------------------
// Remote episodes

namespace {

InitialObservation initial_from_wire(const json& j) {
    InitialObservation o;
    o.system_prompt = j.at("system_prompt").get<std::string>();
    o.question = j.at("question").get<std::string>();
    for (const auto& r : j.at("start_images")) {
        DataLakeRecord rec;
        rec.record_id = r.at("record_id").get<std::string>();
        rec.modality = parse_modality(r.at("modality").get<std::string>());
        rec.sensor = r.value("sensor", std::string{});
        if (r.contains("capture_time")) rec.capture_time = parse_rfc3339(r["capture_time"].get<std::string>());
        o.start_images.push_back(std::move(rec));
    }
    for (const auto& t : j.at("tools")) {
        const auto name = t.at("function").at("name").get<std::string>();
        const auto backend = inverse_rename_tool_name(name).name;
        const ToolSchema* schema = find_tool(backend);
        if (!schema) throw Error(ErrorCode::protocol_error, "server offered unknown tool '" + name + "'");
        o.schemas.push_back(backend == name ? *schema : rename_schema(*schema));
    }
    o.max_calls = j.at("max_calls").get<int>();
    return o;
}

}  // namespace

Trajectory run_remote_episode(TcpClient& client, const Task& task, const ExecutionMode& mode, Agent& agent, int attempt) {
    const json opened =
        client.request({{"kind", "reset"}, {"task_id", task.task_id}, {"config", to_json(mode)}, {"attempt", attempt}});
    if (opened.value("kind", "") != "observation")
        throw Error(ErrorCode::protocol_error, "reset failed: " + opened.value("message", opened.dump()));
    const auto sid = opened.at("session_id").get<std::string>();
    const InitialObservation initial = initial_from_wire(opened.at("initial"));

    std::vector<Step> steps;
    while (true) {
        AgentAction action;
        bool failed = false;
        try {
            action = agent.act(initial, steps);
        } catch (const std::exception&) {
            failed = true;
        }
        if (!failed && action.is_final) {
            const json done = client.request({{"kind", "final"}, {"session_id", sid}, {"answer", action.answer}});
            if (!done.contains("trajectory"))
                throw Error(ErrorCode::protocol_error, "final failed: " + done.value("message", done.dump()));
            return trajectory_from_json(done["trajectory"]);
        }
        if (failed) {
            // An out-of-order call index makes the server abort and persist the session.
            client.request({{"kind", "step"}, {"session_id", sid}, {"call_index", -1}, {"name", ""}});
            Trajectory t;
            t.task_id = task.task_id;
            t.dataset_family = task.dataset_family;
            t.eo_task = task.eo_task;
            t.config = mode;
            t.attempt = attempt;
            t.seed = mode.seed;
            t.max_calls = initial.max_calls;
            t.steps = std::move(steps);
            t.termination = Termination::aborted;
            return t;
        }
        json msg = {{"kind", "step"},
                    {"session_id", sid},
                    {"call_index", static_cast<int>(steps.size())},
                    {"name", action.name},
                    {"arguments", action.arguments}};
        if (action.rationale) msg["rationale"] = *action.rationale;
        const json r = client.request(msg);
        if (r.value("kind", "") == "error") {
            if (r.contains("trajectory")) return trajectory_from_json(r["trajectory"]);
            throw Error(ErrorCode::protocol_error, "step failed: " + r.value("message", r.dump()));
        }
        Step s;
        s.rationale = action.rationale;
        s.call = {action.name, action.arguments, r.at("call_index").get<int>()};
        s.observation = observation_from_json(r.at("observation"));
        steps.push_back(std::move(s));
    }
}

}  // namespace eogym
