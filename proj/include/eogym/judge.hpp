#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "eogym/toolkit.hpp"
#include "json.hpp"

namespace eogym {

enum class JudgeBackend { exact, remote };

std::string_view to_string(JudgeBackend b);
JudgeBackend parse_judge_backend(std::string_view s);

struct JudgeVerdict {
    bool is_same_meaning = false;
    std::string reason;
    JudgeBackend backend = JudgeBackend::exact;

    bool operator==(const JudgeVerdict&) const = default;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict judge(std::string_view question, std::string_view reference,
                               std::string_view candidate) const = 0;
};

// Word tokens compared case-insensitively with punctuation dropped; numeric tokens compare
// within a relative tolerance, so "4" equals "4.0".
class ExactJudge final : public Judge {
public:
    explicit ExactJudge(double rel_tol = 1e-6) : rel_tol_(rel_tol) {}
    JudgeVerdict judge(std::string_view question, std::string_view reference,
                       std::string_view candidate) const override;

    struct Token {
        std::string word;
        std::optional<double> number;
    };
    static std::vector<Token> tokenize(std::string_view text);

private:
    double rel_tol_;
};

// Chat-completion endpoint settings. Plain http only.
struct ChatConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model = "judge";
    std::string api_key;
    double temperature = 0.0;
    int max_retries = 3;
    int timeout_s = 60;
    int max_concurrency = 4;

    // Overrides from EOGYM_CHAT_URL, EOGYM_CHAT_MODEL, EOGYM_CHAT_API_KEY, EOGYM_CHAT_TEMPERATURE.
    static ChatConfig from_env(ChatConfig base);
    static ChatConfig from_env() { return from_env(ChatConfig{}); }
    static ChatConfig from_json(const nlohmann::json& j);
};

struct ChatMessage {
    std::string role;
    std::string content;
};

class ChatClient {
public:
    explicit ChatClient(ChatConfig config);

    // Content of the first choice. Throws Error(remote_failure) once retries are spent.
    std::string complete(const std::vector<ChatMessage>& messages, std::string_view idempotency_key) const;
    // Full first-choice message for a raw message list, with an optional function manifest.
    nlohmann::json complete_message(nlohmann::json messages, nlohmann::json tools,
                                    std::string_view idempotency_key) const;
    const ChatConfig& config() const { return config_; }

private:
    ChatConfig config_;
    std::string host_;  // scheme://host[:port]
    std::string path_;  // path prefix, e.g. /v1
    mutable std::counting_semaphore<64> slots_;
};

std::string_view judge_system_prompt();
std::string judge_user_message(std::string_view question, std::string_view reference, std::string_view candidate);
// Parses {"is_same_meaning": bool, "reason": string} out of a reply. Throws Error(remote_failure).
JudgeVerdict parse_judge_reply(std::string_view content);

class RemoteJudge final : public Judge {
public:
    explicit RemoteJudge(std::shared_ptr<const ChatClient> client) : client_(std::move(client)) {}
    JudgeVerdict judge(std::string_view question, std::string_view reference,
                       std::string_view candidate) const override;

private:
    std::shared_ptr<const ChatClient> client_;
};

// Model-backed target filter. Replies that name labels outside the offered set are ignored.
class RemoteSemanticFilter final : public SemanticFilter {
public:
    explicit RemoteSemanticFilter(std::shared_ptr<const ChatClient> client) : client_(std::move(client)) {}
    std::set<std::string> match(std::string_view target, const std::set<std::string>& labels) const override;

private:
    std::shared_ptr<const ChatClient> client_;
};

struct AgreementCounts {
    std::int64_t yy = 0, yn = 0, ny = 0, nn = 0;

    std::int64_t total() const { return yy + yn + ny + nn; }
};

// Throw Error(empty_input) for N = 0; cohens_kappa throws Error(undefined_kappa) when p_e = 1.
double observed_agreement(const AgreementCounts& c);
double cohens_kappa(const AgreementCounts& c);

}  // namespace eogym
