#include "eogym/judge.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "eogym/rng.hpp"
#include "httplib.h"

namespace eogym {

using nlohmann::json;

std::string_view to_string(JudgeBackend b) { return b == JudgeBackend::remote ? "remote" : "exact"; }

JudgeBackend parse_judge_backend(std::string_view s) {
    if (s == "exact") return JudgeBackend::exact;
    if (s == "remote") return JudgeBackend::remote;
    throw Error(ErrorCode::invalid_argument, "unknown judge backend '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Exact backend

std::vector<ExactJudge::Token> ExactJudge::tokenize(std::string_view text) {
    std::vector<Token> out;
    auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        const bool prev_alnum = i > 0 && alnum(text[i - 1]);
        const bool starts_number =
            digit(c) || (!prev_alnum && (c == '-' || c == '+' || c == '.') && i + 1 < text.size() &&
                         (digit(text[i + 1]) || (text[i + 1] == '.' && i + 2 < text.size() && digit(text[i + 2]))));
        if (starts_number && !prev_alnum) {
            const char* b = text.data() + i + (c == '+' ? 1 : 0);
            double v = 0;
            auto [ptr, ec] = std::from_chars(b, text.data() + text.size(), v);
            const std::size_t end = static_cast<std::size_t>(ptr - text.data());
            // A number glued to letters ("3rd", "2x") stays a word.
            if (ec == std::errc() && ptr != b && std::isfinite(v) && (end >= text.size() || !alnum(text[end]))) {
                out.push_back({{}, v});
                i = end;
                continue;
            }
        }
        if (alnum(c)) {
            std::string w;
            while (i < text.size() && alnum(text[i])) w += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
            out.push_back({std::move(w), std::nullopt});
            continue;
        }
        ++i;
    }
    return out;
}

JudgeVerdict ExactJudge::judge(std::string_view, std::string_view reference, std::string_view candidate) const {
    const auto a = tokenize(reference);
    const auto b = tokenize(candidate);
    JudgeVerdict v;
    v.backend = JudgeBackend::exact;
    if (a.size() != b.size()) {
        v.reason = "token counts differ";
        return v;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].number.has_value() != b[i].number.has_value()) {
            v.reason = "token " + std::to_string(i) + " differs";
            return v;
        }
        if (a[i].number) {
            const double x = *a[i].number, y = *b[i].number;
            if (std::fabs(x - y) > rel_tol_ * std::max(std::fabs(x), std::fabs(y))) {
                v.reason = "numbers differ at token " + std::to_string(i);
                return v;
            }
        } else if (a[i].word != b[i].word) {
            v.reason = "token " + std::to_string(i) + " differs";
            return v;
        }
    }
    v.is_same_meaning = true;
    v.reason = "normalized answers match";
    return v;
}

// ---------------------------------------------------------------------------
// Remote backend

ChatConfig ChatConfig::from_env(ChatConfig base) {
    if (const char* v = std::getenv("EOGYM_CHAT_URL")) base.base_url = v;
    if (const char* v = std::getenv("EOGYM_CHAT_MODEL")) base.model = v;
    if (const char* v = std::getenv("EOGYM_CHAT_API_KEY")) base.api_key = v;
    if (const char* v = std::getenv("EOGYM_CHAT_TEMPERATURE")) base.temperature = std::strtod(v, nullptr);
    return base;
}

ChatConfig ChatConfig::from_json(const json& j) {
    ChatConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.api_key = j.value("api_key", c.api_key);
    c.temperature = j.value("temperature", c.temperature);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
    return c;
}

ChatClient::ChatClient(ChatConfig config)
    : config_(std::move(config)), slots_(std::clamp(config_.max_concurrency, 1, 64)) {
    const std::string& url = config_.base_url;
    if (!url.starts_with("http://"))
        throw Error(ErrorCode::invalid_argument, "chat endpoint must be an http:// URL: " + url);
    const auto slash = url.find('/', 7);
    host_ = slash == std::string::npos ? url : url.substr(0, slash);
    path_ = slash == std::string::npos ? "" : url.substr(slash);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
}

std::string ChatClient::complete(const std::vector<ChatMessage>& messages, std::string_view idempotency_key) const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    const json message = complete_message(std::move(msgs), json(), idempotency_key);
    if (!message.contains("content") || !message["content"].is_string())
        throw Error(ErrorCode::remote_failure, "chat endpoint " + config_.base_url + " returned no text content");
    return message["content"].get<std::string>();
}

json ChatClient::complete_message(json messages, json tools, std::string_view idempotency_key) const {
    json body = {{"model", config_.model}, {"temperature", config_.temperature}, {"messages", std::move(messages)}};
    if (tools.is_array() && !tools.empty()) body["tools"] = std::move(tools);
    httplib::Headers headers = {{"Idempotency-Key", std::string(idempotency_key)}};
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    slots_.acquire();
    struct Release {
        std::counting_semaphore<64>& s;
        ~Release() { s.release(); }
    } release{slots_};

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(200 << std::min(attempt, 5)));
        httplib::Client cli(host_);
        cli.set_connection_timeout(config_.timeout_s);
        cli.set_read_timeout(config_.timeout_s);
        auto res = cli.Post(path_ + "/chat/completions", headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            if (res->status >= 400 && res->status < 500 && res->status != 429) break;
            continue;
        }
        try {
            const auto reply = json::parse(res->body);
            const auto& message = reply.at("choices").at(0).at("message");
            if (!message.is_object()) throw json::type_error::create(302, "message is not an object", nullptr);
            return message;
        } catch (const json::exception& e) {
            last_error = std::string("malformed completion: ") + e.what();
        }
    }
    throw Error(ErrorCode::remote_failure, "chat endpoint " + config_.base_url + " failed: " + last_error);
}

std::string_view judge_system_prompt() {
    return "You are a strict semantic equivalence judge for QA final answers. Compare REFERENCE and CANDIDATE "
           "answers for the same question. Return JSON only: {\"is_same_meaning\": boolean, \"reason\": string}.\n"
           "\n"
           "Mark false for contradiction or materially different claims. Ignore wording differences if meaning is "
           "equivalent.";
}

std::string judge_user_message(std::string_view question, std::string_view reference, std::string_view candidate) {
    std::string s = "QUESTION:\n";
    s += question;
    s += "\n\nREFERENCE:\n";
    s += reference;
    s += "\n\nCANDIDATE:\n";
    s += candidate;
    return s;
}

namespace {

json extract_json_object(std::string_view content) {
    const auto open = content.find('{');
    const auto close = content.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        throw Error(ErrorCode::remote_failure, "reply contains no JSON object");
    try {
        return json::parse(content.substr(open, close - open + 1));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::remote_failure, std::string("reply is not valid JSON: ") + e.what());
    }
}

std::string request_key(std::initializer_list<std::string_view> parts) {
    std::uint64_t h = fnv1a64("");
    for (auto p : parts) {
        h = fnv1a64(p, h);
        h = fnv1a64("\x1f", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

JudgeVerdict parse_judge_reply(std::string_view content) {
    const json j = extract_json_object(content);
    if (!j.contains("is_same_meaning") || !j["is_same_meaning"].is_boolean())
        throw Error(ErrorCode::remote_failure, "reply lacks a boolean is_same_meaning");
    JudgeVerdict v;
    v.backend = JudgeBackend::remote;
    v.is_same_meaning = j["is_same_meaning"].get<bool>();
    v.reason = j.contains("reason") && j["reason"].is_string() ? j["reason"].get<std::string>() : "";
    if (v.reason.empty()) throw Error(ErrorCode::remote_failure, "reply has an empty reason");
    return v;
}

JudgeVerdict RemoteJudge::judge(std::string_view question, std::string_view reference,
                                std::string_view candidate) const {
    const std::vector<ChatMessage> messages = {
        {"system", std::string(judge_system_prompt())},
        {"user", judge_user_message(question, reference, candidate)},
    };
    const auto key = request_key({"judge", question, reference, candidate});
    std::string last;
    for (int attempt = 0; attempt <= client_->config().max_retries; ++attempt) {
        try {
            return parse_judge_reply(client_->complete(messages, key));
        } catch (const Error& e) {
            last = e.what();
        }
    }
    throw Error(ErrorCode::remote_failure, "judge gave no usable verdict: " + last);
}

std::set<std::string> RemoteSemanticFilter::match(std::string_view target, const std::set<std::string>& labels) const {
    json offered = labels;
    const std::vector<ChatMessage> messages = {
        {"system",
         "Select which annotation labels an object query refers to. Reply with JSON only: {\"labels\": [string]}. "
         "Use only labels from the offered list."},
        {"user", "QUERY: " + std::string(target) + "\nLABELS: " + offered.dump()},
    };
    const json j = extract_json_object(client_->complete(messages, request_key({"filter", target, offered.dump()})));
    std::set<std::string> out;
    if (j.contains("labels") && j["labels"].is_array())
        for (const auto& l : j["labels"])
            if (l.is_string() && labels.contains(l.get<std::string>())) out.insert(l.get<std::string>());
    return out;
}

// ---------------------------------------------------------------------------
// Agreement

double observed_agreement(const AgreementCounts& c) {
    if (c.yy < 0 || c.yn < 0 || c.ny < 0 || c.nn < 0) throw Error(ErrorCode::invalid_argument, "negative count");
    const auto n = c.total();
    if (n == 0) throw Error(ErrorCode::empty_input, "agreement table is empty");
    return static_cast<double>(c.yy + c.nn) / static_cast<double>(n);
}

double cohens_kappa(const AgreementCounts& c) {
    const double po = observed_agreement(c);
    const double n = static_cast<double>(c.total());
    const double a_yes = static_cast<double>(c.yy + c.yn) / n;
    const double b_yes = static_cast<double>(c.yy + c.ny) / n;
    const double pe = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    if (pe >= 1.0) throw Error(ErrorCode::undefined_kappa, "chance agreement is 1; kappa is undefined");
    return (po - pe) / (1.0 - pe);
}

}  // namespace eogym
