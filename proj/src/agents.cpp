#include <algorithm>
#include <cctype>

#include "eogym/harness.hpp"
#include "eogym/rng.hpp"

namespace eogym {

using nlohmann::json;

std::string_view to_string(AgentPolicy p) {
    switch (p) {
        case AgentPolicy::optimal: return "optimal";
        case AgentPolicy::zero_call: return "zero_call";
        case AgentPolicy::random_legal: return "random_legal";
        case AgentPolicy::greedy_heuristic: return "greedy_heuristic";
    }
    return "optimal";
}

AgentPolicy parse_agent_policy(std::string_view s) {
    for (auto p : {AgentPolicy::optimal, AgentPolicy::zero_call, AgentPolicy::random_legal,
                   AgentPolicy::greedy_heuristic})
        if (s == to_string(p)) return p;
    throw Error(ErrorCode::invalid_argument, "unknown agent policy '" + std::string(s) + "'");
}

AgentAction AgentAction::call(std::string name, std::string arguments, std::optional<std::string> rationale) {
    AgentAction a;
    a.name = std::move(name);
    a.arguments = std::move(arguments);
    a.rationale = std::move(rationale);
    return a;
}

AgentAction AgentAction::final_answer(std::string answer) {
    AgentAction a;
    a.is_final = true;
    a.answer = std::move(answer);
    return a;
}

std::string extract_final_answer(std::string_view text) {
    static constexpr std::string_view marker = "final answer";
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    std::string_view rest = text;
    if (const auto pos = lower.rfind(marker); pos != std::string::npos) {
        rest = text.substr(pos + marker.size());
        while (!rest.empty() && (rest.front() == '*' || rest.front() == ':' || rest.front() == ' ')) rest.remove_prefix(1);
    }
    auto trim = [](std::string_view s) {
        const auto b = s.find_first_not_of(" \t\r\n*");
        if (b == std::string_view::npos) return std::string_view{};
        const auto e = s.find_last_not_of(" \t\r\n*");
        return s.substr(b, e - b + 1);
    };
    return std::string(trim(rest));
}

namespace {

// Name under which a backend tool is offered in this episode, if it is offered at all.
std::optional<std::string> exposed_name(const std::vector<ToolSchema>& schemas, std::string_view backend) {
    const std::string alias = rename_tool_name(backend).name;
    for (const auto& s : schemas)
        if (s.name == backend || s.name == alias) return s.name;
    return std::nullopt;
}

std::vector<Observation> observations(const std::vector<Step>& history) {
    std::vector<Observation> out;
    for (const auto& s : history) out.push_back(s.observation);
    return out;
}

// Best-effort answer text from the most recent useful observation.
std::string answer_from_history(const std::vector<Step>& history) {
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
        const auto& o = it->observation;
        if (o.status == ObservationStatus::empty && o.kind != PayloadKind::none) return "0";
        if (o.status != ObservationStatus::ok || !o.payload.is_object()) continue;
        for (const char* field : {"value", "count", "attribute", "scene", "direction", "relation"}) {
            if (!o.payload.contains(field)) continue;
            const auto& v = o.payload[field];
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number()) return format_number(v.get<double>());
        }
    }
    return "unknown";
}

class OptimalAgent final : public Agent {
public:
    OptimalAgent(const Task& task, const ExecutionMode& mode) : task_(task), mode_(mode) {}

    AgentAction act(const InitialObservation&, const std::vector<Step>& history) override {
        if (history.size() < task_.reference_calls.size()) {
            const auto& ref = task_.reference_calls[history.size()];
            const std::string name = mode_.rename ? rename_tool_name(ref.name).name : ref.name;
            std::optional<std::string> rationale;
            if (mode_.prompt == PromptMode::detailed) 
                rationale = "Evidence step " + std::to_string(history.size() + 1) + " of " +
                            std::to_string(task_.reference_calls.size()) + ".";
            return AgentAction::call(name, ref.arguments.dump(), std::move(rationale));
        }
        if (task_.answer_rule.kind == AnswerRule::Kind::literal) return AgentAction::final_answer(task_.reference_answer);
        return AgentAction::final_answer(apply_answer_rule(task_.answer_rule, observations(history)).value_or("unknown"));
    }

private:
    Task task_;
    ExecutionMode mode_;
};

class ZeroCallAgent final : public Agent {
public:
    explicit ZeroCallAgent(const Task& task) : answer_(task.reference_answer) {}
    AgentAction act(const InitialObservation&, const std::vector<Step>&) override {
        return AgentAction::final_answer(answer_);
    }

private:
    std::string answer_;
};

std::vector<std::string> handles_with_prefix(const std::vector<Step>& history, std::string_view prefix) {
    std::vector<std::string> out;
    for (const auto& s : history) {
        if (s.observation.status != ObservationStatus::ok || !s.observation.payload.is_object()) continue;
        const auto h = s.observation.payload.value("handle", std::string{});
        if (h.starts_with(prefix)) out.push_back(h);
    }
    return out;
}

class RandomLegalAgent final : public Agent {
public:
    explicit RandomLegalAgent(std::uint64_t seed) : rng_(seed), planned_(static_cast<int>(rng_.between(1, 5))) {}

    AgentAction act(const InitialObservation& init, const std::vector<Step>& history) override {
        const int limit = std::min(planned_, init.max_calls);
        if (static_cast<int>(history.size()) >= limit || init.schemas.empty())
            return AgentAction::final_answer(answer_from_history(history));
        const auto& schema = init.schemas[rng_.below(init.schemas.size())];
        json args = json::object();
        for (const auto& p : schema.params) {
            if (!p.required && rng_.bernoulli(0.5)) continue;
            args[p.name] = value_for(p, init, history);
        }
        return AgentAction::call(schema.name, args.dump());
    }

private:
    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[rng_.below(v.size())];
    }

    std::string start_record(const InitialObservation& init, std::optional<Modality> modality) {
        std::vector<std::string> ids;
        for (const auto& r : init.start_images)
            if (!modality || r.modality == *modality) ids.push_back(r.record_id);
        if (ids.empty())
            for (const auto& r : init.start_images) ids.push_back(r.record_id);
        return ids.empty() ? std::string("missing") : pick(ids);
    }

    json value_for(const ToolParam& p, const InitialObservation& init, const std::vector<Step>& history) {
        if (p.type == "image_ref") {
            auto handles = handles_with_prefix(history, "img-");
            if (!handles.empty() && rng_.bernoulli(0.5)) return pick(handles);
            return start_record(init, std::nullopt);
        }
        if (p.type == "scene_ref" || p.type == "record_ref") return start_record(init, Modality::multispectral_scene);
        if (p.type == "mask_ref") {
            auto handles = handles_with_prefix(history, "mask-");
            return handles.empty() ? std::string("mask-0") : pick(handles);
        }
        if (p.type == "integer") return rng_.between(1, 96);
        if (p.type == "number") {
            if (p.name == "x0" || p.name == "y0") return std::round(rng_.uniform(0.0, 0.45) * 100) / 100;
            if (p.name == "x1" || p.name == "y1") return std::round(rng_.uniform(0.55, 1.0) * 100) / 100;
            if (p.name == "factor") return rng_.between(2, 3);
            return std::round(rng_.uniform() * 100) / 100;
        }
        if (p.type == "date") {
            for (const auto& r : init.start_images)
                if (r.capture_time) return format_date(*r.capture_time);
            return std::string("2021-01-01");
        }
        if (p.type == "expression") return std::to_string(rng_.between(1, 9)) + "+" + std::to_string(rng_.between(1, 9));
        if (p.type == "box_or_point") {
            const int x = rng_.between(0, 60), y = rng_.between(0, 60);
            return json::array({x, y, x + rng_.between(4, 30), y + rng_.between(4, 30)});
        }
        if (p.type == "box_list") {
            const int x = rng_.between(0, 60), y = rng_.between(0, 60);
            return json::array({json::array({x, y, x + 8, y + 8})});
        }
        if (p.name == "theme") return pick(std::vector<std::string>{"vegetation", "water", "urban", "snow"});
        return pick(std::vector<std::string>{"ship", "car", "building", "plane", "truck"});
    }

    Rng rng_;
    int planned_;
};

// Keyword rules: one evidence call picked from the question, then answer from it.
class GreedyAgent final : public Agent {
public:
    AgentAction act(const InitialObservation& init, const std::vector<Step>& history) override {
        if (!history.empty() || init.start_images.empty()) return AgentAction::final_answer(answer(history));
        std::string q = init.question;
        std::transform(q.begin(), q.end(), q.begin(), [](unsigned char c) { return std::tolower(c); });
        const auto& start = init.start_images.front();
        std::string target = "object";
        for (const char* word : {"storage tank", "building", "vehicle", "aircraft", "truck", "plane", "ship", "car"})
            if (q.find(word) != std::string::npos) {
                target = word;
                break;
            }

        std::string backend;
        json args;
        if (start.modality == Modality::multispectral_scene) {
            question_field_ = q.find("water") != std::string::npos ? "foreground_fraction" : "fraction_above";
            backend = q.find("water") != std::string::npos ? "compute_water_mask_by_multispectral"
                                                           : "compute_ndvi_by_multispectral";
            args = {{"scene", start.record_id}};
        } else if (start.modality == Modality::sar) {
            backend = "get_object_bbox_by_sar_image";
            args = {{"image", start.record_id}, {"target", target}};
        } else if (q.find("color") != std::string::npos) {
            backend = "describe_optical_object";
            args = {{"image", start.record_id}, {"target", target}};
        } else if (q.find("scene") != std::string::npos) {
            backend = "analyze_optical_scene";
            args = {{"image", start.record_id}};
        } else {
            backend = "get_object_bbox_by_optical_image";
            args = {{"image", init.start_images.back().record_id}, {"target", target}};
        }
        const auto name = exposed_name(init.schemas, backend);
        if (!name) return AgentAction::final_answer("unknown");
        return AgentAction::call(*name, args.dump());
    }

private:
    std::string answer(const std::vector<Step>& history) const {
        if (!question_field_.empty() && !history.empty()) {
            AnswerRule r;
            r.kind = AnswerRule::Kind::value;
            r.field = question_field_;
            r.decimals = 2;
            if (auto a = apply_answer_rule(r, observations(history))) return *a;
        }
        return answer_from_history(history);
    }

    std::string question_field_;
};

}  // namespace

std::unique_ptr<Agent> make_agent(AgentPolicy policy, const Task& task, const ExecutionMode& mode, std::uint64_t seed) {
    switch (policy) {
        case AgentPolicy::optimal: return std::make_unique<OptimalAgent>(task, mode);
        case AgentPolicy::zero_call: return std::make_unique<ZeroCallAgent>(task);
        case AgentPolicy::random_legal: return std::make_unique<RandomLegalAgent>(seed);
        case AgentPolicy::greedy_heuristic: return std::make_unique<GreedyAgent>();
    }
    throw Error(ErrorCode::invalid_argument, "unknown agent policy");
}

ChatAgent::ChatAgent(ChatConfig config) : client_(std::make_shared<ChatClient>(config)), config_(std::move(config)) {}

AgentAction ChatAgent::act(const InitialObservation& init, const std::vector<Step>& history) {
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", init.system_prompt}});
    std::string user = init.question + "\n\nImages:\n";
    for (const auto& r : init.start_images) {
        user += "- " + r.record_id + " (" + std::string(to_string(r.modality));
        if (r.capture_time) user += ", captured " + format_rfc3339(*r.capture_time);
        user += ")\n";
    }
    user += "\nYou may make at most " + std::to_string(init.max_calls) +
            " tool calls. Give your answer on a last line starting with \"Final Answer:\".";
    messages.push_back({{"role", "user"}, {"content", user}});
    for (const auto& s : history) {
        const std::string id = "call-" + std::to_string(s.call.call_index);
        messages.push_back({{"role", "assistant"},
                            {"content", s.rationale.value_or("")},
                            {"tool_calls", json::array({{{"id", id},
                                                         {"type", "function"},
                                                         {"function", {{"name", s.call.name},
                                                                       {"arguments", s.call.arguments}}}}})}});
        messages.push_back({{"role", "tool"}, {"tool_call_id", id}, {"content", to_json(s.observation).dump()}});
    }

    const auto key = std::to_string(fnv1a64(init.question)) + "-" + std::to_string(history.size());
    const json reply = client_->complete_message(std::move(messages), function_manifest(init.schemas), key);
    const std::string content = reply.contains("content") && reply["content"].is_string()
                                    ? reply["content"].get<std::string>()
                                    : std::string{};
    if (reply.contains("tool_calls") && reply["tool_calls"].is_array() && !reply["tool_calls"].empty()) {
        const auto& fn = reply["tool_calls"][0].at("function");
        const auto& a = fn.contains("arguments") ? fn["arguments"] : json("{}");
        std::optional<std::string> rationale;
        if (!content.empty()) rationale = content;
        return AgentAction::call(fn.at("name").get<std::string>(), a.is_string() ? a.get<std::string>() : a.dump(),
                                 std::move(rationale));
    }
    return AgentAction::final_answer(extract_final_answer(content));
}

}  // namespace eogym
