#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "eogym/rng.hpp"
#include "eogym/toolkit.hpp"

namespace eogym {

using nlohmann::json;

void AnnotationStore::add(GroundTruthAnnotation a) {
    std::string id = a.record_id;
    by_id_[id] = std::move(a);
}

const GroundTruthAnnotation* AnnotationStore::find(std::string_view record_id) const {
    auto it = by_id_.find(record_id);
    return it == by_id_.end() ? nullptr : &it->second;
}

AnnotationStore AnnotationStore::load(const std::filesystem::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw Error(ErrorCode::io_error, "cannot open annotations " + jsonl.string());
    AnnotationStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            GroundTruthAnnotation a;
            a.record_id = j.at("record_id").get<std::string>();
            if (j.contains("scene")) a.scene = j["scene"].get<std::string>();
            for (const auto& o : j.at("objects")) {
                GroundTruthObject obj;
                obj.label = o.at("label").get<std::string>();
                const auto& b = o.at("bbox");
                obj.box = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                               b.at(3).get<double>(), obj.label, std::nullopt};
                validate(obj.box);
                if (o.contains("damage")) obj.damage = o["damage"].get<std::string>();
                if (o.contains("attribute")) obj.attribute = o["attribute"].get<std::string>();
                a.objects.push_back(std::move(obj));
            }
            store.add(std::move(a));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::io_error,
                        jsonl.string() + ":" + std::to_string(line_no) + ": bad annotation: " + e.what());
        }
    }
    return store;
}

void AnnotationStore::save(const std::filesystem::path& jsonl) const {
    std::ofstream out(jsonl, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + jsonl.string());
    for (const auto& [id, a] : by_id_) {
        json objs = json::array();
        for (const auto& o : a.objects) {
            json jo = {{"label", o.label}, {"bbox", {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max}}};
            if (o.damage) jo["damage"] = *o.damage;
            if (o.attribute) jo["attribute"] = *o.attribute;
            objs.push_back(std::move(jo));
        }
        json j = {{"record_id", id}, {"objects", std::move(objs)}};
        if (a.scene) j["scene"] = *a.scene;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::set<std::string>> default_synonyms() {
    return {
        {"vehicle", {"car", "truck", "bus", "van", "small vehicle", "large vehicle"}},
        {"automobile", {"car"}},
        {"aircraft", {"plane", "airplane", "helicopter"}},
        {"airplane", {"plane"}},
        {"vessel", {"ship", "boat"}},
        {"boat", {"ship"}},
        {"structure", {"building", "house", "storage tank"}},
        {"house", {"building"}},
        {"tank", {"storage tank", "oil tank"}},
        {"infrastructure", {"bridge", "harbor", "road"}},
        {"port", {"harbor"}},
    };
}

std::set<std::string> singular_forms(const std::string& t) {
    std::set<std::string> out{t};
    if (t.size() > 3 && t.ends_with("es")) out.insert(t.substr(0, t.size() - 2));
    if (t.size() > 2 && t.ends_with('s') && !t.ends_with("ss")) out.insert(t.substr(0, t.size() - 1));
    return out;
}

}  // namespace

SynonymFilter::SynonymFilter() : table_(default_synonyms()) {}

SynonymFilter::SynonymFilter(std::map<std::string, std::set<std::string>> table) {
    for (auto& [k, v] : table) {
        auto& dst = table_[normalize(k)];
        for (const auto& l : v) dst.insert(normalize(l));
    }
}

std::string SynonymFilter::normalize(std::string_view text) {
    std::string out;
    bool space = false;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            if (space && !out.empty()) out += ' ';
            space = false;
            out += static_cast<char>(std::tolower(u));
        } else {
            space = true;
        }
    }
    return out;
}

SynonymFilter SynonymFilter::parse(std::string_view text) {
    std::map<std::string, std::set<std::string>> table;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = normalize(line.substr(0, colon));
        if (key.empty()) continue;
        std::istringstream items(line.substr(colon + 1));
        std::string item;
        while (std::getline(items, item, ',')) {
            const auto n = normalize(item);
            if (!n.empty()) table[key].insert(n);
        }
    }
    return SynonymFilter(std::move(table));
}

SynonymFilter SynonymFilter::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open synonym table " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::set<std::string> SynonymFilter::match(std::string_view target, const std::set<std::string>& labels) const {
    const auto wanted = singular_forms(normalize(target));
    std::set<std::string> expanded = wanted;
    for (const auto& w : wanted)
        if (auto it = table_.find(w); it != table_.end()) expanded.insert(it->second.begin(), it->second.end());
    std::set<std::string> out;
    for (const auto& label : labels) {
        const auto forms = singular_forms(normalize(label));
        if (std::any_of(forms.begin(), forms.end(), [&](const auto& f) { return expanded.contains(f); }))
            out.insert(label);
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Detection> NoisyOracleDetector::detect(const DetectionRequest& req) const {
    Rng rng(req.seed);
    const double w = req.image.width, h = req.image.height;
    std::vector<Detection> out;
    for (std::size_t gi = 0; gi < req.ground_truth.size(); ++gi) {
        const BBox& gt = req.ground_truth[gi];
        if (rng.bernoulli(params_.drop_prob)) continue;
        BBox b = gt;
        if (params_.jitter_px > 0) {
            double x0 = gt.x_min + rng.normal(0, params_.jitter_px);
            double y0 = gt.y_min + rng.normal(0, params_.jitter_px);
            double x1 = gt.x_max + rng.normal(0, params_.jitter_px);
            double y1 = gt.y_max + rng.normal(0, params_.jitter_px);
            if (x1 < x0) std::swap(x0, x1);
            if (y1 < y0) std::swap(y0, y1);
            b.x_min = std::clamp(x0, 0.0, w - 1);
            b.y_min = std::clamp(y0, 0.0, h - 1);
            b.x_max = std::clamp(std::max(x1, b.x_min + 1), 1.0, w);
            b.y_max = std::clamp(std::max(y1, b.y_min + 1), 1.0, h);
        }
        out.push_back({std::move(b), static_cast<int>(gi)});
    }
    const std::size_t trials = std::max<std::size_t>(1, req.ground_truth.size());
    for (std::size_t i = 0; i < trials; ++i) {
        if (!rng.bernoulli(params_.false_positive_rate)) continue;
        const double bw = std::max(2.0, rng.uniform(0.05, 0.2) * w);
        const double bh = std::max(2.0, rng.uniform(0.05, 0.2) * h);
        const double x0 = rng.uniform(0.0, std::max(0.0, w - bw));
        const double y0 = rng.uniform(0.0, std::max(0.0, h - bh));
        out.push_back({BBox{x0, y0, std::min(w, x0 + bw), std::min(h, y0 + bh), req.target, std::nullopt}, -1});
    }
    return out;
}

}  // namespace eogym
