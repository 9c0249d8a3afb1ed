#include "eogym/datalake.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <tuple>

#include "json.hpp"

namespace eogym {

using nlohmann::json;

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::optical_rgb: return "optical_rgb";
        case Modality::sar: return "sar";
        case Modality::multispectral_scene: return "multispectral_scene";
    }
    return "optical_rgb";
}

Modality parse_modality(std::string_view text) {
    if (text == "optical_rgb") return Modality::optical_rgb;
    if (text == "sar") return Modality::sar;
    if (text == "multispectral_scene") return Modality::multispectral_scene;
    throw Error(ErrorCode::invalid_record, "unknown modality '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Time

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
}

int parse_digits(std::string_view s, std::size_t pos, std::size_t count) {
    if (pos + count > s.size()) throw Error(ErrorCode::invalid_record, "truncated timestamp");
    int v = 0;
    for (std::size_t i = pos; i < pos + count; ++i) {
        if (s[i] < '0' || s[i] > '9')
            throw Error(ErrorCode::invalid_record, "bad timestamp '" + std::string(s) + "'");
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

}  // namespace

UtcTime parse_rfc3339(std::string_view s) {
    // YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM); a bare date is accepted as midnight UTC.
    const auto bad = [&] { return Error(ErrorCode::invalid_record, "bad timestamp '" + std::string(s) + "'"); };
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw bad();
    const int year = parse_digits(s, 0, 4);
    const int month = parse_digits(s, 5, 2);
    const int day = parse_digits(s, 8, 2);
    if (month < 1 || month > 12 || day < 1 || day > 31) throw bad();
    std::int64_t secs = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400;
    if (s.size() == 10) return UtcTime{secs};
    if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') throw bad();
    if (s.size() < 19 || s[13] != ':' || s[16] != ':') throw bad();
    const int hh = parse_digits(s, 11, 2);
    const int mm = parse_digits(s, 14, 2);
    const int ss = parse_digits(s, 17, 2);
    if (hh > 23 || mm > 59 || ss > 60) throw bad();
    secs += hh * 3600 + mm * 60 + ss;
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
    if (pos >= s.size()) throw bad();
    if (s[pos] == 'Z' || s[pos] == 'z') {
        if (pos + 1 != s.size()) throw bad();
        return UtcTime{secs};
    }
    if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
        const int oh = parse_digits(s, pos + 1, 2);
        const int om = parse_digits(s, pos + 4, 2);
        const int offset = oh * 3600 + om * 60;
        secs += s[pos] == '+' ? -offset : offset;
        return UtcTime{secs};
    }
    throw bad();
}

std::string format_rfc3339(UtcTime t) {
    std::int64_t days = t.seconds / 86400;
    std::int64_t rem = t.seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    std::int64_t y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02dZ", static_cast<long long>(y), m, d,
                  static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
    return buf;
}

std::string format_date(UtcTime t) { return format_rfc3339(t).substr(0, 10); }

// ---------------------------------------------------------------------------
// Geometry

void validate(const GeoPoint& p) {
    if (!(p.lat_deg >= -90.0 && p.lat_deg <= 90.0) || !(p.lon_deg >= -180.0 && p.lon_deg <= 180.0)) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "coordinate out of range (lat %.6f, lon %.6f)", p.lat_deg, p.lon_deg);
        throw Error(ErrorCode::out_of_range, buf);
    }
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    validate(a);
    validate(b);
    constexpr double rad = std::numbers::pi / 180.0;
    const double phi1 = a.lat_deg * rad;
    const double phi2 = b.lat_deg * rad;
    const double dphi = (b.lat_deg - a.lat_deg) * rad;
    const double dlambda = (b.lon_deg - a.lon_deg) * rad;
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    h = std::clamp(h, 0.0, 1.0);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

// ---------------------------------------------------------------------------
// Manifest serialization

std::string record_to_json_line(const DataLakeRecord& r) {
    json j;
    j["record_id"] = r.record_id;
    j["modality"] = std::string(to_string(r.modality));
    if (r.location) j["location"] = {{"lat_deg", r.location->lat_deg}, {"lon_deg", r.location->lon_deg}};
    if (r.capture_time) j["capture_time"] = format_rfc3339(*r.capture_time);
    j["sensor"] = r.sensor;
    if (r.gsd_m) j["gsd_m"] = *r.gsd_m;
    if (r.sequence_id) j["sequence_id"] = *r.sequence_id;
    if (r.frame_index) j["frame_index"] = *r.frame_index;
    if (r.companion_id) j["companion_id"] = *r.companion_id;
    if (r.base_image_id)
        j["base_image_id"] = {{"record_id", r.base_image_id->record_id},
                              {"origin_x", r.base_image_id->origin_x},
                              {"origin_y", r.base_image_id->origin_y}};
    if (!r.band_files.empty()) {
        json bands = json::array();
        for (const auto& b : r.band_files) bands.push_back({{"band_name", b.band_name}, {"path", b.path}});
        j["band_files"] = std::move(bands);
    }
    j["path"] = r.path;
    return j.dump();
}

DataLakeRecord record_from_json_line(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_record, std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::invalid_record, "record is not an object");
    try {
        DataLakeRecord r;
        r.record_id = j.at("record_id").get<std::string>();
        if (r.record_id.empty()) throw Error(ErrorCode::invalid_record, "empty record_id");
        r.modality = parse_modality(j.at("modality").get<std::string>());
        if (j.contains("location") && !j["location"].is_null()) {
            const auto& loc = j["location"];
            r.location = GeoPoint{loc.at("lat_deg").get<double>(), loc.at("lon_deg").get<double>()};
            validate(*r.location);
        }
        if (j.contains("capture_time") && !j["capture_time"].is_null())
            r.capture_time = parse_rfc3339(j["capture_time"].get<std::string>());
        r.sensor = j.value("sensor", std::string{});
        if (j.contains("gsd_m") && !j["gsd_m"].is_null()) {
            r.gsd_m = j["gsd_m"].get<double>();
            if (!(*r.gsd_m > 0.0)) throw Error(ErrorCode::invalid_record, "gsd_m must be positive");
        }
        if (j.contains("sequence_id") && !j["sequence_id"].is_null())
            r.sequence_id = j["sequence_id"].get<std::string>();
        if (j.contains("frame_index") && !j["frame_index"].is_null())
            r.frame_index = j["frame_index"].get<int>();
        if (j.contains("companion_id") && !j["companion_id"].is_null())
            r.companion_id = j["companion_id"].get<std::string>();
        if (j.contains("base_image_id") && !j["base_image_id"].is_null()) {
            const auto& b = j["base_image_id"];
            r.base_image_id = BaseImageRef{b.at("record_id").get<std::string>(), b.value("origin_x", 0),
                                           b.value("origin_y", 0)};
            if (r.base_image_id->origin_x < 0 || r.base_image_id->origin_y < 0)
                throw Error(ErrorCode::invalid_record, "negative base image offset");
        }
        if (j.contains("band_files") && !j["band_files"].is_null()) {
            for (const auto& b : j["band_files"])
                r.band_files.push_back({b.at("band_name").get<std::string>(), b.at("path").get<std::string>()});
        }
        r.path = j.value("path", std::string{});
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_record, std::string("bad record field: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Index

std::map<Modality, std::size_t> DataLakeIndex::modality_counts() const {
    std::map<Modality, std::size_t> counts{{Modality::optical_rgb, 0}, {Modality::sar, 0},
                                           {Modality::multispectral_scene, 0}};
    for (const auto& r : records_) ++counts[r.modality];
    return counts;
}

const DataLakeRecord* DataLakeIndex::find(std::string_view record_id) const {
    auto it = by_id_.find(std::string(record_id));
    return it == by_id_.end() ? nullptr : &records_[it->second];
}

const DataLakeRecord& DataLakeIndex::at(std::string_view record_id) const {
    if (const auto* r = find(record_id)) return *r;
    throw Error(ErrorCode::unknown_record, "unknown record '" + std::string(record_id) + "'");
}

namespace {

std::string group_key_of(const DataLakeRecord& r) {
    if (r.sequence_id) return "seq:" + *r.sequence_id;
    if (r.modality == Modality::multispectral_scene && r.location) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "loc:%.6f,%.6f", r.location->lat_deg, r.location->lon_deg);
        return buf;
    }
    return {};
}

// Missing capture times sort first; frame index breaks ties within a time.
auto order_key(const DataLakeRecord& r) {
    return std::make_tuple(r.capture_time.has_value(), r.capture_time.value_or(UtcTime{}).seconds,
                           r.frame_index.has_value(), r.frame_index.value_or(0));
}

}  // namespace

std::string DataLakeIndex::temporal_group_key(const DataLakeRecord& r) const { return group_key_of(r); }

std::optional<DataLakeRecord> DataLakeIndex::temporal_neighbor(std::string_view record_id,
                                                               Direction direction) const {
    const auto& rec = at(record_id);
    const std::string key = group_key_of(rec);
    if (key.empty())
        throw Error(ErrorCode::no_temporal_group, "record '" + rec.record_id + "' is not in a temporal group");
    const auto& members = groups_.at(key);
    const std::size_t self = by_id_.at(rec.record_id);
    const auto it = std::find(members.begin(), members.end(), self);
    const auto pos = static_cast<std::size_t>(it - members.begin());
    if (direction == Direction::previous) {
        if (pos == 0) return std::nullopt;
        return records_[members[pos - 1]];
    }
    if (pos + 1 >= members.size()) return std::nullopt;
    return records_[members[pos + 1]];
}

std::vector<DataLakeRecord> DataLakeIndex::temporal_list(std::string_view record_id) const {
    const auto& rec = at(record_id);
    const std::string key = group_key_of(rec);
    if (key.empty()) return {rec};
    std::vector<DataLakeRecord> out;
    for (std::size_t i : groups_.at(key)) out.push_back(records_[i]);
    return out;
}

std::optional<std::pair<DataLakeRecord, double>> DataLakeIndex::nearest_record(
    const GeoPoint& point, const std::set<Modality>& filter) const {
    validate(point);
    const DataLakeRecord* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    // records_ is sorted by id, so strict < keeps the lexicographically smallest on ties.
    for (const auto& r : records_) {
        if (!r.location || (!filter.empty() && !filter.contains(r.modality))) continue;
        const double d = haversine_km(point, *r.location);
        if (d < best_d) {
            best_d = d;
            best = &r;
        }
    }
    if (!best) return std::nullopt;
    return std::make_pair(*best, best_d);
}

std::optional<DataLakeRecord> DataLakeIndex::companion(std::string_view record_id) const {
    const auto& rec = at(record_id);
    if (!rec.companion_id) return std::nullopt;
    return at(*rec.companion_id);
}

struct IndexBuilder {
    static BuildResult build(std::vector<DataLakeRecord> records, std::filesystem::path root,
                             std::vector<Violation> violations) {
        BuildResult out;
        out.lines_read = records.size() + violations.size();
        out.violations = std::move(violations);

        auto reject = [&](std::vector<bool>& alive, std::size_t i, ErrorCode code, std::string msg) {
            if (!alive[i]) return;
            alive[i] = false;
            out.violations.push_back({0, code, records[i].record_id, std::move(msg)});
        };

        std::vector<bool> alive(records.size(), true);

        // Band-file invariant.
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const bool scene = r.modality == Modality::multispectral_scene;
            if (scene && r.band_files.empty())
                reject(alive, i, ErrorCode::invalid_record, "multispectral scene without band files");
            else if (!scene && !r.band_files.empty())
                reject(alive, i, ErrorCode::invalid_record, "band files on a non-multispectral record");
        }

        // Unique ids: keep the first occurrence.
        std::unordered_map<std::string, std::size_t> first;
        for (std::size_t i = 0; i < records.size(); ++i) {
            auto [it, inserted] = first.emplace(records[i].record_id, i);
            if (!inserted) reject(alive, i, ErrorCode::duplicate_record, "duplicate record_id");
        }

        // Companion symmetry, iterated to a fixed point so that partners of
        // rejected records are rejected too.
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t i = 0; i < records.size(); ++i) {
                if (!alive[i] || !records[i].companion_id) continue;
                const auto& r = records[i];
                auto it = first.find(*r.companion_id);
                const bool present = it != first.end() && alive[it->second];
                std::string problem;
                if (!present) {
                    problem = "companion '" + *r.companion_id + "' missing or rejected";
                } else {
                    const auto& p = records[it->second];
                    const bool mutual = p.companion_id && *p.companion_id == r.record_id;
                    const bool cross = (r.modality == Modality::optical_rgb && p.modality == Modality::sar) ||
                                       (r.modality == Modality::sar && p.modality == Modality::optical_rgb);
                    if (!mutual) problem = "companion '" + p.record_id + "' does not point back";
                    else if (!cross) problem = "companion pair must be one optical_rgb and one sar";
                }
                if (problem.empty()) continue;
                reject(alive, i, ErrorCode::asymmetric_companion, problem);
                if (present) reject(alive, it->second, ErrorCode::asymmetric_companion,
                                    "partner of asymmetric companion '" + r.record_id + "'");
                changed = true;
            }
        }

        // Temporal order keys must be unique within a group; all tied records are rejected.
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!alive[i]) continue;
            const std::string key = group_key_of(records[i]);
            if (!key.empty()) groups[key].push_back(i);
        }
        for (auto& [key, members] : groups) {
            std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
                return order_key(records[a]) < order_key(records[b]);
            });
            for (std::size_t k = 0; k + 1 < members.size(); ++k) {
                if (order_key(records[members[k]]) == order_key(records[members[k + 1]])) {
                    const std::string msg = "duplicate order key in temporal group " + key;
                    reject(alive, members[k], ErrorCode::duplicate_order_key, msg);
                    reject(alive, members[k + 1], ErrorCode::duplicate_order_key, msg);
                }
            }
        }
        // Rejecting a tied record may strand its companion.
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!alive[i] || !records[i].companion_id) continue;
            auto it = first.find(*records[i].companion_id);
            if (it == first.end() || !alive[it->second])
                reject(alive, i, ErrorCode::asymmetric_companion, "companion rejected");
        }

        DataLakeIndex& idx = out.index;
        idx.root_ = std::move(root);
        for (std::size_t i = 0; i < records.size(); ++i)
            if (alive[i]) idx.records_.push_back(std::move(records[i]));
        std::sort(idx.records_.begin(), idx.records_.end(),
                  [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
        for (std::size_t i = 0; i < idx.records_.size(); ++i) {
            idx.by_id_.emplace(idx.records_[i].record_id, i);
            const std::string key = group_key_of(idx.records_[i]);
            if (!key.empty()) idx.groups_[key].push_back(i);
        }
        for (auto& [key, members] : idx.groups_) {
            std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
                return order_key(idx.records_[a]) < order_key(idx.records_[b]);
            });
        }
        return out;
    }
};

BuildResult build_index(std::vector<DataLakeRecord> records, std::filesystem::path root,
                        std::vector<Violation> parse_violations) {
    return IndexBuilder::build(std::move(records), std::move(root), std::move(parse_violations));
}

BuildResult build_index(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw Error(ErrorCode::unreadable_manifest, "cannot open manifest " + manifest_path.string());
    std::filesystem::path root = manifest_path.parent_path();
    std::vector<DataLakeRecord> records;
    std::vector<Violation> violations;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (line_no == 1 && line.find("\"manifest_version\"") != std::string::npos) {
            try {
                const auto header = json::parse(line);
                root /= header.value("root", std::string{"."});
            } catch (const json::exception& e) {
                throw Error(ErrorCode::unreadable_manifest, std::string("bad manifest header: ") + e.what());
            }
            continue;
        }
        try {
            records.push_back(record_from_json_line(line));
        } catch (const Error& e) {
            violations.push_back({line_no, e.code(), {}, e.what()});
        }
    }
    if (in.bad()) throw Error(ErrorCode::unreadable_manifest, "read failure on " + manifest_path.string());
    auto result = build_index(std::move(records), root.lexically_normal(), std::move(violations));
    result.lines_read = line_no;
    return result;
}

void write_manifest(const std::filesystem::path& manifest_path, const std::vector<DataLakeRecord>& records,
                    const std::string& root) {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write manifest " + manifest_path.string());
    out << json{{"manifest_version", 1}, {"root", root}}.dump() << '\n';
    for (const auto& r : records) out << record_to_json_line(r) << '\n';
}

}  // namespace eogym
