#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "eogym/error.hpp"

namespace eogym {

enum class Modality { optical_rgb, sar, multispectral_scene };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view text);

// Seconds since the Unix epoch, UTC.
struct UtcTime {
    std::int64_t seconds = 0;

    auto operator<=>(const UtcTime&) const = default;
};

UtcTime parse_rfc3339(std::string_view text);
std::string format_rfc3339(UtcTime t);
// "YYYY-MM-DD" portion only.
std::string format_date(UtcTime t);

struct GeoPoint {
    double lat_deg = 0.0;
    double lon_deg = 0.0;

    bool operator==(const GeoPoint&) const = default;
};

// Throws Error(out_of_range) unless lat in [-90,90] and lon in [-180,180].
void validate(const GeoPoint& p);

inline constexpr double kEarthRadiusKm = 6371.0088;

double haversine_km(const GeoPoint& a, const GeoPoint& b);

struct BaseImageRef {
    std::string record_id;
    int origin_x = 0;
    int origin_y = 0;

    bool operator==(const BaseImageRef&) const = default;
};

struct BandFile {
    std::string band_name;
    std::string path;

    bool operator==(const BandFile&) const = default;
};

struct DataLakeRecord {
    std::string record_id;
    Modality modality = Modality::optical_rgb;
    std::optional<GeoPoint> location;
    std::optional<UtcTime> capture_time;
    std::string sensor;
    std::optional<double> gsd_m;
    std::optional<std::string> sequence_id;
    std::optional<int> frame_index;
    std::optional<std::string> companion_id;
    std::optional<BaseImageRef> base_image_id;
    std::vector<BandFile> band_files;
    std::string path;

    bool operator==(const DataLakeRecord&) const = default;
};

// One manifest line. Field names match DataLakeRecord.
std::string record_to_json_line(const DataLakeRecord& r);
DataLakeRecord record_from_json_line(std::string_view line);

struct Violation {
    std::size_t line = 0;  // 1-based manifest line, 0 when not line-specific
    ErrorCode code = ErrorCode::invalid_record;
    std::string record_id;
    std::string message;
};

enum class Direction { previous, next };

class DataLakeIndex {
public:
    DataLakeIndex() = default;

    std::size_t size() const { return records_.size(); }
    const std::vector<DataLakeRecord>& records() const { return records_; }
    const std::filesystem::path& root() const { return root_; }

    std::map<Modality, std::size_t> modality_counts() const;

    const DataLakeRecord* find(std::string_view record_id) const;
    // Throws Error(unknown_record).
    const DataLakeRecord& at(std::string_view record_id) const;

    std::optional<DataLakeRecord> temporal_neighbor(std::string_view record_id,
                                                    Direction direction) const;
    std::vector<DataLakeRecord> temporal_list(std::string_view record_id) const;
    std::optional<std::pair<DataLakeRecord, double>> nearest_record(
        const GeoPoint& point, const std::set<Modality>& filter) const;
    std::optional<DataLakeRecord> companion(std::string_view record_id) const;

    // Group key used for temporal lookups, empty if the record has none.
    std::string temporal_group_key(const DataLakeRecord& r) const;

    std::filesystem::path resolve(const std::string& relative_path) const {
        return root_ / relative_path;
    }

private:
    friend struct IndexBuilder;

    std::filesystem::path root_;
    std::vector<DataLakeRecord> records_;  // sorted by record_id
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::vector<std::size_t>> groups_;  // ascending time
};

struct BuildResult {
    DataLakeIndex index;
    std::vector<Violation> violations;
    std::size_t lines_read = 0;
};

// Builds the in-memory index from records. Invariant violations are
// collected and the offending records dropped.
BuildResult build_index(std::vector<DataLakeRecord> records, std::filesystem::path root,
                        std::vector<Violation> parse_violations = {});

// Reads a JSON-lines manifest. An optional first line {"manifest_version":1,
// "root":"..."} declares the path root relative to the manifest directory.
// Throws Error(unreadable_manifest) if the file cannot be opened.
BuildResult build_index(const std::filesystem::path& manifest_path);

void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<DataLakeRecord>& records, const std::string& root = ".");

}  // namespace eogym
