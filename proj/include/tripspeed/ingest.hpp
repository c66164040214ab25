#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace tripspeed {

struct GpsPoint {
  std::string journey_id;
  std::string point_id;
  std::int64_t timestamp = 0;  // seconds since epoch
  double lat = 0.0;
  double lon = 0.0;
  double speed_mph = 0.0;
  double heading_deg = 0.0;
  std::string postal_code;  // optional pass-through
};

bool operator==(const GpsPoint& a, const GpsPoint& b);

struct Journey {
  std::string journey_id;
  std::vector<GpsPoint> points;  // strictly increasing timestamps

  std::int64_t start_time() const { return points.empty() ? 0 : points.front().timestamp; }
  std::int64_t end_time() const { return points.empty() ? 0 : points.back().timestamp; }
};

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InputFormat { Auto, Csv, Ndjson };

/// Column (CSV) or key (NDJSON) names for each point field. Defaults follow
/// the probe-vehicle export naming.
struct SchemaConfig {
  InputFormat format = InputFormat::Auto;
  char delimiter = ',';
  std::string journey_id = "journeyId";
  std::string point_id = "dataPointId";
  std::string timestamp = "timestamp";
  std::string lat = "latitude";
  std::string lon = "longitude";
  std::string speed = "speed";
  std::string heading = "heading";
  std::string postal_code = "postalCode";  // optional column
};

struct ParseReport {
  static constexpr std::size_t kMaxRecordedLines = 100;

  std::size_t lines_read = 0;  // data lines, header excluded
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<std::size_t> first_rejected_lines;  // 1-based file line numbers
  std::map<std::string, std::size_t> reasons;

  void reject(std::size_t line_no, const std::string& reason);
  void merge(const ParseReport& other);
  nlohmann::json to_json() const;
};

/// Streaming reader over a CSV or NDJSON point file. Malformed records are
/// skipped and counted; an unreadable stream throws IngestError.
class PointReader {
 public:
  PointReader(std::istream& in, SchemaConfig schema);

  /// Returns false at end of stream.
  bool next(GpsPoint& out);

  const ParseReport& report() const { return report_; }
  InputFormat format() const { return format_; }

 private:
  bool parse_csv(std::string_view line, GpsPoint& out, std::string& reason);
  bool parse_ndjson(std::string_view line, GpsPoint& out, std::string& reason);
  void read_header(std::string_view line);

  std::istream& in_;
  SchemaConfig schema_;
  InputFormat format_;
  ParseReport report_;
  std::size_t line_no_ = 0;
  std::string line_;
  std::vector<std::string_view> fields_;
  int col_journey_ = -1, col_point_ = -1, col_ts_ = -1, col_lat_ = -1, col_lon_ = -1,
      col_speed_ = -1, col_heading_ = -1, col_postal_ = -1;
  std::size_t n_columns_ = 0;
};

/// Field-level validation shared by both formats. Returns an empty string for
/// a valid point, otherwise the reject reason.
std::string check_point(const GpsPoint& p);

/// Reads a whole stream; convenience over PointReader.
std::vector<GpsPoint> parse_points(std::istream& in, const SchemaConfig& schema,
                                   ParseReport* report = nullptr);

/// Splits one CSV line honoring double quotes. Views point into `line`.
void split_csv_line(std::string_view line, char delim, std::vector<std::string_view>& out);

struct GroupingParams {
  std::int64_t gap_split_s = 600;
  /// A journey is closed once this many further points have arrived without
  /// one of its own. Points for a journey must arrive within this window.
  std::size_t window_points = 200000;
};

struct GroupReport {
  std::size_t points_in = 0;
  std::size_t duplicates_collapsed = 0;
  std::size_t late_points = 0;  // arrived after their journey was closed
  std::size_t gap_splits = 0;
  std::size_t journeys_out = 0;
  std::size_t dropped_short = 0;  // fewer than 2 points
  std::size_t points_dropped_short = 0;

  nlohmann::json to_json() const;
};

/// Streaming journey grouper. Memory is bounded by the open journeys inside
/// the window. Emitted batches are ordered by (first timestamp, journey id).
class JourneyGrouper {
 public:
  explicit JourneyGrouper(GroupingParams params = {});

  void add(GpsPoint p);
  /// Moves journeys that fell out of the window into `out`.
  void drain_ready(std::vector<Journey>& out);
  /// Closes every open journey.
  void finish(std::vector<Journey>& out);

  const GroupReport& report() const { return report_; }
  std::size_t open_journeys() const { return open_.size(); }

 private:
  struct Open {
    std::vector<GpsPoint> points;
    std::size_t last_seen = 0;
  };
  void close(std::string id, Open&& o, std::vector<Journey>& out);
  void flush_before(std::size_t seq, std::vector<Journey>& out);

  GroupingParams params_;
  GroupReport report_;
  std::unordered_map<std::string, Open> open_;
  std::unordered_set<std::uint64_t> closed_ids_;
  std::size_t seq_ = 0;
  std::size_t next_sweep_ = 0;
};

/// In-memory grouping: sort, collapse duplicate timestamps (keep first),
/// split on gaps > gap_split_s, drop journeys with < 2 points.
std::vector<Journey> group_journeys(std::vector<GpsPoint> points, const GroupingParams& params = {},
                                    GroupReport* report = nullptr);

struct ValidationParams {
  std::size_t min_points = 5;
  std::int64_t min_duration_s = 30;
  double max_implied_speed_mph = 250.0;
};

enum class JourneyReject { None, TooFewPoints, TooShort };

std::string_view to_string(JourneyReject r);

struct ValidationResult {
  std::optional<Journey> journey;
  JourneyReject reason = JourneyReject::None;
  std::size_t teleports_removed = 0;
};

ValidationResult validate_journey(Journey journey, const ValidationParams& params = {});

/// Orders journeys by (first timestamp, journey id).
void sort_journeys(std::vector<Journey>& journeys);

/// Writes points grouped by journey in the default CSV schema.
void write_journeys_csv(std::ostream& out, const std::vector<Journey>& journeys,
                        bool header = true);

}  // namespace tripspeed
