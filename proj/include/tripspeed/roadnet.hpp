#pragma once

#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tripspeed/geo.hpp"
#include "tripspeed/ingest.hpp"

namespace tripspeed {

enum class ContextClass : std::uint8_t { C1, C2, C3C, C3R, C4, Other };
enum class LandUse : std::uint8_t { Residential, Commercial, Industrial, Institutional, Other };

inline constexpr std::size_t kContextClassCount = 6;
inline constexpr std::size_t kLandUseCount = 5;

std::string_view to_string(ContextClass c);
std::string_view to_string(LandUse l);
/// Case-insensitive; unknown strings map to Other and set `known` to false.
ContextClass parse_context(std::string_view s, bool* known = nullptr);
LandUse parse_land_use(std::string_view s, bool* known = nullptr);

struct RoadSegment {
  std::string id;
  std::vector<geo::LatLon> polyline;  // >= 2 vertices
  double speed_limit_mph = 0.0;       // > 0
  ContextClass context = ContextClass::Other;
  LandUse land_use = LandUse::Other;
  std::string functional_class;
  std::map<std::string, std::string> extra;  // lanes, median width, ...
};

struct Intersection {
  std::string id;
  geo::LatLon location;
  bool signalized = false;
};

struct NetworkLoadReport {
  std::size_t segments = 0;
  std::size_t intersections = 0;
  std::size_t rejected_missing_speed_limit = 0;
  std::size_t unknown_context = 0;
  std::size_t unknown_land_use = 0;
  std::size_t ignored_features = 0;

  nlohmann::json to_json() const;
};

struct Network {
  std::vector<RoadSegment> segments;
  std::vector<Intersection> intersections;
  NetworkLoadReport report;
};

/// Property names for the GeoJSON profile.
struct NetworkSchema {
  std::string id = "id";
  std::string speed_limit = "speed_limit";
  std::string context_class = "context_class";
  std::string land_use = "land_use";
  std::string functional_class = "functional_class";
  std::string signalized = "signalized";
};

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Network load_network(std::istream& in, const NetworkSchema& schema = {});
Network load_network_file(const std::string& path, const NetworkSchema& schema = {});
nlohmann::json network_to_geojson(const Network& net, const NetworkSchema& schema = {});

struct SegmentCandidate {
  std::uint32_t segment = 0;
  double distance_m = 0.0;
  double bearing_deg = 0.0;  // bearing of the closest polyline edge
};

struct IntersectionHit {
  std::uint32_t intersection = 0;
  double distance_m = 0.0;
};

/// Immutable spatial index over segment edges and intersection points in a
/// local metric projection. Safe to share across threads. The network must
/// outlive the index.
class NetworkIndex {
 public:
  explicit NetworkIndex(const Network& net);
  ~NetworkIndex();
  NetworkIndex(NetworkIndex&&) noexcept;
  NetworkIndex& operator=(NetworkIndex&&) noexcept;

  /// All segments with distance <= radius, one entry per segment, ordered by
  /// segment index.
  std::vector<SegmentCandidate> segments_within(geo::XY p, double radius_m) const;
  std::vector<IntersectionHit> intersections_within(geo::XY p, double radius_m) const;

  const Network& network() const { return *net_; }
  const geo::LocalProjection& projection() const { return proj_; }

 private:
  struct Impl;
  const Network* net_;
  geo::LocalProjection proj_;
  std::unique_ptr<Impl> impl_;
};

NetworkIndex build_index(const Network& net);

struct MatchParams {
  double match_radius_m = 30.0;
  double heading_tol_deg = 45.0;
  double intersection_radius_m = 50.0;
};

inline constexpr double kInfDistance = std::numeric_limits<double>::infinity();

struct PointMatch {
  std::optional<std::uint32_t> segment;
  double distance_m = kInfDistance;
  double heading_deviation_deg = 0.0;
  double nearest_signalized_m = kInfDistance;
  double nearest_unsignalized_m = kInfDistance;
  std::vector<std::uint32_t> signalized_within;  // intersection indices, ascending
};

PointMatch match_point(const GpsPoint& p, const NetworkIndex& index, const MatchParams& params = {});

struct MatchedPoint {
  GpsPoint point;
  PointMatch match;
  double speed_limit_mph = 0.0;  // 0 when unmatched
  ContextClass context = ContextClass::Other;
  LandUse land_use = LandUse::Other;

  bool matched() const { return match.segment.has_value(); }
};

struct MatchedJourney {
  std::string journey_id;
  std::vector<MatchedPoint> points;
  double coverage = 0.0;
  bool low_coverage = false;
};

MatchedJourney enrich_journey(const Journey& journey, const NetworkIndex& index,
                              const MatchParams& params = {}, double min_coverage = 0.5);

/// CSV of enriched points, one row per point.
void write_enriched_header(std::ostream& out);
void write_enriched_csv(std::ostream& out, const MatchedJourney& mj, const Network& net);
/// Reads enriched points back; segment ids resolve against `net`.
std::vector<MatchedJourney> read_enriched_csv(std::istream& in, const Network& net,
                                              double min_coverage = 0.5);

}  // namespace tripspeed
