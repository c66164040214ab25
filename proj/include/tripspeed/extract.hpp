#pragma once

#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tripspeed/features.hpp"
#include "tripspeed/hotspot.hpp"
#include "tripspeed/ingest.hpp"
#include "tripspeed/kinematics.hpp"
#include "tripspeed/roadnet.hpp"

namespace tripspeed {

/// Every threshold of the point-to-feature path in one place.
struct ExtractParams {
  SchemaConfig schema;
  GroupingParams grouping;
  ValidationParams validation;
  MatchParams match;
  double min_coverage = 0.5;
  KinematicsParams kinematics;
  FeatureParams features;
  HotspotStatistic hotspot_stat = HotspotStatistic::Mean;
  std::size_t batch_journeys = 512;
  int threads = 0;  // 0 = OpenMP default
};

/// Journeys into and out of one stage. out == in - sum(rejected) always.
struct StageCount {
  std::size_t in = 0;
  std::size_t out = 0;
  std::map<std::string, std::size_t> rejected;
  double seconds = 0.0;

  void reject(const std::string& reason, std::size_t n = 1) { rejected[reason] += n; }
  std::size_t rejected_total() const;
  nlohmann::json to_json(bool with_time = true) const;
};

struct ExtractReport {
  ParseReport parse;
  GroupReport group;
  std::size_t teleports_removed = 0;
  StageCount ingest;      // grouped journeys -> validated journeys
  StageCount enrich;      // validated -> sufficiently matched
  StageCount kinematics;  // matched -> with motion intervals
  StageCount features;    // -> feature rows

  nlohmann::json to_json(bool with_time = true) const;
};

/// Result of the per-journey kernel.
struct JourneyOutcome {
  JourneyReject rejected = JourneyReject::None;
  std::size_t teleports_removed = 0;
  std::optional<Journey> journey;        // validated journey
  std::optional<MatchedJourney> matched;
  bool low_coverage = false;
  bool no_intervals = false;
  std::optional<JourneyFeatures> features;
  std::optional<Exclusion> exclusion;
  double seconds[4] = {0, 0, 0, 0};  // validate, enrich, kinematics, features
};

/// validate -> enrich -> kinematics -> aggregate for one journey. With a null
/// index the kernel stops after validation.
JourneyOutcome process_journey(Journey journey, const NetworkIndex* index, const ExtractParams& params);

struct ExtractSinks {
  std::function<void(const Journey&)> on_journey;           // validated journeys
  std::function<void(const MatchedJourney&)> on_enriched;   // enriched journeys
  std::function<void(const JourneyFeatures&)> on_features;  // feature rows
};

struct ExtractResult {
  ExtractReport report;
  SegmentAggregator segments;
};

/// Streaming ingest through features. Journeys are processed in batches; the
/// per-journey kernel runs in parallel, everything order-dependent (sinks,
/// counters, hotspot sums) runs serially in emission order, so outputs do not
/// depend on the worker count.
ExtractResult extract_parallel(std::istream& points, const NetworkIndex* index, const ExtractParams& params,
                               const ExtractSinks& sinks = {});
/// Same pipeline on one thread without OpenMP.
ExtractResult extract_serial(std::istream& points, const NetworkIndex* index, const ExtractParams& params,
                             const ExtractSinks& sinks = {});

/// Kinematics and features for already enriched journeys.
std::vector<JourneyFeatures> features_from_enriched(const std::vector<MatchedJourney>& journeys,
                                                    const ExtractParams& params, ExtractReport* report = nullptr);

}  // namespace tripspeed
