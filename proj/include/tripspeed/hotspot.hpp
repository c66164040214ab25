#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tripspeed/features.hpp"
#include "tripspeed/roadnet.hpp"

namespace tripspeed {

enum class HotspotStatistic { Mean, P85 };

struct HotspotParams {
  std::size_t min_points = 1000;
  HotspotStatistic statistic = HotspotStatistic::Mean;
};

/// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v);
  void merge(const CompensatedSum& o);
  double value() const { return sum + comp; }
};

struct SegmentStats {
  std::uint32_t segment = 0;
  std::size_t point_count = 0;
  double mean_speeding = 0.0;  // mean of max(0, y)
  double p85_speeding = 0.0;   // only filled for HotspotStatistic::P85
  std::array<double, kNumLevels> bin_shares{};
  int dominant_bin = 0;

  double statistic(HotspotStatistic s) const { return s == HotspotStatistic::Mean ? mean_speeding : p85_speeding; }
};

/// Streaming per-segment accumulator. Order-independent: counts are exact,
/// sums are compensated. Partial aggregators merge by segment key.
class SegmentAggregator {
 public:
  explicit SegmentAggregator(std::size_t n_segments = 0, HotspotStatistic stat = HotspotStatistic::Mean);

  void add(std::uint32_t segment, double speeding_prop);
  void add_unmatched() { ++skipped_unmatched_; }
  void add_journey(const MatchedJourney& journey);
  void merge(const SegmentAggregator& other);

  std::size_t skipped_unmatched() const { return skipped_unmatched_; }
  std::size_t total_points() const;
  /// Segments with at least one point, ordered by segment index.
  std::vector<SegmentStats> finalize() const;

 private:
  struct Acc {
    std::size_t count = 0;
    CompensatedSum sum;
    std::array<std::size_t, kNumLevels> bins{};
    std::vector<double> values;
  };
  void ensure(std::uint32_t segment);

  HotspotStatistic stat_;
  std::vector<Acc> acc_;
  std::size_t skipped_unmatched_ = 0;
};

std::vector<SegmentStats> aggregate_segments(std::span<const MatchedJourney> journeys, std::size_t n_segments,
                                             HotspotStatistic stat = HotspotStatistic::Mean,
                                             std::size_t* skipped_unmatched = nullptr);

std::vector<SegmentStats> filter_hotspots(const std::vector<SegmentStats>& stats, std::size_t min_points);

/// FeatureCollection of hotspot LineStrings ordered by segment id. Throws
/// NetworkError when a stat references a segment outside the network.
nlohmann::json emit_geojson(const std::vector<SegmentStats>& filtered, const Network& net,
                            HotspotStatistic stat = HotspotStatistic::Mean);
void emit_hotspot_csv(std::ostream& out, const std::vector<SegmentStats>& filtered, const Network& net);

}  // namespace tripspeed
