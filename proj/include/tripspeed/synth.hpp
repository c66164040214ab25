#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tripspeed/features.hpp"
#include "tripspeed/ingest.hpp"
#include "tripspeed/roadnet.hpp"

namespace tripspeed {

/// Seeded grid-city generator. Every journey is simulated independently from
/// mix_seed(seed, index), so any journey can be regenerated on its own.
struct SynthConfig {
  std::size_t n_journeys = 10000;
  int grid_size = 12;         // nodes per side
  double spacing_m = 600.0;   // block length
  geo::LatLon origin{28.70, -81.35};
  std::uint64_t seed = 1;
  /// Relative weights of the target speeding level drawn per journey.
  std::array<double, kNumLevels> behavior_mix = {0.12, 0.28, 0.36, 0.15, 0.06, 0.03};
  int min_segments = 3;
  int max_segments = 8;
  double stop_prob_signalized = 0.6;
  double stop_prob_unsignalized = 0.3;
  double midblock_stop_prob = 0.04;  // per segment
  int max_dwell_samples = 12;
  double speed_noise_mph = 1.0;
  double heading_noise_deg = 1.0;
  double max_speed_mph = 90.0;
  int year_min = 2019;
  int year_max = 2021;
  int utc_offset_minutes = -300;
  std::size_t corrupt_lines = 0;  // extra invalid lines spread through the file
  std::size_t interleave = 4;     // journeys written round-robin

  static SynthConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// One emitted fix with the generator-side state it came from.
struct SimSample {
  std::int64_t t = 0;
  double u = 0.0;  // arc position along the route (m), after nudging
  double speed_mph = 0.0;
  double heading_deg = 0.0;
  std::uint32_t segment = 0;
  double limit_mph = 0.0;
  int near_node = -1;  // node within the intersection radius, -1 if none
};

struct SimJourney {
  Journey journey;
  std::vector<SimSample> samples;
  JourneyFeatures truth;
  int target_level = 0;
  std::size_t turns = 0;
};

struct SegmentTruth {
  std::string segment_id;
  std::size_t point_count = 0;
  double mean_speeding_prop = 0.0;  // mean of max(0, y)
};

class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SynthConfig config);

  const Network& network() const { return net_; }
  const SynthConfig& config() const { return cfg_; }
  SimJourney simulate(std::size_t index) const;

  static constexpr double kIntersectionRadiusM = 50.0;
  static constexpr int kSampleSeconds = 3;

 private:
  struct Node {
    geo::XY xy;
    bool signalized = false;
  };
  int node_at(int col, int row) const { return row * cfg_.grid_size + col; }
  std::uint32_t segment_between(int a, int b) const;

  SynthConfig cfg_;
  Network net_;
  geo::LocalProjection proj_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> h_seg_, v_seg_;  // by lower-left node
};

struct SyntheticTruth {
  std::vector<JourneyFeatures> journeys;  // ordered by journey id
  std::vector<SegmentTruth> segments;     // ordered by segment id, only segments with points
  std::size_t total_points = 0;
  std::size_t corrupt_lines = 0;
  std::array<std::size_t, kNumLevels> level_histogram{};

  std::size_t hotspot_count(std::size_t min_points) const;
};

struct SyntheticBundle {
  std::filesystem::path network, points, truth_features, truth_segments;
  SyntheticTruth truth;
};

/// Writes network.geojson, points.csv, truth_features.csv and
/// truth_segments.csv into `dir`.
SyntheticBundle generate_synthetic(const SynthConfig& config, const std::filesystem::path& dir);

void write_segment_truth_csv(std::ostream& out, const std::vector<SegmentTruth>& rows);
std::vector<SegmentTruth> read_segment_truth_csv(std::istream& in);

}  // namespace tripspeed
