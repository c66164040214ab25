#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "tripspeed/extract.hpp"
#include "tripspeed/synth.hpp"
#include "tripspeed/util.hpp"

using namespace tripspeed;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Integer-valued fields must match exactly; everything else within 1e-9,
// relative for magnitudes above one.
void expect_features_match(const JourneyFeatures& got, const JourneyFeatures& want) {
  const auto& names = JourneyFeatures::column_names();
  for (std::size_t c = 0; c < JourneyFeatures::kNumericFields; ++c) {
    const double g = got.get(c), w = want.get(c);
    if (std::floor(w) == w && std::fabs(w) < 1e6 && std::floor(g) == g) {
      EXPECT_EQ(g, w) << want.journey_id << ' ' << names[c];
    } else {
      EXPECT_LE(std::fabs(g - w), 1e-9 * std::max(1.0, std::fabs(w))) << want.journey_id << ' ' << names[c];
    }
  }
  EXPECT_EQ(got.speeding_level, want.speeding_level) << want.journey_id;
}

struct Recovered {
  std::vector<JourneyFeatures> rows;
  ExtractResult result;
};

Recovered run_extract(const SyntheticBundle& b, bool parallel) {
  const Network net = load_network_file(b.network.string());
  const NetworkIndex idx(net);
  std::ifstream in(b.points, std::ios::binary);
  Recovered r;
  ExtractSinks sinks;
  sinks.on_features = [&](const JourneyFeatures& f) { r.rows.push_back(f); };
  ExtractParams params;
  r.result = parallel ? extract_parallel(in, &idx, params, sinks) : extract_serial(in, &idx, params, sinks);
  std::sort(r.rows.begin(), r.rows.end(),
            [](const JourneyFeatures& a, const JourneyFeatures& c) { return a.journey_id < c.journey_id; });
  return r;
}

}  // namespace

TEST(Synth, SeedFixesEveryByte) {
  SynthConfig c;
  c.n_journeys = 40;
  const auto d1 = fixtures::temp_dir("synth_a"), d2 = fixtures::temp_dir("synth_b");
  const auto a = generate_synthetic(c, d1), b = generate_synthetic(c, d2);
  for (const char* f : {"network.geojson", "points.csv", "truth_features.csv", "truth_segments.csv"})
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  c.seed = 2;
  generate_synthetic(c, d2);
  EXPECT_NE(slurp(d1 / "points.csv"), slurp(d2 / "points.csv"));
}

TEST(Synth, PipelineRecoversTruthExactly) {
  SynthConfig c;
  c.n_journeys = 400;
  c.grid_size = 8;
  const auto b = generate_synthetic(c, fixtures::temp_dir("synth_rec"));
  const auto r = run_extract(b, false);
  ASSERT_EQ(r.rows.size(), b.truth.journeys.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    ASSERT_EQ(r.rows[i].journey_id, b.truth.journeys[i].journey_id);
    expect_features_match(r.rows[i], b.truth.journeys[i]);
  }
  EXPECT_EQ(r.result.report.parse.rejected, 0u);
  EXPECT_EQ(r.result.report.parse.accepted, b.truth.total_points);
}

TEST(Synth, SegmentTruthMatchesAggregation) {
  SynthConfig c;
  c.n_journeys = 300;
  c.grid_size = 6;
  const auto b = generate_synthetic(c, fixtures::temp_dir("synth_seg"));
  const auto r = run_extract(b, false);
  const Network net = load_network_file(b.network.string());
  const auto stats = r.result.segments.finalize();
  ASSERT_EQ(stats.size(), b.truth.segments.size());
  std::map<std::string, SegmentStats> by_id;
  for (const auto& s : stats) by_id[net.segments[s.segment].id] = s;
  for (const auto& t : b.truth.segments) {
    ASSERT_TRUE(by_id.count(t.segment_id)) << t.segment_id;
    EXPECT_EQ(by_id[t.segment_id].point_count, t.point_count) << t.segment_id;
    EXPECT_NEAR(by_id[t.segment_id].mean_speeding, t.mean_speeding_prop, 1e-9) << t.segment_id;
  }
  EXPECT_EQ(r.result.segments.skipped_unmatched(), 0u);
  EXPECT_EQ(filter_hotspots(stats, 200).size(), b.truth.hotspot_count(200));
}

TEST(Synth, SingleSegmentLevelOneJourney) {
  SynthConfig c;
  c.n_journeys = 1;
  c.min_segments = c.max_segments = 1;
  c.behavior_mix = {0, 1, 0, 0, 0, 0};
  c.speed_noise_mph = 0.0;
  c.midblock_stop_prob = 0.0;
  const auto b = generate_synthetic(c, fixtures::temp_dir("synth_one"));
  ASSERT_EQ(b.truth.journeys.size(), 1u);
  EXPECT_EQ(b.truth.journeys[0].speeding_level, 1);
  const auto r = run_extract(b, false);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].speeding_level, 1);
  EXPECT_EQ(r.rows[0].turn_sum, 0.0);
}

TEST(Synth, UniformMixCoversEveryLevel) {
  SynthConfig c;
  c.n_journeys = 600;
  c.behavior_mix = {1, 1, 1, 1, 1, 1};
  const auto b = generate_synthetic(c, fixtures::temp_dir("synth_mix"));
  for (int k = 0; k < kNumLevels; ++k) EXPECT_GT(b.truth.level_histogram[static_cast<std::size_t>(k)], 0u) << k;
}

TEST(Synth, CorruptLinesAreRejectedNotAbsorbed) {
  SynthConfig c;
  c.n_journeys = 50;
  c.corrupt_lines = 10;
  const auto b = generate_synthetic(c, fixtures::temp_dir("synth_bad"));
  const auto r = run_extract(b, false);
  EXPECT_EQ(r.result.report.parse.rejected, 10u);
  EXPECT_EQ(r.result.report.parse.accepted, b.truth.total_points);
  EXPECT_EQ(r.rows.size(), 50u);
}

TEST(Synth, SerialAndParallelAgree) {
  SynthConfig c;
  c.n_journeys = 200;
  const auto b = generate_synthetic(c, fixtures::temp_dir("synth_par"));
  const auto s = run_extract(b, false), p = run_extract(b, true);
  std::ostringstream a, z;
  write_features_csv(a, s.rows);
  write_features_csv(z, p.rows);
  EXPECT_EQ(a.str(), z.str());
  EXPECT_EQ(s.result.report.to_json(false), p.result.report.to_json(false));
}

TEST(Synth, BadConfigIsRejected) {
  SynthConfig c;
  c.max_speed_mph = 150;
  EXPECT_THROW(SyntheticGenerator{c}, std::invalid_argument);
  c = {};
  c.behavior_mix = {0, 0, 0, 0, 0, 0};
  EXPECT_THROW(SyntheticGenerator{c}, std::invalid_argument);
}
