#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "tripspeed/hotspot.hpp"
#include "tripspeed/util.hpp"

using namespace tripspeed;

namespace {

Network two_segments() {
  Network net = fixtures::straight_road();
  RoadSegment s = net.segments.front();
  s.id = "a-second";
  for (auto& v : s.polyline) v.lat += 0.01;
  net.segments.push_back(s);
  net.segments.front().id = "z-first";
  return net;
}

}  // namespace

TEST(Hotspot, UniformSegmentLandsInOneBin) {
  SegmentAggregator agg(1);
  for (int i = 0; i < 10; ++i) agg.add(0, 0.3);
  const auto s = agg.finalize();
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].point_count, 10u);
  EXPECT_NEAR(s[0].mean_speeding, 0.3, 1e-15);
  EXPECT_EQ(s[0].bin_shares[2], 1.0);
  EXPECT_EQ(s[0].dominant_bin, 2);
}

TEST(Hotspot, NegativeSpeedingFloorsAtZero) {
  SegmentAggregator agg(1);
  agg.add(0, -0.5);
  agg.add(0, 0.5);
  const auto s = agg.finalize();
  EXPECT_DOUBLE_EQ(s[0].mean_speeding, 0.25);
  EXPECT_EQ(s[0].bin_shares[0], 0.5);
  EXPECT_EQ(s[0].bin_shares[3], 0.5);
}

TEST(Hotspot, ThresholdBoundary) {
  SegmentAggregator agg(3);
  for (int i = 0; i < 999; ++i) agg.add(0, 0.1);
  for (int i = 0; i < 1000; ++i) agg.add(1, 0.1);
  for (int i = 0; i < 1001; ++i) agg.add(2, 0.1);
  const auto all = agg.finalize();
  const auto hot = filter_hotspots(all, 1000);
  ASSERT_EQ(hot.size(), 2u);
  EXPECT_EQ(hot[0].segment, 1u);
  EXPECT_EQ(hot[1].segment, 2u);
  EXPECT_EQ(filter_hotspots(all, 0).size(), all.size());
}

TEST(Hotspot, OrderIndependentAndMergeable) {
  std::mt19937_64 rng(12);
  std::vector<std::pair<std::uint32_t, double>> pts;
  for (int i = 0; i < 50000; ++i)
    pts.emplace_back(static_cast<std::uint32_t>(bounded(rng, 7)), 2.0 * uniform01(rng) - 0.5);
  SegmentAggregator a(7), b(7), part1(7), part2(7);
  for (const auto& [s, y] : pts) a.add(s, y);
  auto shuffled = pts;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (const auto& [s, y] : shuffled) b.add(s, y);
  for (std::size_t i = 0; i < shuffled.size(); ++i) (i % 3 ? part1 : part2).add(shuffled[i].first, shuffled[i].second);
  part2.merge(part1);
  const auto ra = a.finalize(), rb = b.finalize(), rc = part2.finalize();
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].point_count, rb[i].point_count);
    EXPECT_EQ(ra[i].point_count, rc[i].point_count);
    EXPECT_NEAR(ra[i].mean_speeding, rb[i].mean_speeding, 1e-12);
    EXPECT_NEAR(ra[i].mean_speeding, rc[i].mean_speeding, 1e-12);
    EXPECT_EQ(ra[i].bin_shares, rb[i].bin_shares);
    double total = 0.0;
    for (double s : ra[i].bin_shares) total += s;
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Hotspot, PointsAreConserved) {
  const Network net = fixtures::straight_road();
  MatchedJourney j;
  for (int i = 0; i < 20; ++i) {
    MatchedPoint p;
    p.point.speed_mph = 30.0 + i;
    if (i % 4 != 0) {
      p.match.segment = 0;
      p.speed_limit_mph = 40.0;
    }
    j.points.push_back(p);
  }
  std::size_t skipped = 0;
  const auto s = aggregate_segments(std::span(&j, 1), net.segments.size(), HotspotStatistic::Mean, &skipped);
  EXPECT_EQ(skipped, 5u);
  EXPECT_EQ(s[0].point_count + skipped, 20u);
  double expect = 0.0;
  for (int i = 0; i < 20; ++i)
    if (i % 4 != 0) expect += std::max(0.0, (30.0 + i - 40.0) / 40.0);
  EXPECT_NEAR(s[0].mean_speeding, expect / 15.0, 1e-15);
}

TEST(Hotspot, NearestRankP85) {
  SegmentAggregator agg(1, HotspotStatistic::P85);
  for (int i = 1; i <= 20; ++i) agg.add(0, i / 100.0);
  // ceil(0.85 * 20) = 17th smallest
  EXPECT_DOUBLE_EQ(agg.finalize()[0].p85_speeding, 0.17);
}

TEST(Hotspot, GeoJsonOrderedBySegmentId) {
  const Network net = two_segments();
  SegmentAggregator agg(2);
  agg.add(0, 0.1);
  agg.add(1, 0.9);
  const auto gj = emit_geojson(agg.finalize(), net);
  ASSERT_EQ(gj["features"].size(), 2u);
  EXPECT_EQ(gj["features"][0]["properties"]["segment_id"], "a-second");
  EXPECT_EQ(gj["features"][0]["properties"]["dominant_bin"], 5);
  EXPECT_EQ(gj["features"][1]["geometry"]["type"], "LineString");
  EXPECT_EQ(gj["features"][1]["geometry"]["coordinates"].size(), net.segments[0].polyline.size());
  EXPECT_EQ(gj["features"][1]["geometry"]["coordinates"][0][0], net.segments[0].polyline[0].lon);

  std::ostringstream csv;
  emit_hotspot_csv(csv, agg.finalize(), net);
  EXPECT_NE(csv.str().find("\na-second,1,0.9,"), std::string::npos);
}

TEST(Hotspot, EmptyAndUnknown) {
  const Network net = fixtures::straight_road();
  const auto gj = emit_geojson({}, net);
  EXPECT_EQ(gj["type"], "FeatureCollection");
  EXPECT_TRUE(gj["features"].empty());
  SegmentStats bogus;
  bogus.segment = 99;
  bogus.point_count = 1;
  EXPECT_THROW(emit_geojson({bogus}, net), NetworkError);
}
