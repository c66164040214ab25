#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "tripspeed/geo.hpp"
#include "tripspeed/ingest.hpp"

using namespace tripspeed;

namespace {

const char* kHeader = "journeyId,dataPointId,timestamp,latitude,longitude,speed,heading,postalCode\n";

GpsPoint pt(const std::string& jid, std::int64_t t, double lat = 28.7, double lon = -81.3, double speed = 30.0,
            double heading = 90.0) {
  GpsPoint p;
  p.journey_id = jid;
  p.point_id = jid + "-" + std::to_string(t);
  p.timestamp = t;
  p.lat = lat;
  p.lon = lon;
  p.speed_mph = speed;
  p.heading_deg = heading;
  return p;
}

// Eastward fixes every 3 s at the given speed.
Journey moving_journey(const std::string& jid, std::size_t n, double speed_mph) {
  Journey j;
  j.journey_id = jid;
  const geo::LocalProjection proj({28.7, -81.3});
  for (std::size_t i = 0; i < n; ++i) {
    const auto ll = proj.to_latlon({static_cast<double>(i) * 3.0 * speed_mph * geo::kMphToMps, 0.0});
    j.points.push_back(pt(jid, 1600000000 + 3 * static_cast<std::int64_t>(i), ll.lat, ll.lon, speed_mph));
  }
  return j;
}

}  // namespace

TEST(Parse, ValidLineRoundTripsEveryField) {
  std::istringstream in(std::string(kHeader) + "J1,P7,1600000000,28.123456,-81.654321,42.5,359.5,32789\n");
  ParseReport rep;
  const auto pts = parse_points(in, {}, &rep);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].journey_id, "J1");
  EXPECT_EQ(pts[0].point_id, "P7");
  EXPECT_EQ(pts[0].timestamp, 1600000000);
  EXPECT_EQ(pts[0].lat, 28.123456);
  EXPECT_EQ(pts[0].lon, -81.654321);
  EXPECT_EQ(pts[0].speed_mph, 42.5);
  EXPECT_EQ(pts[0].heading_deg, 359.5);
  EXPECT_EQ(pts[0].postal_code, "32789");
  EXPECT_EQ(rep.accepted, 1u);
  EXPECT_EQ(rep.rejected, 0u);
}

TEST(Parse, FieldRangeViolationsAreCountedNotFatal) {
  std::string text = kHeader;
  text += "J1,a,100,91,-81,10,0,\n";        // lat
  text += "J1,b,101,28,-181,10,0,\n";       // lon
  text += "J1,c,102,28,-81,-1,0,\n";        // speed
  text += "J1,d,103,28,-81,10,360,\n";      // heading is [0, 360)
  text += "J1,e,1.5e9,28,-81,10,0,\n";      // not an integer timestamp
  text += "J1,f,104,28,x,10,0,\n";          // number
  text += "J1,g,105,28,-81\n";              // short row
  text += ",h,106,28,-81,10,0,\n";          // journey id
  text += "J1,i,107,28,-81,10,0,\n";        // the one good row
  std::istringstream in(text);
  ParseReport rep;
  const auto pts = parse_points(in, {}, &rep);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].point_id, "i");
  EXPECT_EQ(rep.lines_read, 9u);
  EXPECT_EQ(rep.rejected, 8u);
  EXPECT_EQ(rep.reasons.at("lat_out_of_range"), 1u);
  EXPECT_EQ(rep.reasons.at("lon_out_of_range"), 1u);
  EXPECT_EQ(rep.reasons.at("bad_speed"), 1u);
  EXPECT_EQ(rep.reasons.at("bad_heading"), 1u);
  EXPECT_EQ(rep.reasons.at("bad_timestamp"), 1u);
  EXPECT_EQ(rep.reasons.at("unparsable_number"), 1u);
  EXPECT_EQ(rep.reasons.at("column_count"), 1u);
  EXPECT_EQ(rep.reasons.at("missing_journey_id"), 1u);
  // file line numbers, header is line 1
  EXPECT_EQ(rep.first_rejected_lines, (std::vector<std::size_t>{2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(Parse, OnlyTheFirstHundredRejectLinesAreKept) {
  std::string text = kHeader;
  for (int i = 0; i < 150; ++i) text += "J1,x,1,95,0,1,1,\n";
  std::istringstream in(text);
  ParseReport rep;
  parse_points(in, {}, &rep);
  EXPECT_EQ(rep.rejected, 150u);
  ASSERT_EQ(rep.first_rejected_lines.size(), ParseReport::kMaxRecordedLines);
  EXPECT_EQ(rep.first_rejected_lines.back(), 101u);
}

TEST(Parse, NdjsonAndCsvAgree) {
  std::istringstream csv(std::string(kHeader) + "J1,P1,100,28.5,-81.5,12,45,\nJ1,P2,103,28.6,-81.4,13,46,\n");
  std::istringstream nd(
      "{\"journeyId\":\"J1\",\"dataPointId\":\"P1\",\"timestamp\":100,\"latitude\":28.5,\"longitude\":-81.5,"
      "\"speed\":12,\"heading\":45}\n"
      "{\"journeyId\":\"J1\",\"dataPointId\":\"P2\",\"timestamp\":\"103\",\"latitude\":\"28.6\",\"longitude\":-81.4,"
      "\"speed\":13,\"heading\":46}\n"
      "{not json}\n");
  ParseReport rep;
  const auto a = parse_points(csv, {}), b = parse_points(nd, {}, &rep);
  EXPECT_EQ(a, b);
  EXPECT_EQ(rep.reasons.at("malformed_json"), 1u);
}

TEST(Parse, ColumnMappingAndDelimiter) {
  SchemaConfig s;
  s.delimiter = ';';
  s.journey_id = "trip";
  s.timestamp = "ts";
  s.lat = "y";
  s.lon = "x";
  s.speed = "v";
  s.heading = "h";
  std::istringstream in("x;y;trip;ts;v;h\n-81.2;28.1;\"T;9\";55;20;180\n");
  const auto pts = parse_points(in, s);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].journey_id, "T;9");
  EXPECT_EQ(pts[0].lon, -81.2);
  EXPECT_EQ(pts[0].point_id, "");
}

TEST(Parse, MissingRequiredColumnIsFatal) {
  std::istringstream in("journeyId,timestamp,latitude,longitude,speed\nJ,1,2,3,4\n");
  EXPECT_THROW(parse_points(in, {}), IngestError);
}

TEST(Group, ShuffledPointsComeOutSorted) {
  std::vector<GpsPoint> pts;
  for (int t : {40, 10, 50, 20, 30}) pts.push_back(pt("A", t));
  const auto js = group_journeys(pts);
  ASSERT_EQ(js.size(), 1u);
  std::vector<std::int64_t> ts;
  for (const auto& p : js[0].points) ts.push_back(p.timestamp);
  EXPECT_EQ(ts, (std::vector<std::int64_t>{10, 20, 30, 40, 50}));
}

TEST(Group, GapLongerThanThresholdSplits) {
  std::vector<GpsPoint> pts;
  for (int t : {0, 3, 6, 706, 709, 712}) pts.push_back(pt("A", t));
  GroupReport rep;
  const auto js = group_journeys(pts, {600, 1000}, &rep);
  ASSERT_EQ(js.size(), 2u);
  EXPECT_EQ(js[0].journey_id, "A");
  EXPECT_EQ(js[1].journey_id, "A#1");
  EXPECT_EQ(js[1].points.front().timestamp, 706);
  EXPECT_EQ(rep.gap_splits, 1u);
  // exactly the threshold does not split
  pts = {pt("B", 0), pt("B", 600), pt("B", 603)};
  EXPECT_EQ(group_journeys(pts, {600, 1000}).size(), 1u);
}

TEST(Group, DuplicateTimestampKeepsFirstArrival) {
  auto a = pt("A", 10), b = pt("A", 10), c = pt("A", 13);
  a.point_id = "first";
  b.point_id = "second";
  GroupReport rep;
  const auto js = group_journeys({c, a, b}, {}, &rep);
  ASSERT_EQ(js.size(), 1u);
  ASSERT_EQ(js[0].points.size(), 2u);
  EXPECT_EQ(js[0].points[0].point_id, "first");
  EXPECT_EQ(rep.duplicates_collapsed, 1u);
}

TEST(Group, InterleavedIdsPartitionExactly) {
  std::mt19937_64 rng(3);
  std::vector<GpsPoint> pts;
  for (int j = 0; j < 20; ++j)
    for (int t = 0; t < 15; ++t) pts.push_back(pt("J" + std::to_string(j), 1000 + 3 * t + j));
  std::shuffle(pts.begin(), pts.end(), rng);
  const auto js = group_journeys(pts);
  ASSERT_EQ(js.size(), 20u);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (std::size_t i = 0; i < js.size(); ++i) {
    for (const auto& p : js[i].points) EXPECT_EQ(p.journey_id, js[i].journey_id);
    for (std::size_t k = 1; k < js[i].points.size(); ++k)
      EXPECT_LT(js[i].points[k - 1].timestamp, js[i].points[k].timestamp);
    total += js[i].points.size();
    seen.insert(js[i].journey_id);
    // ordered by first timestamp, then id
    if (i) EXPECT_LE(js[i - 1].start_time(), js[i].start_time());
  }
  EXPECT_EQ(total, pts.size());
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Group, SinglePointJourneyIsDroppedAndCounted) {
  GroupReport rep;
  const auto js = group_journeys({pt("A", 1), pt("B", 1), pt("B", 4)}, {}, &rep);
  ASSERT_EQ(js.size(), 1u);
  EXPECT_EQ(js[0].journey_id, "B");
  EXPECT_EQ(rep.dropped_short, 1u);
  EXPECT_EQ(rep.points_dropped_short, 1u);
}

TEST(Group, StreamingMatchesInMemoryWithinTheWindow) {
  std::vector<GpsPoint> pts;
  for (int j = 0; j < 60; ++j)
    for (int t = 0; t < 10; ++t) pts.push_back(pt("J" + std::to_string(j), 10 * j + 3 * t));
  const auto whole = group_journeys(pts);

  JourneyGrouper g({600, 25});
  std::vector<Journey> streamed;
  for (const auto& p : pts) {
    g.add(p);
    g.drain_ready(streamed);
    EXPECT_LE(g.open_journeys(), 8u);  // bounded by the window, not the file
  }
  g.finish(streamed);
  ASSERT_EQ(streamed.size(), whole.size());
  std::sort(streamed.begin(), streamed.end(),
            [](const Journey& a, const Journey& b) { return a.journey_id < b.journey_id; });
  auto sorted = whole;
  std::sort(sorted.begin(), sorted.end(), [](const Journey& a, const Journey& b) { return a.journey_id < b.journey_id; });
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(streamed[i].points, sorted[i].points);
}

TEST(Group, LatePointsAfterCloseAreCounted) {
  JourneyGrouper g({600, 2});
  std::vector<Journey> out;
  for (auto p : {pt("A", 0), pt("A", 3), pt("B", 0), pt("B", 3), pt("C", 0), pt("C", 3)}) {
    g.add(p);
    g.drain_ready(out);
  }
  g.add(pt("A", 6));
  g.finish(out);
  EXPECT_EQ(g.report().late_points, 1u);
  EXPECT_EQ(out.size(), 3u);
}

TEST(Validate, TooFewPoints) {
  Journey j = moving_journey("A", 3, 30);
  const auto r = validate_journey(j, {});
  EXPECT_FALSE(r.journey);
  EXPECT_EQ(r.reason, JourneyReject::TooFewPoints);
  EXPECT_EQ(to_string(r.reason), "too_few_points");
}

TEST(Validate, TooShortDuration) {
  const auto r = validate_journey(moving_journey("A", 6, 30), {5, 30, 250});  // 15 s
  EXPECT_EQ(r.reason, JourneyReject::TooShort);
  EXPECT_TRUE(validate_journey(moving_journey("A", 11, 30), {5, 30, 250}).journey);  // exactly 30 s
}

TEST(Validate, TeleportInTheMiddleIsDropped) {
  Journey j = moving_journey("A", 20, 30);
  // 5 km sideways in 3 s, about 3700 mph
  const geo::LocalProjection proj({28.7, -81.3});
  const auto far = proj.to_latlon({10 * 3.0 * 30 * geo::kMphToMps, 5000.0});
  j.points[10].lat = far.lat;
  j.points[10].lon = far.lon;
  const auto r = validate_journey(j, {});
  ASSERT_TRUE(r.journey);
  EXPECT_EQ(r.teleports_removed, 1u);
  EXPECT_EQ(r.journey->points.size(), 19u);
  for (const auto& p : r.journey->points) EXPECT_NE(p.timestamp, j.points[10].timestamp);
}

TEST(Validate, LeadingAndTrailingTeleports) {
  Journey j = moving_journey("A", 20, 30);
  const geo::LocalProjection proj({28.7, -81.3});
  const auto far = proj.to_latlon({0, -8000.0});
  j.points.front().lat = far.lat;
  j.points.front().lon = far.lon;
  j.points.back().lat = far.lat;
  j.points.back().lon = far.lon;
  const auto r = validate_journey(j, {});
  ASSERT_TRUE(r.journey);
  EXPECT_EQ(r.teleports_removed, 2u);
  EXPECT_EQ(r.journey->points.front().timestamp, j.points[1].timestamp);
  EXPECT_EQ(r.journey->points.back().timestamp, j.points[18].timestamp);
}

TEST(Validate, CleanJourneyIsUnchanged) {
  const Journey j = moving_journey("A", 100, 45);
  const auto r = validate_journey(j, {});
  ASSERT_TRUE(r.journey);
  EXPECT_EQ(r.teleports_removed, 0u);
  EXPECT_EQ(r.journey->points, j.points);
}

TEST(Journeys, CsvRoundTrip) {
  const Journey j = moving_journey("A", 7, 25);
  std::ostringstream out;
  write_journeys_csv(out, {j});
  std::istringstream in(out.str());
  const auto back = parse_points(in, {});
  EXPECT_EQ(back, j.points);
}
