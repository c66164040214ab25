#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "tripspeed/features.hpp"

using namespace tripspeed;

namespace {

struct Fix {
  std::int64_t t;
  double speed;
  bool matched = true;
  double limit = 50;
  LandUse land = LandUse::Residential;
  ContextClass ctx = ContextClass::C3R;
  double sig_m = kInfDistance;
  double heading = 90;
};

MatchedJourney build(const std::vector<Fix>& fixes, const std::string& id = "J") {
  MatchedJourney j;
  j.journey_id = id;
  std::size_t matched = 0;
  for (const auto& f : fixes) {
    MatchedPoint p;
    p.point.journey_id = id;
    p.point.timestamp = f.t;
    p.point.speed_mph = f.speed;
    p.point.heading_deg = f.heading;
    p.match.nearest_signalized_m = f.sig_m;
    if (f.matched) {
      p.match.segment = 0;
      p.speed_limit_mph = f.limit;
      p.land_use = f.land;
      p.context = f.ctx;
      ++matched;
    }
    j.points.push_back(p);
  }
  j.coverage = static_cast<double>(matched) / static_cast<double>(fixes.size());
  j.low_coverage = j.coverage < 0.5;
  return j;
}

AggregateResult run(const MatchedJourney& j, const FeatureParams& fp = {}) {
  const KinematicsParams kp;
  const auto iv = derive_intervals(j, kp);
  return aggregate_journey(j, iv, detect_stops(iv, j.points, kp), detect_turns(iv, kp), fp);
}

void append_run(std::vector<Fix>& out, std::int64_t from, std::int64_t to, std::int64_t step, Fix proto) {
  for (std::int64_t t = from; t <= to; t += step) {
    proto.t = t;
    out.push_back(proto);
  }
}

JourneyFeatures sample_row(const std::string& id, double base) {
  JourneyFeatures r;
  r.journey_id = id;
  for (std::size_t c = 0; c < JourneyFeatures::kNumericFields; ++c) r.set(c, base + 0.1 * static_cast<double>(c));
  r.speeding_level = static_cast<int>(base) % kNumLevels;
  return r;
}

}  // namespace

TEST(PointSpeeding, Arithmetic) {
  EXPECT_NEAR(point_speeding(60, 50), 0.20, 1e-15);
  EXPECT_EQ(point_speeding(50, 50), 0.0);
  EXPECT_NEAR(point_speeding(45, 50), -0.10, 1e-15);
  EXPECT_THROW(point_speeding(40, 0), std::invalid_argument);
  EXPECT_THROW(point_speeding(40, -5), std::invalid_argument);
  EXPECT_THROW(point_speeding(40, std::nan("")), std::invalid_argument);
}

TEST(PointSpeeding, StrictlyMonotone) {
  for (double s = 0; s < 100; s += 0.5) {
    EXPECT_LT(point_speeding(s, 40), point_speeding(s + 0.5, 40));
    EXPECT_GT(point_speeding(s + 1, 40), point_speeding(s + 1, 40.5));
  }
}

TEST(BinLevel, TableExamples) {
  EXPECT_EQ(bin_level(0.0), 0);
  EXPECT_EQ(bin_level(0.04), 0);
  EXPECT_EQ(bin_level(0.05), 1);
  EXPECT_EQ(bin_level(0.20), 2);
  EXPECT_EQ(bin_level(0.80), 5);
  EXPECT_EQ(bin_level(1.51), 5);
  EXPECT_EQ(bin_level(2.00), 5);
  EXPECT_EQ(bin_level(1e9), 5);
}

TEST(BinLevel, EveryEdgeIsLeftClosed) {
  for (std::size_t k = 0; k < kLevelEdges.size(); ++k) {
    const double e = kLevelEdges[k];
    EXPECT_EQ(bin_level(e), static_cast<int>(k) + 1) << e;
    EXPECT_EQ(bin_level(std::nextafter(e, 0.0)), static_cast<int>(k)) << e;
    EXPECT_EQ(bin_level(std::nextafter(e, 1.0e9)), static_cast<int>(k) + 1) << e;
  }
}

TEST(BinLevel, MonotoneAndRejectsBadInput) {
  int prev = 0;
  for (int i = 0; i <= 200'000; ++i) {
    const int l = bin_level(i * 1e-5);
    EXPECT_GE(l, prev);
    prev = l;
  }
  EXPECT_THROW(bin_level(-1e-12), std::invalid_argument);
  EXPECT_THROW(bin_level(std::nan("")), std::invalid_argument);
  EXPECT_THROW(bin_level(INFINITY), std::invalid_argument);
}

TEST(Calendar, FixedOffsets) {
  // 2021-01-01T00:00:00Z is a Friday
  const auto utc = calendar_fields(1609459200, 0);
  EXPECT_EQ(utc.year, 2021);
  EXPECT_EQ(utc.hour, 0);
  EXPECT_EQ(utc.dayofweek, 4);
  const auto est = calendar_fields(1609459200, -300);
  EXPECT_EQ(est.year, 2020);
  EXPECT_EQ(est.hour, 19);
  EXPECT_EQ(est.dayofweek, 3);
  // 1969-12-31T23:00:00Z, Wednesday
  const auto before = calendar_fields(-3600, 0);
  EXPECT_EQ(before.year, 1969);
  EXPECT_EQ(before.hour, 23);
  EXPECT_EQ(before.dayofweek, 2);
  // 2024-03-04 is a Monday
  EXPECT_EQ(calendar_fields(1709510400 + 12 * 3600, 0).dayofweek, 0);
}

TEST(Aggregate, PlantedJourney) {
  // 600 s: moving at 55 on a 50 mph road with a 30 s stop away from any
  // intersection and a 90 s stop beside a signal
  std::vector<Fix> f;
  const Fix move{0, 55};
  Fix halt{0, 0};
  Fix signal_halt{0, 0};
  signal_halt.sig_m = 20;
  append_run(f, 0, 240, 3, move);
  append_run(f, 241, 271, 3, halt);     // 241..271 stopped: 30 s
  append_run(f, 272, 402, 5, move);
  append_run(f, 403, 493, 5, signal_halt);  // 403..493: 90 s
  append_run(f, 494, 600, 2, move);
  const auto r = run(build(f));
  ASSERT_TRUE(std::holds_alternative<JourneyFeatures>(r));
  const auto& jf = std::get<JourneyFeatures>(r);
  EXPECT_EQ(jf.journeytime_sum, 600.0);
  EXPECT_EQ(jf.timeStopped_sum, 120.0);
  EXPECT_EQ(jf.timeStoppedAtSignalized_sum, 90.0);
  EXPECT_EQ(jf.timeStoppedAtUnsignalized_sum, 0.0);
  EXPECT_NEAR(jf.speeding_prop, 0.10, 1e-12);
  EXPECT_EQ(jf.speeding_level, 1);
  EXPECT_EQ(jf.moving_speed, 55.0);
  EXPECT_EQ(jf.Residential_prop, 1.0);
  EXPECT_EQ(jf.C3R_prop, 1.0);
  EXPECT_EQ(jf.Commerical_prop + jf.Industrial_prop + jf.Institutional_prop, 0.0);
  EXPECT_EQ(jf.C1_prop + jf.C2_prop + jf.C3C_prop + jf.C4_prop, 0.0);
  // the four speed changes are the only accelerations
  EXPECT_EQ(jf.hardbrake_prop, 0.0);
  EXPECT_NEAR(jf.hardbrake_count, -2 * 55 * 0.44704, 1e-12);
  EXPECT_NEAR(jf.hardacc_count, 2 * 55 * 0.44704, 1e-12);
  EXPECT_NEAR(jf.hardbrake_min, -55 * 0.44704, 1e-12);
}

TEST(Aggregate, AtTheLimitIsLevelZero) {
  std::vector<Fix> f;
  append_run(f, 0, 300, 3, Fix{0, 50});
  const auto jf = std::get<JourneyFeatures>(run(build(f)));
  EXPECT_EQ(jf.speeding_prop, 0.0);
  EXPECT_EQ(jf.speeding_level, 0);
  EXPECT_EQ(jf.hardbrake_prop, 0.0);
  EXPECT_EQ(jf.hardbrake_mean, 0.0);
  EXPECT_EQ(jf.hardacc_max, 0.0);
  EXPECT_EQ(jf.turn_sum, 0.0);
}

TEST(Aggregate, UnderLimitDoesNotOffsetSpeeding) {
  std::vector<Fix> f;
  append_run(f, 0, 99, 1, Fix{0, 60});   // +0.2 over 99 s
  append_run(f, 100, 199, 1, Fix{0, 30});  // -0.4 floored to 0
  const auto jf = std::get<JourneyFeatures>(run(build(f)));
  // 99 s at 0.2, one transition second at mean(0.2, 0), 99 s at 0
  EXPECT_NEAR(jf.speeding_prop, (99 * 0.2 + 0.1) / 199.0, 1e-12);
}

TEST(Aggregate, Exclusions) {
  std::vector<Fix> parked;
  append_run(parked, 0, 120, 3, Fix{0, 0});
  EXPECT_EQ(std::get<Exclusion>(run(build(parked))), Exclusion::NoMovingInterval);

  std::vector<Fix> alternating;
  for (int i = 0; i < 40; ++i) alternating.push_back({3 * i, 30, i % 2 == 0});
  EXPECT_EQ(std::get<Exclusion>(run(build(alternating))), Exclusion::NoMatchedMoving);

  std::vector<Fix> off;
  append_run(off, 0, 120, 3, Fix{0, 30, false});
  EXPECT_EQ(std::get<Exclusion>(run(build(off))), Exclusion::LowCoverage);
  EXPECT_EQ(to_string(Exclusion::LowCoverage), "low_coverage");
}

TEST(Aggregate, MatchesBruteForceOnRandomJourneys) {
  std::mt19937_64 rng(17);
  const FeatureParams fp;
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Fix> f;
    std::int64_t t = 1'650'000'000 + static_cast<std::int64_t>(rng() % 1'000'000);
    double h = 0;
    const int n = 20 + static_cast<int>(rng() % 200);
    for (int i = 0; i < n; ++i) {
      Fix x{t, rng() % 4 == 0 ? static_cast<double>(rng() % 3) : 5.0 + static_cast<double>(rng() % 60)};
      x.matched = rng() % 5 != 0;
      x.limit = 25.0 + 5.0 * static_cast<double>(rng() % 8);
      x.land = static_cast<LandUse>(rng() % kLandUseCount);
      x.ctx = static_cast<ContextClass>(rng() % kContextClassCount);
      x.sig_m = rng() % 6 == 0 ? 10.0 : kInfDistance;
      h += std::uniform_real_distribution<double>(-30, 30)(rng);
      x.heading = std::fmod(h + 3600.0, 360.0);
      f.push_back(x);
      t += 1 + static_cast<std::int64_t>(rng() % 6);
    }
    const auto j = build(f, "J" + std::to_string(trial));
    const auto r = run(j, fp);
    if (!std::holds_alternative<JourneyFeatures>(r)) continue;
    const auto& jf = std::get<JourneyFeatures>(r);
    ++checked;

    double brake_sum = 0, acc_sum = 0, brake_min = 0, acc_max = 0, yaw_sum = 0, yaw_max = 0, turning = 0;
    int n_brake = 0, n_acc = 0, n_moving = 0, n_hb = 0, n_ha = 0;
    double mov_t = 0, mov_st = 0, sp_t = 0, sp_w = 0, m_t = 0, res_t = 0, c4_t = 0;
    std::int64_t stopped = 0;
    for (std::size_t i = 0; i + 1 < f.size(); ++i) {
      const auto &a = f[i], &b = f[i + 1];
      const double dt = static_cast<double>(b.t - a.t);
      const double acc = (b.speed - a.speed) * 0.44704 / dt;
      double dh = std::fmod(b.heading - a.heading + 540.0, 360.0) - 180.0;
      if (dh == -180.0) dh = 180.0;
      const double yaw = std::fabs(dh) / dt;
      if (acc < 0) brake_sum += acc, ++n_brake, brake_min = std::min(brake_min, acc);
      if (acc > 0) acc_sum += acc, ++n_acc, acc_max = std::max(acc_max, acc);
      yaw_sum += yaw;
      yaw_max = std::max(yaw_max, yaw);
      if (yaw >= fp.turn_min_yaw) turning += yaw;
      if (a.speed < 2 && b.speed < 2) stopped += b.t - a.t;
      if (a.speed >= 2 && b.speed >= 2) {
        ++n_moving;
        n_hb += acc <= -1.0;
        n_ha += acc >= 1.0;
        mov_t += dt;
        mov_st += dt * (a.speed + b.speed) / 2;
        if (a.matched && b.matched) {
          sp_t += dt;
          sp_w += dt * (std::max(0.0, (a.speed - a.limit) / a.limit) + std::max(0.0, (b.speed - b.limit) / b.limit)) / 2;
        }
      }
      if (a.matched) {
        m_t += dt;
        res_t += a.land == LandUse::Residential ? dt : 0;
        c4_t += a.ctx == ContextClass::C4 ? dt : 0;
      }
    }
    const auto cal = calendar_fields(f.front().t, fp.utc_offset_minutes);
    EXPECT_EQ(jf.journeytime_sum, static_cast<double>(f.back().t - f.front().t));
    EXPECT_EQ(jf.timeStopped_sum, static_cast<double>(stopped));
    EXPECT_NEAR(jf.hardbrake_count, brake_sum, 1e-9);
    EXPECT_NEAR(jf.hardacc_count, acc_sum, 1e-9);
    EXPECT_NEAR(jf.hardbrake_mean, n_brake ? brake_sum / n_brake : 0.0, 1e-9);
    EXPECT_NEAR(jf.hardacc_mean, n_acc ? acc_sum / n_acc : 0.0, 1e-9);
    EXPECT_EQ(jf.hardbrake_min, brake_min);
    EXPECT_EQ(jf.hardacc_max, acc_max);
    EXPECT_NEAR(jf.hardbrake_prop, static_cast<double>(n_hb) / n_moving, 1e-12);
    EXPECT_NEAR(jf.hardacc_prop, static_cast<double>(n_ha) / n_moving, 1e-12);
    EXPECT_NEAR(jf.moving_speed, mov_st / mov_t, 1e-9);
    EXPECT_NEAR(jf.yaw_rate_mean, yaw_sum / static_cast<double>(f.size() - 1), 1e-9);
    EXPECT_NEAR(jf.yaw_rate_max, yaw_max, 1e-9);
    EXPECT_NEAR(jf.moving_yaw_rate, turning, 1e-9);
    EXPECT_NEAR(jf.speeding_prop, sp_w / sp_t, 1e-9);
    EXPECT_NEAR(jf.Residential_prop, res_t / m_t, 1e-9);
    EXPECT_NEAR(jf.C4_prop, c4_t / m_t, 1e-9);
    EXPECT_EQ(jf.hour, cal.hour);
    EXPECT_EQ(jf.dayofweek, cal.dayofweek);
    EXPECT_EQ(jf.year, cal.year);
    EXPECT_EQ(jf.speeding_level, bin_level(jf.speeding_prop));

    EXPECT_LE(jf.timeStoppedAtSignalized_sum + jf.timeStoppedAtUnsignalized_sum, jf.timeStopped_sum);
    EXPECT_LE(jf.timeStopped_sum, jf.journeytime_sum);
    EXPECT_LE(jf.hardbrake_min, jf.hardbrake_mean);
    EXPECT_LE(jf.hardbrake_mean, 0.0);
    EXPECT_LE(jf.hardacc_mean, jf.hardacc_max);
    EXPECT_GE(jf.hardacc_mean, 0.0);
    EXPECT_LE(jf.Residential_prop + jf.Commerical_prop + jf.Industrial_prop + jf.Institutional_prop, 1.0 + 1e-12);
    EXPECT_LE(jf.C1_prop + jf.C2_prop + jf.C3C_prop + jf.C3R_prop + jf.C4_prop, 1.0 + 1e-12);
  }
  EXPECT_GT(checked, 150);
}

TEST(Columns, SchemaAndDefaultSelection) {
  const auto& names = JourneyFeatures::column_names();
  EXPECT_EQ(names.size(), 32u);
  EXPECT_EQ(names.back(), "speeding_level");
  EXPECT_EQ(JourneyFeatures::column_index("Commerical_prop"), 23);
  EXPECT_EQ(JourneyFeatures::column_index("Commercial_prop"), -1);
  const auto def = default_feature_columns();
  EXPECT_EQ(def.size(), 30u);
  EXPECT_EQ(std::count(def.begin(), def.end(), "speeding_prop"), 0);
  EXPECT_EQ(std::count(def.begin(), def.end(), "speeding_level"), 0);
  JourneyFeatures r;
  for (std::size_t c = 0; c < JourneyFeatures::kNumericFields; ++c) r.set(c, static_cast<double>(c) + 0.5);
  for (std::size_t c = 0; c < JourneyFeatures::kNumericFields; ++c) EXPECT_EQ(r.get(c), static_cast<double>(c) + 0.5);
  EXPECT_THROW(r.get(32), std::out_of_range);
}

TEST(Assemble, DefaultSelectionSortsById) {
  AssembleReport rep;
  const auto m = assemble_dataset({sample_row("c", 2), sample_row("a", 0), sample_row("b", 1)}, {}, &rep);
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m.cols(), 30u);
  EXPECT_EQ(m.journey_ids, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(m.labels, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(m.row(1)[0], 1.0);
  EXPECT_TRUE(rep.warnings.empty());
}

TEST(Assemble, LeakageWarningWhenSpeedingPropSelected) {
  FeatureSelection sel;
  sel.columns.push_back("speeding_prop");
  AssembleReport rep;
  const auto m = assemble_dataset({sample_row("a", 0)}, sel, &rep);
  EXPECT_EQ(m.cols(), 31u);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("LEAKAGE"), std::string::npos);
}

TEST(Assemble, DropsNonFiniteAndRejectsBadSelections) {
  auto bad = sample_row("b", 1);
  bad.moving_speed = std::nan("");
  AssembleReport rep;
  const auto m = assemble_dataset({sample_row("a", 0), bad}, {}, &rep);
  EXPECT_EQ(m.rows(), 1u);
  EXPECT_EQ(rep.dropped_nonfinite, 1u);
  EXPECT_THROW(assemble_dataset({bad}), FeatureError);
  FeatureSelection unknown;
  unknown.columns = {"nope"};
  EXPECT_THROW(assemble_dataset({sample_row("a", 0)}, unknown), FeatureError);
  FeatureSelection label;
  label.columns = {"speeding_level"};
  EXPECT_THROW(assemble_dataset({sample_row("a", 0)}, label), FeatureError);
}

TEST(FeaturesCsv, RoundTripIsExact) {
  std::vector<JourneyFeatures> rows;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    JourneyFeatures r;
    r.journey_id = "journey-" + std::to_string(i);
    for (std::size_t c = 0; c < JourneyFeatures::kNumericFields; ++c)
      r.set(c, std::normal_distribution<double>(0, 100)(rng));
    r.speeding_level = i % kNumLevels;
    rows.push_back(r);
  }
  std::stringstream s;
  write_features_csv(s, rows);
  std::string header;
  std::getline(s, header);
  EXPECT_EQ(header.substr(0, 27), "journey_id,timeStopped_sum,");
  EXPECT_EQ(header.substr(header.size() - 15), ",speeding_level");
  s.seekg(0);
  const auto back = read_features_csv(s);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].journey_id, rows[i].journey_id);
    for (std::size_t c = 0; c <= JourneyFeatures::kNumericFields; ++c) EXPECT_EQ(back[i].get(c), rows[i].get(c));
  }
  std::istringstream wrong("id,a\nx,1\n");
  EXPECT_THROW(read_features_csv(wrong), FeatureError);
}
