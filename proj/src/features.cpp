#include "tripspeed/features.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "tripspeed/util.hpp"

namespace tripspeed {

double point_speeding(double speed_mph, double speed_limit_mph) {
  if (!(speed_limit_mph > 0.0)) throw std::invalid_argument("speed limit must be positive");
  return (speed_mph - speed_limit_mph) / speed_limit_mph;
}

int bin_level(double speeding_prop) {
  if (!std::isfinite(speeding_prop) || speeding_prop < 0.0)
    throw std::invalid_argument("speeding proportion must be finite and non-negative");
  int level = 0;
  for (double edge : kLevelEdges)
    if (speeding_prop >= edge) ++level;
  return level;
}

namespace {

using Member = double JourneyFeatures::*;

constexpr std::array<Member, JourneyFeatures::kNumericFields> kMembers = {
    &JourneyFeatures::timeStopped_sum,
    &JourneyFeatures::timeStoppedAtSignalized_sum,
    &JourneyFeatures::timeStoppedAtUnsignalized_sum,
    &JourneyFeatures::journeytime_sum,
    &JourneyFeatures::isSignalized,
    &JourneyFeatures::turn_sum,
    &JourneyFeatures::hardbrake_mean,
    &JourneyFeatures::hardbrake_min,
    &JourneyFeatures::hardbrake_count,
    &JourneyFeatures::hardacc_mean,
    &JourneyFeatures::hardacc_max,
    &JourneyFeatures::hardacc_count,
    &JourneyFeatures::moving_speed,
    &JourneyFeatures::yaw_rate_mean,
    &JourneyFeatures::yaw_rate_max,
    &JourneyFeatures::moving_yaw_rate,
    &JourneyFeatures::hour,
    &JourneyFeatures::dayofweek,
    &JourneyFeatures::year,
    &JourneyFeatures::hardbrake_prop,
    &JourneyFeatures::hardacc_prop,
    &JourneyFeatures::speeding_prop,
    &JourneyFeatures::Residential_prop,
    &JourneyFeatures::Commerical_prop,
    &JourneyFeatures::Industrial_prop,
    &JourneyFeatures::Institutional_prop,
    &JourneyFeatures::C1_prop,
    &JourneyFeatures::C2_prop,
    &JourneyFeatures::C3C_prop,
    &JourneyFeatures::C3R_prop,
    &JourneyFeatures::C4_prop,
};

}  // namespace

const std::array<std::string_view, 32>& JourneyFeatures::column_names() {
  static const std::array<std::string_view, 32> names = {
      "timeStopped_sum", "timeStoppedAtSignalized_sum", "timeStoppedAtUnsignalized_sum",
      "journeytime_sum", "isSignalized", "turn_sum", "hardbrake_mean", "hardbrake_min",
      "hardbrake_count", "hardacc_mean", "hardacc_max", "hardacc_count", "moving_speed",
      "yaw_rate_mean", "yaw_rate_max", "moving_yaw_rate", "hour", "dayofweek", "year",
      "hardbrake_prop", "hardacc_prop", "speeding_prop", "Residential_prop", "Commerical_prop",
      "Industrial_prop", "Institutional_prop", "C1_prop", "C2_prop", "C3C_prop", "C3R_prop",
      "C4_prop", "speeding_level"};
  return names;
}

double JourneyFeatures::get(std::size_t column) const {
  if (column < kNumericFields) return this->*kMembers[column];
  if (column == kNumericFields) return speeding_level;
  throw std::out_of_range("feature column index");
}

void JourneyFeatures::set(std::size_t column, double value) {
  if (column < kNumericFields) this->*kMembers[column] = value;
  else if (column == kNumericFields) speeding_level = static_cast<int>(value);
  else throw std::out_of_range("feature column index");
}

int JourneyFeatures::column_index(std::string_view name) {
  const auto& names = column_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> default_feature_columns() {
  std::vector<std::string> cols;
  const auto& names = JourneyFeatures::column_names();
  for (std::size_t i = 0; i < JourneyFeatures::kNumericFields; ++i)
    if (names[i] != "speeding_prop") cols.emplace_back(names[i]);
  return cols;
}

std::string_view to_string(Exclusion e) {
  switch (e) {
    case Exclusion::LowCoverage: return "low_coverage";
    case Exclusion::NoMovingInterval: return "no_moving_interval";
    case Exclusion::NoMatchedMoving: return "no_matched_moving";
  }
  return "unknown";
}

CalendarFields calendar_fields(std::int64_t unix_seconds, int utc_offset_minutes) {
  using namespace std::chrono;
  const std::int64_t local = unix_seconds + static_cast<std::int64_t>(utc_offset_minutes) * 60;
  const sys_seconds tp{seconds{local}};
  const sys_days day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  const weekday wd{day};
  CalendarFields c;
  c.year = static_cast<int>(ymd.year());
  c.hour = static_cast<int>(hms.hours().count());
  c.dayofweek = static_cast<int>((wd.c_encoding() + 6) % 7);  // Monday = 0
  return c;
}

AggregateResult aggregate_journey(const MatchedJourney& journey, const std::vector<MotionInterval>& intervals,
                                  const std::vector<StopEpisode>& stops, const std::vector<TurnEvent>& turns,
                                  const FeatureParams& params) {
  if (journey.low_coverage) return Exclusion::LowCoverage;
  const auto& pts = journey.points;

  JourneyFeatures f;
  f.journey_id = journey.journey_id;
  f.journeytime_sum = static_cast<double>(pts.back().point.timestamp - pts.front().point.timestamp);

  for (const auto& s : stops) {
    f.timeStopped_sum += s.duration;
    if (s.attribution == StopAttribution::Signalized) f.timeStoppedAtSignalized_sum += s.duration;
    else if (s.attribution == StopAttribution::Unsignalized) f.timeStoppedAtUnsignalized_sum += s.duration;
  }
  f.isSignalized = static_cast<double>(count_signalized(journey));
  f.turn_sum = static_cast<double>(turns.size());

  std::size_t n_brake = 0, n_acc = 0, n_moving = 0, n_hard_brake = 0, n_hard_acc = 0;
  double moving_time = 0.0, moving_speed_time = 0.0;
  double yaw_sum = 0.0;
  double matched_time = 0.0, speeding_time = 0.0, speeding_weighted = 0.0;
  std::array<double, kLandUseCount> land_time{};
  std::array<double, kContextClassCount> ctx_time{};
  f.hardbrake_min = 0.0;
  f.hardacc_max = 0.0;

  for (const auto& m : intervals) {
    if (m.accel < 0.0) {
      ++n_brake;
      f.hardbrake_count += m.accel;
      f.hardbrake_min = std::min(f.hardbrake_min, m.accel);
    } else if (m.accel > 0.0) {
      ++n_acc;
      f.hardacc_count += m.accel;
      f.hardacc_max = std::max(f.hardacc_max, m.accel);
    }
    yaw_sum += m.yaw_rate;
    f.yaw_rate_max = std::max(f.yaw_rate_max, m.yaw_rate);
    if (m.yaw_rate >= params.turn_min_yaw) f.moving_yaw_rate += m.yaw_rate;

    const auto& a = pts[m.start];
    const auto& b = pts[m.end];
    if (m.moving) {
      ++n_moving;
      if (m.accel <= -params.hard_brake_thresh) ++n_hard_brake;
      if (m.accel >= params.hard_acc_thresh) ++n_hard_acc;
      moving_time += m.dt;
      moving_speed_time += m.dt * 0.5 * (a.point.speed_mph + b.point.speed_mph);
      if (a.matched() && b.matched()) {
        const double ya = std::max(0.0, point_speeding(a.point.speed_mph, a.speed_limit_mph));
        const double yb = std::max(0.0, point_speeding(b.point.speed_mph, b.speed_limit_mph));
        speeding_time += m.dt;
        speeding_weighted += m.dt * 0.5 * (ya + yb);
      }
    }
    if (a.matched()) {
      matched_time += m.dt;
      land_time[static_cast<std::size_t>(a.land_use)] += m.dt;
      ctx_time[static_cast<std::size_t>(a.context)] += m.dt;
    }
  }
  if (n_moving == 0) return Exclusion::NoMovingInterval;
  if (speeding_time <= 0.0) return Exclusion::NoMatchedMoving;

  f.hardbrake_mean = n_brake ? f.hardbrake_count / static_cast<double>(n_brake) : 0.0;
  f.hardacc_mean = n_acc ? f.hardacc_count / static_cast<double>(n_acc) : 0.0;
  f.hardbrake_prop = static_cast<double>(n_hard_brake) / static_cast<double>(n_moving);
  f.hardacc_prop = static_cast<double>(n_hard_acc) / static_cast<double>(n_moving);
  f.moving_speed = moving_speed_time / moving_time;
  f.yaw_rate_mean = intervals.empty() ? 0.0 : yaw_sum / static_cast<double>(intervals.size());

  const auto cal = calendar_fields(pts.front().point.timestamp, params.utc_offset_minutes);
  f.hour = cal.hour;
  f.dayofweek = cal.dayofweek;
  f.year = cal.year;

  if (matched_time > 0.0) {
    f.Residential_prop = land_time[static_cast<std::size_t>(LandUse::Residential)] / matched_time;
    f.Commerical_prop = land_time[static_cast<std::size_t>(LandUse::Commercial)] / matched_time;
    f.Industrial_prop = land_time[static_cast<std::size_t>(LandUse::Industrial)] / matched_time;
    f.Institutional_prop = land_time[static_cast<std::size_t>(LandUse::Institutional)] / matched_time;
    f.C1_prop = ctx_time[static_cast<std::size_t>(ContextClass::C1)] / matched_time;
    f.C2_prop = ctx_time[static_cast<std::size_t>(ContextClass::C2)] / matched_time;
    f.C3C_prop = ctx_time[static_cast<std::size_t>(ContextClass::C3C)] / matched_time;
    f.C3R_prop = ctx_time[static_cast<std::size_t>(ContextClass::C3R)] / matched_time;
    f.C4_prop = ctx_time[static_cast<std::size_t>(ContextClass::C4)] / matched_time;
  }
  f.speeding_prop = speeding_weighted / speeding_time;
  f.speeding_level = bin_level(f.speeding_prop);
  return f;
}

FeatureMatrix assemble_dataset(std::vector<JourneyFeatures> rows, const FeatureSelection& selection,
                               AssembleReport* report) {
  AssembleReport rep;
  rep.rows_in = rows.size();
  std::vector<std::size_t> idx;
  for (const auto& name : selection.columns) {
    const int c = JourneyFeatures::column_index(name);
    if (c < 0 || static_cast<std::size_t>(c) >= JourneyFeatures::kNumericFields)
      throw FeatureError("unknown feature column: " + name);
    if (name == "speeding_prop")
      rep.warnings.push_back(
          "LEAKAGE: speeding_prop is selected as a predictor but it determines speeding_level exactly");
    idx.push_back(static_cast<std::size_t>(c));
  }
  std::sort(rows.begin(), rows.end(),
            [](const JourneyFeatures& a, const JourneyFeatures& b) { return a.journey_id < b.journey_id; });

  FeatureMatrix m;
  m.columns = selection.columns;
  m.values.reserve(rows.size() * idx.size());
  for (const auto& r : rows) {
    bool finite = true;
    for (std::size_t c : idx) finite = finite && std::isfinite(r.get(c));
    if (!finite || r.speeding_level < 0 || r.speeding_level >= kNumLevels) {
      ++rep.dropped_nonfinite;
      continue;
    }
    for (std::size_t c : idx) m.values.push_back(r.get(c));
    m.labels.push_back(r.speeding_level);
    m.journey_ids.push_back(r.journey_id);
  }
  if (report) *report = rep;
  if (m.rows() == 0) throw FeatureError("feature matrix is empty after filtering");
  return m;
}

void write_features_header(std::ostream& out) {
  out << "journey_id";
  for (auto name : JourneyFeatures::column_names()) out << ',' << name;
  out << '\n';
}

void write_features_row(std::ostream& out, const JourneyFeatures& r) {
  out << r.journey_id;
  for (std::size_t c = 0; c < JourneyFeatures::kNumericFields; ++c) out << ',' << fmt_double(r.get(c));
  out << ',' << r.speeding_level << '\n';
}

void write_features_csv(std::ostream& out, const std::vector<JourneyFeatures>& rows) {
  write_features_header(out);
  for (const auto& r : rows) write_features_row(out, r);
}

std::vector<JourneyFeatures> read_features_csv(std::istream& in) {
  if (!in) throw FeatureError("features stream is not readable");
  std::string line;
  if (!std::getline(in, line)) throw FeatureError("features file is empty");
  std::vector<std::string_view> f;
  split_csv_line(trim(line), ',', f);
  const auto& names = JourneyFeatures::column_names();
  if (f.size() != names.size() + 1 || unquote(f[0]) != "journey_id")
    throw FeatureError("features header does not match the expected schema");
  std::vector<int> map(f.size(), -1);
  for (std::size_t i = 1; i < f.size(); ++i) {
    map[i] = JourneyFeatures::column_index(unquote(f[i]));
    if (map[i] < 0) throw FeatureError("unknown features column: " + std::string(f[i]));
  }
  std::vector<JourneyFeatures> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    split_csv_line(trim(line), ',', f);
    if (f.size() != map.size()) throw FeatureError("features line " + std::to_string(line_no) + ": column count");
    JourneyFeatures r;
    r.journey_id = std::string(unquote(f[0]));
    for (std::size_t i = 1; i < f.size(); ++i) {
      auto v = parse_double(f[i]);
      if (!v) throw FeatureError("features line " + std::to_string(line_no) + ": bad number");
      r.set(static_cast<std::size_t>(map[i]), *v);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace tripspeed
