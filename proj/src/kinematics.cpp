#include "tripspeed/kinematics.hpp"

#include <algorithm>
#include <cmath>

namespace tripspeed {

std::vector<MotionInterval> derive_intervals(const MatchedJourney& journey, const KinematicsParams& params) {
  std::vector<MotionInterval> out;
  const auto& pts = journey.points;
  if (pts.size() < 2) return out;
  out.reserve(pts.size() - 1);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto& a = pts[i].point;
    const auto& b = pts[i + 1].point;
    const std::int64_t dt_s = b.timestamp - a.timestamp;
    if (dt_s <= 0 || dt_s > params.gap_split_s) continue;
    MotionInterval m;
    m.start = i;
    m.end = i + 1;
    m.dt = static_cast<double>(dt_s);
    m.accel = (b.speed_mph - a.speed_mph) * geo::kMphToMps / m.dt;
    m.heading_change = geo::wrap180(b.heading_deg - a.heading_deg);
    m.yaw_rate = std::fabs(m.heading_change) / m.dt;
    m.stopped = a.speed_mph < params.stop_speed_mph && b.speed_mph < params.stop_speed_mph;
    m.moving = a.speed_mph >= params.stop_speed_mph && b.speed_mph >= params.stop_speed_mph;
    out.push_back(m);
  }
  return out;
}

std::vector<StopEpisode> detect_stops(const std::vector<MotionInterval>& intervals,
                                      const std::vector<MatchedPoint>& points,
                                      const KinematicsParams& params) {
  std::vector<StopEpisode> out;
  std::size_t i = 0;
  while (i < intervals.size()) {
    if (!intervals[i].stopped) {
      ++i;
      continue;
    }
    StopEpisode ep;
    ep.first_interval = i;
    ep.duration = intervals[i].dt;
    std::size_t j = i;
    // a run continues while intervals stay stopped and share endpoints
    while (j + 1 < intervals.size() && intervals[j + 1].stopped && intervals[j + 1].start == intervals[j].end) {
      ++j;
      ep.duration += intervals[j].dt;
    }
    ep.last_interval = j;
    bool sig = false, unsig = false;
    for (std::size_t p = intervals[i].start; p <= intervals[j].end; ++p) {
      const auto& m = points[p].match;
      sig = sig || m.nearest_signalized_m <= params.intersection_radius_m;
      unsig = unsig || m.nearest_unsignalized_m <= params.intersection_radius_m;
    }
    ep.attribution = sig ? StopAttribution::Signalized
                         : (unsig ? StopAttribution::Unsignalized : StopAttribution::None);
    out.push_back(ep);
    i = j + 1;
  }
  return out;
}

std::vector<TurnEvent> detect_turns(const std::vector<MotionInterval>& intervals, const KinematicsParams& params) {
  std::vector<TurnEvent> out;
  auto qualifies = [&](const MotionInterval& m) {
    return m.yaw_rate >= params.turn_min_yaw && m.heading_change != 0.0;
  };
  std::size_t i = 0;
  while (i < intervals.size()) {
    if (!qualifies(intervals[i])) {
      ++i;
      continue;
    }
    const bool positive = intervals[i].heading_change > 0.0;
    std::size_t j = i;
    while (j + 1 < intervals.size() && qualifies(intervals[j + 1]) &&
           (intervals[j + 1].heading_change > 0.0) == positive && intervals[j + 1].start == intervals[j].end)
      ++j;
    // largest |cumulative change| over windows of duration <= turn_window_s;
    // all changes share a sign so a two-pointer sweep suffices
    double best = 0.0, window_change = 0.0, window_dt = 0.0;
    std::size_t lo = i;
    for (std::size_t hi = i; hi <= j; ++hi) {
      window_change += intervals[hi].heading_change;
      window_dt += intervals[hi].dt;
      while (window_dt > params.turn_window_s && lo < hi) {
        window_change -= intervals[lo].heading_change;
        window_dt -= intervals[lo].dt;
        ++lo;
      }
      if (window_dt <= params.turn_window_s) best = std::max(best, std::fabs(window_change));
    }
    if (best >= params.turn_angle_deg) {
      TurnEvent t;
      t.start_point = intervals[i].start;
      t.end_point = intervals[j].end;
      for (std::size_t k = i; k <= j; ++k) t.total_heading_change += intervals[k].heading_change;
      out.push_back(t);
    }
    i = j + 1;
  }
  return out;
}

std::size_t count_signalized(const MatchedJourney& journey) {
  std::vector<std::uint32_t> ids;
  for (const auto& p : journey.points)
    ids.insert(ids.end(), p.match.signalized_within.begin(), p.match.signalized_within.end());
  std::sort(ids.begin(), ids.end());
  return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

}  // namespace tripspeed
