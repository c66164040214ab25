#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tripspeed/roadnet.hpp"

namespace tripspeed {

struct KinematicsParams {
  double stop_speed_mph = 2.0;
  std::int64_t gap_split_s = 600;
  double intersection_radius_m = 50.0;
  double turn_angle_deg = 45.0;
  double turn_window_s = 15.0;
  double turn_min_yaw = 8.0;  // deg/s
};

/// Motion between two consecutive fixes.
struct MotionInterval {
  std::size_t start = 0;  // point index; end == start + 1
  std::size_t end = 0;
  double dt = 0.0;            // s
  double accel = 0.0;         // m/s^2, signed
  double heading_change = 0.0;  // deg, wrapped into (-180, 180]
  double yaw_rate = 0.0;      // deg/s, >= 0
  bool moving = false;
  bool stopped = false;
};

enum class StopAttribution { Signalized, Unsignalized, None };

struct StopEpisode {
  std::size_t first_interval = 0;
  std::size_t last_interval = 0;  // inclusive
  double duration = 0.0;
  StopAttribution attribution = StopAttribution::None;
};

struct TurnEvent {
  std::size_t start_point = 0;
  std::size_t end_point = 0;
  double total_heading_change = 0.0;  // signed, deg
};

std::vector<MotionInterval> derive_intervals(const MatchedJourney& journey, const KinematicsParams& params = {});

std::vector<StopEpisode> detect_stops(const std::vector<MotionInterval>& intervals,
                                      const std::vector<MatchedPoint>& points,
                                      const KinematicsParams& params = {});

std::vector<TurnEvent> detect_turns(const std::vector<MotionInterval>& intervals,
                                    const KinematicsParams& params = {});

/// Distinct signalized intersections within the match's intersection radius
/// of any point.
std::size_t count_signalized(const MatchedJourney& journey);

}  // namespace tripspeed
