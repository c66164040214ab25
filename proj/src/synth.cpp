#include "tripspeed/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "tripspeed/util.hpp"

namespace tripspeed {

namespace {

constexpr double kStopBandMin = 8.0;    // stop line distance before a node
constexpr double kStopBandMax = 30.0;
constexpr double kNodeClearance = 2.0;  // no fix this close to a node
constexpr double kRadiusBand = 2.0;     // no fix within this of the intersection radius
constexpr double kMinMovingMph = 5.0;
constexpr double kTurnOffsetDeg = 30.0;
constexpr double kEdgeMargin = 150.0;

// Target speeding factor ranges per level. The top level is wider because
// stops and speed transitions pull the realized value down.
constexpr std::array<std::array<double, 2>, kNumLevels> kTargetRange = {{
    {-0.15, 0.03}, {0.07, 0.19}, {0.22, 0.39}, {0.42, 0.59}, {0.62, 0.79}, {0.85, 1.25}}};

double round_to(double v, double step) { return std::round(v / step) * step; }

double wrap360(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

double heading_delta(double from, double to) {
  double d = std::fmod(to - from, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  get_if(j, "n_journeys", c.n_journeys);
  get_if(j, "grid_size", c.grid_size);
  get_if(j, "spacing_m", c.spacing_m);
  get_if(j, "seed", c.seed);
  if (j.contains("origin")) c.origin = {j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>()};
  if (j.contains("behavior_mix")) {
    const auto& m = j.at("behavior_mix");
    if (!m.is_array() || m.size() != kNumLevels) throw std::invalid_argument("behavior_mix needs 6 weights");
    for (int k = 0; k < kNumLevels; ++k) c.behavior_mix[static_cast<std::size_t>(k)] = m[k].get<double>();
  }
  get_if(j, "min_segments", c.min_segments);
  get_if(j, "max_segments", c.max_segments);
  get_if(j, "stop_prob_signalized", c.stop_prob_signalized);
  get_if(j, "stop_prob_unsignalized", c.stop_prob_unsignalized);
  get_if(j, "midblock_stop_prob", c.midblock_stop_prob);
  get_if(j, "max_dwell_samples", c.max_dwell_samples);
  get_if(j, "speed_noise_mph", c.speed_noise_mph);
  get_if(j, "heading_noise_deg", c.heading_noise_deg);
  get_if(j, "max_speed_mph", c.max_speed_mph);
  get_if(j, "year_min", c.year_min);
  get_if(j, "year_max", c.year_max);
  get_if(j, "utc_offset_minutes", c.utc_offset_minutes);
  get_if(j, "corrupt_lines", c.corrupt_lines);
  get_if(j, "interleave", c.interleave);
  return c;
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_journeys", n_journeys},
          {"grid_size", grid_size},
          {"spacing_m", spacing_m},
          {"origin", {origin.lat, origin.lon}},
          {"seed", seed},
          {"behavior_mix", behavior_mix},
          {"min_segments", min_segments},
          {"max_segments", max_segments},
          {"stop_prob_signalized", stop_prob_signalized},
          {"stop_prob_unsignalized", stop_prob_unsignalized},
          {"midblock_stop_prob", midblock_stop_prob},
          {"max_dwell_samples", max_dwell_samples},
          {"speed_noise_mph", speed_noise_mph},
          {"heading_noise_deg", heading_noise_deg},
          {"max_speed_mph", max_speed_mph},
          {"year_min", year_min},
          {"year_max", year_max},
          {"utc_offset_minutes", utc_offset_minutes},
          {"corrupt_lines", corrupt_lines},
          {"interleave", interleave}};
}

SyntheticGenerator::SyntheticGenerator(SynthConfig config) : cfg_(std::move(config)) {
  const int g = cfg_.grid_size;
  if (g < 2) throw std::invalid_argument("grid_size must be at least 2");
  if (cfg_.min_segments < 1 || cfg_.max_segments < cfg_.min_segments)
    throw std::invalid_argument("segment count range is empty");
  if (cfg_.max_dwell_samples < 2) throw std::invalid_argument("max_dwell_samples must be at least 2");
  if (cfg_.year_max < cfg_.year_min) throw std::invalid_argument("year range is empty");
  // at this cap every interior block holds at least four fixes, so the
  // heading ramps of consecutive turns never touch
  const double step_cap = cfg_.spacing_m / 4.5 / kSampleSeconds / geo::kMphToMps;
  if (cfg_.max_speed_mph > step_cap)
    throw std::invalid_argument("max_speed_mph too high for spacing_m (cap " + fmt_double(step_cap) + ")");
  if (cfg_.spacing_m < 2.0 * (kEdgeMargin + kIntersectionRadiusM))
    throw std::invalid_argument("spacing_m too small");
  double mix = 0.0;
  for (double w : cfg_.behavior_mix) {
    if (!(w >= 0.0)) throw std::invalid_argument("behavior_mix weights must be non-negative");
    mix += w;
  }
  if (!(mix > 0.0)) throw std::invalid_argument("behavior_mix has no positive weight");

  const double extent = cfg_.spacing_m * (g - 1);
  proj_ = geo::LocalProjection(cfg_.origin);
  std::mt19937_64 rng(mix_seed(cfg_.seed, 0x6e657477));

  auto arterial = [](int line) { return line % 4 == 0; };
  nodes_.resize(static_cast<std::size_t>(g * g));
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      Node& n = nodes_[static_cast<std::size_t>(node_at(c, r))];
      n.xy = {c * cfg_.spacing_m - extent / 2.0, r * cfg_.spacing_m - extent / 2.0};
      const int art = arterial(c) + arterial(r);
      const double p = art == 2 ? 1.0 : (art == 1 ? 0.5 : 0.06);
      n.signalized = uniform01(rng) < p;
      Intersection x;
      x.id = "N" + padded(static_cast<std::size_t>(c), 2) + "_" + padded(static_cast<std::size_t>(r), 2);
      const auto ll = proj_.to_latlon(n.xy);
      x.location = {round_to(ll.lat, 1e-7), round_to(ll.lon, 1e-7)};
      x.signalized = n.signalized;
      net_.intersections.push_back(x);
    }

  static constexpr ContextClass kLocalContext[] = {ContextClass::C3R, ContextClass::C3R, ContextClass::C4,
                                                   ContextClass::C1, ContextClass::C3C};
  static constexpr LandUse kLocalLand[] = {LandUse::Residential, LandUse::Residential, LandUse::Industrial,
                                           LandUse::Institutional, LandUse::Commercial, LandUse::Other};
  auto add_segment = [&](int a, int b, bool horizontal, int line) {
    RoadSegment s;
    s.id = (horizontal ? "H" : "V") + net_.intersections[static_cast<std::size_t>(a)].id.substr(1);
    s.polyline = {net_.intersections[static_cast<std::size_t>(a)].location,
                  net_.intersections[static_cast<std::size_t>(b)].location};
    if (arterial(line)) {
      s.speed_limit_mph = line % 8 == 0 ? 55.0 : 45.0;
      s.context = uniform01(rng) < 0.5 ? ContextClass::C2 : ContextClass::C3C;
      s.land_use = uniform01(rng) < 0.7 ? LandUse::Commercial : LandUse::Institutional;
      s.functional_class = "arterial";
      s.extra = {{"lanes", "4"}, {"median_width_ft", "20"}};
    } else {
      static constexpr double kLimits[] = {25.0, 30.0, 35.0};
      s.speed_limit_mph = kLimits[bounded(rng, 3)];
      s.context = kLocalContext[bounded(rng, 5)];
      s.land_use = kLocalLand[bounded(rng, 6)];
      s.functional_class = "local";
      s.extra = {{"lanes", "2"}, {"median_width_ft", "0"}};
    }
    net_.segments.push_back(std::move(s));
    return static_cast<std::uint32_t>(net_.segments.size() - 1);
  };
  h_seg_.assign(nodes_.size(), UINT32_MAX);
  v_seg_.assign(nodes_.size(), UINT32_MAX);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c + 1 < g; ++c) h_seg_[static_cast<std::size_t>(node_at(c, r))] =
        add_segment(node_at(c, r), node_at(c + 1, r), true, r);
  for (int c = 0; c < g; ++c)
    for (int r = 0; r + 1 < g; ++r) v_seg_[static_cast<std::size_t>(node_at(c, r))] =
        add_segment(node_at(c, r), node_at(c, r + 1), false, c);
}

std::uint32_t SyntheticGenerator::segment_between(int a, int b) const {
  const int lo = std::min(a, b), hi = std::max(a, b);
  if (hi - lo == 1) return h_seg_[static_cast<std::size_t>(lo)];
  return v_seg_[static_cast<std::size_t>(lo)];
}

namespace {

struct PlannedStop {
  double u = 0.0;
  int dwell = 2;  // zero-speed fixes
  int node = -1;  // node it waits at, -1 mid-block
};

// Oracle aggregation straight from the simulation record. Segment identity,
// node proximity, stops and turns come from generator state, not from
// re-deriving them out of coordinates.
JourneyFeatures truth_from_samples(const std::string& id, const std::vector<SimSample>& s,
                                   const std::vector<PlannedStop>& stops_hit, const std::vector<bool>& node_signalized,
                                   const Network& net, std::size_t turns, const CalendarFields& local) {
  JourneyFeatures f;
  f.journey_id = id;
  f.journeytime_sum = static_cast<double>(s.back().t - s.front().t);
  for (const auto& st : stops_hit) {
    const double dur = static_cast<double>((st.dwell - 1) * SyntheticGenerator::kSampleSeconds);
    f.timeStopped_sum += dur;
    if (st.node >= 0) {
      if (node_signalized[static_cast<std::size_t>(st.node)]) f.timeStoppedAtSignalized_sum += dur;
      else f.timeStoppedAtUnsignalized_sum += dur;
    }
  }
  std::vector<int> sig_nodes;
  for (const auto& x : s)
    if (x.near_node >= 0 && node_signalized[static_cast<std::size_t>(x.near_node)]) sig_nodes.push_back(x.near_node);
  std::sort(sig_nodes.begin(), sig_nodes.end());
  f.isSignalized = static_cast<double>(std::unique(sig_nodes.begin(), sig_nodes.end()) - sig_nodes.begin());
  f.turn_sum = static_cast<double>(turns);

  std::size_t n_brake = 0, n_acc = 0, n_moving = 0, n_hb = 0, n_ha = 0;
  double t_moving = 0, speed_time = 0, yaw_sum = 0, t_all = 0, y_time = 0;
  std::array<double, kLandUseCount> land{};
  std::array<double, kContextClassCount> ctx{};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const auto& a = s[i];
    const auto& b = s[i + 1];
    const double dt = static_cast<double>(b.t - a.t);
    const double acc = (b.speed_mph - a.speed_mph) * geo::kMphToMps / dt;
    if (acc < 0) {
      ++n_brake;
      f.hardbrake_count += acc;
      f.hardbrake_min = std::min(f.hardbrake_min, acc);
    } else if (acc > 0) {
      ++n_acc;
      f.hardacc_count += acc;
      f.hardacc_max = std::max(f.hardacc_max, acc);
    }
    const double yaw = std::fabs(heading_delta(a.heading_deg, b.heading_deg)) / dt;
    yaw_sum += yaw;
    f.yaw_rate_max = std::max(f.yaw_rate_max, yaw);
    if (yaw >= 8.0) f.moving_yaw_rate += yaw;
    if (a.speed_mph >= 2.0 && b.speed_mph >= 2.0) {
      ++n_moving;
      n_hb += acc <= -1.0;
      n_ha += acc >= 1.0;
      t_moving += dt;
      speed_time += dt * 0.5 * (a.speed_mph + b.speed_mph);
      const double ya = std::max(0.0, (a.speed_mph - a.limit_mph) / a.limit_mph);
      const double yb = std::max(0.0, (b.speed_mph - b.limit_mph) / b.limit_mph);
      y_time += dt * 0.5 * (ya + yb);
    }
    t_all += dt;
    const auto& seg = net.segments[a.segment];
    land[static_cast<std::size_t>(seg.land_use)] += dt;
    ctx[static_cast<std::size_t>(seg.context)] += dt;
  }
  const std::size_t n_int = s.size() - 1;
  f.hardbrake_mean = n_brake ? f.hardbrake_count / static_cast<double>(n_brake) : 0.0;
  f.hardacc_mean = n_acc ? f.hardacc_count / static_cast<double>(n_acc) : 0.0;
  f.hardbrake_prop = static_cast<double>(n_hb) / static_cast<double>(n_moving);
  f.hardacc_prop = static_cast<double>(n_ha) / static_cast<double>(n_moving);
  f.moving_speed = speed_time / t_moving;
  f.yaw_rate_mean = yaw_sum / static_cast<double>(n_int);
  f.hour = local.hour;
  f.dayofweek = local.dayofweek;
  f.year = local.year;
  f.Residential_prop = land[static_cast<std::size_t>(LandUse::Residential)] / t_all;
  f.Commerical_prop = land[static_cast<std::size_t>(LandUse::Commercial)] / t_all;
  f.Industrial_prop = land[static_cast<std::size_t>(LandUse::Industrial)] / t_all;
  f.Institutional_prop = land[static_cast<std::size_t>(LandUse::Institutional)] / t_all;
  f.C1_prop = ctx[static_cast<std::size_t>(ContextClass::C1)] / t_all;
  f.C2_prop = ctx[static_cast<std::size_t>(ContextClass::C2)] / t_all;
  f.C3C_prop = ctx[static_cast<std::size_t>(ContextClass::C3C)] / t_all;
  f.C3R_prop = ctx[static_cast<std::size_t>(ContextClass::C3R)] / t_all;
  f.C4_prop = ctx[static_cast<std::size_t>(ContextClass::C4)] / t_all;
  f.speeding_prop = y_time / t_moving;
  f.speeding_level = 0;
  for (double edge : {0.05, 0.20, 0.40, 0.60, 0.80}) f.speeding_level += f.speeding_prop >= edge;
  return f;
}

}  // namespace

SimJourney SyntheticGenerator::simulate(std::size_t index) const {
  std::mt19937_64 rng(mix_seed(cfg_.seed, index));
  const int g = cfg_.grid_size;
  const double S = cfg_.spacing_m;
  SimJourney out;
  out.journey.journey_id = "J" + padded(index + 1, 7);

  // behaviour profile
  double mix_total = 0.0;
  for (double w : cfg_.behavior_mix) mix_total += w;
  double pick = uniform01(rng) * mix_total;
  int level = 0;
  while (level + 1 < kNumLevels && pick >= cfg_.behavior_mix[static_cast<std::size_t>(level)]) {
    pick -= cfg_.behavior_mix[static_cast<std::size_t>(level)];
    ++level;
  }
  while (cfg_.behavior_mix[static_cast<std::size_t>(level)] <= 0.0) --level;
  out.target_level = level;
  const auto& range = kTargetRange[static_cast<std::size_t>(level)];
  const double factor = range[0] + (range[1] - range[0]) * uniform01(rng);
  const double accel_mps2 = 1.0 + 1.5 * uniform01(rng);
  const double brake_mps2 = 1.5 + 2.0 * uniform01(rng);
  const double accel_step = accel_mps2 * kSampleSeconds / geo::kMphToMps;  // mph per fix
  const double brake_step = brake_mps2 * kSampleSeconds / geo::kMphToMps;

  // route: random walk without U-turns
  const int n_seg = cfg_.min_segments + static_cast<int>(bounded(rng, static_cast<std::uint64_t>(
                                                                          cfg_.max_segments - cfg_.min_segments + 1)));
  std::vector<int> route_nodes;
  int col = static_cast<int>(bounded(rng, static_cast<std::uint64_t>(g)));
  int row = static_cast<int>(bounded(rng, static_cast<std::uint64_t>(g)));
  route_nodes.push_back(node_at(col, row));
  static constexpr int kDc[4] = {0, 1, 0, -1};  // N E S W
  static constexpr int kDr[4] = {1, 0, -1, 0};
  auto inside = [&](int c, int r) { return c >= 0 && r >= 0 && c < g && r < g; };
  int dir = -1;
  std::vector<int> dirs;
  for (int k = 0; k < n_seg; ++k) {
    int options[3];
    double weights[3];
    int n_opt = 0;
    for (int d = 0; d < 4; ++d) {
      if (dir >= 0 && d == (dir + 2) % 4) continue;
      if (!inside(col + kDc[d], row + kDr[d])) continue;
      options[n_opt] = d;
      weights[n_opt] = dir < 0 ? 1.0 : (d == dir ? 2.0 : 1.0);
      ++n_opt;
      if (n_opt == 3) break;
    }
    double wsum = 0.0;
    for (int i = 0; i < n_opt; ++i) wsum += weights[i];
    double r = uniform01(rng) * wsum;
    int choice = options[n_opt - 1];
    for (int i = 0; i < n_opt; ++i) {
      if (r < weights[i]) {
        choice = options[i];
        break;
      }
      r -= weights[i];
    }
    dir = choice;
    dirs.push_back(dir);
    col += kDc[dir];
    row += kDr[dir];
    route_nodes.push_back(node_at(col, row));
  }
  std::vector<std::uint32_t> route_segs;
  for (int k = 0; k < n_seg; ++k)
    route_segs.push_back(segment_between(route_nodes[static_cast<std::size_t>(k)],
                                         route_nodes[static_cast<std::size_t>(k + 1)]));
  // turn sign at interior node m: +1 clockwise, -1 counter-clockwise, 0 straight
  std::vector<int> turn(static_cast<std::size_t>(n_seg), 0);
  for (int m = 1; m < n_seg; ++m) {
    const int d0 = dirs[static_cast<std::size_t>(m - 1)], d1 = dirs[static_cast<std::size_t>(m)];
    if (d1 == (d0 + 1) % 4) turn[static_cast<std::size_t>(m)] = 1;
    else if (d1 == (d0 + 3) % 4) turn[static_cast<std::size_t>(m)] = -1;
    out.turns += turn[static_cast<std::size_t>(m)] != 0;
  }

  const double u_start = n_seg == 1 ? 60.0 : kEdgeMargin;
  const double u_end = n_seg == 1 ? S - 60.0 : (n_seg - 1) * S + (S - kEdgeMargin);

  // planned stops, ascending in u
  std::vector<PlannedStop> stops;
  for (int m = 0; m < n_seg; ++m) {
    if (uniform01(rng) < cfg_.midblock_stop_prob) {
      const double u = m * S + (kEdgeMargin + 30.0) + (S - 2.0 * kEdgeMargin - 60.0) * uniform01(rng);
      if (u > u_start + 50.0 && u < u_end - 50.0)
        stops.push_back({u, 2 + static_cast<int>(bounded(rng, 4)), -1});
    }
    if (m + 1 < n_seg) {
      const int node = route_nodes[static_cast<std::size_t>(m + 1)];
      const bool sig = nodes_[static_cast<std::size_t>(node)].signalized;
      const double p = sig ? cfg_.stop_prob_signalized : cfg_.stop_prob_unsignalized;
      if (uniform01(rng) < p) {
        const double d = kStopBandMin + (kStopBandMax - kStopBandMin) * uniform01(rng);
        const int dwell = sig ? 2 + static_cast<int>(bounded(rng, static_cast<std::uint64_t>(cfg_.max_dwell_samples - 1)))
                              : 2 + static_cast<int>(bounded(rng, 3));
        stops.push_back({(m + 1) * S - d, dwell, node});
      }
    }
  }

  auto seg_index_at = [&](double u) {
    return std::clamp(static_cast<int>(std::floor(u / S)), 0, n_seg - 1);
  };
  auto cruise = [&](int k) {
    const double lim = net_.segments[route_segs[static_cast<std::size_t>(k)]].speed_limit_mph;
    return std::clamp(lim * (1.0 + factor), 10.0, cfg_.max_speed_mph);
  };

  // kinematic state machine on a 3 s clock
  struct Raw {
    double u, v;
  };
  std::vector<Raw> raw;
  std::vector<PlannedStop> stops_hit;
  double u = u_start, v = cruise(0);
  std::size_t next_stop = 0;
  bool stopped = false;
  int dwell_left = 0;
  // short trips start parked so they still clear the minimum trip duration
  const double est_s = (u_end - u_start) / (v * geo::kMphToMps);
  if (est_s < 40.0) {
    const int dwell = 2 + static_cast<int>(std::ceil((40.0 - est_s) / kSampleSeconds));
    stops.insert(stops.begin(), {u_start, dwell, -1});
    stops_hit.push_back(stops.front());
    v = 0.0;
    stopped = true;
    dwell_left = dwell - 1;
  }
  while (true) {
    raw.push_back({u, v});
    if (u >= u_end) break;
    if (stopped) {
      if (dwell_left > 0) {
        --dwell_left;
        continue;
      }
      const double vn = std::min(accel_step, cruise(seg_index_at(u)));
      u += 0.5 * (v + vn) * geo::kMphToMps * kSampleSeconds;
      v = vn;
      stopped = false;
      ++next_stop;
      continue;
    }
    const double target = cruise(seg_index_at(u));
    double vn = v < target ? std::min(target, v + accel_step) : std::max(target, v - brake_step);
    bool snap = false;
    if (next_stop < stops.size()) {
      const double D = stops[next_stop].u - u;
      const double vm = v * geo::kMphToMps;
      if (D <= vm * kSampleSeconds + vm * vm / (2.0 * brake_mps2)) {
        vn = v - brake_step;
        snap = vn < kMinMovingMph;
      } else {
        vn += cfg_.speed_noise_mph * normal01(rng);
      }
      if (!snap && u + 0.5 * (v + std::max(vn, 0.0)) * geo::kMphToMps * kSampleSeconds >= stops[next_stop].u)
        snap = true;
    } else {
      vn += cfg_.speed_noise_mph * normal01(rng);
    }
    if (snap) {
      u = stops[next_stop].u;
      v = 0.0;
      stopped = true;
      dwell_left = stops[next_stop].dwell - 1;
      stops_hit.push_back(stops[next_stop]);
      continue;
    }
    vn = std::clamp(vn, kMinMovingMph, cfg_.max_speed_mph);
    u = std::min(u + 0.5 * (v + vn) * geo::kMphToMps * kSampleSeconds, u_end);
    v = vn;
  }

  // emitted fixes
  const auto local = [&] {
    using namespace std::chrono;
    const int year = cfg_.year_min + static_cast<int>(bounded(rng, static_cast<std::uint64_t>(cfg_.year_max - cfg_.year_min + 1)));
    const sys_days jan1 = sys_days{std::chrono::year{year} / January / 1};
    const sys_days dec31 = sys_days{std::chrono::year{year} / December / 31};
    const auto n_days = static_cast<std::uint64_t>((dec31 - jan1).count() + 1);
    const sys_days day = jan1 + days{static_cast<int>(bounded(rng, n_days))};
    // daytime-heavy hour profile
    static constexpr double kHourWeight[24] = {1, 1, 1, 1, 1, 2, 4, 8, 9, 6, 5, 6, 7, 6, 6, 7, 9, 10, 8, 6, 4, 3, 2, 1};
    double hw = 0;
    for (double w : kHourWeight) hw += w;
    double r = uniform01(rng) * hw;
    int hour = 23;
    for (int h = 0; h < 24; ++h) {
      if (r < kHourWeight[h]) {
        hour = h;
        break;
      }
      r -= kHourWeight[h];
    }
    const int second_of_hour = static_cast<int>(bounded(rng, 3600));
    const std::int64_t local_s = static_cast<std::int64_t>(day.time_since_epoch().count()) * 86400 + hour * 3600 +
                                 second_of_hour;
    CalendarFields c;
    c.year = year;
    c.hour = hour;
    // 1970-01-01 was a Thursday; Monday = 0
    c.dayofweek = static_cast<int>(((day.time_since_epoch().count() % 7) + 7 + 3) % 7);
    return std::pair{c, local_s - static_cast<std::int64_t>(cfg_.utc_offset_minutes) * 60};
  }();
  const std::int64_t t0 = local.second;

  std::vector<double> base_heading(static_cast<std::size_t>(n_seg));
  for (int k = 0; k < n_seg; ++k) base_heading[static_cast<std::size_t>(k)] = 90.0 * dirs[static_cast<std::size_t>(k)];
  std::vector<double> heading(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) heading[i] = base_heading[static_cast<std::size_t>(seg_index_at(raw[i].u))];
  for (int m = 1; m < n_seg; ++m) {
    const int sgn = turn[static_cast<std::size_t>(m)];
    if (sgn == 0) continue;
    const double node_u = m * S;
    std::size_t last_before = raw.size(), first_after = raw.size();
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i].u < node_u) last_before = i;
      else if (first_after == raw.size()) first_after = i;
    }
    if (last_before < raw.size()) heading[last_before] = base_heading[static_cast<std::size_t>(m - 1)] + kTurnOffsetDeg * sgn;
    if (first_after < raw.size()) heading[first_after] = base_heading[static_cast<std::size_t>(m)] - kTurnOffsetDeg * sgn;
  }

  std::vector<bool> node_sig(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) node_sig[i] = nodes_[i].signalized;

  out.samples.reserve(raw.size());
  out.journey.points.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const int k = seg_index_at(raw[i].u);
    double ue = raw[i].u;
    // keep fixes off node centres and off the intersection radius boundary,
    // where the match would hinge on rounding
    const double seg_lo = k * S, seg_hi = (k + 1) * S;
    double d_lo = ue - seg_lo, d_hi = seg_hi - ue;
    if (d_lo < kNodeClearance) ue = seg_lo + kNodeClearance;
    if (d_hi < kNodeClearance) ue = seg_hi - kNodeClearance;
    d_lo = ue - seg_lo;
    d_hi = seg_hi - ue;
    const double R = kIntersectionRadiusM;
    if (std::fabs(d_lo - R) < kRadiusBand) ue = seg_lo + (d_lo < R ? R - kRadiusBand : R + kRadiusBand);
    if (std::fabs(d_hi - R) < kRadiusBand) ue = seg_hi - (d_hi < R ? R - kRadiusBand : R + kRadiusBand);
    d_lo = ue - seg_lo;
    d_hi = seg_hi - ue;

    SimSample smp;
    smp.t = t0 + static_cast<std::int64_t>(i) * kSampleSeconds;
    smp.u = ue;
    smp.segment = route_segs[static_cast<std::size_t>(k)];
    smp.limit_mph = net_.segments[smp.segment].speed_limit_mph;
    smp.speed_mph = round_to(raw[i].v, 0.01);
    double h = heading[i] + cfg_.heading_noise_deg * (2.0 * uniform01(rng) - 1.0);
    h = wrap360(round_to(wrap360(h), 0.01));
    smp.heading_deg = h;
    if (d_lo <= R) smp.near_node = route_nodes[static_cast<std::size_t>(k)];
    else if (d_hi <= R) smp.near_node = route_nodes[static_cast<std::size_t>(k + 1)];

    const auto& na = nodes_[static_cast<std::size_t>(route_nodes[static_cast<std::size_t>(k)])].xy;
    const auto& nb = nodes_[static_cast<std::size_t>(route_nodes[static_cast<std::size_t>(k + 1)])].xy;
    const double frac = d_lo / S;
    const geo::XY xy{na.x + (nb.x - na.x) * frac, na.y + (nb.y - na.y) * frac};
    const auto ll = proj_.to_latlon(xy);

    GpsPoint p;
    p.journey_id = out.journey.journey_id;
    p.point_id = out.journey.journey_id + "-" + padded(i, 4);
    p.timestamp = smp.t;
    p.lat = round_to(ll.lat, 1e-7);
    p.lon = round_to(ll.lon, 1e-7);
    p.speed_mph = smp.speed_mph;
    p.heading_deg = smp.heading_deg;
    p.postal_code = "327" + padded(static_cast<std::size_t>(10 + (k * 7 + static_cast<int>(index)) % 90), 2);
    out.journey.points.push_back(std::move(p));
    out.samples.push_back(smp);
  }
  out.truth = truth_from_samples(out.journey.journey_id, out.samples, stops_hit, node_sig, net_, out.turns,
                                 local.first);
  return out;
}

std::size_t SyntheticTruth::hotspot_count(std::size_t min_points) const {
  return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(),
                                                [&](const SegmentTruth& s) { return s.point_count >= min_points; }));
}

void write_segment_truth_csv(std::ostream& out, const std::vector<SegmentTruth>& rows) {
  out << "segment_id,point_count,mean_speeding_prop\n";
  for (const auto& r : rows) out << r.segment_id << ',' << r.point_count << ',' << fmt_double(r.mean_speeding_prop) << '\n';
}

std::vector<SegmentTruth> read_segment_truth_csv(std::istream& in) {
  std::vector<SegmentTruth> rows;
  std::string line;
  std::vector<std::string_view> f;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    split_csv_line(trim(line), ',', f);
    if (f.size() != 3) throw std::runtime_error("segment truth: expected 3 columns");
    SegmentTruth r;
    r.segment_id = std::string(f[0]);
    r.point_count = static_cast<std::size_t>(parse_int64(f[1]).value_or(0));
    r.mean_speeding_prop = parse_double(f[2]).value_or(0.0);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

void write_point(std::ostream& out, const GpsPoint& p) {
  out << p.journey_id << ',' << p.point_id << ',' << p.timestamp << ',' << fmt_double(p.lat) << ','
      << fmt_double(p.lon) << ',' << fmt_double(p.speed_mph) << ',' << fmt_double(p.heading_deg) << ','
      << p.postal_code << '\n';
}

void write_corrupt(std::ostream& out, std::size_t k) {
  switch (k % 4) {
    case 0: out << "JX,bad-" << k << ",1600000000,91,-81.3,30,90,32771\n"; break;     // latitude out of range
    case 1: out << "JX,bad-" << k << ",1600000000,28.7,-81.3,-4,90,32771\n"; break;   // negative speed
    case 2: out << "JX,bad-" << k << ",not-a-time,28.7,-81.3,30,90,32771\n"; break;   // unparsable
    default: out << "JX,bad-" << k << ",1600000000,28.7\n"; break;                     // truncated
  }
}

}  // namespace

SyntheticBundle generate_synthetic(const SynthConfig& config, const std::filesystem::path& dir) {
  SyntheticGenerator gen(config);
  std::filesystem::create_directories(dir);
  SyntheticBundle b;
  b.network = dir / "network.geojson";
  b.points = dir / "points.csv";
  b.truth_features = dir / "truth_features.csv";
  b.truth_segments = dir / "truth_segments.csv";
  {
    std::ofstream net(b.network, std::ios::binary);
    net << network_to_geojson(gen.network()).dump() << '\n';
    if (!net) throw std::runtime_error("cannot write " + b.network.string());
  }

  const auto& segs = gen.network().segments;
  std::vector<std::size_t> seg_count(segs.size(), 0);
  std::vector<double> seg_sum(segs.size(), 0.0);
  auto& truth = b.truth;
  truth.corrupt_lines = config.corrupt_lines;

  std::ofstream pts(b.points, std::ios::binary);
  pts << "journeyId,dataPointId,timestamp,latitude,longitude,speed,heading,postalCode\n";
  // rough total so corrupt lines spread over the whole file
  const std::size_t est_lines = std::max<std::size_t>(1, config.n_journeys * 90);
  const std::size_t corrupt_every = config.corrupt_lines ? std::max<std::size_t>(1, est_lines / (config.corrupt_lines + 1)) : 0;
  std::size_t lines = 0, corrupt_written = 0;
  const std::size_t block = std::max<std::size_t>(1, config.interleave);
  for (std::size_t start = 0; start < config.n_journeys; start += block) {
    const std::size_t end = std::min(config.n_journeys, start + block);
    std::vector<SimJourney> active;
    for (std::size_t i = start; i < end; ++i) active.push_back(gen.simulate(i));
    std::size_t longest = 0;
    for (const auto& sj : active) longest = std::max(longest, sj.journey.points.size());
    for (std::size_t k = 0; k < longest; ++k)
      for (const auto& sj : active) {
        if (k >= sj.journey.points.size()) continue;
        write_point(pts, sj.journey.points[k]);
        ++lines;
        if (corrupt_every && corrupt_written < config.corrupt_lines && lines % corrupt_every == 0)
          write_corrupt(pts, corrupt_written++);
      }
    for (auto& sj : active) {
      for (const auto& smp : sj.samples) {
        ++seg_count[smp.segment];
        seg_sum[smp.segment] += std::max(0.0, (smp.speed_mph - smp.limit_mph) / smp.limit_mph);
      }
      truth.total_points += sj.samples.size();
      ++truth.level_histogram[static_cast<std::size_t>(sj.truth.speeding_level)];
      truth.journeys.push_back(std::move(sj.truth));
    }
  }
  while (corrupt_written < config.corrupt_lines) write_corrupt(pts, corrupt_written++);
  pts.close();
  if (!pts) throw std::runtime_error("cannot write " + b.points.string());

  std::sort(truth.journeys.begin(), truth.journeys.end(),
            [](const JourneyFeatures& a, const JourneyFeatures& c) { return a.journey_id < c.journey_id; });
  for (std::size_t s = 0; s < segs.size(); ++s)
    if (seg_count[s]) truth.segments.push_back({segs[s].id, seg_count[s], seg_sum[s] / static_cast<double>(seg_count[s])});
  std::sort(truth.segments.begin(), truth.segments.end(),
            [](const SegmentTruth& a, const SegmentTruth& c) { return a.segment_id < c.segment_id; });

  std::ofstream tf(b.truth_features, std::ios::binary);
  write_features_csv(tf, truth.journeys);
  std::ofstream ts(b.truth_segments, std::ios::binary);
  write_segment_truth_csv(ts, truth.segments);
  return b;
}

}  // namespace tripspeed
