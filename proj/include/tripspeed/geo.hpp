#pragma once

#include <cmath>

namespace tripspeed::geo {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kMphToMps = 0.44704;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Planar coordinates in meters (x east, y north).
struct XY {
  double x = 0.0;
  double y = 0.0;
};

inline bool valid_wgs84(double lat, double lon) {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
         lon >= -180.0 && lon <= 180.0;
}

/// Equirectangular projection around a fixed reference point. Adequate at
/// county scale; all distances in the matcher go through this.
class LocalProjection {
 public:
  LocalProjection() = default;
  explicit LocalProjection(LatLon origin)
      : origin_(origin), cos_lat0_(std::cos(origin.lat * kDegToRad)) {}

  XY to_xy(LatLon p) const {
    return {(p.lon - origin_.lon) * kDegToRad * kEarthRadiusM * cos_lat0_,
            (p.lat - origin_.lat) * kDegToRad * kEarthRadiusM};
  }

  LatLon to_latlon(XY p) const {
    return {origin_.lat + p.y / (kDegToRad * kEarthRadiusM),
            origin_.lon + p.x / (kDegToRad * kEarthRadiusM * cos_lat0_)};
  }

  LatLon origin() const { return origin_; }

 private:
  LatLon origin_{};
  double cos_lat0_ = 1.0;
};

/// Equirectangular distance using the mean latitude of the two points.
inline double distance_m(LatLon a, LatLon b) {
  const double mean_lat = 0.5 * (a.lat + b.lat) * kDegToRad;
  const double dx = (b.lon - a.lon) * kDegToRad * std::cos(mean_lat);
  const double dy = (b.lat - a.lat) * kDegToRad;
  return kEarthRadiusM * std::sqrt(dx * dx + dy * dy);
}

/// Maps an angle difference into (-180, 180].
inline double wrap180(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

/// Compass bearing of the vector a->b in degrees, [0, 360).
inline double bearing_deg(XY a, XY b) {
  double deg = std::atan2(b.x - a.x, b.y - a.y) / kDegToRad;
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

/// Smallest angle between a heading and an undirected road bearing, [0, 90].
inline double axial_deviation(double heading, double bearing) {
  const double d = std::fabs(wrap180(heading - bearing));
  return d > 90.0 ? 180.0 - d : d;
}

struct SegmentDistance {
  double distance = 0.0;
  double t = 0.0;  // clamped projection parameter along a->b
};

inline SegmentDistance point_segment_distance(XY p, XY a, XY b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2;
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  }
  const double qx = a.x + t * vx - p.x;
  const double qy = a.y + t * vy - p.y;
  return {std::sqrt(qx * qx + qy * qy), t};
}

inline double distance(XY a, XY b) { return std::hypot(b.x - a.x, b.y - a.y); }

}  // namespace tripspeed::geo
