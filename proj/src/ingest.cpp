#include "tripspeed/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tripspeed/geo.hpp"
#include "tripspeed/util.hpp"

namespace tripspeed {

bool operator==(const GpsPoint& a, const GpsPoint& b) {
  return a.journey_id == b.journey_id && a.point_id == b.point_id && a.timestamp == b.timestamp &&
         a.lat == b.lat && a.lon == b.lon && a.speed_mph == b.speed_mph &&
         a.heading_deg == b.heading_deg && a.postal_code == b.postal_code;
}

void ParseReport::reject(std::size_t line_no, const std::string& reason) {
  ++rejected;
  ++reasons[reason];
  if (first_rejected_lines.size() < kMaxRecordedLines) first_rejected_lines.push_back(line_no);
}

void ParseReport::merge(const ParseReport& other) {
  lines_read += other.lines_read;
  accepted += other.accepted;
  rejected += other.rejected;
  for (const auto& [k, v] : other.reasons) reasons[k] += v;
  for (auto l : other.first_rejected_lines) {
    if (first_rejected_lines.size() >= kMaxRecordedLines) break;
    first_rejected_lines.push_back(l);
  }
}

nlohmann::json ParseReport::to_json() const {
  return {{"lines_read", lines_read},
          {"accepted", accepted},
          {"rejected", rejected},
          {"reasons", reasons},
          {"first_rejected_lines", first_rejected_lines}};
}

std::string check_point(const GpsPoint& p) {
  if (p.journey_id.empty()) return "missing_journey_id";
  if (!std::isfinite(p.lat) || p.lat < -90.0 || p.lat > 90.0) return "lat_out_of_range";
  if (!std::isfinite(p.lon) || p.lon < -180.0 || p.lon > 180.0) return "lon_out_of_range";
  if (!std::isfinite(p.speed_mph) || p.speed_mph < 0.0) return "bad_speed";
  if (!std::isfinite(p.heading_deg) || p.heading_deg < 0.0 || p.heading_deg >= 360.0)
    return "bad_heading";
  return {};
}

void split_csv_line(std::string_view line, char delim, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      quoted = !quoted;
    } else if (c == delim && !quoted) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  out.push_back(line.substr(start));
}

PointReader::PointReader(std::istream& in, SchemaConfig schema)
    : in_(in), schema_(std::move(schema)), format_(schema_.format) {
  if (!in_) throw IngestError("point stream is not readable");
}

void PointReader::read_header(std::string_view line) {
  split_csv_line(line, schema_.delimiter, fields_);
  n_columns_ = fields_.size();
  auto find = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < fields_.size(); ++i)
      if (unquote(fields_[i]) == name) return static_cast<int>(i);
    return -1;
  };
  col_journey_ = find(schema_.journey_id);
  col_point_ = find(schema_.point_id);
  col_ts_ = find(schema_.timestamp);
  col_lat_ = find(schema_.lat);
  col_lon_ = find(schema_.lon);
  col_speed_ = find(schema_.speed);
  col_heading_ = find(schema_.heading);
  col_postal_ = find(schema_.postal_code);
  std::string missing;
  for (auto [col, name] : {std::pair{col_journey_, &schema_.journey_id},
                           std::pair{col_ts_, &schema_.timestamp}, std::pair{col_lat_, &schema_.lat},
                           std::pair{col_lon_, &schema_.lon}, std::pair{col_speed_, &schema_.speed},
                           std::pair{col_heading_, &schema_.heading}}) {
    if (col < 0) missing += (missing.empty() ? "" : ", ") + *name;
  }
  if (!missing.empty()) throw IngestError("CSV header is missing required columns: " + missing);
}

bool PointReader::parse_csv(std::string_view line, GpsPoint& out, std::string& reason) {
  split_csv_line(line, schema_.delimiter, fields_);
  if (fields_.size() != n_columns_) {
    reason = "column_count";
    return false;
  }
  out.journey_id = std::string(unquote(fields_[col_journey_]));
  out.point_id = col_point_ >= 0 ? std::string(unquote(fields_[col_point_])) : std::string();
  out.postal_code = col_postal_ >= 0 ? std::string(unquote(fields_[col_postal_])) : std::string();
  auto ts = parse_int64(fields_[col_ts_]);
  auto lat = parse_double(fields_[col_lat_]);
  auto lon = parse_double(fields_[col_lon_]);
  auto speed = parse_double(fields_[col_speed_]);
  auto heading = parse_double(fields_[col_heading_]);
  if (!ts) {
    reason = "bad_timestamp";
    return false;
  }
  if (!lat || !lon || !speed || !heading) {
    reason = "unparsable_number";
    return false;
  }
  out.timestamp = *ts;
  out.lat = *lat;
  out.lon = *lon;
  out.speed_mph = *speed;
  out.heading_deg = *heading;
  reason = check_point(out);
  return reason.empty();
}

bool PointReader::parse_ndjson(std::string_view line, GpsPoint& out, std::string& reason) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    reason = "malformed_json";
    return false;
  }
  auto text = [&](const std::string& key) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
    return it->dump();
  };
  auto number = [&](const std::string& key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end()) return std::nullopt;
    if (it->is_number()) return it->get<double>();
    if (it->is_string()) return parse_double(it->get_ref<const std::string&>());
    return std::nullopt;
  };
  auto jid = text(schema_.journey_id);
  if (!jid) {
    reason = "missing_journey_id";
    return false;
  }
  out.journey_id = *jid;
  out.point_id = text(schema_.point_id).value_or("");
  out.postal_code = text(schema_.postal_code).value_or("");
  auto ts_it = j.find(schema_.timestamp);
  std::optional<std::int64_t> ts;
  if (ts_it != j.end()) {
    if (ts_it->is_number_integer()) ts = ts_it->get<std::int64_t>();
    else if (ts_it->is_string()) ts = parse_int64(ts_it->get_ref<const std::string&>());
  }
  if (!ts) {
    reason = "bad_timestamp";
    return false;
  }
  auto lat = number(schema_.lat);
  auto lon = number(schema_.lon);
  auto speed = number(schema_.speed);
  auto heading = number(schema_.heading);
  if (!lat || !lon || !speed || !heading) {
    reason = "unparsable_number";
    return false;
  }
  out.timestamp = *ts;
  out.lat = *lat;
  out.lon = *lon;
  out.speed_mph = *speed;
  out.heading_deg = *heading;
  reason = check_point(out);
  return reason.empty();
}

bool PointReader::next(GpsPoint& out) {
  std::string reason;
  while (std::getline(in_, line_)) {
    ++line_no_;
    std::string_view line = trim(line_);
    if (line.empty()) continue;
    if (format_ == InputFormat::Auto) format_ = line.front() == '{' ? InputFormat::Ndjson : InputFormat::Csv;
    if (format_ == InputFormat::Csv && n_columns_ == 0) {
      read_header(line);
      continue;
    }
    ++report_.lines_read;
    const bool ok = format_ == InputFormat::Csv ? parse_csv(line, out, reason) : parse_ndjson(line, out, reason);
    if (ok) {
      ++report_.accepted;
      return true;
    }
    report_.reject(line_no_, reason);
  }
  if (in_.bad()) throw IngestError("read error on point stream");
  return false;
}

std::vector<GpsPoint> parse_points(std::istream& in, const SchemaConfig& schema, ParseReport* report) {
  PointReader reader(in, schema);
  std::vector<GpsPoint> points;
  GpsPoint p;
  while (reader.next(p)) points.push_back(p);
  if (report) *report = reader.report();
  return points;
}

nlohmann::json GroupReport::to_json() const {
  return {{"points_in", points_in},           {"duplicates_collapsed", duplicates_collapsed},
          {"late_points", late_points},       {"gap_splits", gap_splits},
          {"journeys_out", journeys_out},     {"dropped_short", dropped_short},
          {"points_dropped_short", points_dropped_short}};
}

JourneyGrouper::JourneyGrouper(GroupingParams params) : params_(params) {
  if (params_.window_points == 0) params_.window_points = 1;
  next_sweep_ = params_.window_points;
}

void JourneyGrouper::add(GpsPoint p) {
  ++report_.points_in;
  ++seq_;
  auto it = open_.find(p.journey_id);
  if (it == open_.end()) {
    if (closed_ids_.count(fnv1a64(p.journey_id))) {
      ++report_.late_points;
      return;
    }
    it = open_.emplace(p.journey_id, Open{}).first;
  }
  it->second.last_seen = seq_;
  it->second.points.push_back(std::move(p));
}

void JourneyGrouper::close(std::string id, Open&& o, std::vector<Journey>& out) {
  closed_ids_.insert(fnv1a64(id));
  auto& pts = o.points;
  std::stable_sort(pts.begin(), pts.end(),
                   [](const GpsPoint& a, const GpsPoint& b) { return a.timestamp < b.timestamp; });
  // keep-first on duplicate timestamps; stable sort preserves arrival order
  std::vector<GpsPoint> unique;
  unique.reserve(pts.size());
  for (auto& p : pts) {
    if (!unique.empty() && unique.back().timestamp == p.timestamp) {
      ++report_.duplicates_collapsed;
      continue;
    }
    unique.push_back(std::move(p));
  }
  std::size_t piece = 0;
  std::size_t begin = 0;
  auto emit = [&](std::size_t end) {
    const std::size_t n = end - begin;
    if (n < 2) {
      ++report_.dropped_short;
      report_.points_dropped_short += n;
    } else {
      Journey j;
      j.journey_id = piece == 0 ? id : id + "#" + std::to_string(piece);
      j.points.assign(std::make_move_iterator(unique.begin() + static_cast<std::ptrdiff_t>(begin)),
                      std::make_move_iterator(unique.begin() + static_cast<std::ptrdiff_t>(end)));
      for (auto& p : j.points) p.journey_id = j.journey_id;
      out.push_back(std::move(j));
      ++report_.journeys_out;
    }
    ++piece;
    begin = end;
  };
  for (std::size_t i = 1; i < unique.size(); ++i) {
    if (unique[i].timestamp - unique[i - 1].timestamp > params_.gap_split_s) {
      ++report_.gap_splits;
      emit(i);
    }
  }
  emit(unique.size());
}

void JourneyGrouper::flush_before(std::size_t seq, std::vector<Journey>& out) {
  std::vector<std::string> ids;
  for (const auto& [id, o] : open_)
    if (o.last_seen < seq) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::vector<Journey> batch;
  for (auto& id : ids) {
    auto node = open_.extract(id);
    close(std::move(node.key()), std::move(node.mapped()), batch);
  }
  sort_journeys(batch);
  for (auto& j : batch) out.push_back(std::move(j));
}

void JourneyGrouper::drain_ready(std::vector<Journey>& out) {
  if (seq_ < next_sweep_) return;
  // sweep a few times per window so closed journeys do not pile up
  next_sweep_ = seq_ + std::max<std::size_t>(1, params_.window_points / 4);
  if (seq_ > params_.window_points) flush_before(seq_ - params_.window_points, out);
}

void JourneyGrouper::finish(std::vector<Journey>& out) { flush_before(seq_ + 1, out); }

void sort_journeys(std::vector<Journey>& journeys) {
  std::sort(journeys.begin(), journeys.end(), [](const Journey& a, const Journey& b) {
    if (a.start_time() != b.start_time()) return a.start_time() < b.start_time();
    return a.journey_id < b.journey_id;
  });
}

std::vector<Journey> group_journeys(std::vector<GpsPoint> points, const GroupingParams& params,
                                    GroupReport* report) {
  GroupingParams p = params;
  p.window_points = std::max<std::size_t>(points.size() + 1, 1);
  JourneyGrouper grouper(p);
  for (auto& pt : points) grouper.add(std::move(pt));
  std::vector<Journey> out;
  grouper.finish(out);
  if (report) *report = grouper.report();
  return out;
}

std::string_view to_string(JourneyReject r) {
  switch (r) {
    case JourneyReject::None: return "none";
    case JourneyReject::TooFewPoints: return "too_few_points";
    case JourneyReject::TooShort: return "too_short";
  }
  return "unknown";
}

namespace {

double implied_speed_mph(const GpsPoint& a, const GpsPoint& b) {
  const double dt = static_cast<double>(b.timestamp - a.timestamp);
  const double d = geo::distance_m({a.lat, a.lon}, {b.lat, b.lon});
  return d / dt / geo::kMphToMps;
}

}  // namespace

ValidationResult validate_journey(Journey journey, const ValidationParams& params) {
  ValidationResult result;
  auto& pts = journey.points;
  if (pts.size() >= 2) {
    const double vmax = params.max_implied_speed_mph;
    std::vector<GpsPoint> kept;
    kept.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const bool has_next = i + 1 < pts.size();
      const bool out_fast = has_next && implied_speed_mph(pts[i], pts[i + 1]) > vmax;
      bool drop = false;
      if (!kept.empty()) {
        const bool in_fast = implied_speed_mph(kept.back(), pts[i]) > vmax;
        drop = in_fast && (out_fast || !has_next);
      } else if (out_fast && i + 2 < pts.size()) {
        // a leading outlier: the following pair is plausible
        drop = implied_speed_mph(pts[i + 1], pts[i + 2]) <= vmax;
      }
      if (drop) {
        ++result.teleports_removed;
        continue;
      }
      kept.push_back(std::move(pts[i]));
    }
    pts = std::move(kept);
  }
  if (pts.size() < params.min_points || pts.size() < 2) {
    result.reason = JourneyReject::TooFewPoints;
    return result;
  }
  if (journey.end_time() - journey.start_time() < params.min_duration_s) {
    result.reason = JourneyReject::TooShort;
    return result;
  }
  result.journey = std::move(journey);
  return result;
}

void write_journeys_csv(std::ostream& out, const std::vector<Journey>& journeys, bool header) {
  if (header) out << "journeyId,dataPointId,timestamp,latitude,longitude,speed,heading,postalCode\n";
  for (const auto& j : journeys) {
    for (const auto& p : j.points) {
      out << p.journey_id << ',' << p.point_id << ',' << p.timestamp << ',' << fmt_double(p.lat) << ','
          << fmt_double(p.lon) << ',' << fmt_double(p.speed_mph) << ',' << fmt_double(p.heading_deg)
          << ',' << p.postal_code << '\n';
    }
  }
}

}  // namespace tripspeed
