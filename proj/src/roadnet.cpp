#include "tripspeed/roadnet.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <ostream>
#include <sstream>

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/box.hpp>
#include <boost/geometry/geometries/point.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "tripspeed/util.hpp"

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

namespace tripspeed {

namespace {

std::string upper(std::string_view s) {
  std::string r(s);
  for (auto& c : r) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return r;
}

}  // namespace

std::string_view to_string(ContextClass c) {
  switch (c) {
    case ContextClass::C1: return "C1";
    case ContextClass::C2: return "C2";
    case ContextClass::C3C: return "C3C";
    case ContextClass::C3R: return "C3R";
    case ContextClass::C4: return "C4";
    case ContextClass::Other: return "OTHER";
  }
  return "OTHER";
}

std::string_view to_string(LandUse l) {
  switch (l) {
    case LandUse::Residential: return "RESIDENTIAL";
    case LandUse::Commercial: return "COMMERCIAL";
    case LandUse::Industrial: return "INDUSTRIAL";
    case LandUse::Institutional: return "INSTITUTIONAL";
    case LandUse::Other: return "OTHER";
  }
  return "OTHER";
}

ContextClass parse_context(std::string_view s, bool* known) {
  const std::string u = upper(trim(s));
  ContextClass c = ContextClass::Other;
  bool ok = true;
  if (u == "C1") c = ContextClass::C1;
  else if (u == "C2") c = ContextClass::C2;
  else if (u == "C3C") c = ContextClass::C3C;
  else if (u == "C3R") c = ContextClass::C3R;
  else if (u == "C4") c = ContextClass::C4;
  else ok = (u == "OTHER");
  if (known) *known = ok;
  return c;
}

LandUse parse_land_use(std::string_view s, bool* known) {
  const std::string u = upper(trim(s));
  LandUse l = LandUse::Other;
  bool ok = true;
  if (u == "RESIDENTIAL") l = LandUse::Residential;
  else if (u == "COMMERCIAL") l = LandUse::Commercial;
  else if (u == "INDUSTRIAL") l = LandUse::Industrial;
  else if (u == "INSTITUTIONAL") l = LandUse::Institutional;
  else ok = (u == "OTHER");
  if (known) *known = ok;
  return l;
}

nlohmann::json NetworkLoadReport::to_json() const {
  return {{"segments", segments},
          {"intersections", intersections},
          {"rejected_missing_speed_limit", rejected_missing_speed_limit},
          {"unknown_context", unknown_context},
          {"unknown_land_use", unknown_land_use},
          {"ignored_features", ignored_features}};
}

namespace {

geo::LatLon read_position(const nlohmann::json& pos) {
  if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number())
    throw NetworkError("malformed coordinate: " + pos.dump());
  geo::LatLon ll{pos[1].get<double>(), pos[0].get<double>()};
  if (!geo::valid_wgs84(ll.lat, ll.lon)) throw NetworkError("coordinate outside WGS84: " + pos.dump());
  return ll;
}

std::string property_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

Network load_network(std::istream& in, const NetworkSchema& schema) {
  if (!in) throw NetworkError("network stream is not readable");
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw NetworkError("network file is not valid JSON");
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array())
    throw NetworkError("network file must be a GeoJSON FeatureCollection");

  Network net;
  auto& rep = net.report;
  std::size_t ordinal = 0;
  for (const auto& f : doc["features"]) {
    ++ordinal;
    if (!f.is_object() || !f.contains("geometry") || !f["geometry"].is_object())
      throw NetworkError("feature " + std::to_string(ordinal) + " has no geometry");
    const auto& geom = f["geometry"];
    const std::string type = geom.value("type", "");
    const nlohmann::json props = f.contains("properties") && f["properties"].is_object()
                                     ? f["properties"]
                                     : nlohmann::json::object();
    std::string id;
    if (props.contains(schema.id)) id = property_text(props[schema.id]);
    else if (f.contains("id")) id = property_text(f["id"]);
    else id = "f" + std::to_string(ordinal);

    if (!geom.contains("coordinates")) throw NetworkError("feature " + id + " has no coordinates");
    const auto& coords = geom["coordinates"];
    if (type == "LineString") {
      RoadSegment seg;
      seg.id = id;
      if (!coords.is_array() || coords.size() < 2)
        throw NetworkError("LineString " + id + " needs at least 2 vertices");
      for (const auto& c : coords) seg.polyline.push_back(read_position(c));
      auto sl = props.find(schema.speed_limit);
      if (sl == props.end() || !sl->is_number() || !(sl->get<double>() > 0.0)) {
        ++rep.rejected_missing_speed_limit;
        continue;
      }
      seg.speed_limit_mph = sl->get<double>();
      bool known = true;
      seg.context = parse_context(props.contains(schema.context_class)
                                      ? property_text(props[schema.context_class])
                                      : std::string(),
                                  &known);
      if (!known) ++rep.unknown_context;
      seg.land_use = parse_land_use(
          props.contains(schema.land_use) ? property_text(props[schema.land_use]) : std::string(), &known);
      if (!known) ++rep.unknown_land_use;
      if (props.contains(schema.functional_class))
        seg.functional_class = property_text(props[schema.functional_class]);
      for (auto it = props.begin(); it != props.end(); ++it) {
        const auto& k = it.key();
        if (k == schema.id || k == schema.speed_limit || k == schema.context_class ||
            k == schema.land_use || k == schema.functional_class)
          continue;
        seg.extra[k] = property_text(it.value());
      }
      net.segments.push_back(std::move(seg));
      ++rep.segments;
    } else if (type == "Point") {
      Intersection x;
      x.id = id;
      x.location = read_position(coords);
      auto sig = props.find(schema.signalized);
      x.signalized = sig != props.end() && sig->is_boolean() && sig->get<bool>();
      net.intersections.push_back(std::move(x));
      ++rep.intersections;
    } else {
      ++rep.ignored_features;
    }
  }
  return net;
}

Network load_network_file(const std::string& path, const NetworkSchema& schema) {
  std::ifstream in(path);
  if (!in) throw NetworkError("cannot open network file " + path);
  return load_network(in, schema);
}

nlohmann::json network_to_geojson(const Network& net, const NetworkSchema& schema) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& s : net.segments) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& v : s.polyline) coords.push_back({v.lon, v.lat});
    nlohmann::json props = {{schema.id, s.id},
                            {schema.speed_limit, s.speed_limit_mph},
                            {schema.context_class, to_string(s.context)},
                            {schema.land_use, to_string(s.land_use)}};
    if (!s.functional_class.empty()) props[schema.functional_class] = s.functional_class;
    for (const auto& [k, v] : s.extra) props[k] = v;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                        {"properties", props}});
  }
  for (const auto& x : net.intersections) {
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", {x.location.lon, x.location.lat}}}},
                        {"properties", {{schema.id, x.id}, {schema.signalized, x.signalized}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

// ---------------------------------------------------------------------------

using BgPoint = bg::model::point<double, 2, bg::cs::cartesian>;
using BgBox = bg::model::box<BgPoint>;
using EdgeValue = std::pair<BgBox, std::uint32_t>;
using NodeValue = std::pair<BgPoint, std::uint32_t>;

struct NetworkIndex::Impl {
  struct Edge {
    std::uint32_t segment;
    geo::XY a, b;
  };
  std::vector<Edge> edges;
  std::vector<geo::XY> nodes;
  bgi::rtree<EdgeValue, bgi::rstar<16>> edge_tree;
  bgi::rtree<NodeValue, bgi::rstar<16>> node_tree;
};

NetworkIndex::NetworkIndex(const Network& net) : net_(&net), impl_(std::make_unique<Impl>()) {
  if (net.segments.empty() && net.intersections.empty())
    throw NetworkError("cannot index an empty network");
  double min_lat = 90, max_lat = -90, min_lon = 180, max_lon = -180;
  auto extend = [&](geo::LatLon p) {
    min_lat = std::min(min_lat, p.lat);
    max_lat = std::max(max_lat, p.lat);
    min_lon = std::min(min_lon, p.lon);
    max_lon = std::max(max_lon, p.lon);
  };
  for (const auto& s : net.segments)
    for (const auto& v : s.polyline) extend(v);
  for (const auto& x : net.intersections) extend(x.location);
  proj_ = geo::LocalProjection({0.5 * (min_lat + max_lat), 0.5 * (min_lon + max_lon)});

  std::vector<EdgeValue> edge_values;
  for (std::uint32_t si = 0; si < net.segments.size(); ++si) {
    const auto& poly = net.segments[si].polyline;
    for (std::size_t k = 0; k + 1 < poly.size(); ++k) {
      const geo::XY a = proj_.to_xy(poly[k]);
      const geo::XY b = proj_.to_xy(poly[k + 1]);
      const auto id = static_cast<std::uint32_t>(impl_->edges.size());
      impl_->edges.push_back({si, a, b});
      BgBox box(BgPoint(std::min(a.x, b.x), std::min(a.y, b.y)), BgPoint(std::max(a.x, b.x), std::max(a.y, b.y)));
      edge_values.emplace_back(box, id);
    }
  }
  std::vector<NodeValue> node_values;
  for (std::uint32_t i = 0; i < net.intersections.size(); ++i) {
    const geo::XY p = proj_.to_xy(net.intersections[i].location);
    impl_->nodes.push_back(p);
    node_values.emplace_back(BgPoint(p.x, p.y), i);
  }
  // packing constructors give a deterministic tree for a given input order
  impl_->edge_tree = decltype(impl_->edge_tree)(edge_values.begin(), edge_values.end());
  impl_->node_tree = decltype(impl_->node_tree)(node_values.begin(), node_values.end());
}

NetworkIndex::~NetworkIndex() = default;
NetworkIndex::NetworkIndex(NetworkIndex&&) noexcept = default;
NetworkIndex& NetworkIndex::operator=(NetworkIndex&&) noexcept = default;

std::vector<SegmentCandidate> NetworkIndex::segments_within(geo::XY p, double radius_m) const {
  BgBox q(BgPoint(p.x - radius_m, p.y - radius_m), BgPoint(p.x + radius_m, p.y + radius_m));
  std::vector<EdgeValue> hits;
  impl_->edge_tree.query(bgi::intersects(q), std::back_inserter(hits));
  struct Hit {
    SegmentCandidate cand;
    std::uint32_t edge;
  };
  std::vector<Hit> out;
  for (const auto& [box, eid] : hits) {
    const auto& e = impl_->edges[eid];
    const double d = geo::point_segment_distance(p, e.a, e.b).distance;
    if (d > radius_m) continue;
    out.push_back({{e.segment, d, geo::bearing_deg(e.a, e.b)}, eid});
  }
  // one entry per segment: its closest edge, lowest edge index on ties
  std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) {
    if (a.cand.segment != b.cand.segment) return a.cand.segment < b.cand.segment;
    if (a.cand.distance_m != b.cand.distance_m) return a.cand.distance_m < b.cand.distance_m;
    return a.edge < b.edge;
  });
  std::vector<SegmentCandidate> unique;
  for (const auto& h : out)
    if (unique.empty() || unique.back().segment != h.cand.segment) unique.push_back(h.cand);
  return unique;
}

std::vector<IntersectionHit> NetworkIndex::intersections_within(geo::XY p, double radius_m) const {
  BgBox q(BgPoint(p.x - radius_m, p.y - radius_m), BgPoint(p.x + radius_m, p.y + radius_m));
  std::vector<NodeValue> hits;
  impl_->node_tree.query(bgi::intersects(q), std::back_inserter(hits));
  std::vector<IntersectionHit> out;
  for (const auto& [pt, id] : hits) {
    const double d = geo::distance(p, impl_->nodes[id]);
    if (d <= radius_m) out.push_back({id, d});
  }
  std::sort(out.begin(), out.end(),
            [](const IntersectionHit& a, const IntersectionHit& b) { return a.intersection < b.intersection; });
  return out;
}

NetworkIndex build_index(const Network& net) { return NetworkIndex(net); }

PointMatch match_point(const GpsPoint& p, const NetworkIndex& index, const MatchParams& params) {
  PointMatch m;
  const auto& net = index.network();
  const geo::XY xy = index.projection().to_xy({p.lat, p.lon});
  const auto cands = index.segments_within(xy, params.match_radius_m);
  const SegmentCandidate* best = nullptr;
  double best_dev = 0.0;
  bool best_compatible = false;
  for (const auto& c : cands) {
    const double dev = geo::axial_deviation(p.heading_deg, c.bearing_deg);
    const bool compatible = dev <= params.heading_tol_deg;
    bool better = false;
    if (!best) better = true;
    else if (compatible != best_compatible) better = compatible;
    else if (c.distance_m != best->distance_m) better = c.distance_m < best->distance_m;
    else if (dev != best_dev) better = dev < best_dev;
    else better = net.segments[c.segment].id < net.segments[best->segment].id;
    if (better) {
      best = &c;
      best_dev = dev;
      best_compatible = compatible;
    }
  }
  if (best) {
    m.segment = best->segment;
    m.distance_m = best->distance_m;
    m.heading_deviation_deg = best_dev;
  }
  for (const auto& hit : index.intersections_within(xy, params.intersection_radius_m)) {
    if (net.intersections[hit.intersection].signalized) {
      m.nearest_signalized_m = std::min(m.nearest_signalized_m, hit.distance_m);
      m.signalized_within.push_back(hit.intersection);
    } else {
      m.nearest_unsignalized_m = std::min(m.nearest_unsignalized_m, hit.distance_m);
    }
  }
  return m;
}

MatchedJourney enrich_journey(const Journey& journey, const NetworkIndex& index, const MatchParams& params,
                              double min_coverage) {
  MatchedJourney mj;
  mj.journey_id = journey.journey_id;
  mj.points.reserve(journey.points.size());
  std::size_t matched = 0;
  const auto& net = index.network();
  for (const auto& p : journey.points) {
    MatchedPoint mp;
    mp.point = p;
    mp.match = match_point(p, index, params);
    if (mp.match.segment) {
      const auto& seg = net.segments[*mp.match.segment];
      mp.speed_limit_mph = seg.speed_limit_mph;
      mp.context = seg.context;
      mp.land_use = seg.land_use;
      ++matched;
    }
    mj.points.push_back(std::move(mp));
  }
  mj.coverage = mj.points.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(mj.points.size());
  mj.low_coverage = mj.coverage < min_coverage;
  return mj;
}

void write_enriched_header(std::ostream& out) {
  out << "journeyId,dataPointId,timestamp,latitude,longitude,speed,heading,postalCode,segment_id,"
         "match_distance_m,heading_deviation_deg,nearest_signalized_m,nearest_unsignalized_m,"
         "signalized_ids,speed_limit,context_class,land_use\n";
}

void write_enriched_csv(std::ostream& out, const MatchedJourney& mj, const Network& net) {
  for (const auto& mp : mj.points) {
    const auto& p = mp.point;
    out << p.journey_id << ',' << p.point_id << ',' << p.timestamp << ',' << fmt_double(p.lat) << ','
        << fmt_double(p.lon) << ',' << fmt_double(p.speed_mph) << ',' << fmt_double(p.heading_deg) << ','
        << p.postal_code << ',';
    out << (mp.match.segment ? net.segments[*mp.match.segment].id : std::string()) << ','
        << fmt_double(mp.match.distance_m) << ',' << fmt_double(mp.match.heading_deviation_deg) << ','
        << fmt_double(mp.match.nearest_signalized_m) << ',' << fmt_double(mp.match.nearest_unsignalized_m)
        << ',';
    for (std::size_t i = 0; i < mp.match.signalized_within.size(); ++i)
      out << (i ? ";" : "") << net.intersections[mp.match.signalized_within[i]].id;
    out << ',' << fmt_double(mp.speed_limit_mph) << ',' << to_string(mp.context) << ','
        << to_string(mp.land_use) << '\n';
  }
}

std::vector<MatchedJourney> read_enriched_csv(std::istream& in, const Network& net, double min_coverage) {
  if (!in) throw IngestError("enriched stream is not readable");
  std::map<std::string, std::uint32_t> seg_ids, node_ids;
  for (std::uint32_t i = 0; i < net.segments.size(); ++i) seg_ids.emplace(net.segments[i].id, i);
  for (std::uint32_t i = 0; i < net.intersections.size(); ++i) node_ids.emplace(net.intersections[i].id, i);

  std::vector<MatchedJourney> out;
  std::string line;
  std::vector<std::string_view> f;
  std::size_t line_no = 0;
  auto need_double = [&](std::string_view s) {
    auto v = parse_double(s);
    if (!v) throw IngestError("enriched file line " + std::to_string(line_no) + ": bad number");
    return *v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;
    split_csv_line(trim(line), ',', f);
    if (f.size() != 17) throw IngestError("enriched file line " + std::to_string(line_no) + ": expected 17 columns");
    MatchedPoint mp;
    mp.point.journey_id = std::string(f[0]);
    mp.point.point_id = std::string(f[1]);
    auto ts = parse_int64(f[2]);
    if (!ts) throw IngestError("enriched file line " + std::to_string(line_no) + ": bad timestamp");
    mp.point.timestamp = *ts;
    mp.point.lat = need_double(f[3]);
    mp.point.lon = need_double(f[4]);
    mp.point.speed_mph = need_double(f[5]);
    mp.point.heading_deg = need_double(f[6]);
    mp.point.postal_code = std::string(f[7]);
    if (!f[8].empty()) {
      auto it = seg_ids.find(std::string(f[8]));
      if (it == seg_ids.end()) throw IngestError("enriched file references unknown segment " + std::string(f[8]));
      mp.match.segment = it->second;
      const auto& seg = net.segments[it->second];
      mp.speed_limit_mph = seg.speed_limit_mph;
      mp.context = seg.context;
      mp.land_use = seg.land_use;
    }
    mp.match.distance_m = need_double(f[9]);
    mp.match.heading_deviation_deg = need_double(f[10]);
    mp.match.nearest_signalized_m = need_double(f[11]);
    mp.match.nearest_unsignalized_m = need_double(f[12]);
    if (!f[13].empty()) {
      std::string_view ids = f[13];
      while (!ids.empty()) {
        const auto pos = ids.find(';');
        const std::string id(ids.substr(0, pos));
        auto it = node_ids.find(id);
        if (it == node_ids.end()) throw IngestError("enriched file references unknown intersection " + id);
        mp.match.signalized_within.push_back(it->second);
        if (pos == std::string_view::npos) break;
        ids.remove_prefix(pos + 1);
      }
    }
    if (out.empty() || out.back().journey_id != mp.point.journey_id) {
      out.emplace_back();
      out.back().journey_id = mp.point.journey_id;
    }
    out.back().points.push_back(std::move(mp));
  }
  for (auto& mj : out) {
    std::size_t matched = 0;
    for (const auto& mp : mj.points) matched += mp.matched();
    mj.coverage = mj.points.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(mj.points.size());
    mj.low_coverage = mj.coverage < min_coverage;
  }
  return out;
}

}  // namespace tripspeed
