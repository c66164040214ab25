#include "tripspeed/hotspot.hpp"

#include <algorithm>
#include <cmath>

#include "tripspeed/util.hpp"

namespace tripspeed {

void CompensatedSum::add(double v) {
  const double t = sum + v;
  if (std::fabs(sum) >= std::fabs(v)) comp += (sum - t) + v;
  else comp += (v - t) + sum;
  sum = t;
}

void CompensatedSum::merge(const CompensatedSum& o) {
  add(o.sum);
  add(o.comp);
}

SegmentAggregator::SegmentAggregator(std::size_t n_segments, HotspotStatistic stat)
    : stat_(stat), acc_(n_segments) {}

void SegmentAggregator::ensure(std::uint32_t segment) {
  if (segment >= acc_.size()) acc_.resize(static_cast<std::size_t>(segment) + 1);
}

void SegmentAggregator::add(std::uint32_t segment, double speeding_prop) {
  ensure(segment);
  auto& a = acc_[segment];
  const double y = std::max(0.0, speeding_prop);
  ++a.count;
  a.sum.add(y);
  ++a.bins[static_cast<std::size_t>(bin_level(y))];
  if (stat_ == HotspotStatistic::P85) a.values.push_back(y);
}

void SegmentAggregator::add_journey(const MatchedJourney& journey) {
  for (const auto& p : journey.points) {
    if (!p.matched()) {
      add_unmatched();
      continue;
    }
    add(*p.match.segment, point_speeding(p.point.speed_mph, p.speed_limit_mph));
  }
}

void SegmentAggregator::merge(const SegmentAggregator& other) {
  if (other.acc_.size() > acc_.size()) acc_.resize(other.acc_.size());
  for (std::size_t s = 0; s < other.acc_.size(); ++s) {
    const auto& o = other.acc_[s];
    if (o.count == 0) continue;
    auto& a = acc_[s];
    a.count += o.count;
    a.sum.merge(o.sum);
    for (std::size_t b = 0; b < a.bins.size(); ++b) a.bins[b] += o.bins[b];
    a.values.insert(a.values.end(), o.values.begin(), o.values.end());
  }
  skipped_unmatched_ += other.skipped_unmatched_;
}

std::size_t SegmentAggregator::total_points() const {
  std::size_t n = skipped_unmatched_;
  for (const auto& a : acc_) n += a.count;
  return n;
}

std::vector<SegmentStats> SegmentAggregator::finalize() const {
  std::vector<SegmentStats> out;
  for (std::size_t s = 0; s < acc_.size(); ++s) {
    const auto& a = acc_[s];
    if (a.count == 0) continue;
    SegmentStats st;
    st.segment = static_cast<std::uint32_t>(s);
    st.point_count = a.count;
    st.mean_speeding = a.sum.value() / static_cast<double>(a.count);
    std::size_t best = 0;
    for (std::size_t b = 0; b < a.bins.size(); ++b) {
      st.bin_shares[b] = static_cast<double>(a.bins[b]) / static_cast<double>(a.count);
      if (a.bins[b] > a.bins[best]) best = b;
    }
    st.dominant_bin = static_cast<int>(best);
    if (stat_ == HotspotStatistic::P85 && !a.values.empty()) {
      std::vector<double> v = a.values;
      std::sort(v.begin(), v.end());
      // nearest-rank percentile
      const auto rank = static_cast<std::size_t>(std::ceil(0.85 * static_cast<double>(v.size())));
      st.p85_speeding = v[std::max<std::size_t>(rank, 1) - 1];
    }
    out.push_back(st);
  }
  return out;
}

std::vector<SegmentStats> aggregate_segments(std::span<const MatchedJourney> journeys, std::size_t n_segments,
                                             HotspotStatistic stat, std::size_t* skipped_unmatched) {
  SegmentAggregator agg(n_segments, stat);
  for (const auto& j : journeys) agg.add_journey(j);
  if (skipped_unmatched) *skipped_unmatched = agg.skipped_unmatched();
  return agg.finalize();
}

std::vector<SegmentStats> filter_hotspots(const std::vector<SegmentStats>& stats, std::size_t min_points) {
  std::vector<SegmentStats> out;
  std::copy_if(stats.begin(), stats.end(), std::back_inserter(out),
               [&](const SegmentStats& s) { return s.point_count >= min_points; });
  return out;
}

namespace {

std::vector<const SegmentStats*> ordered_by_id(const std::vector<SegmentStats>& stats, const Network& net) {
  std::vector<const SegmentStats*> order;
  for (const auto& s : stats) {
    if (s.segment >= net.segments.size())
      throw NetworkError("hotspot stats reference unknown segment index " + std::to_string(s.segment));
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(), [&](const SegmentStats* a, const SegmentStats* b) {
    return net.segments[a->segment].id < net.segments[b->segment].id;
  });
  return order;
}

}  // namespace

nlohmann::json emit_geojson(const std::vector<SegmentStats>& filtered, const Network& net, HotspotStatistic stat) {
  nlohmann::json features = nlohmann::json::array();
  for (const SegmentStats* s : ordered_by_id(filtered, net)) {
    const auto& seg = net.segments[s->segment];
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& v : seg.polyline) coords.push_back({v.lon, v.lat});
    nlohmann::json props = {{"segment_id", seg.id},
                            {"point_count", s->point_count},
                            {"mean_speeding_prop", s->mean_speeding},
                            {"dominant_bin", s->dominant_bin},
                            {"bin_shares", s->bin_shares}};
    if (stat == HotspotStatistic::P85) props["p85_speeding_prop"] = s->p85_speeding;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

void emit_hotspot_csv(std::ostream& out, const std::vector<SegmentStats>& filtered, const Network& net) {
  out << "segment_id,point_count,mean_speeding_prop,p85_speeding_prop,dominant_bin";
  for (int b = 0; b < kNumLevels; ++b) out << ",share_level_" << b;
  out << '\n';
  for (const SegmentStats* s : ordered_by_id(filtered, net)) {
    out << net.segments[s->segment].id << ',' << s->point_count << ',' << fmt_double(s->mean_speeding) << ','
        << fmt_double(s->p85_speeding) << ',' << s->dominant_bin;
    for (double share : s->bin_shares) out << ',' << fmt_double(share);
    out << '\n';
  }
}

}  // namespace tripspeed
