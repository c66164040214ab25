#include "tripspeed/extract.hpp"

#include <chrono>
#include <exception>

#include <omp.h>

namespace tripspeed {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

std::size_t StageCount::rejected_total() const {
  std::size_t n = 0;
  for (const auto& [reason, c] : rejected) n += c;
  return n;
}

nlohmann::json StageCount::to_json(bool with_time) const {
  nlohmann::json j = {{"in", in}, {"out", out}, {"rejected", rejected}};
  if (with_time) j["seconds"] = seconds;
  return j;
}

nlohmann::json ExtractReport::to_json(bool with_time) const {
  return {{"parse", parse.to_json()},
          {"group", group.to_json()},
          {"teleports_removed", teleports_removed},
          {"ingest", ingest.to_json(with_time)},
          {"enrich", enrich.to_json(with_time)},
          {"kinematics", kinematics.to_json(with_time)},
          {"features", features.to_json(with_time)}};
}

JourneyOutcome process_journey(Journey journey, const NetworkIndex* index, const ExtractParams& params) {
  JourneyOutcome o;
  auto t0 = Clock::now();
  auto v = validate_journey(std::move(journey), params.validation);
  o.teleports_removed = v.teleports_removed;
  o.seconds[0] = since(t0);
  if (!v.journey) {
    o.rejected = v.reason;
    return o;
  }
  if (!index) {
    o.journey = std::move(v.journey);
    return o;
  }
  t0 = Clock::now();
  MatchedJourney mj = enrich_journey(*v.journey, *index, params.match, params.min_coverage);
  o.seconds[1] = since(t0);
  o.journey = std::move(v.journey);
  o.low_coverage = mj.low_coverage;
  if (!o.low_coverage) {
    t0 = Clock::now();
    const auto intervals = derive_intervals(mj, params.kinematics);
    const auto stops = detect_stops(intervals, mj.points, params.kinematics);
    const auto turns = detect_turns(intervals, params.kinematics);
    o.seconds[2] = since(t0);
    o.no_intervals = intervals.empty();
    if (!o.no_intervals) {
      t0 = Clock::now();
      auto r = aggregate_journey(mj, intervals, stops, turns, params.features);
      if (auto* f = std::get_if<JourneyFeatures>(&r)) o.features = std::move(*f);
      else o.exclusion = std::get<Exclusion>(r);
      o.seconds[3] = since(t0);
    }
  }
  o.matched = std::move(mj);
  return o;
}

namespace {

class Extractor {
 public:
  Extractor(const NetworkIndex* index, const ExtractParams& params, const ExtractSinks& sinks, bool parallel)
      : index_(index),
        params_(params),
        sinks_(sinks),
        parallel_(parallel),
        result_{{}, SegmentAggregator(index ? index->network().segments.size() : 0, params.hotspot_stat)} {}

  ExtractResult run(std::istream& in) {
    PointReader reader(in, params_.schema);
    JourneyGrouper grouper(params_.grouping);
    std::vector<Journey> ready;
    GpsPoint p;
    auto t0 = Clock::now();
    while (reader.next(p)) {
      grouper.add(std::move(p));
      grouper.drain_ready(ready);
      if (ready.size() >= params_.batch_journeys) {
        result_.report.ingest.seconds += since(t0);
        flush(ready);
        t0 = Clock::now();
      }
    }
    grouper.finish(ready);
    result_.report.ingest.seconds += since(t0);
    flush(ready);
    result_.report.parse = reader.report();
    result_.report.group = grouper.report();
    return std::move(result_);
  }

 private:
  void flush(std::vector<Journey>& batch) {
    if (batch.empty()) return;
    const std::size_t n = batch.size();
    std::vector<JourneyOutcome> out(n);
    std::vector<std::exception_ptr> errors(n);
    const int threads = params_.threads > 0 ? params_.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads) if (parallel_)
    for (std::size_t i = 0; i < n; ++i) {
      try {
        out[i] = process_journey(std::move(batch[i]), index_, params_);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    batch.clear();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (auto& o : out) record(o);
  }

  void record(JourneyOutcome& o) {
    auto& r = result_.report;
    r.teleports_removed += o.teleports_removed;
    ++r.ingest.in;
    r.ingest.seconds += o.seconds[0];
    if (o.rejected != JourneyReject::None) {
      r.ingest.reject(std::string(to_string(o.rejected)));
      return;
    }
    ++r.ingest.out;
    if (sinks_.on_journey) sinks_.on_journey(*o.journey);
    if (!o.matched) return;

    ++r.enrich.in;
    r.enrich.seconds += o.seconds[1];
    result_.segments.add_journey(*o.matched);
    if (o.low_coverage) {
      r.enrich.reject("low_coverage");
      return;
    }
    ++r.enrich.out;
    if (sinks_.on_enriched) sinks_.on_enriched(*o.matched);

    ++r.kinematics.in;
    r.kinematics.seconds += o.seconds[2];
    if (o.no_intervals) {
      r.kinematics.reject("no_intervals");
      return;
    }
    ++r.kinematics.out;

    ++r.features.in;
    r.features.seconds += o.seconds[3];
    if (o.exclusion) {
      r.features.reject(std::string(to_string(*o.exclusion)));
      return;
    }
    ++r.features.out;
    if (sinks_.on_features) sinks_.on_features(*o.features);
  }

  const NetworkIndex* index_;
  const ExtractParams& params_;
  const ExtractSinks& sinks_;
  bool parallel_;
  ExtractResult result_;
};

}  // namespace

ExtractResult extract_parallel(std::istream& points, const NetworkIndex* index, const ExtractParams& params,
                               const ExtractSinks& sinks) {
  return Extractor(index, params, sinks, true).run(points);
}

ExtractResult extract_serial(std::istream& points, const NetworkIndex* index, const ExtractParams& params,
                             const ExtractSinks& sinks) {
  return Extractor(index, params, sinks, false).run(points);
}

std::vector<JourneyFeatures> features_from_enriched(const std::vector<MatchedJourney>& journeys,
                                                    const ExtractParams& params, ExtractReport* report) {
  ExtractReport rep;
  std::vector<JourneyFeatures> rows;
  for (const auto& mj : journeys) {
    ++rep.kinematics.in;
    if (mj.low_coverage) {
      // already flagged upstream; counted here so the totals still balance
      rep.kinematics.reject("low_coverage");
      continue;
    }
    const auto intervals = derive_intervals(mj, params.kinematics);
    if (intervals.empty()) {
      rep.kinematics.reject("no_intervals");
      continue;
    }
    ++rep.kinematics.out;
    ++rep.features.in;
    const auto stops = detect_stops(intervals, mj.points, params.kinematics);
    const auto turns = detect_turns(intervals, params.kinematics);
    auto r = aggregate_journey(mj, intervals, stops, turns, params.features);
    if (auto* f = std::get_if<JourneyFeatures>(&r)) {
      ++rep.features.out;
      rows.push_back(std::move(*f));
    } else {
      rep.features.reject(std::string(to_string(std::get<Exclusion>(r))));
    }
  }
  if (report) *report = rep;
  return rows;
}

}  // namespace tripspeed
