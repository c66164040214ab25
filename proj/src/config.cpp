#include "tripspeed/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace tripspeed {

namespace {

using nlohmann::json;

std::string format_name(InputFormat f) {
  switch (f) {
    case InputFormat::Csv: return "csv";
    case InputFormat::Ndjson: return "ndjson";
    case InputFormat::Auto: break;
  }
  return "auto";
}

InputFormat parse_format(const std::string& s) {
  if (s == "auto") return InputFormat::Auto;
  if (s == "csv") return InputFormat::Csv;
  if (s == "ndjson") return InputFormat::Ndjson;
  throw ConfigError("schema.format must be auto, csv or ndjson, got '" + s + "'");
}

std::string statistic_name(HotspotStatistic s) { return s == HotspotStatistic::P85 ? "p85" : "mean"; }

HotspotStatistic parse_statistic(const std::string& s) {
  if (s == "mean") return HotspotStatistic::Mean;
  if (s == "p85") return HotspotStatistic::P85;
  throw ConfigError("hotspot.statistic must be mean or p85, got '" + s + "'");
}

bool same_kind(const json& want, const json& got) {
  if (want.is_number()) return got.is_number();
  if (want.is_string()) return got.is_string();
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_array()) return got.is_array();
  if (want.is_object()) return got.is_object();
  return true;
}

// Overlays `user` on `base`. Every user key must already exist in base, with
// a compatible type; model_params is free-form.
void strict_merge(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError((path.empty() ? "config" : path) + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    json& slot = base[key];
    if (where == "model_params") {
      if (!value.is_object()) throw ConfigError("model_params must be an object");
      slot = value;
    } else if (slot.is_object()) {
      strict_merge(slot, value, where);
    } else {
      if (!same_kind(slot, value)) throw ConfigError("config key '" + where + "' has the wrong type");
      slot = value;
    }
  }
}

template <class T>
T take(const json& j, const char* key, const std::string& path) {
  try {
    const json& v = j.at(key);
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw ConfigError("config key '" + path + "." + key + "' must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw ConfigError("config key '" + path + "." + key + "' must not be negative");
      }
    }
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + "." + key + "' has an invalid value");
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

json PipelineConfig::to_json() const {
  const auto& s = extract.schema;
  json models_j = json::array();
  for (ModelKind k : models) models_j.push_back(std::string(to_string(k)));
  return {
      {"input", {{"points", points}, {"network", network}}},
      {"output_dir", output_dir},
      {"threads", threads},
      {"schema",
       {{"format", format_name(s.format)},
        {"delimiter", std::string(1, s.delimiter)},
        {"journey_id", s.journey_id},
        {"point_id", s.point_id},
        {"timestamp", s.timestamp},
        {"lat", s.lat},
        {"lon", s.lon},
        {"speed", s.speed},
        {"heading", s.heading},
        {"postal_code", s.postal_code}}},
      {"ingest",
       {{"gap_split_s", extract.grouping.gap_split_s},
        {"window_points", extract.grouping.window_points},
        {"min_points", extract.validation.min_points},
        {"min_duration_s", extract.validation.min_duration_s},
        {"max_implied_speed_mph", extract.validation.max_implied_speed_mph},
        {"batch_journeys", extract.batch_journeys}}},
      {"roadnet",
       {{"match_radius_m", extract.match.match_radius_m},
        {"heading_tol_deg", extract.match.heading_tol_deg},
        {"intersection_radius_m", extract.match.intersection_radius_m},
        {"min_coverage", extract.min_coverage},
        {"properties",
         {{"id", network_schema.id},
          {"speed_limit", network_schema.speed_limit},
          {"context_class", network_schema.context_class},
          {"land_use", network_schema.land_use},
          {"functional_class", network_schema.functional_class},
          {"signalized", network_schema.signalized}}}}},
      {"kinematics",
       {{"stop_speed_mph", extract.kinematics.stop_speed_mph},
        {"turn_angle_deg", extract.kinematics.turn_angle_deg},
        {"turn_window_s", extract.kinematics.turn_window_s},
        {"turn_min_yaw", extract.kinematics.turn_min_yaw}}},
      {"features",
       {{"hard_brake_thresh", extract.features.hard_brake_thresh},
        {"hard_acc_thresh", extract.features.hard_acc_thresh},
        {"utc_offset_minutes", extract.features.utc_offset_minutes},
        {"columns", selection.columns}}},
      {"split", {{"test_ratio", test_ratio}, {"seed", split_seed}, {"stratified", stratified}}},
      {"models", models_j},
      {"model_params", model_params},
      {"tune",
       {{"enabled", tune},
        {"max_depth", grid.max_depth},
        {"n_trees", grid.n_trees},
        {"holdout_ratio", tune_holdout},
        {"seed", tune_seed}}},
      {"explain",
       {{"model", std::string(to_string(explain.model))},
        {"sample_rows", explain.sample_rows},
        {"background_rows", explain.background_rows},
        {"seed", explain.seed},
        {"dependence_features", explain.dependence_features},
        {"tsne",
         {{"perplexity", explain.tsne.perplexity},
          {"iterations", explain.tsne.iterations},
          {"learning_rate", explain.tsne.learning_rate},
          {"early_exaggeration", explain.tsne.early_exaggeration},
          {"exaggeration_iters", explain.tsne.exaggeration_iters}}}}},
      {"hotspot", {{"min_points", hotspot.min_points}, {"statistic", statistic_name(hotspot.statistic)}}},
  };
}

json default_config_json() { return PipelineConfig{}.to_json(); }

PipelineConfig PipelineConfig::from_json(const json& user) {
  json j = default_config_json();
  strict_merge(j, user, "");

  PipelineConfig c;
  c.points = take<std::string>(j["input"], "points", "input");
  c.network = take<std::string>(j["input"], "network", "input");
  c.output_dir = take<std::string>(j, "output_dir", "");
  c.threads = take<int>(j, "threads", "");

  const json& s = j["schema"];
  auto& sc = c.extract.schema;
  sc.format = parse_format(take<std::string>(s, "format", "schema"));
  const auto delim = take<std::string>(s, "delimiter", "schema");
  require(delim.size() == 1, "schema.delimiter must be one character");
  sc.delimiter = delim[0];
  sc.journey_id = take<std::string>(s, "journey_id", "schema");
  sc.point_id = take<std::string>(s, "point_id", "schema");
  sc.timestamp = take<std::string>(s, "timestamp", "schema");
  sc.lat = take<std::string>(s, "lat", "schema");
  sc.lon = take<std::string>(s, "lon", "schema");
  sc.speed = take<std::string>(s, "speed", "schema");
  sc.heading = take<std::string>(s, "heading", "schema");
  sc.postal_code = take<std::string>(s, "postal_code", "schema");

  const json& in = j["ingest"];
  c.extract.grouping.gap_split_s = take<std::int64_t>(in, "gap_split_s", "ingest");
  c.extract.grouping.window_points = take<std::size_t>(in, "window_points", "ingest");
  c.extract.validation.min_points = take<std::size_t>(in, "min_points", "ingest");
  c.extract.validation.min_duration_s = take<std::int64_t>(in, "min_duration_s", "ingest");
  c.extract.validation.max_implied_speed_mph = take<double>(in, "max_implied_speed_mph", "ingest");
  c.extract.batch_journeys = take<std::size_t>(in, "batch_journeys", "ingest");

  const json& rn = j["roadnet"];
  c.extract.match.match_radius_m = take<double>(rn, "match_radius_m", "roadnet");
  c.extract.match.heading_tol_deg = take<double>(rn, "heading_tol_deg", "roadnet");
  c.extract.match.intersection_radius_m = take<double>(rn, "intersection_radius_m", "roadnet");
  c.extract.min_coverage = take<double>(rn, "min_coverage", "roadnet");
  const json& props = rn["properties"];
  auto& ns = c.network_schema;
  for (auto [field, key] : {std::pair{&ns.id, "id"}, {&ns.speed_limit, "speed_limit"},
                            {&ns.context_class, "context_class"}, {&ns.land_use, "land_use"},
                            {&ns.functional_class, "functional_class"}, {&ns.signalized, "signalized"}}) {
    *field = take<std::string>(props, key, "roadnet.properties");
    require(!field->empty(), std::string("roadnet.properties.") + key + " must not be empty");
  }

  const json& km = j["kinematics"];
  c.extract.kinematics.stop_speed_mph = take<double>(km, "stop_speed_mph", "kinematics");
  c.extract.kinematics.turn_angle_deg = take<double>(km, "turn_angle_deg", "kinematics");
  c.extract.kinematics.turn_window_s = take<double>(km, "turn_window_s", "kinematics");
  c.extract.kinematics.turn_min_yaw = take<double>(km, "turn_min_yaw", "kinematics");

  const json& ft = j["features"];
  c.extract.features.hard_brake_thresh = take<double>(ft, "hard_brake_thresh", "features");
  c.extract.features.hard_acc_thresh = take<double>(ft, "hard_acc_thresh", "features");
  c.extract.features.utc_offset_minutes = take<int>(ft, "utc_offset_minutes", "features");
  c.selection.columns = take<std::vector<std::string>>(ft, "columns", "features");

  // thresholds shared between modules have one key each
  c.extract.kinematics.gap_split_s = c.extract.grouping.gap_split_s;
  c.extract.kinematics.intersection_radius_m = c.extract.match.intersection_radius_m;
  c.extract.features.turn_min_yaw = c.extract.kinematics.turn_min_yaw;
  c.extract.features.min_coverage = c.extract.min_coverage;
  c.extract.threads = c.threads;

  const json& sp = j["split"];
  c.test_ratio = take<double>(sp, "test_ratio", "split");
  c.split_seed = take<std::uint64_t>(sp, "seed", "split");
  c.stratified = take<bool>(sp, "stratified", "split");

  c.models.clear();
  for (const auto& name : take<std::vector<std::string>>(j, "models", "")) {
    try {
      c.models.push_back(parse_model_kind(name));
    } catch (const LearnError& e) {
      throw ConfigError(e.what());
    }
  }
  c.model_params = j["model_params"];

  const json& tn = j["tune"];
  c.tune = take<bool>(tn, "enabled", "tune");
  c.grid.max_depth = take<std::vector<int>>(tn, "max_depth", "tune");
  c.grid.n_trees = take<std::vector<int>>(tn, "n_trees", "tune");
  c.tune_holdout = take<double>(tn, "holdout_ratio", "tune");
  c.tune_seed = take<std::uint64_t>(tn, "seed", "tune");

  const json& ex = j["explain"];
  try {
    c.explain.model = parse_model_kind(take<std::string>(ex, "model", "explain"));
  } catch (const LearnError& e) {
    throw ConfigError(std::string("explain.model: ") + e.what());
  }
  c.explain.sample_rows = take<std::size_t>(ex, "sample_rows", "explain");
  c.explain.background_rows = take<std::size_t>(ex, "background_rows", "explain");
  c.explain.seed = take<std::uint64_t>(ex, "seed", "explain");
  c.explain.dependence_features = take<std::size_t>(ex, "dependence_features", "explain");
  const json& ts = ex["tsne"];
  c.explain.tsne.perplexity = take<double>(ts, "perplexity", "explain.tsne");
  c.explain.tsne.iterations = take<int>(ts, "iterations", "explain.tsne");
  c.explain.tsne.learning_rate = take<double>(ts, "learning_rate", "explain.tsne");
  c.explain.tsne.early_exaggeration = take<double>(ts, "early_exaggeration", "explain.tsne");
  c.explain.tsne.exaggeration_iters = take<int>(ts, "exaggeration_iters", "explain.tsne");
  c.explain.tsne.seed = c.explain.seed;

  const json& hs = j["hotspot"];
  c.hotspot.min_points = take<std::size_t>(hs, "min_points", "hotspot");
  c.hotspot.statistic = parse_statistic(take<std::string>(hs, "statistic", "hotspot"));
  c.extract.hotspot_stat = c.hotspot.statistic;

  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  const auto& e = extract;
  require(threads >= 0, "threads must be >= 0");
  require(e.grouping.gap_split_s > 0, "ingest.gap_split_s must be positive");
  require(e.grouping.window_points > 0, "ingest.window_points must be positive");
  require(e.validation.min_points >= 2, "ingest.min_points must be at least 2");
  require(e.validation.min_duration_s > 0, "ingest.min_duration_s must be positive");
  require(e.validation.max_implied_speed_mph > 0, "ingest.max_implied_speed_mph must be positive");
  require(e.batch_journeys > 0, "ingest.batch_journeys must be positive");
  require(e.match.match_radius_m > 0, "roadnet.match_radius_m must be positive");
  require(e.match.heading_tol_deg > 0 && e.match.heading_tol_deg <= 90, "roadnet.heading_tol_deg must be in (0, 90]");
  require(e.match.intersection_radius_m > 0, "roadnet.intersection_radius_m must be positive");
  require(e.min_coverage > 0 && e.min_coverage <= 1, "roadnet.min_coverage must be in (0, 1]");
  require(e.kinematics.stop_speed_mph > 0, "kinematics.stop_speed_mph must be positive");
  require(e.kinematics.turn_angle_deg > 0 && e.kinematics.turn_angle_deg < 180,
          "kinematics.turn_angle_deg must be in (0, 180)");
  require(e.kinematics.turn_window_s > 0, "kinematics.turn_window_s must be positive");
  require(e.kinematics.turn_min_yaw > 0, "kinematics.turn_min_yaw must be positive");
  require(e.features.hard_brake_thresh > 0, "features.hard_brake_thresh must be positive");
  require(e.features.hard_acc_thresh > 0, "features.hard_acc_thresh must be positive");
  require(std::abs(e.features.utc_offset_minutes) <= 14 * 60, "features.utc_offset_minutes must be within +-840");
  require(!selection.columns.empty(), "features.columns must not be empty");
  {
    const auto all = JourneyFeatures::column_names();
    std::set<std::string> seen;
    for (const auto& col : selection.columns) {
      require(std::find(all.begin(), all.end(), col) != all.end(), "features.columns: unknown column '" + col + "'");
      require(seen.insert(col).second, "features.columns: duplicate column '" + col + "'");
    }
  }
  require(test_ratio > 0 && test_ratio < 1, "split.test_ratio must be in (0, 1)");
  require(!models.empty(), "models must list at least one model");
  {
    std::set<ModelKind> seen;
    for (ModelKind k : models) require(seen.insert(k).second, "models: duplicate '" + std::string(to_string(k)) + "'");
  }
  for (const auto& [name, params] : model_params.items()) {
    try {
      parse_model_kind(name);
    } catch (const LearnError& err) {
      throw ConfigError(std::string("model_params: ") + err.what());
    }
    require(params.is_object(), "model_params." + name + " must be an object");
  }
  if (tune) {
    require(!grid.max_depth.empty() && !grid.n_trees.empty(), "tune grid must not be empty");
    for (int d : grid.max_depth) require(d > 0, "tune.max_depth entries must be positive");
    for (int n : grid.n_trees) require(n > 0, "tune.n_trees entries must be positive");
    require(tune_holdout > 0 && tune_holdout < 1, "tune.holdout_ratio must be in (0, 1)");
  }
  require(std::find(models.begin(), models.end(), explain.model) != models.end(),
          "explain.model '" + std::string(to_string(explain.model)) + "' is not among the trained models");
  require(explain.sample_rows >= 3, "explain.sample_rows must be at least 3");
  require(explain.background_rows > 0, "explain.background_rows must be positive");
  require(explain.tsne.perplexity > 0, "explain.tsne.perplexity must be positive");
  require(explain.tsne.iterations > 0, "explain.tsne.iterations must be positive");
  require(explain.tsne.learning_rate > 0, "explain.tsne.learning_rate must be positive");
  require(explain.tsne.early_exaggeration > 0, "explain.tsne.early_exaggeration must be positive");
  require(explain.tsne.exaggeration_iters >= 0 && explain.tsne.exaggeration_iters <= explain.tsne.iterations,
          "explain.tsne.exaggeration_iters must be in [0, iterations]");
  require(hotspot.min_points > 0, "hotspot.min_points must be positive");
}

json PipelineConfig::params_for(ModelKind k) const {
  const std::string name(to_string(k));
  if (model_params.contains(name)) return model_params.at(name);
  return json::object();
}

json read_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

void apply_overrides(json& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &config;
    std::istringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) {
      if (part.empty()) throw ConfigError("override '" + o + "' has an empty key segment");
      path.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->is_object()) throw ConfigError("override '" + o + "' descends into a non-object");
      node = &(*node)[path[i]];
      if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override '" + o + "' descends into a non-object");
    (*node)[path.back()] = std::move(value);
  }
}

}  // namespace tripspeed
