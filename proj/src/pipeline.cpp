#include "tripspeed/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tripspeed/util.hpp"

namespace tripspeed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

std::string display_name(ModelKind k) {
  std::string s(to_string(k));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

// Seeded sample of min(n, limit) indices out of n, returned ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= limit) return idx;
  std::mt19937_64 rng(seed);
  fisher_yates(idx, rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

json StageRecord::to_json(bool with_time) const {
  json j = {{"name", name}, {"in", in}, {"out", out}, {"rejected", rejected}, {"artifacts", artifacts}};
  if (with_time) j["seconds"] = seconds;
  return j;
}

fs::path ArtifactSet::claim(const std::string& relative) {
  const fs::path full = root_ / relative;
  std::vector<fs::path> missing;
  for (fs::path d = full.parent_path(); !d.empty() && !fs::exists(d); d = d.parent_path()) missing.push_back(d);
  for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
    fs::create_directory(*it);
    made_dirs_.push_back(*it);
  }
  if (std::find(files_.begin(), files_.end(), relative) == files_.end()) files_.push_back(relative);
  return full;
}

json ArtifactSet::hashes() const {
  json j = json::object();
  for (const auto& f : files_)
    if (fs::exists(root_ / f)) j[f] = hash_file(root_ / f);
  return j;
}

void ArtifactSet::remove_all() noexcept {
  std::error_code ec;
  for (const auto& f : files_) fs::remove(root_ / f, ec);
  for (auto it = made_dirs_.rbegin(); it != made_dirs_.rend(); ++it)
    if (fs::is_empty(*it, ec)) fs::remove(*it, ec);
  files_.clear();
  made_dirs_.clear();
}

std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::uint64_t h = fnv1a64({});
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got) h = fnv1a64(std::string_view(buf.data(), got), h);
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------

json SplitArtifact::to_json() const {
  return {{"ratio", ratio}, {"seed", seed}, {"stratified", stratified}, {"train", train_ids}, {"test", test_ids}};
}

SplitArtifact SplitArtifact::from_json(const json& j) {
  SplitArtifact s;
  s.ratio = j.at("ratio").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.stratified = j.at("stratified").get<bool>();
  s.train_ids = j.at("train").get<std::vector<std::string>>();
  s.test_ids = j.at("test").get<std::vector<std::string>>();
  return s;
}

SplitData split_features(const FeatureMatrix& all, const PipelineConfig& cfg) {
  const SplitResult r = split_dataset(all.labels, cfg.test_ratio, cfg.split_seed, cfg.stratified);
  SplitData d{subset(all, r.train), subset(all, r.test), {}};
  d.artifact.ratio = cfg.test_ratio;
  d.artifact.seed = cfg.split_seed;
  d.artifact.stratified = cfg.stratified;
  d.artifact.train_ids = d.train.journey_ids;
  d.artifact.test_ids = d.test.journey_ids;
  return d;
}

SplitData apply_split(const FeatureMatrix& all, const SplitArtifact& split) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < all.rows(); ++i) pos.emplace(all.journey_ids[i], i);
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<std::size_t> idx;
    idx.reserve(ids.size());
    for (const auto& id : ids) {
      const auto it = pos.find(id);
      if (it == pos.end()) throw StageError("split", "journey '" + id + "' is not in the feature table");
      idx.push_back(it->second);
    }
    return idx;
  };
  const auto tr = pick(split.train_ids), te = pick(split.test_ids);
  return {subset(all, tr), subset(all, te), split};
}

TrainOutput train_one(ModelKind kind, const FeatureMatrix& train, const PipelineConfig& cfg) {
  json params = cfg.params_for(kind);
  TrainOutput out;
  if (cfg.tune && is_tree_model(kind)) {
    const BoostParams base =
        kind == ModelKind::GBM ? BoostParams::from_json(params, BoostParams::gbm_defaults()) : BoostParams::from_json(params);
    out.tuning = tune(kind, train, cfg.grid, cfg.tune_holdout, cfg.tune_seed, base);
    params["max_depth"] = out.tuning->best.max_depth;
    params["n_trees"] = out.tuning->best.n_trees;
  }
  out.model = train_model(kind, train, params);
  return out;
}

EvaluationReport evaluate_model(const TrainedModel& model, const FeatureMatrix& test) {
  const Prediction p = predict(model, test);
  return class_metrics(confusion_matrix(test.labels, p.levels, model.num_classes), display_name(model.kind));
}

json evaluation_json(const std::vector<EvaluationReport>& reports) {
  json j = json::array();
  for (const auto& r : reports) j.push_back(r.to_json());
  return j;
}

ExplainOutput explain_model(const TrainedModel& model, const FeatureMatrix& background, const FeatureMatrix& rows,
                            const ExplainConfig& cfg) {
  ExplainOutput out;
  if (is_tree_model(model.kind)) out.importance = feature_importance(model);

  const FeatureMatrix sample = subset(rows, sample_indices(rows.rows(), cfg.sample_rows, mix_seed(cfg.seed, 0)));
  const FeatureMatrix bg =
      subset(background, sample_indices(background.rows(), cfg.background_rows, mix_seed(cfg.seed, 1)));
  out.shap = shap_values(model, sample, bg);
  out.sample_ids = sample.journey_ids;
  out.sample_truth = sample.labels;
  const Prediction pred = predict(model, sample);
  out.sample_pred = pred.levels;
  out.sample_scores = pred.scores;

  const std::size_t n = sample.rows(), d = sample.cols();
  const std::size_t K = static_cast<std::size_t>(out.shap.num_classes);
  std::vector<double> stacked(n * K * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < d; ++j) stacked[(i * K + k) * d + j] = out.shap.values[k][i * d + j];
  TsneParams tp = cfg.tsne;
  tp.seed = cfg.seed;
  out.embedding = tsne_embed(stacked, n, K * d, tp);

  std::vector<double> strength(d, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) strength[j] += std::fabs(out.shap.values[k][i * d + j]);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return strength[a] > strength[b]; });

  std::vector<double> x(n), y(n);
  std::size_t taken = 0;
  for (std::size_t j : order) {
    if (taken == cfg.dependence_features) break;
    for (std::size_t i = 0; i < n; ++i) x[i] = sample.row(i)[j];
    // a feature constant over the sample has no curve to fit
    if (std::set<double>(x.begin(), x.end()).size() < 2) continue;
    ++taken;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) y[i] = out.shap.values[k][i * d + j];
      out.dependence.push_back(dependence_curve(x, y, {}, sample.columns[j], static_cast<int>(k)));
    }
  }
  return out;
}

void write_explain(const ExplainOutput& out, const std::string& dir, ArtifactSet& files) {
  const std::string pre = dir.empty() ? "" : dir + "/";
  if (!out.importance.empty()) {
    auto f = open_out(files.claim(pre + "importance.csv"));
    write_importance_csv(f, out.importance);
  }
  for (int k = 0; k < out.shap.num_classes; ++k) {
    auto f = open_out(files.claim(pre + "shap_level_" + std::to_string(k) + ".csv"));
    write_shap_csv(f, out.shap, k, out.sample_ids);
  }
  {
    auto f = open_out(files.claim(pre + "tsne.csv"));
    const std::size_t K = static_cast<std::size_t>(out.shap.num_classes);
    f << "journey_id,x,y,true_level,predicted_level";
    for (std::size_t k = 0; k < K; ++k) f << ",score_" << k;
    f << '\n';
    for (std::size_t i = 0; i < out.sample_ids.size(); ++i) {
      f << out.sample_ids[i] << ',' << fmt_double(out.embedding.coords[2 * i]) << ','
        << fmt_double(out.embedding.coords[2 * i + 1]) << ',' << out.sample_truth[i] << ',' << out.sample_pred[i];
      for (std::size_t k = 0; k < K; ++k) f << ',' << fmt_double(out.sample_scores[i * K + k]);
      f << '\n';
    }
  }
  json dep = {{"tsne",
               {{"perplexity", out.embedding.perplexity},
                {"kl_initial", out.embedding.kl_initial},
                {"kl_final", out.embedding.kl_final},
                {"warnings", out.embedding.warnings}}},
              {"curves", json::array()}};
  for (const auto& c : out.dependence) dep["curves"].push_back(c.to_json());
  write_json(files.claim(pre + "dependence.json"), dep);
}

void write_hotspots(const std::vector<SegmentStats>& hotspots, const Network& net, const HotspotParams& params,
                    const std::string& dir, ArtifactSet& files) {
  const std::string pre = dir.empty() ? "" : dir + "/";
  write_json(files.claim(pre + "hotspots.geojson"), emit_geojson(hotspots, net, params.statistic));
  auto f = open_out(files.claim(pre + "hotspots.csv"));
  emit_hotspot_csv(f, hotspots, net);
}

// ---------------------------------------------------------------------------

namespace {

StageRecord from_count(const std::string& name, const StageCount& c) {
  StageRecord r;
  r.name = name;
  r.in = c.in;
  r.out = c.out;
  r.rejected = c.rejected;
  r.seconds = c.seconds;
  return r;
}

class Runner {
 public:
  Runner(const PipelineConfig& cfg, std::ostream& log) : cfg_(cfg), log_(log), files_(cfg.output_dir) {}

  RunResult run() {
    RunResult res;
    const std::string started = utc_now();
    const auto t_all = Clock::now();
    try {
      stage_network();
      stage_extract();
      stage_split();
      stage_train();
      stage_evaluate();
      stage_explain();
      stage_hotspots();

      // where the artifacts land is not part of what produced them
      json cfg_j = cfg_.to_json();
      cfg_j.erase("output_dir");
      json manifest = {{"config_hash", hex64(fnv1a64(cfg_j.dump()))},
                       {"config", cfg_j},
                       {"inputs",
                        {{"points", {{"path", cfg_.points}, {"hash", hash_file(cfg_.points)}}},
                         {"network", {{"path", cfg_.network}, {"hash", hash_file(cfg_.network)}}}}},
                       {"stages", json::array()},
                       {"artifacts", files_.hashes()},
                       {"started_at", started},
                       {"finished_at", utc_now()},
                       {"total_seconds", since(t_all)}};
      for (const auto& s : stages_) manifest["stages"].push_back(s.to_json());
      write_json(files_.claim("manifest.json"), manifest);
      res.manifest = std::move(manifest);
    } catch (const std::exception& e) {
      files_.remove_all();
      res.exit_code = kExitStageFailure;
      res.failed_stage = current_;
      res.error = e.what();
      log_ << "stage '" << current_ << "' failed: " << e.what() << '\n';
    }
    res.stages = stages_;
    return res;
  }

 private:
  void begin(const std::string& name) {
    current_ = name;
    t0_ = Clock::now();
  }

  void end(StageRecord r) {
    log_ << std::left << std::setw(11) << r.name << " in " << std::setw(8) << r.in << " out " << std::setw(8) << r.out
         << fmt_fixed(r.seconds, 2) << " s\n";
    stages_.push_back(std::move(r));
  }

  void stage_network() {
    begin("network");
    net_ = load_network_file(cfg_.network, cfg_.network_schema);
    index_.emplace(net_);
    StageRecord r;
    r.name = "network";
    r.out = net_.segments.size();
    r.in = r.out + net_.report.rejected_missing_speed_limit;
    if (net_.report.rejected_missing_speed_limit) r.rejected["missing_speed_limit"] = net_.report.rejected_missing_speed_limit;
    r.seconds = since(t0_);
    end(std::move(r));
  }

  void stage_extract() {
    begin("ingest");
    std::ifstream in(cfg_.points, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + cfg_.points);
    ExtractSinks sinks;
    sinks.on_features = [&](const JourneyFeatures& f) { rows_.push_back(f); };
    ExtractResult er = extract_parallel(in, &*index_, cfg_.extract, sinks);
    segments_.emplace(std::move(er.segments));
    const auto& rep = er.report;

    json ir = rep.to_json(false);
    ir["network"] = net_.report.to_json();
    write_json(files_.claim("ingest_report.json"), ir);
    StageRecord ingest = from_count("ingest", rep.ingest);
    ingest.artifacts = {"ingest_report.json"};
    end(std::move(ingest));

    current_ = "enrich";
    end(from_count("enrich", rep.enrich));
    current_ = "kinematics";
    end(from_count("kinematics", rep.kinematics));

    current_ = "features";
    std::sort(rows_.begin(), rows_.end(),
              [](const JourneyFeatures& a, const JourneyFeatures& b) { return a.journey_id < b.journey_id; });
    auto f = open_out(files_.claim("features.csv"));
    write_features_csv(f, rows_);
    StageRecord feat = from_count("features", rep.features);
    feat.artifacts = {"features.csv"};
    end(std::move(feat));
  }

  void stage_split() {
    begin("split");
    AssembleReport ar;
    const std::size_t n_in = rows_.size();
    const FeatureMatrix all = assemble_dataset(std::move(rows_), cfg_.selection, &ar);
    rows_.clear();
    data_ = split_features(all, cfg_);
    write_json(files_.claim("split.json"), data_.artifact.to_json());
    StageRecord r;
    r.name = "split";
    r.in = n_in;
    r.out = data_.train.rows() + data_.test.rows();
    if (ar.dropped_nonfinite) r.rejected["non_finite"] = ar.dropped_nonfinite;
    r.artifacts = {"split.json"};
    r.seconds = since(t0_);
    end(std::move(r));
  }

  void stage_train() {
    begin("train");
    StageRecord r;
    r.name = "train";
    r.in = cfg_.models.size();
    for (ModelKind k : cfg_.models) {
      TrainOutput t = train_one(k, data_.train, cfg_);
      const std::string name(to_string(k));
      write_json(files_.claim("models/" + name + ".json"), t.model.to_json());
      r.artifacts.push_back("models/" + name + ".json");
      if (t.tuning) {
        auto f = open_out(files_.claim("models/tune_" + name + ".csv"));
        write_tune_log(f, t.tuning->cells);
        r.artifacts.push_back("models/tune_" + name + ".csv");
      }
      models_.push_back(std::move(t.model));
    }
    r.out = models_.size();
    r.seconds = since(t0_);
    end(std::move(r));
  }

  void stage_evaluate() {
    begin("evaluate");
    std::vector<EvaluationReport> reports;
    for (const auto& m : models_) reports.push_back(evaluate_model(m, data_.test));
    {
      auto f = open_out(files_.claim("evaluation.csv"));
      write_report_csv(f, reports);
    }
    write_json(files_.claim("evaluation.json"), evaluation_json(reports));
    for (const auto& rep : reports)
      log_ << "  " << std::left << std::setw(4) << rep.model << " accuracy " << fmt_fixed(rep.accuracy, 4)
           << " within-1 " << fmt_fixed(rep.within_1, 4) << '\n';
    StageRecord r;
    r.name = "evaluate";
    r.in = r.out = data_.test.rows();
    r.artifacts = {"evaluation.csv", "evaluation.json"};
    r.seconds = since(t0_);
    end(std::move(r));
  }

  void stage_explain() {
    begin("explain");
    const auto it = std::find_if(models_.begin(), models_.end(),
                                 [&](const TrainedModel& m) { return m.kind == cfg_.explain.model; });
    const ExplainOutput out = explain_model(*it, data_.train, data_.test, cfg_.explain);
    const std::size_t before = files_.files().size();
    write_explain(out, "explain", files_);
    StageRecord r;
    r.name = "explain";
    r.in = data_.test.rows();
    r.out = out.sample_ids.size();
    if (r.in > r.out) r.rejected["not_sampled"] = r.in - r.out;
    r.artifacts.assign(files_.files().begin() + static_cast<std::ptrdiff_t>(before), files_.files().end());
    r.seconds = since(t0_);
    end(std::move(r));
  }

  void stage_hotspots() {
    begin("hotspots");
    const auto stats = segments_->finalize();
    const auto hot = filter_hotspots(stats, cfg_.hotspot.min_points);
    write_hotspots(hot, net_, cfg_.hotspot, "", files_);
    StageRecord r;
    r.name = "hotspots";
    r.in = stats.size();
    r.out = hot.size();
    if (r.in > r.out) r.rejected["below_min_points"] = r.in - r.out;
    r.artifacts = {"hotspots.geojson", "hotspots.csv"};
    r.seconds = since(t0_);
    end(std::move(r));
  }

  const PipelineConfig& cfg_;
  std::ostream& log_;
  ArtifactSet files_;
  std::string current_;
  Clock::time_point t0_;
  std::vector<StageRecord> stages_;

  Network net_;
  std::optional<NetworkIndex> index_;
  std::optional<SegmentAggregator> segments_;
  std::vector<JourneyFeatures> rows_;
  SplitData data_;
  std::vector<TrainedModel> models_;
};

std::string check_inputs(const PipelineConfig& cfg) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  for (const auto& [key, path] : {std::pair{"input.points", cfg.points}, std::pair{"input.network", cfg.network}}) {
    if (path.empty()) return std::string(key) + " is not set";
    std::ifstream probe(path);
    if (!fs::is_regular_file(path) || !probe) return std::string(key) + " '" + path + "' is not a readable file";
  }
  if (cfg.output_dir.empty()) return "output_dir is not set";
  if (fs::exists(cfg.output_dir) && !fs::is_directory(cfg.output_dir))
    return "output_dir '" + cfg.output_dir + "' exists and is not a directory";
  return {};
}

}  // namespace

RunResult run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
  if (const std::string err = check_inputs(cfg); !err.empty()) {
    log << "invalid configuration: " << err << '\n';
    RunResult r;
    r.exit_code = kExitValidation;
    r.error = err;
    return r;
  }
  return Runner(cfg, log).run();
}

json manifest_without_times(const json& manifest) {
  json m = manifest;
  m.erase("started_at");
  m.erase("finished_at");
  m.erase("total_seconds");
  if (m.contains("stages"))
    for (auto& s : m["stages"]) s.erase("seconds");
  return m;
}

}  // namespace tripspeed
