#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "tripspeed/learn.hpp"
#include "tripspeed/util.hpp"

namespace tripspeed {

FeatureMatrix subset(const FeatureMatrix& m, std::span<const std::size_t> idx) {
  FeatureMatrix out;
  out.columns = m.columns;
  const std::size_t d = m.cols();
  out.values.reserve(idx.size() * d);
  for (std::size_t i : idx) {
    if (i >= m.rows()) throw LearnError("row index out of range");
    out.values.insert(out.values.end(), m.row(i), m.row(i) + d);
    out.labels.push_back(m.labels[i]);
    if (i < m.journey_ids.size()) out.journey_ids.push_back(m.journey_ids[i]);
  }
  return out;
}

SplitResult split_dataset(std::span<const int> labels, double test_ratio, std::uint64_t seed, bool stratified) {
  const std::size_t n = labels.size();
  if (n < 10) throw LearnError("split needs at least 10 rows, got " + std::to_string(n));
  if (!(test_ratio > 0.0 && test_ratio < 1.0)) throw LearnError("test ratio must lie in (0, 1)");
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_ratio));

  SplitResult out;
  out.seed = seed;
  out.ratio = test_ratio;
  std::mt19937_64 rng(seed);
  std::vector<char> in_test(n, 0);

  if (!stratified) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    fisher_yates(perm, rng);
    for (std::size_t i = 0; i < n_test; ++i) in_test[perm[i]] = 1;
  } else {
    int max_label = 0;
    for (int y : labels) {
      if (y < 0) throw LearnError("negative label");
      max_label = std::max(max_label, y);
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

    // largest-remainder apportionment of n_test over classes
    std::vector<std::size_t> quota(by_class.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
      const double exact = static_cast<double>(by_class[k].size()) * static_cast<double>(n_test) /
                           static_cast<double>(n);
      quota[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += quota[k];
      remainders.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n_test; ++i, ++assigned) ++quota[remainders[i].second];

    for (std::size_t k = 0; k < by_class.size(); ++k) {
      auto& rows = by_class[k];
      if (rows.empty()) continue;
      if (quota[k] >= rows.size())
        throw LearnError("stratified split leaves class " + std::to_string(k) + " absent from train");
      fisher_yates(rows, rng);
      for (std::size_t i = 0; i < quota[k]; ++i) in_test[rows[i]] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) (in_test[i] ? out.test : out.train).push_back(i);
  return out;
}

double softmax_loss(std::span<const double> scores, int label) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  return std::log(z) + mx - scores[static_cast<std::size_t>(label)];
}

void softmax_grad_hess(std::span<const double> scores, int label, std::span<double> grad, std::span<double> hess) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    grad[k] = std::exp(scores[k] - mx);
    z += grad[k];
  }
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double p = grad[k] / z;
    grad[k] = p - (static_cast<int>(k) == label ? 1.0 : 0.0);
    hess[k] = p * (1.0 - p);
  }
}

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LDA: return "lda";
    case ModelKind::LinearSVM: return "svm";
    case ModelKind::RF: return "rf";
    case ModelKind::GBM: return "gbm";
    case ModelKind::XGB: return "xgb";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  for (ModelKind k : {ModelKind::LDA, ModelKind::LinearSVM, ModelKind::RF, ModelKind::GBM, ModelKind::XGB})
    if (to_string(k) == s) return k;
  throw LearnError("unknown model name '" + std::string(s) + "' (expected lda, svm, rf, gbm or xgb)");
}

bool is_tree_model(ModelKind k) { return k == ModelKind::RF || k == ModelKind::GBM || k == ModelKind::XGB; }

void BoostParams::validate() const {
  if (n_trees < 1) throw LearnError("n_trees must be >= 1");
  if (max_depth < 1) throw LearnError("max_depth must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw LearnError("learning_rate must be >= 0");
  if (!(reg_lambda >= 0.0)) throw LearnError("reg_lambda must be >= 0");
  if (!(reg_gamma >= 0.0)) throw LearnError("reg_gamma must be >= 0");
  if (!(min_child_weight >= 0.0)) throw LearnError("min_child_weight must be >= 0");
}

nlohmann::json BoostParams::to_json() const {
  return {{"n_trees", n_trees},       {"max_depth", max_depth},   {"learning_rate", learning_rate},
          {"reg_lambda", reg_lambda}, {"reg_gamma", reg_gamma}, {"min_child_weight", min_child_weight},
          {"seed", seed}};
}

BoostParams BoostParams::from_json(const nlohmann::json& j, BoostParams p) {
  p.n_trees = j.value("n_trees", p.n_trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.reg_lambda = j.value("reg_lambda", p.reg_lambda);
  p.reg_gamma = j.value("reg_gamma", p.reg_gamma);
  p.min_child_weight = j.value("min_child_weight", p.min_child_weight);
  p.seed = j.value("seed", p.seed);
  return p;
}

BoostParams BoostParams::gbm_defaults() {
  BoostParams p;
  p.reg_lambda = 0.0;
  return p;
}

nlohmann::json ForestParams::to_json() const {
  return {{"n_trees", n_trees}, {"max_depth", max_depth}, {"mtry", mtry}, {"bootstrap", bootstrap}, {"seed", seed}};
}

ForestParams ForestParams::from_json(const nlohmann::json& j, ForestParams p) {
  p.n_trees = j.value("n_trees", p.n_trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.mtry = j.value("mtry", p.mtry);
  p.bootstrap = j.value("bootstrap", p.bootstrap);
  p.seed = j.value("seed", p.seed);
  return p;
}

nlohmann::json SvmParams::to_json() const {
  return {{"C", C}, {"epochs", epochs}, {"batch_size", batch_size}, {"eta0", eta0}, {"seed", seed}};
}

SvmParams SvmParams::from_json(const nlohmann::json& j, SvmParams p) {
  p.C = j.value("C", p.C);
  p.epochs = j.value("epochs", p.epochs);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.eta0 = j.value("eta0", p.eta0);
  p.seed = j.value("seed", p.seed);
  return p;
}

nlohmann::json LdaParams::to_json() const { return {{"ridge", ridge}}; }

LdaParams LdaParams::from_json(const nlohmann::json& j, LdaParams p) {
  p.ridge = j.value("ridge", p.ridge);
  return p;
}

BoostParams BoostParams::from_json(const nlohmann::json& j) { return from_json(j, BoostParams{}); }
ForestParams ForestParams::from_json(const nlohmann::json& j) { return from_json(j, ForestParams{}); }
SvmParams SvmParams::from_json(const nlohmann::json& j) { return from_json(j, SvmParams{}); }
LdaParams LdaParams::from_json(const nlohmann::json& j) { return from_json(j, LdaParams{}); }

int argmax_class(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return static_cast<int>(best);
}

void TrainedModel::predict_scores(const double* x, double* scores) const {
  const std::size_t K = static_cast<std::size_t>(num_classes);
  const std::size_t d = width();
  switch (kind) {
    case ModelKind::LDA:
    case ModelKind::LinearSVM:
      for (std::size_t k = 0; k < K; ++k) {
        double s = bias[k];
        for (std::size_t j = 0; j < d; ++j) s += weights[k * d + j] * x[j];
        scores[k] = s;
      }
      return;
    case ModelKind::RF: {
      std::fill(scores, scores + K, 0.0);
      if (trees.empty()) return;
      const double share = 1.0 / static_cast<double>(trees.size());
      for (const auto& t : trees) scores[argmax_class(t.predict(x))] += share;
      return;
    }
    case ModelKind::GBM:
    case ModelKind::XGB:
      std::copy(base_scores.begin(), base_scores.end(), scores);
      for (std::size_t t = 0; t < trees.size(); ++t)
        scores[static_cast<std::size_t>(tree_class[t])] += trees[t].predict(x)[0];
      return;
  }
}

namespace {

nlohmann::json node_to_json(const Tree& t, int id) {
  const TreeNode& n = t.nodes[static_cast<std::size_t>(id)];
  nlohmann::json j = {{"id", id}, {"cover", n.cover}};
  if (n.is_leaf()) {
    j["leaf"] = n.value;
    return j;
  }
  j["feature"] = n.feature;
  j["threshold"] = n.threshold;
  j["gain"] = n.gain;
  j["left"] = node_to_json(t, n.left);
  j["right"] = node_to_json(t, n.right);
  return j;
}

void node_from_json(const nlohmann::json& j, std::vector<TreeNode>& nodes) {
  const auto id = j.at("id").get<std::size_t>();
  if (id >= nodes.size()) nodes.resize(id + 1);
  TreeNode& n = nodes[id];
  n.cover = j.at("cover").get<double>();
  if (j.contains("leaf")) {
    n.value = j.at("leaf").get<std::vector<double>>();
    return;
  }
  n.feature = j.at("feature").get<int>();
  n.threshold = j.at("threshold").get<double>();
  n.gain = j.at("gain").get<double>();
  n.left = j.at("left").at("id").get<int>();
  n.right = j.at("right").at("id").get<int>();
  node_from_json(j.at("left"), nodes);
  node_from_json(j.at("right"), nodes);
}

constexpr int kModelFormatVersion = 1;

}  // namespace

nlohmann::json TrainedModel::to_json() const {
  nlohmann::json j = {{"format", "tripspeed-model"},
                      {"version", kModelFormatVersion},
                      {"kind", to_string(kind)},
                      {"num_classes", num_classes},
                      {"columns", columns},
                      {"params", params}};
  if (kind == ModelKind::LDA || kind == ModelKind::LinearSVM) {
    j["weights"] = weights;
    j["bias"] = bias;
    j["feature_mean"] = feature_mean;
  } else {
    if (!base_scores.empty()) j["base_scores"] = base_scores;
    nlohmann::json ts = nlohmann::json::array();
    for (std::size_t t = 0; t < trees.size(); ++t) {
      nlohmann::json tj = {{"root", node_to_json(trees[t], 0)}};
      if (!tree_class.empty()) tj["class"] = tree_class[t];
      ts.push_back(std::move(tj));
    }
    j["trees"] = std::move(ts);
  }
  return j;
}

TrainedModel TrainedModel::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "tripspeed-model") throw LearnError("not a model document");
  if (j.value("version", 0) != kModelFormatVersion)
    throw LearnError("unsupported model version " + std::to_string(j.value("version", 0)));
  TrainedModel m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  m.num_classes = j.at("num_classes").get<int>();
  m.columns = j.at("columns").get<std::vector<std::string>>();
  m.params = j.value("params", nlohmann::json::object());
  if (m.kind == ModelKind::LDA || m.kind == ModelKind::LinearSVM) {
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    m.feature_mean = j.value("feature_mean", std::vector<double>(m.columns.size(), 0.0));
    if (m.weights.size() != m.columns.size() * static_cast<std::size_t>(m.num_classes) ||
        m.bias.size() != static_cast<std::size_t>(m.num_classes))
      throw LearnError("linear model dimensions do not match its columns");
    return m;
  }
  m.base_scores = j.value("base_scores", std::vector<double>());
  for (const auto& tj : j.at("trees")) {
    Tree t;
    node_from_json(tj.at("root"), t.nodes);
    m.trees.push_back(std::move(t));
    if (tj.contains("class")) m.tree_class.push_back(tj.at("class").get<int>());
  }
  return m;
}

std::uint64_t TrainedModel::hash() const { return fnv1a64(to_json().dump()); }

TrainedModel truncate_trees(const TrainedModel& m, int n_rounds) {
  TrainedModel out = m;
  std::size_t keep = static_cast<std::size_t>(std::max(n_rounds, 0));
  if (m.kind == ModelKind::GBM || m.kind == ModelKind::XGB) keep *= static_cast<std::size_t>(m.num_classes);
  if (keep < out.trees.size()) {
    out.trees.resize(keep);
    if (!out.tree_class.empty()) out.tree_class.resize(keep);
  }
  if (out.params.is_object() && out.params.contains("n_trees")) out.params["n_trees"] = n_rounds;
  return out;
}

Prediction predict(const TrainedModel& model, const FeatureMatrix& rows) {
  if (rows.columns != model.columns)
    throw LearnError("feature columns do not match the model (" + std::to_string(rows.cols()) + " given, " +
                     std::to_string(model.width()) + " expected)");
  const std::size_t n = rows.rows();
  const std::size_t K = static_cast<std::size_t>(model.num_classes);
  Prediction p;
  p.levels.resize(n);
  p.scores.resize(n * K);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    double* s = p.scores.data() + i * K;
    model.predict_scores(rows.row(i), s);
    p.levels[i] = argmax_class({s, K});
  }
  return p;
}

TrainedModel train_model(ModelKind kind, const FeatureMatrix& train, const nlohmann::json& params) {
  const nlohmann::json& j = params.is_object() ? params : nlohmann::json::object();
  switch (kind) {
    case ModelKind::LDA: return train_lda(train, LdaParams::from_json(j));
    case ModelKind::LinearSVM: return train_linear_svm(train, SvmParams::from_json(j));
    case ModelKind::RF: return train_rf(train, ForestParams::from_json(j));
    case ModelKind::GBM: return train_gbm(train, BoostParams::from_json(j, BoostParams::gbm_defaults()));
    case ModelKind::XGB: return train_xgb(train, BoostParams::from_json(j));
  }
  throw LearnError("unknown model kind");
}

TuneResult tune(ModelKind kind, const FeatureMatrix& train, const TuneGrid& grid, double holdout_ratio,
                std::uint64_t seed, const BoostParams& base) {
  if (grid.max_depth.empty() || grid.n_trees.empty()) throw LearnError("tuning grid is empty");
  if (!is_tree_model(kind)) throw LearnError("tuning applies to rf, gbm and xgb");
  const auto split = split_dataset(train.labels, holdout_ratio, seed, true);
  const FeatureMatrix fit = subset(train, split.train);
  const FeatureMatrix hold = subset(train, split.test);

  std::vector<int> depths = grid.max_depth, counts = grid.n_trees;
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());

  TuneResult out;
  const TuneCell* best = nullptr;
  for (int depth : depths) {
    BoostParams p = base;
    p.max_depth = depth;
    p.n_trees = counts.back();
    nlohmann::json pj = p.to_json();
    if (kind == ModelKind::RF) pj = ForestParams::from_json(pj).to_json();
    // one model with the largest tree count; smaller counts are prefixes
    const TrainedModel full = train_model(kind, fit, pj);
    for (int n_trees : counts) {
      const auto pred = predict(truncate_trees(full, n_trees), hold);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < hold.rows(); ++i) hits += pred.levels[i] == hold.labels[i];
      out.cells.push_back({depth, n_trees, static_cast<double>(hits) / static_cast<double>(hold.rows())});
    }
  }
  for (const auto& c : out.cells) {
    if (!best || c.holdout_accuracy > best->holdout_accuracy ||
        (c.holdout_accuracy == best->holdout_accuracy &&
         (c.n_trees < best->n_trees || (c.n_trees == best->n_trees && c.max_depth < best->max_depth))))
      best = &c;
  }
  out.best = base;
  out.best.max_depth = best->max_depth;
  out.best.n_trees = best->n_trees;
  return out;
}

void write_tune_log(std::ostream& out, const std::vector<TuneCell>& cells) {
  out << "max_depth,n_trees,holdout_accuracy\n";
  for (const auto& c : cells) out << c.max_depth << ',' << c.n_trees << ',' << fmt_double(c.holdout_accuracy) << '\n';
}

}  // namespace tripspeed
