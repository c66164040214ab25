#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tripspeed/learn.hpp"
#include "tripspeed/util.hpp"

namespace tripspeed {

namespace {

// Score given to classes absent from training; finite so argmax stays defined.
constexpr double kAbsentScore = -1e9;

std::vector<std::size_t> class_counts(const FeatureMatrix& m, int K) {
  std::vector<std::size_t> c(static_cast<std::size_t>(K), 0);
  for (int y : m.labels) {
    if (y < 0 || y >= K) throw LearnError("label " + std::to_string(y) + " out of range");
    ++c[static_cast<std::size_t>(y)];
  }
  return c;
}

std::size_t present_classes(const std::vector<std::size_t>& counts) {
  return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
}

void check_finite(const FeatureMatrix& m) {
  for (double v : m.values)
    if (!std::isfinite(v)) throw LearnError("training matrix contains non-finite values");
}

struct Standardizer {
  std::vector<double> mean, scale;  // scale 0 marks a dropped feature
  std::vector<std::size_t> kept;
};

Standardizer standardize(const FeatureMatrix& m, TrainingLog& log) {
  const std::size_t n = m.rows(), d = m.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += m.row(i)[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (m.row(i)[j] - mu) * (m.row(i)[j] - mu);
    var /= static_cast<double>(n);
    s.mean[j] = mu;
    if (var > 0.0) {
      s.scale[j] = std::sqrt(var);
      s.kept.push_back(j);
    } else {
      log.warnings.push_back("feature '" + m.columns[j] + "' is constant in training data; dropped");
    }
  }
  return s;
}

Eigen::MatrixXd standardized(const FeatureMatrix& m, const Standardizer& s) {
  Eigen::MatrixXd z(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(s.kept.size()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < s.kept.size(); ++c) {
      const std::size_t j = s.kept[c];
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = (m.row(i)[j] - s.mean[j]) / s.scale[j];
    }
  return z;
}

// Maps a standardized linear score w.z + b back to raw feature space.
void to_raw(const Standardizer& s, const Eigen::VectorXd& w, double b, std::size_t d, double* w_raw, double* b_raw) {
  std::fill(w_raw, w_raw + d, 0.0);
  double shift = 0.0;
  for (std::size_t c = 0; c < s.kept.size(); ++c) {
    const std::size_t j = s.kept[c];
    w_raw[j] = w(static_cast<Eigen::Index>(c)) / s.scale[j];
    shift += w_raw[j] * s.mean[j];
  }
  *b_raw = b - shift;
}

TrainedModel linear_shell(ModelKind kind, const FeatureMatrix& train, const Standardizer& s) {
  TrainedModel m;
  m.kind = kind;
  m.columns = train.columns;
  m.weights.assign(static_cast<std::size_t>(kNumClasses) * train.cols(), 0.0);
  m.bias.assign(kNumClasses, kAbsentScore);
  m.feature_mean = s.mean;
  return m;
}

}  // namespace

TrainedModel train_lda(const FeatureMatrix& train, const LdaParams& params) {
  check_finite(train);
  const auto counts = class_counts(train, kNumClasses);
  if (present_classes(counts) < 2) throw LearnError("LDA needs at least two classes in training data");
  const std::size_t n = train.rows(), d = train.cols();

  TrainingLog log;
  const Standardizer s = standardize(train, log);
  if (s.kept.empty()) throw LearnError("every feature is constant; nothing to train on");
  const Eigen::MatrixXd z = standardized(train, s);
  const auto p = static_cast<Eigen::Index>(s.kept.size());

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(kNumClasses, p);
  for (std::size_t i = 0; i < n; ++i) means.row(train.labels[i]) += z.row(static_cast<Eigen::Index>(i));
  for (int k = 0; k < kNumClasses; ++k)
    if (counts[k] > 0) means.row(k) /= static_cast<double>(counts[k]);

  Eigen::MatrixXd centered = z;
  for (std::size_t i = 0; i < n; ++i) centered.row(static_cast<Eigen::Index>(i)) -= means.row(train.labels[i]);
  const double dof = std::max<double>(1.0, static_cast<double>(n) - static_cast<double>(present_classes(counts)));
  Eigen::MatrixXd cov = (centered.transpose() * centered) / dof;
  const double trace = cov.trace();
  const double eps = trace > 0.0 ? params.ridge * trace / static_cast<double>(p) : params.ridge;
  cov.diagonal().array() += eps;

  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw LearnError("pooled covariance is not invertible after ridge");

  TrainedModel m = linear_shell(ModelKind::LDA, train, s);
  for (int k = 0; k < kNumClasses; ++k) {
    if (counts[k] == 0) continue;
    const Eigen::VectorXd mu = means.row(k).transpose();
    const Eigen::VectorXd w = llt.solve(mu);
    const double prior = static_cast<double>(counts[k]) / static_cast<double>(n);
    const double b = -0.5 * mu.dot(w) + std::log(prior);
    to_raw(s, w, b, d, m.weights.data() + static_cast<std::size_t>(k) * d, &m.bias[k]);
  }
  m.params = params.to_json();
  m.log = std::move(log);
  return m;
}

TrainedModel train_linear_svm(const FeatureMatrix& train, const SvmParams& params) {
  check_finite(train);
  const auto counts = class_counts(train, kNumClasses);
  if (present_classes(counts) < 2) throw LearnError("SVM needs at least two classes in training data");
  if (!(params.C > 0.0) || params.epochs < 1 || params.batch_size < 1) throw LearnError("invalid SVM parameters");
  const std::size_t n = train.rows(), d = train.cols();

  TrainingLog log;
  const Standardizer s = standardize(train, log);
  if (s.kept.empty()) throw LearnError("every feature is constant; nothing to train on");
  const Eigen::MatrixXd z = standardized(train, s);
  const auto p = static_cast<Eigen::Index>(s.kept.size());
  // primal objective scaled by 1/(C N): |w|^2 / (2 C N) + mean hinge
  const double lambda = 1.0 / (params.C * static_cast<double>(n));

  std::vector<Eigen::VectorXd> best_w(kNumClasses, Eigen::VectorXd::Zero(p));
  std::vector<double> best_b(kNumClasses, 0.0);
  std::vector<std::vector<double>> history(kNumClasses, std::vector<double>(params.epochs, 0.0));

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < kNumClasses; ++k) {
    if (counts[k] == 0) continue;
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i)) = train.labels[i] == k ? 1.0 : -1.0;
    auto objective = [&](const Eigen::VectorXd& w, double b) {
      const Eigen::ArrayXd margins = y.array() * ((z * w).array() + b);
      return 0.5 * lambda * w.squaredNorm() + (1.0 - margins).max(0.0).sum() / static_cast<double>(n);
    };

    std::mt19937_64 rng(mix_seed(params.seed, static_cast<std::uint64_t>(k)));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p), avg_w = w, grad(p);
    double b = 0.0, avg_b = 0.0;
    double best = objective(w, b);
    std::uint64_t t = 0;
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
      fisher_yates(perm, rng);
      for (std::size_t start = 0; start < n; start += params.batch_size) {
        const std::size_t stop = std::min(n, start + params.batch_size);
        grad = lambda * w;
        double grad_b = 0.0;
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (std::size_t q = start; q < stop; ++q) {
          const auto i = static_cast<Eigen::Index>(perm[q]);
          if (y(i) * (z.row(i).dot(w) + b) < 1.0) {
            grad.noalias() -= (y(i) * inv) * z.row(i).transpose();
            grad_b -= y(i) * inv;
          }
        }
        ++t;
        const double eta = params.eta0 / std::sqrt(static_cast<double>(t));
        w -= eta * grad;
        b -= eta * grad_b;
        const double a = 1.0 / static_cast<double>(t);
        avg_w += a * (w - avg_w);
        avg_b += a * (b - avg_b);
      }
      // keep the best averaged iterate seen so far
      const double obj = objective(avg_w, avg_b);
      if (obj < best) {
        best = obj;
        best_w[k] = avg_w;
        best_b[k] = avg_b;
      }
      history[k][static_cast<std::size_t>(epoch)] = best;
    }
  }

  TrainedModel m = linear_shell(ModelKind::LinearSVM, train, s);
  log.objective.assign(params.epochs, 0.0);
  for (int k = 0; k < kNumClasses; ++k) {
    if (counts[k] == 0) continue;
    to_raw(s, best_w[k], best_b[k], d, m.weights.data() + static_cast<std::size_t>(k) * d, &m.bias[k]);
    for (int e = 0; e < params.epochs; ++e) log.objective[e] += history[k][e];
  }
  m.params = params.to_json();
  m.log = std::move(log);
  return m;
}

namespace {

void accumulate_gains(const Tree& t, std::vector<double>& gains) {
  for (const auto& node : t.nodes)
    if (!node.is_leaf()) gains[static_cast<std::size_t>(node.feature)] += node.gain;
}

}  // namespace

TrainedModel train_rf(const FeatureMatrix& train, const ForestParams& params) {
  check_finite(train);
  class_counts(train, kNumClasses);
  if (params.n_trees < 1) throw LearnError("n_trees must be >= 1");
  if (params.max_depth < 1) throw LearnError("max_depth must be >= 1");
  if (train.rows() == 0) throw LearnError("empty training set");
  const std::size_t n = train.rows(), d = train.cols();
  std::size_t mtry = params.mtry == 0 ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))))
                                      : params.mtry;
  if (mtry < 1 || mtry > d) throw LearnError("mtry must lie in [1, d]");

  TrainedModel m;
  m.kind = ModelKind::RF;
  m.columns = train.columns;
  m.trees.resize(static_cast<std::size_t>(params.n_trees));
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < params.n_trees; ++t) {
    std::mt19937_64 rng(mix_seed(params.seed, static_cast<std::uint64_t>(t)));
    std::vector<double> w(n, params.bootstrap ? 0.0 : 1.0);
    if (params.bootstrap)
      for (std::size_t i = 0; i < n; ++i) w[bounded(rng, n)] += 1.0;
    m.trees[static_cast<std::size_t>(t)] = grow_classification_tree(train, w, {params.max_depth, mtry, rng()});
  }
  m.log.gain_by_feature.assign(d, 0.0);
  for (const auto& t : m.trees) accumulate_gains(t, m.log.gain_by_feature);
  ForestParams stored = params;
  stored.mtry = mtry;
  m.params = stored.to_json();
  return m;
}

namespace {

TrainedModel boost(ModelKind kind, const FeatureMatrix& train, const BoostParams& params) {
  params.validate();
  check_finite(train);
  const auto counts = class_counts(train, kNumClasses);
  const std::size_t n = train.rows(), d = train.cols();
  if (n == 0) throw LearnError("empty training set");
  constexpr std::size_t K = kNumClasses;
  const GradientMode mode = kind == ModelKind::XGB ? GradientMode::SecondOrder : GradientMode::FirstOrder;
  const TreeParams tp{params.max_depth, params.reg_lambda, params.reg_gamma, params.min_child_weight};

  TrainedModel m;
  m.kind = kind;
  m.columns = train.columns;
  m.params = params.to_json();
  m.base_scores.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    m.base_scores[k] = std::log(std::max(static_cast<double>(counts[k]) / static_cast<double>(n), 1e-12));
  m.log.gain_by_feature.assign(d, 0.0);

  std::vector<double> F(n * K), G(n * K), H(n * K);
  for (std::size_t i = 0; i < n; ++i) std::copy(m.base_scores.begin(), m.base_scores.end(), F.begin() + i * K);
  std::vector<double> gk(n), hk(n);
  double penalty = 0.0;

  auto objective = [&] {
    std::vector<double> row_loss(n);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) row_loss[i] = softmax_loss({F.data() + i * K, K}, train.labels[i]);
    const double loss = std::accumulate(row_loss.begin(), row_loss.end(), 0.0);
    // GBM tracks mean log-loss; XGB the regularized total
    return kind == ModelKind::XGB ? loss + penalty : loss / static_cast<double>(n);
  };
  m.log.objective.push_back(objective());

  for (int round = 0; round < params.n_trees; ++round) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i)
      softmax_grad_hess({F.data() + i * K, K}, train.labels[i], {G.data() + i * K, K}, {H.data() + i * K, K});
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        gk[i] = G[i * K + k];
        hk[i] = H[i * K + k];
      }
      Tree tree = grow_regression_tree(train, gk, hk, tp, mode);
      for (auto& node : tree.nodes) {
        if (!node.is_leaf()) continue;
        node.value[0] *= params.learning_rate;
        penalty += 0.5 * params.reg_lambda * node.value[0] * node.value[0] + params.reg_gamma;
      }
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) F[i * K + k] += tree.predict(train.row(i))[0];
      accumulate_gains(tree, m.log.gain_by_feature);
      m.trees.push_back(std::move(tree));
      m.tree_class.push_back(static_cast<int>(k));
    }
    m.log.objective.push_back(objective());
  }
  return m;
}

}  // namespace

TrainedModel train_gbm(const FeatureMatrix& train, const BoostParams& params) {
  return boost(ModelKind::GBM, train, params);
}

TrainedModel train_xgb(const FeatureMatrix& train, const BoostParams& params) {
  return boost(ModelKind::XGB, train, params);
}

}  // namespace tripspeed
