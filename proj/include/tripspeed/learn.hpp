#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tripspeed/features.hpp"

namespace tripspeed {

inline constexpr int kNumClasses = kNumLevels;

class LearnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows of `m` selected by `idx`, in that order.
FeatureMatrix subset(const FeatureMatrix& m, std::span<const std::size_t> idx);

struct SplitResult {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
  std::uint64_t seed = 0;
  double ratio = 0.0;
};

/// Seeded train/test split; |test| = round(N * test_ratio). Stratified
/// splits apportion the test count across classes by largest remainder.
SplitResult split_dataset(std::span<const int> labels, double test_ratio, std::uint64_t seed, bool stratified);

// ---------------------------------------------------------------------------
// trees

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // x < threshold goes left
  int left = -1;
  int right = -1;
  double gain = 0.0;   // realized split gain, 0 for leaves
  double cover = 0.0;  // hessian sum (regression) or sample weight (classification)
  std::vector<double> value;  // leaf: one weight, or a K-class distribution

  bool is_leaf() const { return feature < 0; }
};

/// Node ids are assigned breadth-first; node 0 is the root.
struct Tree {
  std::vector<TreeNode> nodes;

  std::size_t leaf_of(const double* x) const;
  const std::vector<double>& predict(const double* x) const { return nodes[leaf_of(x)].value; }
  int depth() const;
  std::size_t leaves() const;
};

struct TreeParams {
  int max_depth = 6;
  double reg_lambda = 1.0;
  double reg_gamma = 0.0;
  double min_child_weight = 1.0;
};

enum class GradientMode {
  SecondOrder,  // split gain and leaf weight both use the supplied hessians
  FirstOrder,   // split structure fits the gradient with unit hessians, leaves take a Newton step
};

/// Regression tree on per-row gradient statistics. Leaves hold the unscaled
/// weight -G/(H+lambda), or 0 when H+lambda < 1e-12.
Tree grow_regression_tree(const FeatureMatrix& x, std::span<const double> grad, std::span<const double> hess,
                          const TreeParams& params, GradientMode mode = GradientMode::SecondOrder);

struct ClassTreeParams {
  int max_depth = 16;
  std::size_t mtry = 0;  // 0 = all features
  std::uint64_t seed = 0;
};

/// Gini classification tree. Rows with zero weight are ignored; weights
/// act as replication counts. Leaves hold the normalized class distribution.
Tree grow_classification_tree(const FeatureMatrix& x, std::span<const double> weights,
                              const ClassTreeParams& params, int num_classes = kNumClasses);

/// Classification tree on every row with unit weights and all features.
Tree train_tree(const FeatureMatrix& train, int max_depth = 16);

// ---------------------------------------------------------------------------
// softmax loss

/// Multiclass log-loss of one row; `scores` has K entries.
double softmax_loss(std::span<const double> scores, int label);
/// Per-class gradient and hessian diagonal of softmax_loss w.r.t. scores.
void softmax_grad_hess(std::span<const double> scores, int label, std::span<double> grad, std::span<double> hess);

// ---------------------------------------------------------------------------
// models

enum class ModelKind { LDA, LinearSVM, RF, GBM, XGB };
std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);  // throws LearnError
bool is_tree_model(ModelKind k);

struct BoostParams {
  int n_trees = 100;
  int max_depth = 6;
  double learning_rate = 0.3;
  double reg_lambda = 1.0;
  double reg_gamma = 0.0;
  double min_child_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static BoostParams from_json(const nlohmann::json& j);
  static BoostParams from_json(const nlohmann::json& j, BoostParams defaults);
  static BoostParams gbm_defaults();
};

struct ForestParams {
  int n_trees = 100;
  int max_depth = 16;
  std::size_t mtry = 0;  // 0 = ceil(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ForestParams from_json(const nlohmann::json& j);
  static ForestParams from_json(const nlohmann::json& j, ForestParams defaults);
};

struct SvmParams {
  double C = 1.0;
  int epochs = 30;
  std::size_t batch_size = 64;
  double eta0 = 0.5;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SvmParams from_json(const nlohmann::json& j);
  static SvmParams from_json(const nlohmann::json& j, SvmParams defaults);
};

struct LdaParams {
  double ridge = 1e-6;  // relative to trace / d

  nlohmann::json to_json() const;
  static LdaParams from_json(const nlohmann::json& j);
  static LdaParams from_json(const nlohmann::json& j, LdaParams defaults);
};

/// Training-side bookkeeping. gain_by_feature accumulates realized split
/// gains in tree order then node order.
struct TrainingLog {
  std::vector<double> gain_by_feature;
  std::vector<double> objective;  // per round (boosting), per epoch (SVM)
  std::vector<std::string> warnings;
};

struct TrainedModel {
  ModelKind kind = ModelKind::XGB;
  std::vector<std::string> columns;
  int num_classes = kNumClasses;
  nlohmann::json params;

  // LDA / LinearSVM: scores = W x + b in raw feature space.
  std::vector<double> weights;  // K x d, row-major
  std::vector<double> bias;     // K
  std::vector<double> feature_mean;  // training means, for linear attribution

  // RF / GBM / XGB
  std::vector<Tree> trees;
  std::vector<int> tree_class;      // boosting: class each tree contributes to
  std::vector<double> base_scores;  // boosting: K

  TrainingLog log;

  std::size_t width() const { return columns.size(); }
  /// K finite scores for one row of width() values.
  void predict_scores(const double* x, double* scores) const;

  nlohmann::json to_json() const;
  static TrainedModel from_json(const nlohmann::json& j);
  /// FNV-1a of the serialized document; byte-level model identity.
  std::uint64_t hash() const;
};

TrainedModel train_lda(const FeatureMatrix& train, const LdaParams& params = {});
TrainedModel train_linear_svm(const FeatureMatrix& train, const SvmParams& params = {});
TrainedModel train_rf(const FeatureMatrix& train, const ForestParams& params = {});
TrainedModel train_gbm(const FeatureMatrix& train, const BoostParams& params = BoostParams::gbm_defaults());
TrainedModel train_xgb(const FeatureMatrix& train, const BoostParams& params = {});

/// Trains `kind` with parameters read from `params` (missing keys take defaults).
TrainedModel train_model(ModelKind kind, const FeatureMatrix& train, const nlohmann::json& params = nlohmann::json::object());

/// Keeps the first `n_rounds` boosting rounds (or RF trees).
TrainedModel truncate_trees(const TrainedModel& m, int n_rounds);

struct Prediction {
  std::vector<int> levels;
  std::vector<double> scores;  // rows x K
};

/// Columns of `rows` must equal the model's columns. Parallel over rows.
Prediction predict(const TrainedModel& model, const FeatureMatrix& rows);
int argmax_class(std::span<const double> scores);

struct TuneGrid {
  std::vector<int> max_depth = {3, 6, 9};
  std::vector<int> n_trees = {50, 100, 200};
};

struct TuneCell {
  int max_depth = 0;
  int n_trees = 0;
  double holdout_accuracy = 0.0;
};

struct TuneResult {
  BoostParams best;
  std::vector<TuneCell> cells;  // ordered by (max_depth, n_trees)
};

/// Grid search on a seeded, stratified internal holdout of `train`. Ties go
/// to fewer trees, then shallower depth.
TuneResult tune(ModelKind kind, const FeatureMatrix& train, const TuneGrid& grid, double holdout_ratio,
                std::uint64_t seed, const BoostParams& base = {});
void write_tune_log(std::ostream& out, const std::vector<TuneCell>& cells);

}  // namespace tripspeed
