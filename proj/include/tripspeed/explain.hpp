#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tripspeed/learn.hpp"

namespace tripspeed {

class ExplainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImportanceRow {
  std::string feature;
  std::size_t feature_index = 0;
  double gain = 0.0;
  double share = 0.0;
  int rank = 0;
};

/// Total realized split gain per feature over all trees, descending, ties by
/// feature index. Empty for a model without trees; throws for linear models.
std::vector<ImportanceRow> feature_importance(const TrainedModel& model);
void write_importance_csv(std::ostream& out, const std::vector<ImportanceRow>& rows);

/// Per-class additive attributions. values[k] is rows x features.
struct ShapMatrix {
  std::vector<std::string> features;
  int num_classes = 0;
  std::size_t rows = 0;
  std::vector<double> base;                 // K
  std::vector<std::vector<double>> values;  // K blocks of rows * features

  double at(int k, std::size_t row, std::size_t feature) const {
    return values[static_cast<std::size_t>(k)][row * features.size() + feature];
  }
};

/// Node covers of `tree` counted over the background rows.
std::vector<double> background_covers(const Tree& tree, const FeatureMatrix& background);

/// Path-dependent tree Shapley values for one tree with vector-valued leaves
/// (`leaf_value` maps a leaf node to its outputs). `phi` is features x outputs
/// and is accumulated into.
void tree_shap(const Tree& tree, const std::vector<double>& covers, const double* x, std::size_t n_outputs,
               const std::vector<std::vector<double>>& leaf_values, double* phi, std::size_t n_features);

/// Exact attributions. Tree models use the path-dependent tree algorithm with
/// covers taken from `background`; linear models use w_j (x_j - mean_j) with
/// background means. base[k] is the mean class-k margin over the background.
ShapMatrix shap_values(const TrainedModel& model, const FeatureMatrix& rows, const FeatureMatrix& background);

/// Brute-force Shapley values over all feature subsets for one row, using the
/// same cover-weighted conditional expectation. Exponential in the number of
/// features; meant for checking shap_values.
std::vector<std::vector<double>> exhaustive_shap(const TrainedModel& model, const double* x,
                                                 const FeatureMatrix& background);

void write_shap_csv(std::ostream& out, const ShapMatrix& shap, int k, std::span<const std::string> row_ids = {});

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  std::uint64_t seed = 0;
};

struct Embedding2D {
  std::vector<double> coords;  // rows x 2
  double perplexity = 0.0;     // effective value used
  double kl_initial = 0.0;
  double kl_final = 0.0;
  std::vector<std::string> warnings;

  std::size_t rows() const { return coords.size() / 2; }
};

/// Exact t-SNE on a row-major rows x dims matrix. Throws for fewer than 3 rows
/// or non-finite input.
Embedding2D tsne_embed(std::span<const double> data, std::size_t rows, std::size_t dims, const TsneParams& params = {});

/// Same computation without OpenMP; reference for tests and benchmarks.
Embedding2D tsne_embed_serial(std::span<const double> data, std::size_t rows, std::size_t dims,
                              const TsneParams& params = {});

/// KL(P || Q) for an embedding, with P computed at the given perplexity.
double tsne_kl(std::span<const double> data, std::size_t rows, std::size_t dims, std::span<const double> coords,
               double perplexity);

struct DependenceCurve {
  std::string feature;
  int level = 0;
  int degree = 1;
  std::vector<double> coefficients;  // raw feature basis, ascending powers
  double r2 = 0.0;
  double adjusted_r2 = 0.0;
  std::vector<double> candidate_adjusted_r2;  // degrees 1..5, NaN when skipped
  std::vector<double> curve_x, curve_y;       // 200 samples over the observed range

  double eval(double x) const;
  nlohmann::json to_json() const;
};

/// Least-squares polynomial fits of degree 1..5; the degree with the highest
/// adjusted R^2 is kept, preferring the lowest degree within 1e-6 of the best.
DependenceCurve dependence_curve(std::span<const double> x, std::span<const double> y,
                                 std::span<const double> weights = {}, std::string feature = {}, int level = 0);

}  // namespace tripspeed
