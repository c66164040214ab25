#include "tripspeed/explain.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tripspeed/util.hpp"

namespace tripspeed {

std::vector<ImportanceRow> feature_importance(const TrainedModel& model) {
  if (!is_tree_model(model.kind))
    throw ExplainError("feature importance needs a tree model, got " + std::string(to_string(model.kind)));
  std::vector<ImportanceRow> rows;
  if (model.trees.empty()) return rows;
  std::vector<double> gains(model.width(), 0.0);
  for (const auto& t : model.trees)
    for (const auto& n : t.nodes)
      if (!n.is_leaf()) gains[static_cast<std::size_t>(n.feature)] += n.gain;
  double total = 0.0;
  for (double g : gains) total += g;
  for (std::size_t j = 0; j < gains.size(); ++j)
    rows.push_back({model.columns[j], j, gains[j], total > 0.0 ? gains[j] / total : 0.0, 0});
  std::stable_sort(rows.begin(), rows.end(), [](const ImportanceRow& a, const ImportanceRow& b) { return a.gain > b.gain; });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i) + 1;
  return rows;
}

void write_importance_csv(std::ostream& out, const std::vector<ImportanceRow>& rows) {
  out << "rank,feature,gain,share\n";
  for (const auto& r : rows) out << r.rank << ',' << r.feature << ',' << fmt_double(r.gain) << ',' << fmt_double(r.share) << '\n';
}

std::vector<double> background_covers(const Tree& tree, const FeatureMatrix& background) {
  std::vector<double> covers(tree.nodes.size(), 0.0);
  for (std::size_t i = 0; i < background.rows(); ++i) {
    const double* x = background.row(i);
    std::size_t n = 0;
    covers[0] += 1.0;
    while (!tree.nodes[n].is_leaf()) {
      const auto& node = tree.nodes[n];
      n = static_cast<std::size_t>(x[node.feature] < node.threshold ? node.left : node.right);
      covers[n] += 1.0;
    }
  }
  return covers;
}

namespace {

// Child weights at a split; an unvisited node falls back to an even split.
std::pair<double, double> child_fractions(const Tree& t, const std::vector<double>& covers, std::size_t n) {
  const auto& node = t.nodes[n];
  const double w = covers[n];
  if (w <= 0.0) return {0.5, 0.5};
  return {covers[static_cast<std::size_t>(node.left)] / w, covers[static_cast<std::size_t>(node.right)] / w};
}

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

void extend_path(PathElement* path, int depth, double zero_fraction, double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

void unwind_path(PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next_one * (depth + 1) / ((i + 1) * one);
      next_one = tmp - path[i].pweight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

double unwound_path_sum(const PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one = path[depth].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = next_one * (depth + 1) / ((i + 1) * one);
      total += tmp;
      next_one = path[i].pweight - tmp * zero * (depth - i) / static_cast<double>(depth + 1);
    } else if (zero != 0.0) {
      total += path[i].pweight / zero / ((depth - i) / static_cast<double>(depth + 1));
    }
  }
  return total;
}

struct ShapContext {
  const Tree& tree;
  const std::vector<double>& covers;
  const double* x;
  std::size_t n_outputs;
  const std::vector<std::vector<double>>& leaf_values;
  double* phi;
};

void recurse(const ShapContext& c, std::size_t n, int depth, PathElement* parent_path, double zero_fraction,
             double one_fraction, int feature) {
  PathElement* path = parent_path + depth + 1;
  std::copy(parent_path, parent_path + depth + 1, path);
  extend_path(path, depth, zero_fraction, one_fraction, feature);

  const auto& node = c.tree.nodes[n];
  if (node.is_leaf()) {
    const auto& v = c.leaf_values[n];
    for (int i = 1; i <= depth; ++i) {
      const double w = unwound_path_sum(path, depth, i);
      const auto& el = path[i];
      const double scale = w * (el.one_fraction - el.zero_fraction);
      for (std::size_t o = 0; o < c.n_outputs; ++o)
        c.phi[static_cast<std::size_t>(el.feature) * c.n_outputs + o] += scale * v[o];
    }
    return;
  }

  const bool go_left = c.x[node.feature] < node.threshold;
  const auto [left_frac, right_frac] = child_fractions(c.tree, c.covers, n);
  const std::size_t hot = static_cast<std::size_t>(go_left ? node.left : node.right);
  const std::size_t cold = static_cast<std::size_t>(go_left ? node.right : node.left);
  const double hot_zero = go_left ? left_frac : right_frac;
  const double cold_zero = go_left ? right_frac : left_frac;

  double incoming_zero = 1.0, incoming_one = 1.0;
  int index = 0;
  for (; index <= depth; ++index)
    if (path[index].feature == node.feature) break;
  if (index != depth + 1) {
    incoming_zero = path[index].zero_fraction;
    incoming_one = path[index].one_fraction;
    unwind_path(path, depth, index);
    depth -= 1;
  }
  // with both fractions zero the whole subtree carries no weight
  if (hot_zero * incoming_zero != 0.0 || incoming_one != 0.0)
    recurse(c, hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, node.feature);
  if (cold_zero * incoming_zero != 0.0) recurse(c, cold, depth + 1, path, cold_zero * incoming_zero, 0.0, node.feature);
}

// Expected leaf output over the cover-weighted tree, for the features outside
// `known` (a bitmask) and following x for features inside it.
double conditional_expectation(const Tree& t, const std::vector<double>& covers,
                               const std::vector<std::vector<double>>& leaf_values, std::size_t output,
                               const double* x, std::uint64_t known, std::size_t n = 0) {
  const auto& node = t.nodes[n];
  if (node.is_leaf()) return leaf_values[n][output];
  if (known >> node.feature & 1u) {
    const std::size_t next = static_cast<std::size_t>(x[node.feature] < node.threshold ? node.left : node.right);
    return conditional_expectation(t, covers, leaf_values, output, x, known, next);
  }
  const auto [lf, rf] = child_fractions(t, covers, n);
  double v = 0.0;
  if (lf != 0.0) v += lf * conditional_expectation(t, covers, leaf_values, output, x, known, static_cast<std::size_t>(node.left));
  if (rf != 0.0) v += rf * conditional_expectation(t, covers, leaf_values, output, x, known, static_cast<std::size_t>(node.right));
  return v;
}

// Leaf output vectors for tree t: boosting trees emit their weight on one
// output; forest trees emit a 1/T vote for the argmax class.
std::vector<std::vector<double>> leaf_outputs(const TrainedModel& m, std::size_t t, std::size_t& n_outputs) {
  const Tree& tree = m.trees[t];
  std::vector<std::vector<double>> out(tree.nodes.size());
  if (m.kind == ModelKind::RF) {
    n_outputs = static_cast<std::size_t>(m.num_classes);
    const double share = 1.0 / static_cast<double>(m.trees.size());
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
      if (!tree.nodes[n].is_leaf()) continue;
      out[n].assign(n_outputs, 0.0);
      out[n][static_cast<std::size_t>(argmax_class(tree.nodes[n].value))] = share;
    }
  } else {
    n_outputs = 1;
    for (std::size_t n = 0; n < tree.nodes.size(); ++n)
      if (tree.nodes[n].is_leaf()) out[n] = {tree.nodes[n].value[0]};
  }
  return out;
}

void check_rows(const TrainedModel& model, const FeatureMatrix& rows, const char* what) {
  if (rows.columns != model.columns) throw ExplainError(std::string(what) + " columns do not match the model");
  for (double v : rows.values)
    if (!std::isfinite(v)) throw ExplainError(std::string(what) + " contains non-finite values");
}

}  // namespace

void tree_shap(const Tree& tree, const std::vector<double>& covers, const double* x, std::size_t n_outputs,
               const std::vector<std::vector<double>>& leaf_values, double* phi, std::size_t n_features) {
  (void)n_features;
  const int max_depth = tree.depth();
  std::vector<PathElement> storage(static_cast<std::size_t>((max_depth + 2) * (max_depth + 3) / 2));
  ShapContext c{tree, covers, x, n_outputs, leaf_values, phi};
  recurse(c, 0, 0, storage.data(), 1.0, 1.0, -1);
}

ShapMatrix shap_values(const TrainedModel& model, const FeatureMatrix& rows, const FeatureMatrix& background) {
  check_rows(model, rows, "rows");
  check_rows(model, background, "background");
  if (background.rows() == 0) throw ExplainError("background sample is empty");
  const std::size_t n = rows.rows(), d = model.width();
  const std::size_t K = static_cast<std::size_t>(model.num_classes);

  ShapMatrix s;
  s.features = model.columns;
  s.num_classes = model.num_classes;
  s.rows = n;
  s.base.assign(K, 0.0);
  s.values.assign(K, std::vector<double>(n * d, 0.0));

  if (model.kind == ModelKind::LDA || model.kind == ModelKind::LinearSVM) {
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < background.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += background.row(i)[j];
    for (double& m : mean) m /= static_cast<double>(background.rows());
    for (std::size_t k = 0; k < K; ++k) {
      const double* w = model.weights.data() + k * d;
      s.base[k] = model.bias[k];
      for (std::size_t j = 0; j < d; ++j) s.base[k] += w[j] * mean[j];
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) s.values[k][i * d + j] = w[j] * (rows.row(i)[j] - mean[j]);
    }
    return s;
  }

  if (!model.base_scores.empty()) s.base = model.base_scores;
  std::vector<std::vector<double>> covers(model.trees.size());
  std::vector<std::vector<std::vector<double>>> leaves(model.trees.size());
  std::vector<std::size_t> outputs(model.trees.size());
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    covers[t] = background_covers(model.trees[t], background);
    leaves[t] = leaf_outputs(model, t, outputs[t]);
    // expected tree output under the background covers
    for (std::size_t o = 0; o < outputs[t]; ++o) {
      const double e = conditional_expectation(model.trees[t], covers[t], leaves[t], o, nullptr, 0);
      const std::size_t k = outputs[t] == 1 ? static_cast<std::size_t>(model.tree_class[t]) : o;
      s.base[k] += e;
    }
  }

#pragma omp parallel
  {
    std::vector<double> phi;
#pragma omp for schedule(dynamic, 16)
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = rows.row(i);
      for (std::size_t t = 0; t < model.trees.size(); ++t) {
        phi.assign(d * outputs[t], 0.0);
        tree_shap(model.trees[t], covers[t], x, outputs[t], leaves[t], phi.data(), d);
        for (std::size_t o = 0; o < outputs[t]; ++o) {
          const std::size_t k = outputs[t] == 1 ? static_cast<std::size_t>(model.tree_class[t]) : o;
          double* dst = s.values[k].data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += phi[j * outputs[t] + o];
        }
      }
    }
  }
  return s;
}

std::vector<std::vector<double>> exhaustive_shap(const TrainedModel& model, const double* x,
                                                 const FeatureMatrix& background) {
  const std::size_t d = model.width();
  const std::size_t K = static_cast<std::size_t>(model.num_classes);
  if (d > 20) throw ExplainError("exhaustive Shapley values are limited to 20 features");
  std::vector<std::vector<double>> phi(K, std::vector<double>(d, 0.0));

  if (!is_tree_model(model.kind)) {
    // linear value function with background-mean imputation
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < background.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += background.row(i)[j];
    for (double& m : mean) m /= static_cast<double>(background.rows());
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < d; ++j) phi[k][j] = model.weights[k * d + j] * (x[j] - mean[j]);
    return phi;
  }

  const std::uint64_t n_subsets = std::uint64_t{1} << d;
  // v[k][S]: class-k expected margin given the features in S
  std::vector<std::vector<double>> v(K, std::vector<double>(n_subsets, 0.0));
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    std::size_t n_out = 0;
    const auto leaves = leaf_outputs(model, t, n_out);
    const auto covers = background_covers(model.trees[t], background);
    for (std::uint64_t S = 0; S < n_subsets; ++S)
      for (std::size_t o = 0; o < n_out; ++o) {
        const std::size_t k = n_out == 1 ? static_cast<std::size_t>(model.tree_class[t]) : o;
        v[k][S] += conditional_expectation(model.trees[t], covers, leaves, o, x, S);
      }
  }
  std::vector<double> fact(d + 1, 1.0);
  for (std::size_t i = 1; i <= d; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  for (std::size_t j = 0; j < d; ++j)
    for (std::uint64_t S = 0; S < n_subsets; ++S) {
      if (S >> j & 1u) continue;
      const auto size = static_cast<std::size_t>(__builtin_popcountll(S));
      const double w = fact[size] * fact[d - size - 1] / fact[d];
      for (std::size_t k = 0; k < K; ++k) phi[k][j] += w * (v[k][S | (std::uint64_t{1} << j)] - v[k][S]);
    }
  return phi;
}

void write_shap_csv(std::ostream& out, const ShapMatrix& shap, int k, std::span<const std::string> row_ids) {
  out << "row";
  for (const auto& f : shap.features) out << ',' << f;
  out << ",base\n";
  const std::size_t d = shap.features.size();
  for (std::size_t i = 0; i < shap.rows; ++i) {
    out << (i < row_ids.size() ? row_ids[i] : std::to_string(i));
    for (std::size_t j = 0; j < d; ++j) out << ',' << fmt_double(shap.at(k, i, j));
    out << ',' << fmt_double(shap.base[static_cast<std::size_t>(k)]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// dependence curves

namespace {

constexpr int kMaxDegree = 5;
constexpr int kCurveSamples = 200;
constexpr double kParsimonyTol = 1e-6;

// Coefficients of p((x - c) / s) re-expressed in powers of x.
std::vector<double> to_raw_basis(const std::vector<double>& a, double c, double s) {
  const std::size_t n = a.size();
  std::vector<double> out(n, 0.0);
  // (x - c)^i / s^i expanded with binomial coefficients
  for (std::size_t i = 0; i < n; ++i) {
    double binom = 1.0;
    const double inv = a[i] / std::pow(s, static_cast<double>(i));
    for (std::size_t r = 0; r <= i; ++r) {
      out[r] += inv * binom * std::pow(-c, static_cast<double>(i - r));
      binom = binom * static_cast<double>(i - r) / static_cast<double>(r + 1);
    }
  }
  return out;
}

double horner(const std::vector<double>& a, double t) {
  double v = 0.0;
  for (std::size_t i = a.size(); i-- > 0;) v = v * t + a[i];
  return v;
}

}  // namespace

double DependenceCurve::eval(double x) const { return horner(coefficients, x); }

nlohmann::json DependenceCurve::to_json() const {
  nlohmann::json cand = nlohmann::json::array();
  for (double v : candidate_adjusted_r2) cand.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  return {{"feature", feature},       {"level", level}, {"degree", degree}, {"coefficients", coefficients},
          {"r2", r2},                 {"adjusted_r2", adjusted_r2},         {"candidate_adjusted_r2", cand}};
}

DependenceCurve dependence_curve(std::span<const double> x, std::span<const double> y, std::span<const double> weights,
                                 std::string feature, int level) {
  const std::size_t n = x.size();
  if (y.size() != n) throw ExplainError("dependence curve inputs differ in length");
  if (!weights.empty() && weights.size() != n) throw ExplainError("dependence curve weights differ in length");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]) || (!weights.empty() && !(weights[i] >= 0.0)))
      throw ExplainError("dependence curve inputs must be finite");

  DependenceCurve c;
  c.feature = std::move(feature);
  c.level = level;
  c.candidate_adjusted_r2.assign(kMaxDegree, std::numeric_limits<double>::quiet_NaN());
  auto w_at = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double wsum = 0.0, ymean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    wsum += w_at(i);
    ymean += w_at(i) * y[i];
  }
  if (n < 3 || !(wsum > 0.0)) throw ExplainError("dependence curve needs at least 3 weighted points");
  ymean /= wsum;
  double sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) sst += w_at(i) * (y[i] - ymean) * (y[i] - ymean);

  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());

  auto fill_curve = [&] {
    for (int s = 0; s < kCurveSamples; ++s) {
      const double xs = lo + (hi - lo) * static_cast<double>(s) / (kCurveSamples - 1);
      c.curve_x.push_back(xs);
      c.curve_y.push_back(c.eval(xs));
    }
  };

  if (sst == 0.0 || distinct < 2) {
    // nothing to explain: a flat line through the weighted mean
    c.degree = 1;
    c.coefficients = {ymean, 0.0};
    c.r2 = sst == 0.0 ? 1.0 : 0.0;
    c.adjusted_r2 = c.r2;
    c.candidate_adjusted_r2[0] = c.r2;
    fill_curve();
    return c;
  }

  const double center = lo + (hi - lo) / 2.0;
  const double scale = (hi - lo) / 2.0;
  bool any = false;
  double best_adj = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> fits(kMaxDegree + 1);
  std::vector<double> r2s(kMaxDegree + 1, 0.0);
  for (int deg = 1; deg <= kMaxDegree; ++deg) {
    if (n < static_cast<std::size_t>(deg + 2) || distinct < static_cast<std::size_t>(deg + 1)) continue;
    Eigen::MatrixXd A(static_cast<Eigen::Index>(n), deg + 1);
    Eigen::VectorXd b(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double sw = std::sqrt(w_at(i));
      const double t = (x[i] - center) / scale;
      double p = 1.0;
      for (int k = 0; k <= deg; ++k, p *= t) A(static_cast<Eigen::Index>(i), k) = sw * p;
      b(static_cast<Eigen::Index>(i)) = sw * y[i];
    }
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(b);
    const std::vector<double> a(coef.data(), coef.data() + coef.size());
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - horner(a, (x[i] - center) / scale);
      sse += w_at(i) * r * r;
    }
    const double r2 = 1.0 - sse / sst;
    const double nn = static_cast<double>(n);
    const double adj = 1.0 - (1.0 - r2) * (nn - 1.0) / (nn - deg - 1.0);
    c.candidate_adjusted_r2[static_cast<std::size_t>(deg - 1)] = adj;
    fits[static_cast<std::size_t>(deg)] = a;
    r2s[static_cast<std::size_t>(deg)] = r2;
    best_adj = std::max(best_adj, adj);
    any = true;
  }
  if (!any) throw ExplainError("too few points for any polynomial degree");
  for (int deg = 1; deg <= kMaxDegree; ++deg) {
    const double adj = c.candidate_adjusted_r2[static_cast<std::size_t>(deg - 1)];
    if (std::isfinite(adj) && adj >= best_adj - kParsimonyTol) {
      c.degree = deg;
      c.adjusted_r2 = adj;
      c.r2 = r2s[static_cast<std::size_t>(deg)];
      c.coefficients = to_raw_basis(fits[static_cast<std::size_t>(deg)], center, scale);
      break;
    }
  }
  fill_curve();
  return c;
}

}  // namespace tripspeed
