#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

#include "tripspeed/learn.hpp"
#include "tripspeed/util.hpp"

namespace tripspeed {

std::size_t Tree::leaf_of(const double* x) const {
  std::size_t n = 0;
  while (!nodes[n].is_leaf()) {
    const auto& node = nodes[n];
    n = static_cast<std::size_t>(x[node.feature] < node.threshold ? node.left : node.right);
  }
  return n;
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    best = std::max(best, d[i] + 1);
  }
  return best;
}

std::size_t Tree::leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

namespace {

constexpr double kHessFloor = 1e-12;

double leaf_weight(double g, double h, double lambda) {
  const double denom = h + lambda;
  return denom < kHessFloor ? 0.0 : -g / denom;
}

double score_term(double g, double h, double lambda) {
  const double denom = h + lambda;
  return denom < kHessFloor ? 0.0 : g * g / denom;
}

double split_threshold(double a, double b) {
  const double mid = a + (b - a) / 2.0;
  return mid > a ? mid : b;
}

struct Candidate {
  double gain = 0.0;
  double threshold = 0.0;
  bool found = false;
};

// Regression statistics: gradient sum, split hessian, leaf hessian.
struct RegStats {
  double g = 0.0, hs = 0.0, hl = 0.0;
};

struct RegressionCriterion {
  using Stats = RegStats;
  std::span<const double> grad, hess;
  GradientMode mode;
  TreeParams params;

  double split_lambda() const { return mode == GradientMode::FirstOrder ? 0.0 : params.reg_lambda; }
  void add(Stats& s, std::uint32_t row) const {
    s.g += grad[row];
    s.hs += mode == GradientMode::FirstOrder ? 1.0 : hess[row];
    s.hl += hess[row];
  }
  Stats minus(const Stats& a, const Stats& b) const { return {a.g - b.g, a.hs - b.hs, a.hl - b.hl}; }
  bool can_split(const Stats&) const { return true; }
  bool child_ok(const Stats& c) const { return c.hs >= params.min_child_weight && c.hs > 0.0; }
  double gain(const Stats& l, const Stats& r, const Stats& p) const {
    const double lam = split_lambda();
    return 0.5 * (score_term(l.g, l.hs, lam) + score_term(r.g, r.hs, lam) - score_term(p.g, p.hs, lam)) -
           params.reg_gamma;
  }
  std::vector<double> leaf(const Stats& s) const { return {leaf_weight(s.g, s.hl, params.reg_lambda)}; }
  double cover(const Stats& s) const { return s.hl; }
};

struct ClassStats {
  std::array<double, 16> c{};
  double w = 0.0;
};

struct GiniCriterion {
  using Stats = ClassStats;
  std::span<const int> labels;
  std::span<const double> weights;
  int k;

  void add(Stats& s, std::uint32_t row) const {
    s.c[static_cast<std::size_t>(labels[row])] += weights[row];
    s.w += weights[row];
  }
  Stats minus(const Stats& a, const Stats& b) const {
    Stats r;
    for (int i = 0; i < k; ++i) r.c[i] = a.c[i] - b.c[i];
    r.w = a.w - b.w;
    return r;
  }
  static double sq(const Stats& s) {
    double t = 0.0;
    for (double v : s.c) t += v * v;
    return s.w > 0.0 ? t / s.w : 0.0;
  }
  bool can_split(const Stats& s) const {
    int nonzero = 0;
    for (int i = 0; i < k; ++i) nonzero += s.c[i] > 0.0;
    return nonzero > 1;
  }
  bool child_ok(const Stats& c) const { return c.w > 0.0; }
  // weighted impurity decrease: W*gini(P) - WL*gini(L) - WR*gini(R)
  double gain(const Stats& l, const Stats& r, const Stats& p) const { return sq(l) + sq(r) - sq(p); }
  std::vector<double> leaf(const Stats& s) const {
    std::vector<double> v(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) v[i] = s.w > 0.0 ? s.c[i] / s.w : 0.0;
    return v;
  }
  double cover(const Stats& s) const { return s.w; }
};

struct Task {
  int node;
  std::size_t begin, end;
  int depth;
};

/// Breadth-first exact greedy growth over presorted per-feature row lists.
/// Each node owns the same contiguous range in every list; a split stably
/// partitions the range so the lists stay sorted.
template <typename Crit>
Tree grow(const FeatureMatrix& x, const std::vector<std::uint32_t>& rows, const Crit& crit, int max_depth,
          std::size_t mtry, std::mt19937_64* rng) {
  const std::size_t d = x.cols();
  const std::size_t n = rows.size();
  const double* X = x.values.data();
  auto at = [&](std::uint32_t r, std::size_t f) { return X[static_cast<std::size_t>(r) * d + f]; };

  std::vector<std::vector<std::uint32_t>> order(d, rows);
#pragma omp parallel for schedule(dynamic) if (n * d > 50000)
  for (std::size_t f = 0; f < d; ++f)
    std::stable_sort(order[f].begin(), order[f].end(),
                     [&](std::uint32_t a, std::uint32_t b) { return at(a, f) < at(b, f); });

  Tree tree;
  tree.nodes.emplace_back();
  std::deque<Task> queue{{0, 0, n, 0}};
  std::vector<char> goes_left(x.rows(), 0);
  std::vector<std::size_t> all_features(d);
  std::iota(all_features.begin(), all_features.end(), std::size_t{0});

  while (!queue.empty()) {
    const Task t = queue.front();
    queue.pop_front();
    typename Crit::Stats total{};
    for (std::size_t i = t.begin; i < t.end; ++i) crit.add(total, order.empty() ? rows[i] : order[0][i]);
    auto make_leaf = [&] {
      TreeNode& node = tree.nodes[t.node];
      node.value = crit.leaf(total);
      node.cover = crit.cover(total);
    };
    if (t.depth >= max_depth || t.end - t.begin < 2 || d == 0 || !crit.can_split(total)) {
      make_leaf();
      continue;
    }

    std::vector<std::size_t> features = all_features;
    if (mtry > 0 && mtry < d && rng) {
      for (std::size_t i = 0; i < mtry; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(bounded(*rng, d - i));
        std::swap(features[i], features[j]);
      }
      features.resize(mtry);
      std::sort(features.begin(), features.end());
    }

    std::vector<Candidate> best(features.size());
#pragma omp parallel for schedule(dynamic) if ((t.end - t.begin) * features.size() > 20000)
    for (std::size_t fi = 0; fi < features.size(); ++fi) {
      const std::size_t f = features[fi];
      const auto& ord = order[f];
      typename Crit::Stats left{};
      Candidate c;
      for (std::size_t i = t.begin; i + 1 < t.end; ++i) {
        crit.add(left, ord[i]);
        const double a = at(ord[i], f), b = at(ord[i + 1], f);
        if (!(a < b)) continue;
        const auto right = crit.minus(total, left);
        if (!crit.child_ok(left) || !crit.child_ok(right)) continue;
        const double g = crit.gain(left, right, total);
        if (!c.found || g > c.gain) c = {g, split_threshold(a, b), true};
      }
      best[fi] = c;
    }

    // serial reduction in feature order keeps the lowest index on ties
    int best_f = -1;
    Candidate chosen;
    for (std::size_t fi = 0; fi < features.size(); ++fi) {
      if (!best[fi].found) continue;
      if (best_f < 0 || best[fi].gain > chosen.gain) {
        chosen = best[fi];
        best_f = static_cast<int>(features[fi]);
      }
    }
    if (best_f < 0 || !(chosen.gain > 0.0)) {
      make_leaf();
      continue;
    }

    const std::size_t f = static_cast<std::size_t>(best_f);
    std::size_t n_left = 0;
    for (std::size_t i = t.begin; i < t.end; ++i) {
      const std::uint32_t r = order[f][i];
      goes_left[r] = at(r, f) < chosen.threshold;
      n_left += goes_left[r];
    }
#pragma omp parallel for schedule(static) if ((t.end - t.begin) * d > 50000)
    for (std::size_t g = 0; g < d; ++g) {
      auto& ord = order[g];
      std::stable_partition(ord.begin() + static_cast<std::ptrdiff_t>(t.begin),
                            ord.begin() + static_cast<std::ptrdiff_t>(t.end),
                            [&](std::uint32_t r) { return goes_left[r] != 0; });
    }

    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[t.node];
    node.feature = best_f;
    node.threshold = chosen.threshold;
    node.gain = chosen.gain;
    node.cover = crit.cover(total);
    node.left = left_id;
    node.right = left_id + 1;
    queue.push_back({left_id, t.begin, t.begin + n_left, t.depth + 1});
    queue.push_back({left_id + 1, t.begin + n_left, t.end, t.depth + 1});
  }
  return tree;
}

}  // namespace

Tree grow_regression_tree(const FeatureMatrix& x, std::span<const double> grad, std::span<const double> hess,
                          const TreeParams& params, GradientMode mode) {
  if (grad.size() != x.rows() || hess.size() != x.rows())
    throw LearnError("gradient statistics do not match the row count");
  if (x.rows() == 0) throw LearnError("cannot grow a tree on zero rows");
  std::vector<std::uint32_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), 0u);
  RegressionCriterion crit{grad, hess, mode, params};
  return grow(x, rows, crit, params.max_depth, 0, nullptr);
}

Tree grow_classification_tree(const FeatureMatrix& x, std::span<const double> weights, const ClassTreeParams& params,
                              int num_classes) {
  if (weights.size() != x.rows()) throw LearnError("weights do not match the row count");
  if (num_classes < 1 || num_classes > 16) throw LearnError("unsupported class count");
  std::vector<std::uint32_t> rows;
  for (std::size_t i = 0; i < x.rows(); ++i)
    if (weights[i] > 0.0) rows.push_back(static_cast<std::uint32_t>(i));
  if (rows.empty()) throw LearnError("cannot grow a tree on zero rows");
  for (int y : x.labels)
    if (y < 0 || y >= num_classes) throw LearnError("label out of range");
  std::mt19937_64 rng(params.seed);
  GiniCriterion crit{x.labels, weights, num_classes};
  return grow(x, rows, crit, params.max_depth, params.mtry, &rng);
}

Tree train_tree(const FeatureMatrix& train, int max_depth) {
  const std::vector<double> w(train.rows(), 1.0);
  return grow_classification_tree(train, w, {max_depth, 0, 0});
}

}  // namespace tripspeed
