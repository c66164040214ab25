#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "tripspeed/explain.hpp"
#include "tripspeed/util.hpp"

using namespace tripspeed;

namespace {

FeatureMatrix four_feature_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    double r[4];
    for (double& x : r) {
      x = uniform01(rng);
      v.push_back(x);
    }
    y.push_back((r[0] > 0.5) + 2 * ((r[1] > 0.4) != (r[2] > 0.6)) + (r[3] > 0.8));
  }
  return fixtures::make_matrix({"a", "b", "c", "d"}, v, y);
}

double margin(const TrainedModel& m, const double* x, int k) {
  std::vector<double> s(static_cast<std::size_t>(m.num_classes));
  m.predict_scores(x, s.data());
  return s[static_cast<std::size_t>(k)];
}

}  // namespace

// importance ----------------------------------------------------------------

TEST(Importance, SingleUsedFeatureHoldsAllGain) {
  // only column 3 carries signal
  std::mt19937_64 rng(1);
  std::vector<double> v;
  std::vector<int> y;
  for (int i = 0; i < 400; ++i) {
    for (int j = 0; j < 4; ++j) v.push_back(j == 3 ? i : 0.0);
    y.push_back(i < 200 ? 0 : 1);
  }
  const auto x = fixtures::make_matrix({"a", "b", "c", "d"}, v, y);
  BoostParams p;
  p.n_trees = 5;
  const auto rows = feature_importance(train_xgb(x, p));
  EXPECT_EQ(rows[0].feature, "d");
  EXPECT_DOUBLE_EQ(rows[0].share, 1.0);
  EXPECT_EQ(rows[0].rank, 1);
  EXPECT_EQ(rows[3].rank, 4);
}

TEST(Importance, ZeroTreesGiveEmptyTable) {
  const auto x = four_feature_data(100, 2);
  BoostParams p;
  p.n_trees = 2;
  EXPECT_TRUE(feature_importance(truncate_trees(train_xgb(x, p), 0)).empty());
  EXPECT_THROW(feature_importance(train_lda(x)), ExplainError);
}

TEST(Importance, PlantedSignalRanksFirst) {
  std::mt19937_64 rng(3);
  std::vector<double> v;
  std::vector<int> y;
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform01(rng);
    v.insert(v.end(), {uniform01(rng), a, uniform01(rng)});
    y.push_back(static_cast<int>(a * 6.0));
  }
  const auto x = fixtures::make_matrix({"noise1", "signal", "noise2"}, v, y);
  BoostParams p;
  p.n_trees = 20;
  EXPECT_EQ(feature_importance(train_xgb(x, p))[0].feature, "signal");
}

TEST(Importance, SumEqualsTrainingLogExactly) {
  const auto x = fixtures::nonlinear_six_class(1500, 4);
  for (ModelKind k : {ModelKind::RF, ModelKind::GBM, ModelKind::XGB}) {
    const auto m = train_model(k, x, {{"n_trees", 15}});
    const auto rows = feature_importance(m);
    double from_table = 0.0, from_log = 0.0;
    std::vector<double> table(x.cols());
    for (const auto& r : rows) table[r.feature_index] = r.gain;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      from_table += table[j];
      from_log += m.log.gain_by_feature[j];
    }
    EXPECT_EQ(from_table, from_log) << to_string(k);
    EXPECT_EQ(table, m.log.gain_by_feature) << to_string(k);
  }
}

// SHAP ----------------------------------------------------------------------

TEST(Shap, LocalAccuracyForEveryModel) {
  const auto data = fixtures::nonlinear_six_class(1600, 5);
  std::vector<std::size_t> bg_idx, row_idx;
  for (std::size_t i = 0; i < 1600; ++i) (i < 600 ? bg_idx : row_idx).push_back(i);
  const auto bg = subset(data, bg_idx), rows = subset(data, row_idx);
  for (ModelKind k : {ModelKind::LDA, ModelKind::LinearSVM, ModelKind::RF, ModelKind::GBM, ModelKind::XGB}) {
    const auto m = train_model(k, bg, {{"n_trees", 10}, {"max_depth", 5}});
    const auto s = shap_values(m, rows, bg);
    double worst = 0.0;
    for (std::size_t i = 0; i < rows.rows(); ++i)
      for (int c = 0; c < kNumClasses; ++c) {
        double total = s.base[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < rows.cols(); ++j) total += s.at(c, i, j);
        worst = std::max(worst, std::fabs(total - margin(m, rows.row(i), c)));
      }
    EXPECT_LE(worst, 1e-6) << to_string(k);
  }
}

TEST(Shap, BaseIsMeanBackgroundMargin) {
  const auto data = four_feature_data(300, 6);
  const auto m = train_xgb(data, BoostParams::from_json({{"n_trees", 6}}));
  const auto s = shap_values(m, data, data);
  for (int c = 0; c < kNumClasses; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) mean += margin(m, data.row(i), c);
    EXPECT_NEAR(s.base[static_cast<std::size_t>(c)], mean / static_cast<double>(data.rows()), 1e-9);
  }
}

TEST(Shap, MatchesExhaustiveSubsetsOnFourFeatures) {
  const auto data = four_feature_data(400, 7);
  std::vector<std::size_t> bg_idx, row_idx;
  for (std::size_t i = 0; i < 400; ++i) (i % 4 == 0 ? row_idx : bg_idx).push_back(i);
  const auto bg = subset(data, bg_idx);
  const auto rows = subset(data, std::vector<std::size_t>(row_idx.begin(), row_idx.begin() + 50));
  for (ModelKind k : {ModelKind::LDA, ModelKind::LinearSVM, ModelKind::RF, ModelKind::GBM, ModelKind::XGB}) {
    const auto m = train_model(k, bg, {{"n_trees", 8}, {"max_depth", 4}});
    const auto s = shap_values(m, rows, bg);
    double worst = 0.0;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      const auto oracle = exhaustive_shap(m, rows.row(i), bg);
      for (int c = 0; c < kNumClasses; ++c)
        for (std::size_t j = 0; j < 4; ++j)
          worst = std::max(worst, std::fabs(oracle[static_cast<std::size_t>(c)][j] - s.at(c, i, j)));
    }
    EXPECT_LE(worst, 1e-9) << to_string(k);
  }
}

// A handful of background rows leaves most branches with zero cover, and a
// feature revisited deeper on the path can then carry zero weight both ways.
TEST(Shap, SparseBackgroundStaysFiniteAndExact) {
  const auto data = four_feature_data(2000, 8);
  const auto bg = subset(data, std::vector<std::size_t>{3, 11, 42, 97, 500});
  const auto rows = subset(data, std::vector<std::size_t>{0, 1, 2, 7, 19, 64, 128, 999});
  for (ModelKind k : {ModelKind::RF, ModelKind::GBM, ModelKind::XGB}) {
    const auto m = train_model(k, data, {{"n_trees", 10}, {"max_depth", 6}});
    const auto s = shap_values(m, rows, bg);
    double worst_sum = 0.0, worst_oracle = 0.0;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      const auto oracle = exhaustive_shap(m, rows.row(i), bg);
      for (int c = 0; c < kNumClasses; ++c) {
        double total = s.base[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < 4; ++j) {
          ASSERT_TRUE(std::isfinite(s.at(c, i, j))) << to_string(k);
          total += s.at(c, i, j);
          worst_oracle = std::max(worst_oracle, std::fabs(oracle[static_cast<std::size_t>(c)][j] - s.at(c, i, j)));
        }
        worst_sum = std::max(worst_sum, std::fabs(total - margin(m, rows.row(i), c)));
      }
    }
    EXPECT_LE(worst_sum, 1e-6) << to_string(k);
    EXPECT_LE(worst_oracle, 1e-9) << to_string(k);
  }
}

TEST(Shap, DepthOneTreeMatchesTwoOrderings) {
  // one split on b; a is unused
  TrainedModel m;
  m.kind = ModelKind::XGB;
  m.columns = {"a", "b"};
  m.base_scores.assign(kNumClasses, 0.0);
  Tree t;
  t.nodes.resize(3);
  t.nodes[0].feature = 1;
  t.nodes[0].threshold = 0.5;
  t.nodes[0].left = 1;
  t.nodes[0].right = 2;
  t.nodes[1].value = {-1.0};
  t.nodes[2].value = {3.0};
  m.trees = {t};
  m.tree_class = {0};
  const auto bg = fixtures::make_matrix({"a", "b"}, {0, 0.1, 0, 0.2, 0, 0.9, 0, 0.3}, {0, 0, 0, 0});
  const auto row = fixtures::make_matrix({"a", "b"}, {5.0, 0.8}, {0});
  const auto s = shap_values(m, row, bg);
  // E[f] = 0.75 * -1 + 0.25 * 3 = 0; f(x) = 3. Orderings (a,b) and (b,a)
  // both credit b with 3 and a with 0.
  EXPECT_NEAR(s.base[0], 0.0, 1e-15);
  EXPECT_EQ(s.at(0, 0, 0), 0.0);
  EXPECT_NEAR(s.at(0, 0, 1), 3.0, 1e-12);
}

TEST(Shap, ConstantModelAttributesNothing) {
  const auto data = four_feature_data(50, 8);
  const auto m = truncate_trees(train_xgb(data, BoostParams::from_json({{"n_trees", 1}})), 0);
  const auto s = shap_values(m, data, data);
  for (int c = 0; c < kNumClasses; ++c) {
    EXPECT_EQ(s.base[static_cast<std::size_t>(c)], m.base_scores[static_cast<std::size_t>(c)]);
    for (double v : s.values[static_cast<std::size_t>(c)]) EXPECT_EQ(v, 0.0);
  }
}

TEST(Shap, UnusedFeatureGetsExactlyZero) {
  auto data = four_feature_data(500, 9);
  // column d becomes pure noise that no tree can use: constant
  for (std::size_t i = 0; i < data.rows(); ++i) data.values[i * 4 + 3] = 1.0;
  const auto m = train_xgb(data, BoostParams::from_json({{"n_trees", 10}}));
  const auto s = shap_values(m, data, data);
  for (int c = 0; c < kNumClasses; ++c)
    for (std::size_t i = 0; i < data.rows(); ++i) EXPECT_EQ(s.at(c, i, 3), 0.0);
}

TEST(Shap, DuplicateFeaturesShareCreditEqually) {
  // f = [a < 0.5] + [b < 0.5] with a and b identical columns
  TrainedModel m;
  m.kind = ModelKind::XGB;
  m.columns = {"a", "b"};
  m.base_scores.assign(kNumClasses, 0.0);
  for (int f = 0; f < 2; ++f) {
    Tree t;
    t.nodes.resize(3);
    t.nodes[0].feature = f;
    t.nodes[0].threshold = 0.5;
    t.nodes[0].left = 1;
    t.nodes[0].right = 2;
    t.nodes[1].value = {1.0};
    t.nodes[2].value = {0.0};
    m.trees.push_back(t);
    m.tree_class.push_back(2);
  }
  std::vector<double> v;
  std::mt19937_64 rng(10);
  for (int i = 0; i < 100; ++i) {
    const double a = uniform01(rng);
    v.insert(v.end(), {a, a});
  }
  const auto data = fixtures::make_matrix({"a", "b"}, v, std::vector<int>(100, 0));
  const auto s = shap_values(m, data, data);
  for (std::size_t i = 0; i < data.rows(); ++i) EXPECT_NEAR(s.at(2, i, 0), s.at(2, i, 1), 1e-9);
}

TEST(Shap, NonFiniteRowIsError) {
  const auto data = four_feature_data(50, 11);
  const auto m = train_xgb(data, BoostParams::from_json({{"n_trees", 1}}));
  auto bad = data;
  bad.values[5] = std::nan("");
  EXPECT_THROW(shap_values(m, bad, data), ExplainError);
}

// t-SNE ---------------------------------------------------------------------

namespace {

std::vector<double> two_clusters(std::size_t per, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v;
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per; ++i)
      for (int j = 0; j < 10; ++j) v.push_back((c == 1 && j == 0 ? 20.0 : 0.0) + normal01(rng));
  return v;
}

}  // namespace

TEST(Tsne, SeparatesTwoClusters) {
  const auto v = two_clusters(50, 1);
  TsneParams p;
  p.seed = 4;
  const auto e = tsne_embed(v, 100, 10, p);
  double c[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < 100; ++i) {
    c[i / 50][0] += e.coords[2 * i] / 50.0;
    c[i / 50][1] += e.coords[2 * i + 1] / 50.0;
  }
  double intra = 0.0;
  for (std::size_t i = 0; i < 100; ++i)
    intra += std::hypot(e.coords[2 * i] - c[i / 50][0], e.coords[2 * i + 1] - c[i / 50][1]) / 100.0;
  const double inter = std::hypot(c[0][0] - c[1][0], c[0][1] - c[1][1]);
  EXPECT_GE(inter, 3.0 * intra);
  EXPECT_LT(e.kl_final, e.kl_initial);
  EXPECT_GE(e.kl_final, 0.0);
}

TEST(Tsne, SeedFixesBytes) {
  const auto v = two_clusters(20, 2);
  TsneParams p;
  p.iterations = 200;
  p.perplexity = 10;
  EXPECT_EQ(tsne_embed(v, 40, 10, p).coords, tsne_embed(v, 40, 10, p).coords);
  EXPECT_EQ(tsne_embed(v, 40, 10, p).coords, tsne_embed_serial(v, 40, 10, p).coords);
}

TEST(Tsne, KlInvariantUnderRotation) {
  const auto v = two_clusters(25, 3);
  TsneParams p;
  p.perplexity = 10;
  p.iterations = 300;
  const auto e = tsne_embed(v, 50, 10, p);
  // rotate dims 0 and 1 by 40 degrees
  auto r = v;
  const double c = std::cos(0.698), s = std::sin(0.698);
  for (std::size_t i = 0; i < 50; ++i) {
    r[i * 10] = c * v[i * 10] - s * v[i * 10 + 1];
    r[i * 10 + 1] = s * v[i * 10] + c * v[i * 10 + 1];
  }
  EXPECT_NEAR(tsne_kl(r, 50, 10, e.coords, 10), e.kl_final, 1e-6);
}

TEST(Tsne, DuplicateRowsAreJittered) {
  std::vector<double> v = {0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4};
  TsneParams p;
  p.perplexity = 1.5;
  p.iterations = 100;
  const auto e = tsne_embed(v, 6, 2, p);
  for (double c : e.coords) EXPECT_TRUE(std::isfinite(c));
  EXPECT_FALSE(e.warnings.empty());
}

TEST(Tsne, TooFewRowsIsError) {
  std::vector<double> v = {0, 1, 2, 3};
  EXPECT_THROW(tsne_embed(v, 2, 2), ExplainError);
}

// dependence curves ---------------------------------------------------------

TEST(Dependence, ExactLinePicksDegreeOne) {
  std::vector<double> x, y;
  for (int i = 0; i < 30; ++i) {
    x.push_back(i * 0.37 - 2.0);
    y.push_back(2.0 * x.back() + 1.0);
  }
  const auto c = dependence_curve(x, y);
  EXPECT_EQ(c.degree, 1);
  EXPECT_NEAR(c.coefficients[0], 1.0, 1e-9);
  EXPECT_NEAR(c.coefficients[1], 2.0, 1e-9);
  EXPECT_EQ(c.curve_x.size(), 200u);
}

TEST(Dependence, NoisyCubicPicksDegreeThree) {
  std::mt19937_64 rng(4);
  std::vector<double> x, y;
  for (int i = 0; i < 200; ++i) {
    x.push_back(-2.0 + 4.0 * uniform01(rng));
    const double t = x.back();
    y.push_back(0.5 * t * t * t - t + 0.2 + 1e-3 * normal01(rng));
  }
  EXPECT_EQ(dependence_curve(x, y).degree, 3);
}

TEST(Dependence, ConstantResponseIsFlatLine) {
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8}, y(8, 0.25);
  const auto c = dependence_curve(x, y);
  EXPECT_EQ(c.degree, 1);
  EXPECT_NEAR(c.coefficients[1], 0.0, 1e-9);
  EXPECT_NEAR(c.coefficients[0], 0.25, 1e-12);
}

TEST(Dependence, ChosenDegreeMaximizesAdjustedR2) {
  std::mt19937_64 rng(5);
  std::vector<double> x, y;
  for (int i = 0; i < 80; ++i) {
    x.push_back(uniform01(rng) * 10.0);
    y.push_back(std::sin(x.back()) + 0.1 * normal01(rng));
  }
  const auto c = dependence_curve(x, y);
  for (double a : c.candidate_adjusted_r2)
    if (std::isfinite(a)) EXPECT_LE(a, c.adjusted_r2 + 1e-6);
  // raw-basis coefficients reproduce the curve samples
  for (std::size_t i = 0; i < c.curve_x.size(); i += 20) EXPECT_NEAR(c.eval(c.curve_x[i]), c.curve_y[i], 1e-9);
}

TEST(Dependence, SkipsDegreesWithTooFewPoints) {
  std::vector<double> x = {0, 1, 2, 3}, y = {0, 1, 4, 9.5};
  const auto c = dependence_curve(x, y);
  EXPECT_LE(c.degree, 2);
  EXPECT_TRUE(std::isnan(c.candidate_adjusted_r2[2]));
  EXPECT_THROW(dependence_curve(std::vector<double>{0, 1}, std::vector<double>{0, 1}), ExplainError);
}
