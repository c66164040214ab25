#include "tripspeed/evaluate.hpp"

#include <cstdlib>
#include <numeric>

#include "tripspeed/util.hpp"

namespace tripspeed {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_sum(int truth) const {
  std::uint64_t s = 0;
  for (int j = 0; j < k; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(int pred) const {
  std::uint64_t s = 0;
  for (int i = 0; i < k; ++i) s += at(i, pred);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (int i = 0; i < k; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> pred, int k) {
  if (k < 1) throw EvaluateError("class count must be positive");
  if (truth.size() != pred.size())
    throw EvaluateError("label vectors differ in length (" + std::to_string(truth.size()) + " vs " +
                        std::to_string(pred.size()) + ")");
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || pred[i] < 0 || pred[i] >= k)
      throw EvaluateError("label out of range at row " + std::to_string(i));
    ++m.at(truth[i], pred[i]);
  }
  return m;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

EvaluationReport class_metrics(const ConfusionMatrix& m, std::string model) {
  const std::uint64_t total = m.total();
  if (total == 0) throw EvaluateError("confusion matrix is empty");
  EvaluationReport r;
  r.model = std::move(model);
  r.matrix = m;
  for (int c = 0; c < m.k; ++c) {
    ClassMetrics cm;
    cm.level = c;
    cm.tp = m.at(c, c);
    cm.fp = m.col_sum(c) - cm.tp;
    cm.fn = m.row_sum(c) - cm.tp;
    cm.tn = total - cm.tp - cm.fp - cm.fn;
    cm.precision_defined = cm.tp + cm.fp > 0;
    cm.recall_defined = cm.tp + cm.fn > 0;
    cm.precision = cm.precision_defined ? static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp) : 0.0;
    cm.recall = cm.recall_defined ? static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn) : 0.0;
    cm.f1 = f1_score(cm.precision, cm.recall);
    r.classes.push_back(cm);
  }
  r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);
  r.within_1 = within_k_accuracy(m, 1);
  return r;
}

double within_k_accuracy(const ConfusionMatrix& m, int k) {
  const std::uint64_t total = m.total();
  if (total == 0) throw EvaluateError("confusion matrix is empty");
  std::uint64_t hits = 0;
  for (int i = 0; i < m.k; ++i)
    for (int j = 0; j < m.k; ++j)
      if (std::abs(i - j) <= k) hits += m.at(i, j);
  return static_cast<double>(hits) / static_cast<double>(total);
}

double neighbor_error_share(const ConfusionMatrix& m) {
  std::uint64_t errors = 0, adjacent = 0;
  for (int i = 0; i < m.k; ++i)
    for (int j = 0; j < m.k; ++j) {
      if (i == j) continue;
      errors += m.at(i, j);
      if (std::abs(i - j) == 1) adjacent += m.at(i, j);
    }
  return errors == 0 ? 0.0 : static_cast<double>(adjacent) / static_cast<double>(errors);
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json classes_j = nlohmann::json::array();
  for (const auto& c : classes)
    classes_j.push_back({{"level", c.level},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support()},
                         {"precision_defined", c.precision_defined},
                         {"recall_defined", c.recall_defined}});
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < matrix.k; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < matrix.k; ++j) row.push_back(matrix.at(i, j));
    rows.push_back(row);
  }
  return {{"model", model},
          {"accuracy", accuracy},
          {"within_1", within_1},
          {"neighbor_error_share", neighbor_error_share(matrix)},
          {"classes", classes_j},
          {"confusion_matrix", rows}};
}

void write_report_csv(std::ostream& out, std::span<const EvaluationReport> reports) {
  out << "Model,Speeding Level,Precision,Recall,F1-Score,Accuracy,Support,Precision Defined\n";
  for (const auto& r : reports)
    for (const auto& c : r.classes)
      out << r.model << ',' << c.level << ',' << fmt_fixed(c.precision, 3) << ',' << fmt_fixed(c.recall, 3) << ','
          << fmt_fixed(c.f1, 3) << ',' << fmt_fixed(r.accuracy, 3) << ',' << c.support() << ','
          << (c.precision_defined ? 1 : 0) << '\n';
}

}  // namespace tripspeed
