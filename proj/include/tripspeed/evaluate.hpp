#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace tripspeed {

class EvaluateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::uint64_t> counts;  // k * k, row-major

  explicit ConfusionMatrix(int classes = 6) : k(classes), counts(static_cast<std::size_t>(classes * classes), 0) {}
  std::uint64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth * k + pred)]; }
  std::uint64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth * k + pred)]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(int truth) const;
  std::uint64_t col_sum(int pred) const;
  std::uint64_t trace() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> pred, int k = 6);

struct ClassMetrics {
  int level = 0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;  // 0 when tp + fp == 0
  double recall = 0.0;     // 0 when tp + fn == 0
  double f1 = 0.0;         // 0 when precision + recall == 0
  bool precision_defined = false;
  bool recall_defined = false;
  std::uint64_t support() const { return tp + fn; }
};

/// Harmonic mean of precision and recall, 0 when both are 0.
double f1_score(double precision, double recall);

struct EvaluationReport {
  std::string model;
  std::vector<ClassMetrics> classes;
  double accuracy = 0.0;
  double within_1 = 0.0;
  ConfusionMatrix matrix;

  nlohmann::json to_json() const;
};

/// One-vs-rest metrics per class. Throws EvaluateError on an empty matrix.
EvaluationReport class_metrics(const ConfusionMatrix& m, std::string model = {});

/// Share of rows with |truth - pred| <= k.
double within_k_accuracy(const ConfusionMatrix& m, int k);

/// Share of misclassified rows that land in an adjacent class.
double neighbor_error_share(const ConfusionMatrix& m);

/// One row per (model, level): Model, Speeding Level, Precision, Recall,
/// F1-Score, Accuracy, Support, then a flag telling whether precision was
/// defined (had any predictions).
void write_report_csv(std::ostream& out, std::span<const EvaluationReport> reports);

}  // namespace tripspeed
