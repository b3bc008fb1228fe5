#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mg2vec/mlm.hpp"

namespace mg2vec {

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero whenever a denominator vanishes.
PrfScores precision_recall_f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

struct PrCurve {
  // One point per distinct score threshold, highest threshold first.
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<double> recall;
  /// Step-wise average precision; 0 when there are no positives.
  double average_precision = 0.0;
};

/// Equal scores are grouped into a single threshold.
PrCurve precision_recall_curve(const std::vector<double>& scores, const std::vector<bool>& positive);

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  /// Rows are true classes, columns predicted classes, plus a trailing
  /// "unassigned" column when any prediction is -1.
  std::vector<std::vector<std::size_t>> confusion;
  bool has_unassigned = false;
  /// Per-class one-vs-rest curves; empty when no scores were supplied.
  std::vector<PrCurve> pr_curves;
  /// cluster -> class (-1 unassigned) when the predictions came from clustering.
  std::optional<std::vector<int>> cluster_to_class;
  /// Free-form fields copied into the JSON (scenario, mode, counts).
  std::vector<std::pair<std::string, std::string>> notes;

  std::string to_json() const;
  std::string to_text() const;
  /// `class,threshold,precision,recall` rows.
  void save_pr_csv(std::ostream& out) const;
};

/// Predictions may contain -1 (no class). `scores`, when given, holds one
/// column per class and yields the PR curves.
EvalReport evaluate(const std::vector<int>& predicted, const std::vector<int>& truth,
                    const std::vector<std::string>& classes, const Matrix* scores = nullptr);

}  // namespace mg2vec
