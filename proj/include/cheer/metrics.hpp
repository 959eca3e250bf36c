#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace cheer {

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth);

/// Unweighted mean of one-vs-rest F1. A class with no predicted and no actual
/// positives contributes 0.
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth, std::size_t c);
std::vector<double> per_class_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth, std::size_t c);

/// Mann-Whitney AUC of `scores` for binary `positive` flags, ties worth 1/2.
/// Throws when either class is absent.
double binary_roc_auc(std::span<const double> scores, const std::vector<bool>& positive);

/// Step-wise sum over distinct thresholds (descending) of
/// (R_k - R_{k-1}) * P_k. Throws when there are no positives.
double binary_pr_auc(std::span<const double> scores, const std::vector<bool>& positive);

struct ClassCurve {
  std::vector<double> values;   // per class; NaN where skipped
  std::vector<bool> skipped;
  double macro = 0.0;
};

/// One-vs-rest per class over classes with both positives and negatives.
ClassCurve roc_auc_per_class(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth,
                             std::size_t c);
/// One-vs-rest per class over classes with at least one positive.
ClassCurve pr_auc_per_class(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth,
                            std::size_t c);

double roc_auc_macro(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth, std::size_t c);
double pr_auc_macro(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth, std::size_t c);

/// Welch two-sample t statistic; one-tailed p for mean(a) > mean(b).
struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 0.0;
};
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);
double t_test_one_tailed(std::span<const double> a, std::span<const double> b);

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  std::vector<double> f1_per_class;
  ClassCurve roc_per_class;
  ClassCurve pr_per_class;
  std::size_t n_eval = 0;
  std::size_t n_classes = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Predictions are the argmax of each probability vector (lowest index on ties).
MetricsReport evaluate_predictions(const std::vector<std::vector<double>>& probs, std::span<const std::size_t> truth,
                                   std::size_t c);

}  // namespace cheer
