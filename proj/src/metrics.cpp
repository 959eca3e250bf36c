#include "cheer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "cheer/error.hpp"

namespace cheer {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ValidationError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw ValidationError("metrics need at least one sample");
}

void check_range(std::span<const std::size_t> labels, std::size_t c) {
  for (std::size_t y : labels) {
    if (y >= c) throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
  }
}

std::vector<double> column(const std::vector<std::vector<double>>& scores, std::size_t k, std::size_t c) {
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != c) {
      throw ValidationError("score vector " + std::to_string(i) + " has length " + std::to_string(scores[i].size()) +
                            ", expected " + std::to_string(c));
    }
    out[i] = scores[i][k];
  }
  return out;
}

std::vector<bool> is_class(std::span<const std::size_t> truth, std::size_t k) {
  std::vector<bool> out(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) out[i] = truth[i] == k;
  return out;
}

// Shifted by the first value so that constant samples have an exact mean.
double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v - x[0];
  return x[0] + s / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth) {
  check_lengths(preds.size(), truth.size());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

std::vector<double> per_class_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth, std::size_t c) {
  check_lengths(preds.size(), truth.size());
  check_range(preds, c);
  check_range(truth, c);
  std::vector<double> tp(c), fp(c), fn(c);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == truth[i]) {
      tp[preds[i]] += 1;
    } else {
      fp[preds[i]] += 1;
      fn[truth[i]] += 1;
    }
  }
  std::vector<double> f1(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double denom = 2 * tp[k] + fp[k] + fn[k];
    f1[k] = denom > 0 ? 2 * tp[k] / denom : 0.0;
  }
  return f1;
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth, std::size_t c) {
  const auto f1 = per_class_f1(preds, truth, c);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(c);
}

double binary_roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  check_lengths(scores.size(), positive.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks over tie groups; AUC = (R_pos - n_pos (n_pos + 1) / 2) / (n_pos n_neg).
  double rank_sum = 0.0;
  double n_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += midrank;
        n_pos += 1;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("ROC-AUC needs both positives and negatives");
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

double binary_pr_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  check_lengths(scores.size(), positive.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (n_pos == 0) throw ValidationError("PR-AUC needs at least one positive");
  double tp = 0.0;
  double seen = 0.0;
  double prev_recall = 0.0;
  double area = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (positive[order[j]]) tp += 1;
      seen += 1;
      ++j;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return area;
}

namespace {

template <class F>
ClassCurve per_class(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth, std::size_t c,
                     bool need_negatives, F&& fn, const char* what) {
  check_lengths(scores.size(), truth.size());
  check_range(truth, c);
  ClassCurve out;
  out.values.assign(c, std::numeric_limits<double>::quiet_NaN());
  out.skipped.assign(c, true);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const auto pos = is_class(truth, k);
    const auto n_pos = static_cast<std::size_t>(std::count(pos.begin(), pos.end(), true));
    if (n_pos == 0 || (need_negatives && n_pos == pos.size())) continue;
    const auto col = column(scores, k, c);
    out.values[k] = fn(std::span<const double>(col), pos);
    out.skipped[k] = false;
    sum += out.values[k];
    ++used;
  }
  if (used == 0) throw ValidationError(std::string("no class is usable for ") + what);
  out.macro = sum / static_cast<double>(used);
  return out;
}

}  // namespace

ClassCurve roc_auc_per_class(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth,
                             std::size_t c) {
  return per_class(scores, truth, c, true,
                   [](std::span<const double> s, const std::vector<bool>& p) { return binary_roc_auc(s, p); }, "ROC-AUC");
}

ClassCurve pr_auc_per_class(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth,
                            std::size_t c) {
  return per_class(scores, truth, c, false,
                   [](std::span<const double> s, const std::vector<bool>& p) { return binary_pr_auc(s, p); }, "PR-AUC");
}

double roc_auc_macro(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth, std::size_t c) {
  return roc_auc_per_class(scores, truth, c).macro;
}

double pr_auc_macro(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truth, std::size_t c) {
  return pr_auc_per_class(scores, truth, c).macro;
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("t-test needs at least 2 values per sample");
  const double va = sample_variance(a) / static_cast<double>(a.size());
  const double vb = sample_variance(b) / static_cast<double>(b.size());
  const double se2 = va + vb;
  if (!(se2 > 0.0)) throw ValidationError("t-test undefined: both samples have zero variance");
  TTestResult r;
  r.t = (mean(a) - mean(b)) / std::sqrt(se2);
  const double na1 = static_cast<double>(a.size() - 1);
  const double nb1 = static_cast<double>(b.size() - 1);
  r.df = se2 * se2 / (va * va / na1 + vb * vb / nb1);
  boost::math::students_t dist(r.df);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

double t_test_one_tailed(std::span<const double> a, std::span<const double> b) { return welch_t_test(a, b).p_value; }

MetricsReport evaluate_predictions(const std::vector<std::vector<double>>& probs, std::span<const std::size_t> truth,
                                   std::size_t c) {
  check_lengths(probs.size(), truth.size());
  std::vector<std::size_t> preds(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    if (p.size() != c) throw ValidationError("probability vector has wrong length");
    preds[i] = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  MetricsReport r;
  r.n_eval = truth.size();
  r.n_classes = c;
  r.accuracy = accuracy(preds, truth);
  r.f1_per_class = per_class_f1(preds, truth, c);
  r.macro_f1 = std::accumulate(r.f1_per_class.begin(), r.f1_per_class.end(), 0.0) / static_cast<double>(c);
  r.roc_per_class = roc_auc_per_class(probs, truth, c);
  r.pr_per_class = pr_auc_per_class(probs, truth, c);
  r.roc_auc = r.roc_per_class.macro;
  r.pr_auc = r.pr_per_class.macro;
  return r;
}

namespace {

nlohmann::json curve_json(const ClassCurve& curve) {
  nlohmann::json values = nlohmann::json::array();
  std::vector<std::size_t> skipped;
  for (std::size_t k = 0; k < curve.values.size(); ++k) {
    if (curve.skipped[k]) {
      values.push_back(nullptr);
      skipped.push_back(k);
    } else {
      values.push_back(curve.values[k]);
    }
  }
  return {{"per_class", values}, {"skipped_classes", skipped}};
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  return {{"accuracy", accuracy},   {"macro_f1", macro_f1}, {"roc_auc", roc_auc}, {"pr_auc", pr_auc},
          {"n_eval", n_eval},       {"n_classes", n_classes}, {"f1_per_class", f1_per_class},
          {"roc_auc_detail", curve_json(roc_per_class)}, {"pr_auc_detail", curve_json(pr_per_class)}};
}

std::string MetricsReport::to_table() const {
  char buf[128];
  std::string out = "metric      value\n";
  const std::pair<const char*, double> rows[] = {
      {"accuracy", accuracy}, {"macro_f1", macro_f1}, {"roc_auc", roc_auc}, {"pr_auc", pr_auc}};
  for (const auto& [name, v] : rows) {
    std::snprintf(buf, sizeof buf, "%-10s  %.4f\n", name, v);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s  %zu\n", "n_eval", n_eval);
  out += buf;
  return out;
}

}  // namespace cheer
