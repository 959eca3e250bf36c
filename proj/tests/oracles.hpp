#pragma once

// Independent reference computations used as test oracles.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace cheer::testing {

/// Student t density with `df` degrees of freedom.
inline double t_density(double x, double df) {
  const double log_c = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  return std::exp(log_c - (df + 1) / 2 * std::log1p(x * x / df));
}

/// P(T > t) by composite Simpson quadrature of the density over [0, |t|].
inline double t_upper_tail(double t, double df, int intervals = 200000) {
  const double a = std::abs(t);
  const double h = a / intervals;
  double s = t_density(0, df) + t_density(a, df);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * t_density(i * h, df);
  const double mass = s * h / 3.0;
  return t >= 0 ? 0.5 - mass : 0.5 + mass;
}

struct WelchOracle {
  double t, df, p;
};

inline WelchOracle welch_oracle(std::span<const double> a, std::span<const double> b) {
  auto stats = [](std::span<const double> x) {
    double m = 0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double s = 0;
    for (double v : x) s += (v - m) * (v - m);
    return std::pair{m, s / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = stats(a);
  const auto [mb, vb] = stats(b);
  const double qa = va / static_cast<double>(a.size()), qb = vb / static_cast<double>(b.size());
  const double t = (ma - mb) / std::sqrt(qa + qb);
  const double df = (qa + qb) * (qa + qb) /
                    (qa * qa / static_cast<double>(a.size() - 1) + qb * qb / static_cast<double>(b.size() - 1));
  return {t, df, t_upper_tail(t, df)};
}

/// Pairwise count over every (positive, negative) pair, ties worth 1/2.
inline double pairwise_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1;
      wins += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

/// Sweeps every observed score as a ">= threshold" cut, highest first, and
/// sums recall increments times precision.
inline double sweep_pr_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double n_pos = 0;
  for (bool p : positive) n_pos += p;
  double area = 0, prev_recall = 0;
  for (double th : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) (positive[i] ? tp : fp) += 1;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
  }
  return area;
}

}  // namespace cheer::testing
