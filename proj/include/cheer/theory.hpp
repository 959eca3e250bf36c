#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cheer/data.hpp"
#include "cheer/infusion.hpp"
#include "cheer/model.hpp"
#include "json.hpp"

namespace cheer {

/// (1/m) sum_t (1 - S(y_t|x_t))^2 over H_p; 0 when H_p is empty.
double poor_data_term(const TransferableModel& poor, const Dataset& poor_data);

/// sum_y (T_y - S_y)^2 + poor_term.
double particular_loss(std::span<const double> rich_probs, std::span<const double> poor_probs, double poor_term);

struct ParticularLoss {
  double value = 0.0;
  bool empty_poor_data = false;  // second term taken as 0
};

ParticularLoss particular_loss(const TransferableModel& poor, const TransferableModel& rich,
                               const TimeSeriesSample& rich_x, const TimeSeriesSample& poor_x,
                               const Dataset& poor_data);

/// Mean particular loss over H_o. Throws on empty H_o.
double empirical_loss(const TransferableModel& poor, const TransferableModel& rich, const PairedDataset& paired,
                      const Dataset& poor_data);

/// Half the smallest (top - runner-up) probability gap over the set.
double robustness_constant(const std::vector<std::vector<double>>& probs);
double robustness_constant(const TransferableModel& rich, const Dataset& eval_rich_view);

/// ceil((c+1)^2 / (2 eps^2) * ln(2 / delta)).
std::uint64_t required_pairs(std::size_t c, double epsilon, double delta);

struct Lemma2Verdict {
  bool condition_met = false;
  bool agree = false;
  double loss = 0.0;

  bool violates() const { return condition_met && !agree; }
};

Lemma2Verdict check_lemma2(std::span<const double> rich_probs, std::span<const double> poor_probs, double poor_term,
                           double phi);
Lemma2Verdict check_lemma2(const TransferableModel& poor, const TransferableModel& rich,
                           const TimeSeriesSample& rich_x, const TimeSeriesSample& poor_x, const Dataset& poor_data,
                           double phi);

/// 1 - (alpha + 2 eps) / phi^2. Throws VacuousBoundError when phi = 0;
/// non-positive results are returned as-is.
double agreement_bound(double alpha, double epsilon, double phi);

struct TheoryReport {
  double phi = 0.0;
  double alpha_hat = 0.0;  // empirical loss of the trained poor model (estimate of alpha)
  double epsilon = 0.0;
  double delta = 0.0;
  std::uint64_t k_required = 0;
  std::size_t k_used = 0;
  double bound = 0.0;
  bool vacuous = false;
  double empirical_agreement = 0.0;
  std::size_t n_eval = 0;
  std::string phi_set;
  bool satisfied = false;  // empirical_agreement >= bound

  nlohmann::json to_json() const;
};

struct Theorem1Config {
  SyntheticSpec generator;   // mirror_views for the realizable setting
  Architecture arch;         // shared by rich and poor
  double rich_temperature = 0.25;
  TrainConfig train;
  BehaviorFitConfig behavior;
  std::size_t n_rich_train = 2000;
  std::size_t n_poor = 400;
  std::size_t n_eval = 2000;
  double epsilon = 0.05;
  double delta = 0.05;
  std::size_t trials = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Theorem1Result {
  std::vector<TheoryReport> trials;
  std::size_t satisfied_non_vacuous = 0;
  std::size_t vacuous = 0;
  double rich_train_seconds = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Two classes, identical views (mirror_views), T = 16, l = 4 and a small
/// shared architecture; rich temperature 0.25.
Theorem1Config realizable_theorem1_config();

/// Trains one rich model, then per trial draws fresh H_o (k = required pairs),
/// H_p and an evaluation set from the generator, runs cheer, and compares the
/// measured agreement with the bound at alpha_hat.
Theorem1Result verify_theorem1(const Theorem1Config& cfg);

}  // namespace cheer
