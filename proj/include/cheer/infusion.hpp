#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cheer/data.hpp"
#include "cheer/model.hpp"
#include "cheer/training.hpp"
#include "json.hpp"

namespace cheer {

enum class BehaviorSolver { Analytic, Gradient };

std::string to_string(BehaviorSolver solver);
BehaviorSolver parse_behavior_solver(const std::string& text);

struct BehaviorFitConfig {
  double lambda = 0.0;
  BehaviorSolver solver = BehaviorSolver::Analytic;
  std::size_t max_iters = 20000;  // gradient budget
  double tolerance = 1e-10;       // on the max-norm of the gradient
  bool intercept = true;          // fit an unpenalized bias per head
  double fallback_lambda = 1e-3;  // used by cheer() when lambda = 0 is singular

  void validate() const;
};

/// B_i: poor-side scorer inputs paired with the rich model's i-th head score.
struct AuxiliaryDataset {
  std::size_t head = 0;
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;

  std::size_t size() const { return targets.size(); }
};

/// Inputs are the flattened poor views; targets are rich head `head` (0-based)
/// scores on the rich views.
AuxiliaryDataset build_auxiliary(const PairedDataset& paired, const TransferableModel& rich, std::size_t head);

struct HeadFit {
  std::vector<double> weights;
  double bias = 0.0;
  double objective = 0.0;  // 0.5 sum r^2 + lambda |w|^2
  double rms_residual = 0.0;
  std::size_t iterations = 0;
};

/// 0.5 * sum_t (act(w . x_t + b) - y_t)^2 + lambda * |w|^2.
double behavior_objective(const AuxiliaryDataset& data, const std::vector<double>& weights, double bias,
                          double lambda, bool tanh_output);

/// Exact minimizer via (X^T X + 2 lambda D) theta = X^T y where D leaves the
/// bias unpenalized. Throws RankDeficientError when lambda = 0 and X has
/// deficient column rank.
HeadFit fit_head_analytic(const AuxiliaryDataset& data, const BehaviorFitConfig& cfg);

/// Full-batch gradient descent with Armijo backtracking; gradients come from
/// the expression graph.
HeadFit fit_head_gradient(const AuxiliaryDataset& data, const BehaviorFitConfig& cfg, bool tanh_output);

struct BehaviorResult {
  ScorerParams scorer;
  std::vector<HeadFit> heads;
  double lambda_used = 0.0;
  bool fell_back = false;
  std::string message;
  double wall_seconds = 0.0;
};

/// Fits every head of `poor`'s scorer to the rich heads over H_o. In
/// feature-attention mode the inputs are flatten(Q_p) under `poor`'s current
/// extractor.
BehaviorResult behavior_infuse(const TransferableModel& rich, const PairedDataset& paired,
                               const TransferableModel& poor, const BehaviorFitConfig& cfg);

/// L_p = (1/k) sum_t sum_y (T(y|x^r_t) - S(y|x^p_t))^2 + (1/m) sum_t (1 - S(y_t|x^p_t))^2,
/// with empty sums contributing 0.
double target_objective(const TransferableModel& poor, const TransferableModel& rich, const PairedDataset& paired,
                        const Dataset& poor_data);

struct TargetResult {
  TransferableModel model;
  TrainingReport training;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// Trains only the extractor and aggregator of `poor`; the scorer is left
/// bit-identical. `holdout_fraction` of H_o and of H_p is held out for early
/// stopping.
TargetResult target_infuse(const TransferableModel& poor, const TransferableModel& rich, const PairedDataset& paired,
                           const Dataset& poor_data, const TrainConfig& cfg, double holdout_fraction = 0.1);

struct CheerConfig {
  Architecture poor_arch;
  BehaviorFitConfig behavior;
  TrainConfig train;
  double holdout_fraction = 0.1;
};

struct CheerResult {
  TransferableModel model;
  BehaviorResult behavior;
  TargetResult target;
  std::vector<std::string> messages;

  nlohmann::json report() const;
};

/// Behavior infusion for every head, then target infusion.
CheerResult cheer(const Dataset& poor_data, const TransferableModel& rich, const PairedDataset& paired,
                  const CheerConfig& cfg);

struct CostInputs {
  std::uint64_t iters = 1;  // gradient-descent iterations
  std::uint64_t k = 1;
  std::uint64_t w = 1;
  std::uint64_t d = 1;
  std::uint64_t n_p = 1;
  std::uint64_t m = 1;
  std::uint64_t p = 1;
  std::uint64_t c = 1;
};

/// (iters*k*w*d, iters*n_p*(m*p*c + k*c^2)).
std::pair<double, double> estimate_costs(const CostInputs& ci);

}  // namespace cheer
