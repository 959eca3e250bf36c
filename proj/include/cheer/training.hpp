#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cheer/data.hpp"
#include "cheer/model.hpp"
#include "json.hpp"

namespace cheer {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One summand of a training objective: weight * mean over `count` samples of
/// a scalar program output. `prepare` binds sample i (and any targets).
struct LossTerm {
  std::string name;
  double weight = 1.0;
  ModelOutput loss = ModelOutput::CrossEntropy;
  std::size_t count = 0;
  std::function<void(ModelProgram&, std::size_t)> prepare;
};

struct TrainingReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 0 means the initial parameters were never beaten
  std::size_t steps = 0;
  double initial_objective = 0.0;
  double best_objective = 0.0;
  bool stopped_early = false;
  bool monitored_validation = false;
  std::vector<double> history;  // monitored objective after each epoch
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// sum_j weight_j * mean_i loss_j(i); empty terms contribute 0.
double evaluate_objective(ModelProgram& program, std::span<const double> params, std::span<const LossTerm> terms);

/// Adam over the `trainable` slices only. Each epoch takes
/// S = ceil(sum n_j / batch) steps; step s uses chunk
/// [floor(s n_j / S), floor((s+1) n_j / S)) of term j's shuffled order with
/// gradient scale weight_j * S / n_j. Early stopping monitors the validation
/// objective (or the running training objective when `val` is empty) and the
/// best parameters are restored.
TrainingReport train_terms(TransferableModel& model, std::span<const LossTerm> train, std::span<const LossTerm> val,
                           std::span<const ParamRange> trainable, const TrainConfig& cfg, ProgramOptions options = {});

/// Labels must lie in [0, c).
void check_labels(const Dataset& dataset, std::size_t n_classes);

LossTerm cross_entropy_term(const Dataset& dataset, double weight = 1.0);

/// Cross-entropy training of a fresh model initialized from cfg.seed.
TransferableModel train_supervised(const Dataset& train, const Dataset& val, const Architecture& arch,
                                   const TrainConfig& cfg, TrainingReport* report = nullptr);

}  // namespace cheer
