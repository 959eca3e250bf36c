#pragma once

#include "cheer/data.hpp"
#include "cheer/model.hpp"
#include "cheer/training.hpp"
#include "json.hpp"

namespace cheer {

struct KDConfig {
  double distill_temperature = 5.0;
  double soft_weight = 1.0;
  double hard_weight = 1.0;
  double holdout_fraction = 0.1;  // of H_o, for the validation objective

  void validate() const;
  nlohmann::json to_json() const;
};

struct ATConfig {
  double beta = 1.0;
  double holdout_fraction = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct BaselineResult {
  TransferableModel model;
  TrainingReport training;
  nlohmann::json report;
};

/// soft * CE(student at temperature T || softmax(rich logits / T)) over H_o
/// plus hard * CE(student, y) over H_p. A zero weight drops its term.
BaselineResult train_kd(const TransferableModel& rich, const PairedDataset& paired, const Dataset& poor_train,
                        const Dataset& poor_val, const Architecture& arch, const KDConfig& kd, const TrainConfig& cfg);

/// CE over H_p plus beta * || a_p/|a_p| - a_r/|a_r| ||^2 over H_o, all student
/// parameters trained jointly. beta = 0 drops the attention term.
BaselineResult train_at(const TransferableModel& rich, const PairedDataset& paired, const Dataset& poor_train,
                        const Dataset& poor_val, const Architecture& arch, const ATConfig& at, const TrainConfig& cfg);

/// Per-sample attention term for given score vectors. Throws ValidationError
/// on a zero-norm vector.
double attention_gap(std::span<const double> student, std::span<const double> teacher);

/// Softmax of rich logits at the distillation temperature.
std::vector<std::vector<double>> soft_labels(const Dataset& rich_view, const TransferableModel& rich,
                                             double temperature);

}  // namespace cheer
