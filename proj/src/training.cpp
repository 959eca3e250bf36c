#include "cheer/training.hpp"

#include <chrono>
#include <cmath>

#include "cheer/autodiff.hpp"
#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f0;

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be > 0");
  if (max_epochs == 0) throw ValidationError("max_epochs must be positive");
  if (patience == 0) throw ValidationError("patience must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
}

double evaluate_objective(ModelProgram& program, std::span<const double> params, std::span<const LossTerm> terms) {
  program.set_params(params);
  double total = 0.0;
  for (const auto& term : terms) {
    if (term.count == 0 || term.weight == 0.0) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i < term.count; ++i) {
      term.prepare(program, i);
      sum += program.run(term.loss)[0];
    }
    total += term.weight * sum / static_cast<double>(term.count);
  }
  return total;
}

TrainingReport train_terms(TransferableModel& model, std::span<const LossTerm> train, std::span<const LossTerm> val,
                           std::span<const ParamRange> trainable, const TrainConfig& cfg, ProgramOptions options) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::size_t total = 0;
  for (const auto& t : train) total += t.count;
  if (total == 0) throw ValidationError("training objective has no samples");
  std::size_t n_val = 0;
  for (const auto& t : val) n_val += t.count;

  std::vector<std::size_t> index;
  for (const auto& r : trainable) {
    if (r.end > model.params().size() || r.begin > r.end) throw ValidationError("trainable range out of bounds");
    for (std::size_t i = r.begin; i < r.end; ++i) index.push_back(i);
  }

  ModelProgram program(model.arch(), options);
  std::vector<double> params(model.params().begin(), model.params().end());
  std::vector<double> best = params;
  std::vector<double> grad(params.size());
  std::vector<double> sub_params(index.size());
  std::vector<double> sub_grad(index.size());
  AdamState adam = AdamState::for_size(index.size(), cfg.lr);

  TrainingReport report;
  report.monitored_validation = n_val > 0;
  report.initial_objective = evaluate_objective(program, params, n_val > 0 ? val : train);
  report.best_objective = report.initial_objective;

  const std::size_t steps = (total + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> order;
    for (std::size_t j = 0; j < train.size(); ++j) {
      order.push_back(Rng::derive(cfg.seed, kShuffleStream + j, epoch).permutation(train[j].count));
    }
    double running = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      program.set_params(params);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t j = 0; j < train.size(); ++j) {
        const LossTerm& term = train[j];
        if (term.count == 0 || term.weight == 0.0) continue;
        const std::size_t lo = s * term.count / steps;
        const std::size_t hi = (s + 1) * term.count / steps;
        const double scale = term.weight * static_cast<double>(steps) / static_cast<double>(term.count);
        for (std::size_t k = lo; k < hi; ++k) {
          term.prepare(program, order[j][k]);
          running += term.weight * program.accumulate(term.loss, grad, scale) / static_cast<double>(term.count);
        }
      }
      for (std::size_t i = 0; i < index.size(); ++i) {
        sub_params[i] = params[index[i]];
        sub_grad[i] = grad[index[i]];
      }
      adam_step(sub_params, sub_grad, adam);
      for (std::size_t i = 0; i < index.size(); ++i) params[index[i]] = sub_params[i];
      ++report.steps;
    }
    const double monitored = n_val > 0 ? evaluate_objective(program, params, val) : running;
    if (!std::isfinite(monitored)) throw NonFiniteError("objective became non-finite at epoch " + std::to_string(epoch));
    report.history.push_back(monitored);
    report.epochs_run = epoch;
    if (monitored < report.best_objective) {
      report.best_objective = monitored;
      report.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }
  std::copy(best.begin(), best.end(), model.params().begin());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json TrainingReport::to_json() const {
  return {{"epochs_run", epochs_run},
          {"best_epoch", best_epoch},
          {"steps", steps},
          {"initial_objective", initial_objective},
          {"best_objective", best_objective},
          {"stopped_early", stopped_early},
          {"monitor", monitored_validation ? "validation" : "training"},
          {"history", history},
          {"wall_seconds", wall_seconds}};
}

void check_labels(const Dataset& dataset, std::size_t n_classes) {
  for (const auto& s : dataset.samples) {
    if (s.label >= n_classes) {
      throw ValidationError("sample " + std::to_string(s.id) + " has label " + std::to_string(s.label) +
                            " outside [0, " + std::to_string(n_classes) + ")");
    }
  }
}

LossTerm cross_entropy_term(const Dataset& dataset, double weight) {
  const Dataset* d = &dataset;
  return LossTerm{"cross_entropy", weight, ModelOutput::CrossEntropy, dataset.size(),
                  [d](ModelProgram& p, std::size_t i) {
                    const auto& s = d->samples[i];
                    std::vector<double> onehot(p.arch().n_classes, 0.0);
                    onehot[s.label] = 1.0;
                    p.set_sample(s);
                    p.set_target(onehot);
                  }};
}

TransferableModel train_supervised(const Dataset& train, const Dataset& val, const Architecture& arch,
                                   const TrainConfig& cfg, TrainingReport* report) {
  if (train.empty()) throw ValidationError("training set is empty");
  check_labels(train, arch.n_classes);
  check_labels(val, arch.n_classes);
  TransferableModel model = TransferableModel::create(arch, cfg.seed);
  const LossTerm train_terms_[] = {cross_entropy_term(train)};
  std::vector<LossTerm> val_terms;
  if (!val.empty()) val_terms.push_back(cross_entropy_term(val));
  const ParamRange all[] = {model.all_range()};
  TrainingReport r = train_terms(model, train_terms_, val_terms, all, cfg);
  if (report) *report = r;
  return model;
}

}  // namespace cheer
