#include "cheer/infusion.hpp"

#include <chrono>
#include <cmath>

#include <Eigen/Dense>

#include "cheer/autodiff.hpp"
#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

namespace {

constexpr std::uint64_t kHoldoutPairedStream = 0x70a1;
constexpr std::uint64_t kHoldoutPoorStream = 0x70a2;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_aux(const AuxiliaryDataset& data) {
  if (data.size() == 0) throw ValidationError("auxiliary dataset is empty");
  if (data.inputs.size() != data.size()) throw ShapeError("auxiliary inputs and targets differ in length");
  const std::size_t n = data.inputs[0].size();
  for (const auto& row : data.inputs) {
    if (row.size() != n) throw ShapeError("auxiliary inputs have ragged lengths");
  }
  for (double y : data.targets) {
    if (!std::isfinite(y)) throw NonFiniteError("auxiliary target is not finite");
  }
}

/// Design matrix with an optional trailing column of ones.
Eigen::MatrixXd design(const AuxiliaryDataset& data, bool intercept) {
  const std::size_t k = data.size();
  const std::size_t n = data.inputs[0].size();
  Eigen::MatrixXd x(k, n + (intercept ? 1 : 0));
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < n; ++j) x(t, j) = data.inputs[t][j];
    if (intercept) x(t, n) = 1.0;
  }
  return x;
}

HeadFit finish(const AuxiliaryDataset& data, std::vector<double> w, double b, double lambda, bool tanh_output,
               std::size_t iterations) {
  HeadFit fit;
  fit.weights = std::move(w);
  fit.bias = b;
  fit.objective = behavior_objective(data, fit.weights, b, lambda, tanh_output);
  double ss = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    double a = b;
    for (std::size_t j = 0; j < fit.weights.size(); ++j) a += fit.weights[j] * data.inputs[t][j];
    if (tanh_output) a = std::tanh(a);
    ss += (a - data.targets[t]) * (a - data.targets[t]);
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(data.size()));
  fit.iterations = iterations;
  return fit;
}

/// Solves all heads against one shared design matrix.
std::vector<HeadFit> fit_heads_analytic(const std::vector<AuxiliaryDataset>& heads, const BehaviorFitConfig& cfg) {
  const Eigen::MatrixXd x = design(heads[0], cfg.intercept);
  const auto cols = static_cast<std::size_t>(x.cols());
  const std::size_t n = heads[0].inputs[0].size();
  if (cfg.lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (static_cast<std::size_t>(qr.rank()) < cols) {
      throw RankDeficientError("normal equations are singular at lambda = 0 (rank " + std::to_string(qr.rank()) +
                               " < " + std::to_string(cols) + " columns, k = " + std::to_string(x.rows()) +
                               "); use lambda > 0");
    }
  }
  Eigen::MatrixXd a = x.transpose() * x;
  for (std::size_t j = 0; j < n; ++j) a(j, j) += 2.0 * cfg.lambda;
  Eigen::MatrixXd y(x.rows(), static_cast<Eigen::Index>(heads.size()));
  for (std::size_t h = 0; h < heads.size(); ++h) {
    for (std::size_t t = 0; t < heads[h].size(); ++t) y(t, h) = heads[h].targets[t];
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw RankDeficientError("normal equations are not positive definite; use a larger lambda");
  }
  const Eigen::MatrixXd theta = ldlt.solve(x.transpose() * y);
  std::vector<HeadFit> fits;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    std::vector<double> w(n);
    for (std::size_t j = 0; j < n; ++j) w[j] = theta(j, h);
    const double b = cfg.intercept ? theta(n, h) : 0.0;
    if (!std::isfinite(b) || !std::all_of(w.begin(), w.end(), [](double v) { return std::isfinite(v); })) {
      throw RankDeficientError("normal-equation solution is not finite; use lambda > 0");
    }
    fits.push_back(finish(heads[h], std::move(w), b, cfg.lambda, false, 1));
  }
  return fits;
}

}  // namespace

std::string to_string(BehaviorSolver solver) { return solver == BehaviorSolver::Analytic ? "analytic" : "gradient"; }

BehaviorSolver parse_behavior_solver(const std::string& text) {
  if (text == "analytic") return BehaviorSolver::Analytic;
  if (text == "gradient") return BehaviorSolver::Gradient;
  throw ValidationError("unknown behavior solver '" + text + "'");
}

void BehaviorFitConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be >= 0");
  if (!(fallback_lambda > 0.0)) throw ValidationError("fallback lambda must be > 0");
  if (max_iters == 0) throw ValidationError("gradient budget must be positive");
  if (!(tolerance > 0.0)) throw ValidationError("tolerance must be > 0");
}

AuxiliaryDataset build_auxiliary(const PairedDataset& paired, const TransferableModel& rich, std::size_t head) {
  if (paired.empty()) throw ValidationError("paired dataset is empty");
  const std::size_t d = rich.arch().extractor.rnn_hidden;
  if (head >= d) {
    throw ValidationError("head index " + std::to_string(head) + " out of range for d = " + std::to_string(d));
  }
  const auto rich_scores = scores(paired.rich, rich);
  AuxiliaryDataset aux;
  aux.head = head;
  for (std::size_t t = 0; t < paired.size(); ++t) {
    aux.inputs.push_back(paired.poor.samples[t].values);
    aux.targets.push_back(rich_scores[t][head]);
  }
  return aux;
}

double behavior_objective(const AuxiliaryDataset& data, const std::vector<double>& weights, double bias,
                          double lambda, bool tanh_output) {
  double ss = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (data.inputs[t].size() != weights.size()) throw ShapeError("weights do not match auxiliary inputs");
    double a = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) a += weights[j] * data.inputs[t][j];
    if (tanh_output) a = std::tanh(a);
    ss += (a - data.targets[t]) * (a - data.targets[t]);
  }
  double pen = 0.0;
  for (double w : weights) pen += w * w;
  return 0.5 * ss + lambda * pen;
}

HeadFit fit_head_analytic(const AuxiliaryDataset& data, const BehaviorFitConfig& cfg) {
  cfg.validate();
  check_aux(data);
  return fit_heads_analytic({data}, cfg).front();
}

HeadFit fit_head_gradient(const AuxiliaryDataset& data, const BehaviorFitConfig& cfg, bool tanh_output) {
  cfg.validate();
  check_aux(data);
  const std::size_t k = data.size();
  const std::size_t n = data.inputs[0].size();
  const std::size_t cols = n + (cfg.intercept ? 1 : 0);

  ExprGraph g;
  const NodeId x = g.input("X", {k, cols});
  const NodeId theta = g.input("theta", {cols});
  const NodeId y = g.input("y", {k});
  std::vector<double> mask(cols, 1.0);
  if (cfg.intercept) mask[n] = 0.0;
  NodeId pred = g.matvec(x, theta);
  if (tanh_output) pred = g.tanh(pred);
  const NodeId fit_term = g.scale(g.sum(g.square(g.sub(pred, y))), 0.5);
  const NodeId penalty = g.scale(g.sum(g.square(g.mul(theta, g.constant(Tensor({cols}, mask))))), cfg.lambda);
  const NodeId objective = g.add(fit_term, penalty);

  Executor exec(g);
  const Eigen::MatrixXd xm = design(data, cfg.intercept);
  std::vector<double> xrow(k * cols);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < cols; ++j) xrow[t * cols + j] = xm(t, j);
  }
  exec.bind(x, xrow);
  exec.bind(y, data.targets);

  auto value = [&](const std::vector<double>& th) {
    exec.bind(theta, th);
    exec.forward(objective);
    return exec.value(objective)[0];
  };
  std::vector<double> th(cols, 0.0);
  std::vector<double> grad(cols);
  auto evaluate = [&](const std::vector<double>& point) {
    const double f = value(point);
    exec.backward(objective);
    const auto gv = exec.grad(theta);
    std::copy(gv.begin(), gv.end(), grad.begin());
    return f;
  };

  double f = evaluate(th);
  double step = 1.0;
  std::size_t it = 0;
  std::vector<double> cand(cols);
  for (; it < cfg.max_iters; ++it) {
    double gmax = 0.0;
    double g2 = 0.0;
    for (double v : grad) {
      gmax = std::max(gmax, std::abs(v));
      g2 += v * v;
    }
    if (gmax <= cfg.tolerance) break;
    double fc = 0.0;
    bool accepted = false;
    while (step > 1e-300) {
      for (std::size_t j = 0; j < cols; ++j) cand[j] = th[j] - step * grad[j];
      fc = value(cand);
      if (fc <= f - 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    th = cand;
    f = evaluate(th);
    step *= 2.0;
  }
  std::vector<double> w(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(n));
  return finish(data, std::move(w), cfg.intercept ? th[n] : 0.0, cfg.lambda, tanh_output, it);
}

BehaviorResult behavior_infuse(const TransferableModel& rich, const PairedDataset& paired,
                               const TransferableModel& poor, const BehaviorFitConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  if (paired.empty()) throw ValidationError("paired dataset is empty");
  const std::size_t d = rich.arch().extractor.rnn_hidden;
  if (poor.arch().extractor.rnn_hidden != d) {
    throw ValidationError("rich and poor models must share d (" + std::to_string(d) + " vs " +
                          std::to_string(poor.arch().extractor.rnn_hidden) + ")");
  }
  const ScorerMode mode = poor.arch().scorer_mode;
  if (cfg.solver == BehaviorSolver::Analytic && mode != ScorerMode::RawLinear) {
    throw ValidationError("the analytic solver requires the raw-linear scorer mode");
  }

  const auto rich_scores = scores(paired.rich, rich);
  std::vector<std::vector<double>> inputs;
  if (mode == ScorerMode::FeatureAttention) {
    ModelProgram prog(poor.arch());
    prog.set_params(poor.params());
    for (const auto& s : paired.poor.samples) {
      prog.set_sample(s);
      const auto q = prog.run(ModelOutput::Features);
      inputs.emplace_back(q.begin(), q.end());
    }
  } else {
    for (const auto& s : paired.poor.samples) {
      check_sample(s, poor.arch());
      inputs.push_back(s.values);
    }
  }
  std::vector<AuxiliaryDataset> heads(d);
  for (std::size_t i = 0; i < d; ++i) {
    heads[i].head = i;
    heads[i].inputs = inputs;
    for (const auto& r : rich_scores) heads[i].targets.push_back(r[i]);
    check_aux(heads[i]);
  }

  BehaviorResult result;
  result.lambda_used = cfg.lambda;
  if (cfg.solver == BehaviorSolver::Analytic) {
    result.heads = fit_heads_analytic(heads, cfg);
  } else {
    for (const auto& h : heads) result.heads.push_back(fit_head_gradient(h, cfg, mode != ScorerMode::RawLinear));
  }
  result.scorer = poor.scorer();
  const std::size_t in = result.scorer.input_size();
  for (std::size_t i = 0; i < d; ++i) {
    std::copy(result.heads[i].weights.begin(), result.heads[i].weights.end(),
              result.scorer.weights.storage().begin() + static_cast<std::ptrdiff_t>(i * in));
    result.scorer.bias[i] = result.heads[i].bias;
  }
  result.wall_seconds = seconds_since(start);
  return result;
}

namespace {

std::vector<double> onehot(std::size_t label, std::size_t c) {
  std::vector<double> v(c, 0.0);
  v[label] = 1.0;
  return v;
}

}  // namespace

double target_objective(const TransferableModel& poor, const TransferableModel& rich, const PairedDataset& paired,
                        const Dataset& poor_data) {
  ModelProgram prog(poor.arch());
  prog.set_params(poor.params());
  double total = 0.0;
  if (!paired.empty()) {
    const auto targets = predict_proba(paired.rich, rich);
    double sum = 0.0;
    for (std::size_t t = 0; t < paired.size(); ++t) {
      prog.set_sample(paired.poor.samples[t]);
      prog.set_target(targets[t]);
      sum += prog.run(ModelOutput::SquaredGap)[0];
    }
    total += sum / static_cast<double>(paired.size());
  }
  if (!poor_data.empty()) {
    check_labels(poor_data, poor.arch().n_classes);
    double sum = 0.0;
    for (const auto& s : poor_data.samples) {
      prog.set_sample(s);
      prog.set_target(onehot(s.label, poor.arch().n_classes));
      sum += prog.run(ModelOutput::PoorFit)[0];
    }
    total += sum / static_cast<double>(poor_data.size());
  }
  return total;
}

TargetResult target_infuse(const TransferableModel& poor, const TransferableModel& rich, const PairedDataset& paired,
                           const Dataset& poor_data, const TrainConfig& cfg, double holdout_fraction) {
  if (poor_data.empty()) throw ValidationError("poor dataset is empty");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ValidationError("holdout fraction must be in [0, 1)");
  const std::size_t c = poor.arch().n_classes;
  check_labels(poor_data, c);
  if (!paired.empty()) {
    check_sample(paired.rich.samples[0], rich.arch());
    if (rich.arch().n_classes != c) throw ValidationError("rich and poor models disagree on the class count");
  }

  const auto rich_probs = paired.empty() ? std::vector<std::vector<double>>{} : predict_proba(paired.rich, rich);
  const auto [kept_o, held_o] = holdout_indices(paired.size(), holdout_fraction, mix64(cfg.seed ^ kHoldoutPairedStream));
  const auto [kept_p, held_p] = holdout_indices(poor_data.size(), holdout_fraction, mix64(cfg.seed ^ kHoldoutPoorStream));

  auto gap_term = [&](const std::vector<std::size_t>& idx) {
    return LossTerm{"squared_gap", 1.0, ModelOutput::SquaredGap, idx.size(),
                    [&paired, &rich_probs, &idx](ModelProgram& p, std::size_t i) {
                      p.set_sample(paired.poor.samples[idx[i]]);
                      p.set_target(rich_probs[idx[i]]);
                    }};
  };
  auto fit_term = [&](const std::vector<std::size_t>& idx) {
    return LossTerm{"poor_fit", 1.0, ModelOutput::PoorFit, idx.size(),
                    [&poor_data, &idx, c](ModelProgram& p, std::size_t i) {
                      const auto& s = poor_data.samples[idx[i]];
                      p.set_sample(s);
                      p.set_target(onehot(s.label, c));
                    }};
  };
  const std::vector<LossTerm> train{gap_term(kept_o), fit_term(kept_p)};
  const std::vector<LossTerm> val{gap_term(held_o), fit_term(held_p)};

  TargetResult result{poor, {}, 0.0, 0.0};
  result.initial_objective = target_objective(poor, rich, paired, poor_data);
  const auto ranges = result.model.extractor_aggregator_ranges();
  result.training = train_terms(result.model, train, val, ranges, cfg);
  result.final_objective = target_objective(result.model, rich, paired, poor_data);
  if (!(result.model.scorer() == poor.scorer())) throw Error("scorer changed during target infusion");
  return result;
}

nlohmann::json CheerResult::report() const {
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t i = 0; i < behavior.heads.size(); ++i) {
    const auto& h = behavior.heads[i];
    heads.push_back({{"head", i}, {"objective", h.objective}, {"rms_residual", h.rms_residual}, {"iterations", h.iterations}});
  }
  return {{"behavior",
           {{"heads", heads},
            {"lambda_used", behavior.lambda_used},
            {"fell_back", behavior.fell_back},
            {"message", behavior.message},
            {"wall_seconds", behavior.wall_seconds}}},
          {"target",
           {{"initial_objective", target.initial_objective},
            {"final_objective", target.final_objective},
            {"epochs", target.training.epochs_run},
            {"best_epoch", target.training.best_epoch},
            {"steps", target.training.steps},
            {"best_validation_objective", target.training.best_objective},
            {"wall_seconds", target.training.wall_seconds}}},
          {"messages", messages}};
}

CheerResult cheer(const Dataset& poor_data, const TransferableModel& rich, const PairedDataset& paired,
                  const CheerConfig& cfg) {
  cfg.train.validate();
  cfg.behavior.validate();
  if (poor_data.empty()) throw ValidationError("poor dataset is empty");
  check_sample(poor_data.samples[0], cfg.poor_arch);
  TransferableModel poor = TransferableModel::create(cfg.poor_arch, cfg.train.seed);
  CheerResult result;
  try {
    result.behavior = behavior_infuse(rich, paired, poor, cfg.behavior);
  } catch (const RankDeficientError& e) {
    if (cfg.behavior.lambda != 0.0) throw;
    BehaviorFitConfig retry = cfg.behavior;
    retry.lambda = cfg.behavior.fallback_lambda;
    result.behavior = behavior_infuse(rich, paired, poor, retry);
    result.behavior.fell_back = true;
    result.behavior.message = std::string(e.what()) + "; refit with lambda = " + std::to_string(retry.lambda);
    result.messages.push_back(result.behavior.message);
  }
  poor.set_scorer(result.behavior.scorer);
  result.target = target_infuse(poor, rich, paired, poor_data, cfg.train, cfg.holdout_fraction);
  result.model = result.target.model;
  return result;
}

std::pair<double, double> estimate_costs(const CostInputs& ci) {
  const auto v = [](std::uint64_t x) { return static_cast<double>(x); };
  for (std::uint64_t x : {ci.iters, ci.k, ci.w, ci.d, ci.n_p, ci.m, ci.p, ci.c}) {
    if (x == 0) throw ValidationError("cost inputs must be positive");
  }
  const double behavior = v(ci.iters) * v(ci.k) * v(ci.w) * v(ci.d);
  const double target = v(ci.iters) * v(ci.n_p) * (v(ci.m) * v(ci.p) * v(ci.c) + v(ci.k) * v(ci.c) * v(ci.c));
  return {behavior, target};
}

}  // namespace cheer
