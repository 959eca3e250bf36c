#include "cheer/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

namespace {

constexpr std::uint64_t kRichDataStream = 0x7401;
constexpr std::uint64_t kTrialDataStream = 0x7402;
constexpr std::uint64_t kTrialTrainStream = 0x7403;

}  // namespace

double poor_data_term(const TransferableModel& poor, const Dataset& poor_data) {
  if (poor_data.empty()) return 0.0;
  const auto probs = predict_proba(poor_data, poor);
  double sum = 0.0;
  for (std::size_t t = 0; t < poor_data.size(); ++t) {
    const std::size_t y = poor_data.samples[t].label;
    if (y >= probs[t].size()) throw ValidationError("poor label out of range");
    sum += (1.0 - probs[t][y]) * (1.0 - probs[t][y]);
  }
  return sum / static_cast<double>(poor_data.size());
}

double particular_loss(std::span<const double> rich_probs, std::span<const double> poor_probs, double poor_term) {
  if (rich_probs.size() != poor_probs.size()) throw ShapeError("rich and poor distributions differ in length");
  double s = 0.0;
  for (std::size_t y = 0; y < rich_probs.size(); ++y) s += (rich_probs[y] - poor_probs[y]) * (rich_probs[y] - poor_probs[y]);
  return s + poor_term;
}

ParticularLoss particular_loss(const TransferableModel& poor, const TransferableModel& rich,
                               const TimeSeriesSample& rich_x, const TimeSeriesSample& poor_x,
                               const Dataset& poor_data) {
  ParticularLoss out;
  out.empty_poor_data = poor_data.empty();
  out.value = particular_loss(predict_proba(rich_x, rich), predict_proba(poor_x, poor), poor_data_term(poor, poor_data));
  return out;
}

double empirical_loss(const TransferableModel& poor, const TransferableModel& rich, const PairedDataset& paired,
                      const Dataset& poor_data) {
  if (paired.empty()) throw ValidationError("empirical loss needs a nonempty paired set");
  const auto t = predict_proba(paired.rich, rich);
  const auto s = predict_proba(paired.poor, poor);
  const double poor_term = poor_data_term(poor, poor_data);
  double sum = 0.0;
  for (std::size_t i = 0; i < paired.size(); ++i) sum += particular_loss(t[i], s[i], poor_term);
  return sum / static_cast<double>(paired.size());
}

double robustness_constant(const std::vector<std::vector<double>>& probs) {
  if (probs.empty()) throw ValidationError("robustness constant needs a nonempty set");
  double min_margin = 1.0;
  for (const auto& p : probs) {
    if (p.size() < 2) throw ValidationError("robustness constant needs at least 2 classes");
    double top = -1.0, second = -1.0;
    for (double v : p) {
      if (v > top) {
        second = top;
        top = v;
      } else if (v > second) {
        second = v;
      }
    }
    min_margin = std::min(min_margin, top - second);
  }
  return 0.5 * min_margin;
}

double robustness_constant(const TransferableModel& rich, const Dataset& eval_rich_view) {
  if (eval_rich_view.empty()) throw ValidationError("robustness constant needs a nonempty set");
  return robustness_constant(predict_proba(eval_rich_view, rich));
}

std::uint64_t required_pairs(std::size_t c, double epsilon, double delta) {
  if (c < 2) throw ValidationError("required_pairs needs c >= 2");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ValidationError("epsilon must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("delta must lie in (0, 1)");
  const double cp1 = static_cast<double>(c + 1);
  return static_cast<std::uint64_t>(std::ceil(cp1 * cp1 / (2.0 * epsilon * epsilon) * std::log(2.0 / delta)));
}

Lemma2Verdict check_lemma2(std::span<const double> rich_probs, std::span<const double> poor_probs, double poor_term,
                           double phi) {
  Lemma2Verdict v;
  v.loss = particular_loss(rich_probs, poor_probs, poor_term);
  v.condition_met = v.loss <= phi * phi;
  v.agree = argmax(rich_probs) == argmax(poor_probs);
  return v;
}

Lemma2Verdict check_lemma2(const TransferableModel& poor, const TransferableModel& rich,
                           const TimeSeriesSample& rich_x, const TimeSeriesSample& poor_x, const Dataset& poor_data,
                           double phi) {
  return check_lemma2(predict_proba(rich_x, rich), predict_proba(poor_x, poor), poor_data_term(poor, poor_data), phi);
}

double agreement_bound(double alpha, double epsilon, double phi) {
  if (!(phi > 0.0)) throw VacuousBoundError("agreement bound is undefined for phi = 0");
  return 1.0 - (alpha + 2.0 * epsilon) / (phi * phi);
}

nlohmann::json TheoryReport::to_json() const {
  return {{"phi", phi},
          {"alpha_hat", alpha_hat},
          {"alpha_is_estimate", true},
          {"epsilon", epsilon},
          {"delta", delta},
          {"k_required", k_required},
          {"k_used", k_used},
          {"bound", bound},
          {"vacuous", vacuous},
          {"empirical_agreement", empirical_agreement},
          {"n_eval", n_eval},
          {"phi_set", phi_set},
          {"satisfied", satisfied}};
}

nlohmann::json Theorem1Result::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& r : trials) t.push_back(r.to_json());
  return {{"trials", t},
          {"n_trials", trials.size()},
          {"satisfied_non_vacuous", satisfied_non_vacuous},
          {"vacuous", vacuous},
          {"rich_train_seconds", rich_train_seconds},
          {"wall_seconds", wall_seconds}};
}

void Theorem1Config::validate() const {
  generator.validate();
  if (trials == 0) throw ValidationError("verify_theorem1 needs at least one trial");
  if (n_eval == 0) throw ValidationError("verify_theorem1 needs a nonempty evaluation set");
  if (n_rich_train < 10) throw ValidationError("verify_theorem1 needs at least 10 rich training samples");
  if (!(rich_temperature > 0.0)) throw ValidationError("rich temperature must be > 0");
  required_pairs(generator.n_classes, epsilon, delta);
}

Theorem1Config realizable_theorem1_config() {
  Theorem1Config cfg;
  cfg.generator.n_classes = 2;
  cfg.generator.seq_len = 16;
  cfg.generator.n_latent = 2;
  cfg.generator.rich_channels = 2;
  cfg.generator.poor_channels = 2;
  cfg.generator.mirror_views = true;
  cfg.generator.class_separation = 3.0;
  cfg.arch.extractor.n_segments = 4;
  cfg.arch.extractor.conv_layers = {{4, 3, 1}};
  cfg.arch.extractor.rnn_hidden = 4;
  cfg.rich_temperature = 0.25;
  return cfg;
}

namespace {

/// Paired draw of `n` subjects from the generator's distribution.
PairedDataset draw_pairs(SyntheticSpec spec, std::size_t n, std::uint64_t seed) {
  spec.n_rich = 0;
  spec.n_poor = 0;
  spec.n_paired = n;
  spec.draw = seed;
  return generate_synthetic(spec).paired;
}

Dataset draw_poor(SyntheticSpec spec, std::size_t n, std::uint64_t seed) {
  spec.n_rich = 0;
  spec.n_poor = n;
  spec.n_paired = 0;
  spec.draw = seed;
  return generate_synthetic(spec).poor;
}

}  // namespace

Theorem1Result verify_theorem1(const Theorem1Config& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Theorem1Result result;

  SyntheticSpec rich_spec = cfg.generator;
  rich_spec.n_rich = cfg.n_rich_train;
  rich_spec.n_poor = 0;
  rich_spec.n_paired = 0;
  rich_spec.draw = mix64(cfg.seed ^ kRichDataStream);
  const Dataset rich_all = generate_synthetic(rich_spec).rich;
  const auto [rich_train, rich_val, rich_test] = split(rich_all, {0.9, 0.1, 0.0}, cfg.seed);
  Architecture rich_arch = architecture_for(cfg.arch, rich_train);
  rich_arch.temperature = cfg.rich_temperature;
  const TransferableModel rich = train_supervised(rich_train, rich_val, rich_arch, cfg.train);
  result.rich_train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const std::uint64_t k = required_pairs(cfg.generator.n_classes, cfg.epsilon, cfg.delta);
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t trial_seed = mix64(cfg.seed ^ mix64(kTrialDataStream + trial));
    const PairedDataset paired = draw_pairs(cfg.generator, k, mix64(trial_seed ^ 1));
    const Dataset poor_data = draw_poor(cfg.generator, cfg.n_poor, mix64(trial_seed ^ 2));
    const PairedDataset eval = draw_pairs(cfg.generator, cfg.n_eval, mix64(trial_seed ^ 3));

    CheerConfig cc;
    cc.poor_arch = architecture_for(cfg.arch, poor_data);
    cc.poor_arch.temperature = cfg.rich_temperature;
    cc.behavior = cfg.behavior;
    cc.train = cfg.train;
    cc.train.seed = mix64(cfg.seed ^ mix64(kTrialTrainStream + trial));
    const CheerResult fit = cheer(poor_data, rich, paired, cc);

    TheoryReport r;
    r.epsilon = cfg.epsilon;
    r.delta = cfg.delta;
    r.k_required = k;
    r.k_used = paired.size();
    r.n_eval = eval.size();
    r.phi_set = "fresh evaluation draw of " + std::to_string(eval.size()) + " paired subjects (trial " +
                std::to_string(trial) + ")";
    const auto rich_probs = predict_proba(eval.rich, rich);
    const auto poor_pred = predict(eval.poor, fit.model);
    r.phi = robustness_constant(rich_probs);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) agree += argmax(rich_probs[i]) == poor_pred[i];
    r.empirical_agreement = static_cast<double>(agree) / static_cast<double>(eval.size());
    r.alpha_hat = empirical_loss(fit.model, rich, paired, poor_data);
    if (r.phi > 0.0) {
      r.bound = agreement_bound(r.alpha_hat, cfg.epsilon, r.phi);
      r.vacuous = r.bound <= 0.0;
    } else {
      r.bound = -std::numeric_limits<double>::infinity();
      r.vacuous = true;
    }
    r.satisfied = r.empirical_agreement >= r.bound;
    if (r.vacuous) {
      ++result.vacuous;
    } else if (r.satisfied) {
      ++result.satisfied_non_vacuous;
    }
    result.trials.push_back(r);
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace cheer
