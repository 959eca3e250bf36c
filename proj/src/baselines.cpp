#include "cheer/baselines.hpp"

#include <cmath>
#include <memory>

#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

namespace {

constexpr std::uint64_t kKdHoldoutStream = 0x6b64;
constexpr std::uint64_t kAtHoldoutStream = 0x6174;

std::vector<double> unit(std::span<const double> v, const std::string& what) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (!(norm > 0.0)) throw ValidationError("zero-norm attention vector for " + what);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

void check_common(const TransferableModel& rich, const PairedDataset& paired, const Dataset& poor_train,
                  const Architecture& arch) {
  if (paired.empty()) throw ValidationError("paired dataset is empty");
  if (poor_train.empty()) throw ValidationError("poor training set is empty");
  check_sample(paired.rich.samples[0], rich.arch());
  check_sample(paired.poor.samples[0], arch);
  if (rich.arch().n_classes != arch.n_classes) throw ValidationError("rich and student models disagree on classes");
}

}  // namespace

void KDConfig::validate() const {
  if (!(distill_temperature > 0.0) || !std::isfinite(distill_temperature)) {
    throw ValidationError("distill temperature must be > 0");
  }
  if (!(soft_weight >= 0.0) || !(hard_weight >= 0.0)) throw ValidationError("KD weights must be >= 0");
  if (soft_weight == 0.0 && hard_weight == 0.0) throw ValidationError("KD weights cannot both be zero");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ValidationError("holdout fraction must be in [0, 1)");
}

nlohmann::json KDConfig::to_json() const {
  return {{"distill_temperature", distill_temperature},
          {"soft_weight", soft_weight},
          {"hard_weight", hard_weight},
          {"holdout_fraction", holdout_fraction}};
}

void ATConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("AT beta must be >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ValidationError("holdout fraction must be in [0, 1)");
}

nlohmann::json ATConfig::to_json() const { return {{"beta", beta}, {"holdout_fraction", holdout_fraction}}; }

double attention_gap(std::span<const double> student, std::span<const double> teacher) {
  if (student.size() != teacher.size()) throw ShapeError("attention vectors differ in length");
  const auto a = unit(student, "student scores");
  const auto b = unit(teacher, "teacher scores");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::vector<std::vector<double>> soft_labels(const Dataset& rich_view, const TransferableModel& rich,
                                             double temperature) {
  ModelProgram prog(rich.arch());
  prog.set_params(rich.params());
  std::vector<std::vector<double>> out;
  for (const auto& s : rich_view.samples) {
    prog.set_sample(s);
    const auto g = prog.run(ModelOutput::Logits);
    double mx = g[0];
    for (double v : g) mx = std::max(mx, v);
    std::vector<double> p(g.size());
    double z = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      p[k] = std::exp((g[k] - mx) / temperature);
      z += p[k];
    }
    for (double& v : p) v /= z;
    out.push_back(std::move(p));
  }
  return out;
}

BaselineResult train_kd(const TransferableModel& rich, const PairedDataset& paired, const Dataset& poor_train,
                        const Dataset& poor_val, const Architecture& arch, const KDConfig& kd, const TrainConfig& cfg) {
  kd.validate();
  cfg.validate();
  check_common(rich, paired, poor_train, arch);
  check_labels(poor_train, arch.n_classes);
  check_labels(poor_val, arch.n_classes);

  const auto soft = soft_labels(paired.rich, rich, kd.distill_temperature);
  const auto [kept, held] = holdout_indices(paired.size(), kd.holdout_fraction, mix64(cfg.seed ^ kKdHoldoutStream));
  auto soft_term = [&](const std::vector<std::size_t>& idx) {
    return LossTerm{"distill_ce", kd.soft_weight, ModelOutput::DistillCE, idx.size(),
                    [&paired, &soft, &idx](ModelProgram& p, std::size_t i) {
                      p.set_sample(paired.poor.samples[idx[i]]);
                      p.set_target(soft[idx[i]]);
                    }};
  };

  std::vector<LossTerm> train, val;
  if (kd.hard_weight > 0.0) {
    train.push_back(cross_entropy_term(poor_train, kd.hard_weight));
    if (!poor_val.empty()) val.push_back(cross_entropy_term(poor_val, kd.hard_weight));
  }
  if (kd.soft_weight > 0.0) {
    train.push_back(soft_term(kept));
    val.push_back(soft_term(held));
  }

  BaselineResult result{TransferableModel::create(arch, cfg.seed), {}, {}};
  const ParamRange all[] = {result.model.all_range()};
  result.training = train_terms(result.model, train, val, all, cfg, ProgramOptions{kd.distill_temperature});
  result.report = {{"method", "kd"}, {"config", kd.to_json()}, {"training", result.training.to_json()}};
  return result;
}

BaselineResult train_at(const TransferableModel& rich, const PairedDataset& paired, const Dataset& poor_train,
                        const Dataset& poor_val, const Architecture& arch, const ATConfig& at, const TrainConfig& cfg) {
  at.validate();
  cfg.validate();
  check_common(rich, paired, poor_train, arch);
  if (rich.arch().extractor.rnn_hidden != arch.extractor.rnn_hidden) {
    throw ValidationError("rich and student scorers must share d");
  }
  check_labels(poor_train, arch.n_classes);
  check_labels(poor_val, arch.n_classes);

  std::vector<std::vector<double>> teacher;
  const auto rich_scores = scores(paired.rich, rich);
  for (std::size_t t = 0; t < paired.size(); ++t) {
    teacher.push_back(unit(rich_scores[t], "rich scores of sample " + std::to_string(paired.rich.samples[t].id)));
  }
  const auto [kept, held] = holdout_indices(paired.size(), at.holdout_fraction, mix64(cfg.seed ^ kAtHoldoutStream));
  auto last_id = std::make_shared<std::uint64_t>(0);
  auto att_term = [&](const std::vector<std::size_t>& idx) {
    return LossTerm{"attention_gap", at.beta, ModelOutput::AttentionGap, idx.size(),
                    [&paired, &teacher, &idx, last_id](ModelProgram& p, std::size_t i) {
                      *last_id = paired.poor.samples[idx[i]].id;
                      p.set_sample(paired.poor.samples[idx[i]]);
                      p.set_attention_target(teacher[idx[i]]);
                    }};
  };

  std::vector<LossTerm> train{cross_entropy_term(poor_train)};
  std::vector<LossTerm> val;
  if (!poor_val.empty()) val.push_back(cross_entropy_term(poor_val));
  if (at.beta > 0.0) {
    train.push_back(att_term(kept));
    val.push_back(att_term(held));
  }

  BaselineResult result{TransferableModel::create(arch, cfg.seed), {}, {}};
  const ParamRange all[] = {result.model.all_range()};
  try {
    result.training = train_terms(result.model, train, val, all, cfg);
  } catch (const NonFiniteError& e) {
    if (std::string(e.what()).find("zero-norm") == std::string::npos) throw;
    throw ValidationError("zero-norm student attention vector for sample " + std::to_string(*last_id) + " (" +
                          e.what() + ")");
  }
  result.report = {{"method", "at"}, {"config", at.to_json()}, {"training", result.training.to_json()}};
  return result;
}

}  // namespace cheer
