#include <algorithm>
#include <cmath>

#include "cheer/baselines.hpp"
#include "cheer/error.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cheer;
using cheer::testing::quick_train;
using cheer::testing::small_arch;
using cheer::testing::small_spec;

namespace {

struct Setup {
  SyntheticData data;
  Dataset poor_train, poor_val;
  Architecture poor_arch;
  TransferableModel rich;
};

Setup make_setup(std::uint64_t seed) {
  Setup s{generate_synthetic(small_spec(seed)), {}, {}, {}, {}};
  auto [tr, va, te] = split(s.data.poor, kDefaultSplit, seed);
  s.poor_train = std::move(tr);
  s.poor_val = std::move(va);
  s.poor_arch = architecture_for(small_arch(), s.data.poor);
  s.rich = TransferableModel::create(architecture_for(small_arch(), s.data.rich), seed + 100);
  return s;
}

}  // namespace

TEST_CASE("attention gap") {
  const std::vector<double> a{0.3, -1.2, 2.0};
  std::vector<double> scaled(a);
  for (double& v : scaled) v *= 3.5;
  CHECK(attention_gap(scaled, a) == doctest::Approx(0.0).epsilon(1e-15));

  Rng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> s(4), t(4);
    for (double& v : s) v = rng.normal();
    for (double& v : t) v = rng.normal();
    const double gap = attention_gap(s, t);
    CHECK(gap >= 0.0);
    CHECK(gap <= 4.0 + 1e-12);
    std::vector<double> s2(s);
    for (double& v : s2) v *= 2.0;
    CHECK(attention_gap(s2, t) == doctest::Approx(gap).epsilon(1e-12));
  }
  const std::vector<double> b{-0.3, 1.2, -2.0};
  CHECK(attention_gap(a, b) == doctest::Approx(4.0));
  const std::vector<double> zero{0.0, 0.0, 0.0};
  try {
    attention_gap(zero, a);
    FAIL("expected a zero-norm error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("zero-norm") != std::string::npos);
  }
}

TEST_CASE("soft labels flatten with temperature") {
  const auto s = make_setup(1);
  for (const auto& p : soft_labels(s.data.paired.rich, s.rich, 1e6)) {
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    CHECK(*hi - *lo < 1e-6);
  }
  for (const auto& p : soft_labels(s.data.paired.rich, s.rich, 1.0)) {
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("distillation cross-entropy of a distribution with itself is its entropy") {
  const auto s = make_setup(2);
  const double T = 5.0;
  const auto soft = soft_labels(s.data.paired.rich, s.rich, T);
  ModelProgram prog(s.rich.arch(), ProgramOptions{T});
  prog.set_params(s.rich.params());
  for (std::size_t t = 0; t < 20; ++t) {
    const auto& p = soft[t];
    double h = 0.0;
    for (double v : p) h -= v * std::log(v);
    prog.set_sample(s.data.paired.rich.samples[t]);
    prog.set_target(p);
    CHECK(prog.run(ModelOutput::DistillCE)[0] == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("degenerate weights reduce KD and AT to direct training") {
  const auto s = make_setup(3);
  const auto cfg = quick_train(7, 3);
  const auto direct = train_supervised(s.poor_train, s.poor_val, s.poor_arch, cfg);

  KDConfig kd;
  kd.distill_temperature = 1.0;
  kd.soft_weight = 0.0;
  const auto k = train_kd(s.rich, s.data.paired, s.poor_train, s.poor_val, s.poor_arch, kd, cfg);
  CHECK(k.model == direct);

  ATConfig at;
  at.beta = 0.0;
  const auto a = train_at(s.rich, s.data.paired, s.poor_train, s.poor_val, s.poor_arch, at, cfg);
  CHECK(a.model == direct);
}

TEST_CASE("KD and AT train and report") {
  const auto s = make_setup(4);
  const auto cfg = quick_train(1, 3);
  const auto k = train_kd(s.rich, s.data.paired, s.poor_train, s.poor_val, s.poor_arch, KDConfig{}, cfg);
  CHECK(k.report.at("method") == "kd");
  CHECK(k.report.at("config").at("distill_temperature") == 5.0);
  CHECK(k.training.steps > 0);
  const auto a = train_at(s.rich, s.data.paired, s.poor_train, s.poor_val, s.poor_arch, ATConfig{}, cfg);
  CHECK(a.report.at("method") == "at");
  CHECK(a.training.best_objective <= a.training.initial_objective);

  const auto again = train_kd(s.rich, s.data.paired, s.poor_train, s.poor_val, s.poor_arch, KDConfig{}, cfg);
  CHECK(again.model == k.model);
}

TEST_CASE("baseline errors") {
  const auto s = make_setup(5);
  const auto cfg = quick_train(0, 1);
  const PairedDataset none{s.data.paired.rich.empty_like(), s.data.paired.poor.empty_like()};
  CHECK_THROWS_AS(train_kd(s.rich, none, s.poor_train, s.poor_val, s.poor_arch, KDConfig{}, cfg), ValidationError);
  CHECK_THROWS_AS(train_at(s.rich, none, s.poor_train, s.poor_val, s.poor_arch, ATConfig{}, cfg), ValidationError);

  KDConfig bad;
  bad.distill_temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = KDConfig{};
  bad.soft_weight = bad.hard_weight = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  ATConfig neg;
  neg.beta = -1.0;
  CHECK_THROWS_AS(neg.validate(), ValidationError);

  auto wide = s.poor_arch;
  wide.extractor.rnn_hidden = 5;
  CHECK_THROWS_AS(train_at(s.rich, s.data.paired, s.poor_train, s.poor_val, wide, ATConfig{}, cfg), ValidationError);

  auto zero_rich = s.rich;
  auto sc = zero_rich.scorer();
  for (double& v : sc.weights.values()) v = 0.0;
  for (double& v : sc.bias) v = 0.0;
  zero_rich.set_scorer(sc);
  try {
    train_at(zero_rich, s.data.paired, s.poor_train, s.poor_val, s.poor_arch, ATConfig{}, cfg);
    FAIL("expected a zero-norm error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("sample") != std::string::npos);
  }
}
