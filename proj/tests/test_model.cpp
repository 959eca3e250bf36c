#include <cmath>
#include <filesystem>
#include <numeric>

#include "cheer/autodiff.hpp"
#include "cheer/error.hpp"
#include "cheer/model.hpp"
#include "cheer/random.hpp"
#include "cheer/training.hpp"
#include "doctest.h"

using namespace cheer;

namespace {

Architecture tiny_arch(std::size_t channels = 2, std::size_t T = 16, std::size_t l = 4, std::size_t c = 2) {
  Architecture a;
  a.n_channels = channels;
  a.seq_len = T;
  a.n_classes = c;
  a.extractor.n_segments = l;
  a.extractor.conv_layers = {{3, 2, 1}};
  a.extractor.rnn_hidden = 3;
  return a;
}

TimeSeriesSample random_sample(const Architecture& a, Rng& rng, std::size_t label = 0) {
  TimeSeriesSample s;
  s.n_channels = a.n_channels;
  s.seq_len = a.seq_len;
  s.label = label;
  s.values.resize(a.n_channels * a.seq_len);
  for (double& v : s.values) v = rng.normal();
  return s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Two well-separated classes: channel means of +1 / -1.
Dataset separable(std::size_t n, std::uint64_t seed, const Architecture& a) {
  Dataset d;
  d.n_channels = a.n_channels;
  d.seq_len = a.seq_len;
  d.n_classes = 2;
  d.channel_ids.resize(a.n_channels);
  std::iota(d.channel_ids.begin(), d.channel_ids.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = random_sample(a, rng, i % 2);
    for (double& v : s.values) v = 0.3 * v + (s.label ? 1.0 : -1.0);
    s.id = i;
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("all-zero sample and weights give all-zero features") {
  const auto a = tiny_arch();
  TransferableModel m(a, std::vector<double>(ParameterLayout::for_architecture(a).total, 0.0));
  TimeSeriesSample s{0, 0, a.n_channels, a.seq_len, std::vector<double>(a.n_channels * a.seq_len, 0.0)};
  const auto q = extract_features(s, m);
  for (double v : q.q.values()) CHECK(v == 0.0);
}

TEST_CASE("features are deterministic and shaped [d, l]") {
  auto a = tiny_arch(1, 48, 6);
  a.extractor.conv_layers = {{4, 3, 1}, {4, 3, 1}};
  CHECK(a.segment_length() == 8);
  const auto m = TransferableModel::create(a, 7);
  Rng rng(1);
  const auto s = random_sample(a, rng);
  const auto q1 = extract_features(s, m);
  const auto q2 = extract_features(s, m);
  CHECK(q1.q == q2.q);
  CHECK(q1.segments() == 6);
  CHECK(q1.dim() == 3);
}

TEST_CASE("segments too short for the conv stack are rejected") {
  auto a = tiny_arch(1, 8, 4);
  a.extractor.conv_layers = {{2, 3, 1}};
  CHECK_THROWS_AS(a.validate(), ValidationError);
  auto ok = tiny_arch(1, 9, 3);
  ok.extractor.conv_layers = {{2, 3, 1}};
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("trailing steps are dropped and earlier columns are causal") {
  const auto a = tiny_arch(1, 18, 4);  // D = 4, last two steps unused
  const auto m = TransferableModel::create(a, 3);
  Rng rng(2);
  auto s = random_sample(a, rng);
  const auto base = extract_features(s, m);
  auto tail = s;
  tail.values[16] += 5.0;
  tail.values[17] -= 5.0;
  CHECK(extract_features(tail, m).q == base.q);

  auto late = s;
  for (std::size_t t = 8; t < 12; ++t) late.values[t] += 1.0;  // segment 2
  const auto changed = extract_features(late, m);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t col = 0; col < 2; ++col) CHECK(changed.q.at(r, col) == base.q.at(r, col));
  }
  bool differs = false;
  for (std::size_t r = 0; r < 3; ++r) differs |= changed.q.at(r, 2) != base.q.at(r, 2);
  CHECK(differs);
}

TEST_CASE("raw scorers") {
  auto a = tiny_arch();
  auto m = TransferableModel::create(a, 5);
  Rng rng(4);
  auto s = random_sample(a, rng);
  const auto q = extract_features(s, m);

  SUBCASE("zero weights give the bias") {
    auto sc = m.scorer();
    for (double& v : sc.weights.values()) v = 0.0;
    sc.bias = {0.5, -1.0, 2.0};
    m.set_scorer(sc);
    const auto scores = score_features(s, q, m);
    CHECK(scores == std::vector<double>{0.5, -1.0, 2.0});
  }
  SUBCASE("coordinate projection") {
    auto sc = m.scorer();
    for (double& v : sc.weights.values()) v = 0.0;
    sc.weights.at(0, 0) = 1.0;
    sc.bias = {0.0, 0.0, 0.0};
    m.set_scorer(sc);
    s.values[0] = 2.5;
    CHECK(score_features(s, q, m)[0] == 2.5);
  }
  SUBCASE("raw-linear matches the explicit dot product") {
    const auto sc = m.scorer();
    const auto scores = score_features(s, q, m);
    for (std::size_t i = 0; i < sc.heads(); ++i) {
      double acc = sc.bias[i];
      for (std::size_t j = 0; j < s.values.size(); ++j) acc += sc.weights.at(i, j) * s.values[j];
      CHECK(scores[i] == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  SUBCASE("raw-tanh stays in (-1, 1)") {
    a.scorer_mode = ScorerMode::RawTanh;
    auto mt = TransferableModel::create(a, 5);
    auto sc = mt.scorer();
    for (double& v : sc.weights.values()) v *= 3.0;
    mt.set_scorer(sc);
    for (double v : score_features(s, extract_features(s, mt), mt)) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("predict_proba limits") {
  auto a = tiny_arch(2, 16, 4, 3);
  auto m = TransferableModel::create(a, 8);
  Rng rng(6);
  const auto s = random_sample(a, rng);
  SUBCASE("zero dense layer gives the uniform distribution") {
    for (double& v : m.block("dense.w")) v = 0.0;
    for (double& v : m.block("dense.b")) v = 0.0;
    for (double p : predict_proba(s, m)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("huge temperature approaches uniform") {
    m.set_temperature(1e6);
    const auto p = predict_proba(s, m);
    CHECK(*std::max_element(p.begin(), p.end()) - *std::min_element(p.begin(), p.end()) < 1e-6);
  }
  SUBCASE("valid distribution for random models and inputs") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto mm = TransferableModel::create(a, seed);
      const auto p = predict_proba(random_sample(a, rng), mm);
      double sum = 0;
      for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("hand-built two-segment model") {
  // One channel, T = 4, l = 2, one conv filter (kernel 1) with zero weight and
  // bias 0.4, d = 1, all LSTM weights zero and every gate bias beta.
  Architecture a;
  a.n_channels = 1;
  a.seq_len = 4;
  a.n_classes = 2;
  a.extractor.n_segments = 2;
  a.extractor.conv_layers = {{1, 1, 1}};
  a.extractor.rnn_hidden = 1;
  a.temperature = 0.5;
  TransferableModel m(a, std::vector<double>(ParameterLayout::for_architecture(a).total, 0.0));
  m.block("conv0.b")[0] = 0.4;
  const double beta = 0.3;
  for (double& v : m.block("lstm.b")) v = beta;
  m.block("scorer.b")[0] = 1.5;
  auto w = m.block("dense.w");  // [2, 2]
  w[0] = 1.0;
  w[1] = -2.0;
  w[2] = 0.5;
  w[3] = 3.0;
  m.block("dense.b")[0] = 0.1;
  m.block("dense.b")[1] = -0.2;

  const double gate = sigmoid(beta), cand = std::tanh(beta);
  const double c1 = gate * cand, h1 = gate * std::tanh(c1);
  const double c2 = gate * c1 + gate * cand, h2 = gate * std::tanh(c2);
  const double z0 = 1.5 * h1, z1 = 1.5 * h2;
  const double g0 = 1.0 * z0 - 2.0 * z1 + 0.1, g1 = 0.5 * z0 + 3.0 * z1 - 0.2;
  const double e0 = std::exp(g0 / 0.5), e1 = std::exp(g1 / 0.5);

  TimeSeriesSample s{0, 0, 1, 4, {0.7, -0.2, 1.1, 3.0}};
  const auto q = extract_features(s, m);
  CHECK(q.q.at(0, 0) == doctest::Approx(h1).epsilon(1e-14));
  CHECK(q.q.at(0, 1) == doctest::Approx(h2).epsilon(1e-14));
  const auto p = predict_proba(s, m);
  CHECK(p[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-13));
  CHECK(p[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-13));
}

TEST_CASE("argmax and predict") {
  const double a[] = {0.1, 0.7, 0.2};
  CHECK(argmax(a) == 1);
  const double tie[] = {0.5, 0.5};
  CHECK(argmax(tie) == 0);

  auto arch = tiny_arch(2, 16, 4, 3);
  auto m = TransferableModel::create(arch, 2);
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = random_sample(arch, rng);
    const std::size_t ref = predict(s, m);
    for (double tau : {0.01, 0.3, 4.0, 100.0}) {
      auto mt = m;
      mt.set_temperature(tau);
      CHECK(predict(s, mt) == ref);
    }
  }
}

TEST_CASE("sample shape checks") {
  const auto a = tiny_arch();
  const auto m = TransferableModel::create(a, 1);
  TimeSeriesSample s{0, 0, 3, 16, std::vector<double>(48, 0.0)};
  CHECK_THROWS_AS(predict_proba(s, m), ShapeError);
}

TEST_CASE("end-to-end cross-entropy gradient passes grad_check") {
  for (auto mode : {ScorerMode::RawLinear, ScorerMode::RawTanh, ScorerMode::FeatureAttention}) {
    auto a = tiny_arch(2, 16, 4, 2);
    a.scorer_mode = mode;
    a.temperature = 0.8;
    const auto m = TransferableModel::create(a, 12);
    Rng rng(13);
    const auto s = random_sample(a, rng, 1);
    ModelProgram prog(a);
    prog.set_sample(s);
    DifferentiableFunction f{[&](std::span<const double> p) {
                               prog.set_params(p);
                               return prog.run(ModelOutput::CrossEntropy)[0];
                             },
                             [&](std::span<const double> p) {
                               prog.set_params(p);
                               std::vector<double> g(p.size(), 0.0);
                               prog.accumulate(ModelOutput::CrossEntropy, g, 1.0);
                               return g;
                             }};
    CAPTURE(to_string(mode));
    CHECK(grad_check(f, m.params(), 1e-5) < 1e-4);
  }
}

TEST_CASE("train_supervised") {
  auto a = tiny_arch(2, 16, 4, 2);
  const auto train = separable(200, 1, a);
  const auto val = separable(40, 2, a);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.max_epochs = 40;
  cfg.patience = 5;
  cfg.seed = 4;

  SUBCASE("fits separable data") {
    TrainingReport rep;
    const auto m = train_supervised(train, val, a, cfg, &rep);
    const auto preds = predict(train, m);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == train.samples[i].label;
    CHECK(static_cast<double>(ok) / preds.size() >= 0.95);
    CHECK(rep.best_objective <= rep.initial_objective);
  }
  SUBCASE("fixed seed gives identical parameters") {
    cfg.max_epochs = 3;
    const auto m1 = train_supervised(train, val, a, cfg);
    const auto m2 = train_supervised(train, val, a, cfg);
    CHECK(m1 == m2);
  }
  SUBCASE("single-class data converges to a constant predictor") {
    Dataset one = train.empty_like();
    for (const auto& s : train.samples) {
      if (s.label == 1) one.samples.push_back(s);
    }
    cfg.max_epochs = 60;
    cfg.patience = 60;
    TrainingReport rep;
    const auto m = train_supervised(one, Dataset{}, a, cfg, &rep);
    CHECK(rep.best_objective < 0.05);
    for (auto p : predict(one, m)) CHECK(p == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(train_supervised(train.empty_like(), val, a, cfg), ValidationError);
    auto bad = train;
    bad.samples[0].label = 5;
    CHECK_THROWS_AS(train_supervised(bad, val, a, cfg), ValidationError);
  }
}

TEST_CASE("checkpoint round trip") {
  auto a = tiny_arch(2, 16, 4, 3);
  a.scorer_mode = ScorerMode::FeatureAttention;
  a.temperature = 0.37;
  const auto m = TransferableModel::create(a, 99);
  const auto dir = std::filesystem::temp_directory_path() / "cheer_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(m, dir);
  const auto back = load_checkpoint(dir);
  CHECK(back == m);
  CHECK(back.arch().temperature == 0.37);
  CHECK(back.seed() == 99);
  std::filesystem::resize_file(dir / "params.bin", 8);
  CHECK_THROWS_AS(load_checkpoint(dir), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("parameter layout order") {
  const auto a = tiny_arch();
  const auto layout = ParameterLayout::for_architecture(a);
  std::vector<std::string> names;
  for (const auto& b : layout.blocks) names.push_back(b.name);
  CHECK(names == std::vector<std::string>{"conv0.w", "conv0.b", "lstm.W", "lstm.U", "lstm.b", "scorer.w", "scorer.b",
                                          "dense.w", "dense.b"});
  CHECK(layout.block("scorer.w").shape == Shape{3, 32});
  CHECK(layout.block("dense.w").shape == Shape{2, 4});
}
