#include <cmath>
#include <numeric>

#include "cheer/error.hpp"
#include "cheer/theory.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cheer;
using cheer::testing::quick_train;
using cheer::testing::small_arch;
using cheer::testing::small_spec;

TEST_CASE("particular loss examples") {
  const double t1[] = {1.0, 0.0}, s1[] = {0.0, 1.0};
  CHECK(particular_loss(t1, s1, 1.0) == 3.0);
  const double t2[] = {0.8, 0.2}, s2[] = {0.75, 0.25};
  CHECK(particular_loss(t2, s2, 0.0) == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(particular_loss(t2, t2, 0.0) == 0.0);
  const double three[] = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(particular_loss(t2, three, 0.0), ShapeError);
}

TEST_CASE("particular loss stays in [0, c + 1]") {
  Rng rng(2);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t c = 2 + rng.below(5);
    std::vector<double> t(c), s(c);
    double zt = 0, zs = 0;
    for (std::size_t y = 0; y < c; ++y) {
      t[y] = rng.uniform();
      s[y] = rng.uniform();
      zt += t[y];
      zs += s[y];
    }
    for (auto& v : t) v /= zt;
    for (auto& v : s) v /= zs;
    const double L = particular_loss(t, s, rng.uniform());
    CHECK(L >= 0.0);
    CHECK(L <= static_cast<double>(c) + 1.0);
  }
}

TEST_CASE("model-level losses") {
  const auto data = generate_synthetic(small_spec(2));
  const auto rich = TransferableModel::create(architecture_for(small_arch(), data.rich), 1);
  const auto poor = TransferableModel::create(architecture_for(small_arch(), data.poor), 2);
  const auto& P = data.paired;

  SUBCASE("empirical loss is the mean of per-point sums") {
    const auto t = predict_proba(P.rich, rich);
    const auto s = predict_proba(P.poor, poor);
    double poor_sum = 0.0;
    for (const auto& x : data.poor.samples) {
      const double q = predict_proba(x, poor)[x.label];
      poor_sum += (1 - q) * (1 - q);
    }
    const double poor_term = poor_sum / static_cast<double>(data.poor.size());
    double total = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      for (std::size_t y = 0; y < t[i].size(); ++y) total += (t[i][y] - s[i][y]) * (t[i][y] - s[i][y]);
      total += poor_term;
    }
    CHECK(empirical_loss(poor, rich, P, data.poor) == doctest::Approx(total / static_cast<double>(P.size())).epsilon(1e-12));
  }
  SUBCASE("single point, duplicates and permutations") {
    const std::size_t first[] = {0};
    const auto one = subset(P, first);
    const auto pl = particular_loss(poor, rich, P.rich.samples[0], P.poor.samples[0], data.poor);
    CHECK(empirical_loss(poor, rich, one, data.poor) == doctest::Approx(pl.value).epsilon(1e-14));
    const std::size_t twice[] = {0, 0};
    CHECK(empirical_loss(poor, rich, subset(P, twice), data.poor) == doctest::Approx(pl.value).epsilon(1e-14));

    std::vector<std::size_t> perm(P.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3);
    rng.shuffle(perm);
    CHECK(empirical_loss(poor, rich, subset(P, perm), data.poor) ==
          doctest::Approx(empirical_loss(poor, rich, P, data.poor)).epsilon(1e-12));
  }
  SUBCASE("empty sets") {
    const auto pl = particular_loss(poor, rich, P.rich.samples[0], P.poor.samples[0], data.poor.empty_like());
    CHECK(pl.empty_poor_data);
    const auto t = predict_proba(P.rich.samples[0], rich);
    const auto s = predict_proba(P.poor.samples[0], poor);
    CHECK(pl.value == doctest::Approx(particular_loss(t, s, 0.0)));
    CHECK_THROWS_AS(empirical_loss(poor, rich, PairedDataset{}, data.poor), ValidationError);
  }
}

TEST_CASE("robustness constant") {
  CHECK(robustness_constant({{0.7, 0.2, 0.1}, {0.5, 0.4, 0.1}}) == doctest::Approx(0.05));
  CHECK(robustness_constant({{0.9, 0.1}, {0.45, 0.45, 0.1}}) == 0.0);
  CHECK(robustness_constant({{1.0, 0.0}}) == 0.5);
  CHECK_THROWS_AS(robustness_constant(std::vector<std::vector<double>>{}), ValidationError);
}

TEST_CASE("required pairs") {
  CHECK(required_pairs(8, 0.1, 0.05) == 14940);
  const auto raw = [](double c, double e, double d) { return (c + 1) * (c + 1) / (2 * e * e) * std::log(2 / d); };
  CHECK(raw(4, 0.05, 0.1) / raw(4, 0.1, 0.1) == doctest::Approx(4.0));
  CHECK(required_pairs(4, 0.05, 0.1) >= 4 * required_pairs(4, 0.1, 0.1) - 4);
  CHECK(required_pairs(2, 0.5, 0.999999) == static_cast<std::uint64_t>(std::ceil(18.0 * std::log(2.0 / 0.999999))));
  CHECK_THROWS_AS(required_pairs(1, 0.1, 0.1), ValidationError);
  CHECK_THROWS_AS(required_pairs(3, 0.0, 0.1), ValidationError);
  CHECK_THROWS_AS(required_pairs(3, 0.1, 1.0), ValidationError);

  const double eps[] = {0.05, 0.1, 0.2, 0.4, 0.8};
  const double del[] = {0.01, 0.05, 0.1, 0.3, 0.9};
  for (std::size_t c = 2; c < 7; ++c) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const auto k = required_pairs(c, eps[i], del[j]);
        CHECK(required_pairs(c + 1, eps[i], del[j]) >= k);
        if (i + 1 < 5) CHECK(required_pairs(c, eps[i + 1], del[j]) <= k);
        if (j + 1 < 5) CHECK(required_pairs(c, eps[i], del[j + 1]) <= k);
      }
    }
  }
}

TEST_CASE("check_lemma2 verdicts") {
  const double t[] = {0.6, 0.4}, s[] = {0.55, 0.45};
  const auto v = check_lemma2(t, s, 0.0, 0.1);
  CHECK(v.loss == doctest::Approx(0.005));
  CHECK(v.condition_met);
  CHECK(v.agree);
  CHECK_FALSE(v.violates());

  const double far[] = {0.1, 0.9};
  const auto w = check_lemma2(t, far, 0.0, 0.1);
  CHECK_FALSE(w.condition_met);
  CHECK_FALSE(w.agree);
  CHECK_FALSE(w.violates());

  const auto same = check_lemma2(t, t, 0.005, 0.1);
  CHECK(same.condition_met);
  CHECK(same.agree);
}

TEST_CASE("agreement bound") {
  CHECK(agreement_bound(0.0, 0.005, 0.2) == doctest::Approx(0.75));
  CHECK(agreement_bound(0.03, 0.01, 0.2) <= 0.0);
  CHECK(agreement_bound(1e-12, 1e-12, 0.3) == doctest::Approx(1.0));
  CHECK_THROWS_AS(agreement_bound(0.0, 0.01, 0.0), VacuousBoundError);
  const double grid[] = {0.01, 0.02, 0.05, 0.1, 0.2};
  for (double a : grid) {
    for (double e : grid) {
      for (double p : grid) {
        const double b = agreement_bound(a, e, p);
        CHECK(agreement_bound(a * 1.5, e, p) < b);
        CHECK(agreement_bound(a, e * 1.5, p) < b);
        CHECK(agreement_bound(a, e, p * 1.5) > b);
      }
    }
  }
}

TEST_CASE("theorem check on a small realizable setup") {
  auto cfg = realizable_theorem1_config();
  cfg.epsilon = 0.2;
  cfg.delta = 0.2;
  cfg.n_rich_train = 300;
  cfg.n_poor = 100;
  cfg.n_eval = 200;
  cfg.trials = 2;
  cfg.train = quick_train(0, 8);
  cfg.seed = 3;
  const auto a = verify_theorem1(cfg);
  REQUIRE(a.trials.size() == 2);
  for (const auto& t : a.trials) {
    CHECK(t.k_used == required_pairs(2, 0.2, 0.2));
    CHECK(t.empirical_agreement >= 0.0);
    CHECK(t.empirical_agreement <= 1.0);
    CHECK(t.bound <= 1.0);
    CHECK(t.phi >= 0.0);
    CHECK(t.n_eval == 200);
    if (!t.vacuous) CHECK(t.satisfied == (t.empirical_agreement >= t.bound));
  }
  const auto b = verify_theorem1(cfg);
  auto ja = a.to_json(), jb = b.to_json();
  ja.erase("wall_seconds");
  ja.erase("rich_train_seconds");
  jb.erase("wall_seconds");
  jb.erase("rich_train_seconds");
  CHECK(ja == jb);

  cfg.trials = 0;
  CHECK_THROWS_AS(verify_theorem1(cfg), ValidationError);
}
