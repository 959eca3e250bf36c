#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cheer/data.hpp"
#include "cheer/error.hpp"
#include "cheer/metrics.hpp"
#include "cheer/model.hpp"
#include "cheer/training.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cheer;
using cheer::testing::make_dataset;
using cheer::testing::quick_train;
using cheer::testing::small_arch;
using cheer::testing::small_spec;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cheer_test_data_" + name);
  fs::remove_all(dir);
  return dir;
}

std::set<std::uint64_t> ids(const Dataset& d) {
  std::set<std::uint64_t> out;
  for (const auto& s : d.samples) out.insert(s.id);
  return out;
}

/// Channel time-means binned with the documented 16 equal-width bins.
std::vector<std::vector<std::size_t>> oracle_bins(const Dataset& d) {
  std::vector<std::vector<std::size_t>> bins(d.n_channels);
  for (std::size_t c = 0; c < d.n_channels; ++c) {
    std::vector<double> m;
    for (const auto& s : d.samples) {
      double acc = 0;
      for (std::size_t t = 0; t < s.seq_len; ++t) acc += s.at(c, t);
      m.push_back(acc / static_cast<double>(s.seq_len));
    }
    const double lo = *std::min_element(m.begin(), m.end());
    const double hi = *std::max_element(m.begin(), m.end());
    for (double v : m) {
      std::size_t b = 0;
      if (hi > lo) b = std::min<std::size_t>(15, static_cast<std::size_t>((v - lo) / (hi - lo) * 16.0));
      bins[c].push_back(b);
    }
  }
  return bins;
}

double entropy_of(const std::map<std::size_t, double>& counts) {
  double n = 0, h = 0;
  for (const auto& [k, v] : counts) n += v;
  for (const auto& [k, v] : counts) h -= v / n * std::log2(v / n);
  return h;
}

/// I(B; Y) = H(B) + H(Y) - H(B, Y).
double oracle_mi(const std::vector<std::size_t>& bins, const Dataset& d) {
  std::map<std::size_t, double> hb, hy, hby;
  for (std::size_t i = 0; i < d.size(); ++i) {
    hb[bins[i]] += 1;
    hy[d.samples[i].label] += 1;
    hby[bins[i] * 1000 + d.samples[i].label] += 1;
  }
  return entropy_of(hb) + entropy_of(hy) - entropy_of(hby);
}

double oracle_class_entropy(const std::vector<std::size_t>& bins, const Dataset& d) {
  std::map<std::size_t, std::map<std::size_t, double>> per_class;
  for (std::size_t i = 0; i < d.size(); ++i) per_class[d.samples[i].label][bins[i]] += 1;
  double sum = 0;
  for (const auto& [y, counts] : per_class) sum += entropy_of(counts);
  return sum / static_cast<double>(per_class.size());
}

}  // namespace

TEST_CASE("synthetic generation") {
  const auto spec = small_spec(5);
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.rich == b.rich);
  CHECK(a.poor == b.poor);
  CHECK(a.paired == b.paired);
  CHECK(a.rich.size() == spec.n_rich);
  CHECK(a.poor.size() == spec.n_poor);
  CHECK(a.paired.size() == spec.n_paired);
  CHECK_NOTHROW(a.paired.validate());
  for (std::size_t i = 0; i < a.paired.size(); ++i) {
    CHECK(a.paired.rich.samples[i].label == a.paired.poor.samples[i].label);
  }
  for (std::size_t r : a.paired.rich.channel_ids) {
    CHECK(std::find(a.paired.poor.channel_ids.begin(), a.paired.poor.channel_ids.end(), r) ==
          a.paired.poor.channel_ids.end());
  }

  auto other = spec;
  other.draw = 1;
  CHECK_FALSE(generate_synthetic(other).rich == a.rich);

  SUBCASE("mirrored views are identical per id") {
    auto m = spec;
    m.mirror_views = true;
    m.poor_channels = m.rich_channels;
    const auto d = generate_synthetic(m);
    for (std::size_t i = 0; i < d.paired.size(); ++i) {
      CHECK(d.paired.rich.samples[i].values == d.paired.poor.samples[i].values);
    }
  }
  SUBCASE("spec validation") {
    auto bad = spec;
    bad.poor_channels = bad.rich_channels;
    CHECK_THROWS_AS(generate_synthetic(bad), ValidationError);
    bad = spec;
    bad.poor_noise = {1.0};
    CHECK_THROWS_AS(generate_synthetic(bad), ValidationError);
    bad = spec;
    bad.rich_noise = {0.3, -1.0, 0.3};
    CHECK_THROWS_AS(generate_synthetic(bad), ValidationError);
  }
}

TEST_CASE("well-separated synthetic classes are learnable from the rich view") {
  auto spec = small_spec(6);
  spec.n_rich = 800;
  spec.class_separation = 3.0;
  const auto d = generate_synthetic(spec);
  const auto [train, val, test] = split(d.rich, kDefaultSplit, 1);
  const auto model = train_supervised(train, val, architecture_for(small_arch(), d.rich), quick_train(0, 30));
  const auto preds = predict(test, model);
  std::vector<std::size_t> truth;
  for (const auto& s : test.samples) truth.push_back(s.label);
  const double acc = accuracy(preds, truth);
  CAPTURE(acc);
  CHECK(acc >= 0.9);
}

TEST_CASE("dataset persistence") {
  Rng rng(3);
  auto d = make_dataset(7, 3, 5, 4, rng, 1e3);
  d.name = "rt";
  d.role = DatasetRole::Poor;
  d.seed = 99;
  d.channel_ids = {4, 7, 9};
  d.samples[0].values[0] = 0.1;
  d.samples[0].values[1] = 1e-300;
  d.samples[0].values[2] = -123456789.123456789;

  SUBCASE("csv and binary round trips are exact") {
    const auto dir = scratch_dir("rt");
    save_dataset(d, dir, true);
    CHECK(load_dataset(dir, DataFormat::Csv) == d);
    CHECK(load_dataset(dir, DataFormat::Binary) == d);
    CHECK(load_dataset(dir) == d);
    const auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    CHECK(m.at("n_samples") == 7);
    CHECK(m.at("role") == "poor");
  }
  SUBCASE("manifest count off by one") {
    const auto dir = scratch_dir("count");
    save_dataset(d, dir);
    auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    m["n_samples"] = 8;
    std::ofstream(dir / "manifest.json") << m.dump();
    try {
      load_dataset(dir);
      FAIL("expected a count mismatch");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('8') != std::string::npos);
      CHECK(msg.find('7') != std::string::npos);
    }
  }
  SUBCASE("shuffled csv rows load to the same dataset") {
    const auto dir = scratch_dir("shuffle");
    save_dataset(d, dir);
    std::ifstream in(dir / "data.csv");
    std::string header, line;
    std::getline(in, header);
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    in.close();
    Rng r(1);
    r.shuffle(rows);
    std::ofstream out(dir / "data.csv");
    out << header << '\n';
    for (const auto& row : rows) out << row << '\n';
    out.close();
    CHECK(load_dataset(dir) == d);
  }
  SUBCASE("malformed files") {
    const auto dir = scratch_dir("bad");
    save_dataset(d, dir);
    std::ofstream(dir / "data.csv", std::ios::app) << "0,1,0,0,abc\n";
    CHECK_THROWS_AS(load_dataset(dir), ValidationError);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), ValidationError);
  }
  SUBCASE("paired round trip") {
    const auto p = generate_synthetic(small_spec(2)).paired;
    const auto dir = scratch_dir("paired");
    save_paired(p, dir, true);
    CHECK(load_paired(dir) == p);
    CHECK(fs::exists(dir / "pairs.json"));
  }
}

TEST_CASE("splits") {
  Rng rng(4);
  const auto d = make_dataset(10, 1, 4, 2, rng);
  const auto [tr, va, te] = split(d, kDefaultSplit, 7);
  CHECK(tr.size() == 8);
  CHECK(va.size() == 1);
  CHECK(te.size() == 1);

  const auto big = make_dataset(237, 1, 4, 3, rng);
  const auto [a, b, c] = split(big, kDefaultSplit, 3);
  std::set<std::uint64_t> all;
  std::size_t total = 0;
  for (const auto* part : {&a, &b, &c}) {
    const auto s = ids(*part);
    total += s.size();
    all.insert(s.begin(), s.end());
  }
  CHECK(total == big.size());
  CHECK(all == ids(big));
  const auto [a2, b2, c2] = split(big, kDefaultSplit, 3);
  CHECK(a2 == a);
  CHECK(c2 == c);
  CHECK_THROWS_AS(split(big, SplitFractions{0.5, 0.2, 0.2}, 1), ValidationError);

  const auto p = generate_synthetic(small_spec(3)).paired;
  const auto [pt, pv, pe] = split(p, kDefaultSplit, 5);
  for (const auto* part : {&pt, &pv, &pe}) {
    CHECK_NOTHROW(part->validate());
    CHECK(ids(part->rich) == ids(part->poor));
  }
  CHECK(pt.size() + pv.size() + pe.size() == p.size());
}

TEST_CASE("paired subsampling") {
  auto spec = small_spec(4);
  spec.n_paired = 100;
  const auto p = generate_synthetic(spec).paired;
  CHECK(subsample_pairs(p, 1.0, 3) == p);
  CHECK(subsample_pairs(p, 0.5, 3).size() == 50);
  CHECK(subsample_pairs(p, 0.333, 3).size() == 33);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto small = ids(subsample_pairs(p, 0.2, seed).rich);
    const auto large = ids(subsample_pairs(p, 0.4, seed).rich);
    CHECK(std::includes(large.begin(), large.end(), small.begin(), small.end()));
  }
  CHECK_THROWS_AS(subsample_pairs(p, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(subsample_pairs(p, 1.5, 1), ValidationError);
}

TEST_CASE("channel selection") {
  Rng rng(5);
  const auto d = make_dataset(6, 4, 3, 2, rng);
  const std::size_t all[] = {0, 1, 2, 3};
  CHECK(select_channels(d, all) == d);
  const std::size_t one[] = {2};
  const auto single = select_channels(d, one);
  CHECK(single.n_channels == 1);
  CHECK(single.channel_ids == std::vector<std::size_t>{2});
  CHECK(single.samples[3].values == std::vector<double>(d.samples[3].channel(2).begin(), d.samples[3].channel(2).end()));

  const std::size_t first[] = {3, 0, 2};
  const std::size_t second[] = {2, 0};
  const std::size_t composed[] = {2, 3};  // first[second[i]]
  CHECK(select_channels(select_channels(d, first), second) == select_channels(d, composed));

  const std::size_t out_of_range[] = {4};
  const std::size_t dup[] = {1, 1};
  CHECK_THROWS_AS(select_channels(d, out_of_range), ValidationError);
  CHECK_THROWS_AS(select_channels(d, dup), ValidationError);
}

TEST_CASE("entropy ranking") {
  Rng rng(6);
  auto d = make_dataset(400, 3, 8, 2, rng);
  for (auto& s : d.samples) {
    for (std::size_t t = 0; t < 8; ++t) {
      s.values[0 * 8 + t] = 2.5;               // constant
      s.values[2 * 8 + t] = rng.uniform(-1, 1);  // uniform noise
    }
  }
  const auto r = rank_by_entropy(d);
  CHECK(r.scores[0] == 0.0);
  CHECK(r.order.back() == 0);
  CHECK(r.scores[2] > r.scores[0]);
  const auto bins = oracle_bins(d);
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.scores[c] == doctest::Approx(oracle_class_entropy(bins[c], d)).epsilon(1e-12));
  CHECK_THROWS_AS(rank_by_entropy(d.empty_like()), ValidationError);
}

TEST_CASE("mutual information ranking") {
  Rng rng(7);
  auto d = make_dataset(2000, 3, 4, 3, rng);
  for (auto& s : d.samples) {
    for (std::size_t t = 0; t < 4; ++t) s.values[1 * 4 + t] = static_cast<double>(s.label) * 10.0;
  }
  const auto r = rank_by_mutual_info(d);
  REQUIRE(r.order.front() == 1);
  std::map<std::size_t, double> label_counts;
  for (const auto& s : d.samples) label_counts[s.label] += 1;
  CHECK(r.scores[1] == doctest::Approx(entropy_of(label_counts)).epsilon(1e-12));
  CHECK(r.scores[0] < 0.05);
  CHECK(r.scores[2] < 0.05);

  const auto bins = oracle_bins(d);
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.scores[c] == doctest::Approx(std::max(0.0, oracle_mi(bins[c], d))).epsilon(1e-9));

  SUBCASE("sample order does not matter") {
    auto shuffled = d;
    Rng s(8);
    s.shuffle(shuffled.samples);
    const auto r2 = rank_by_mutual_info(shuffled);
    CHECK(r2.order == r.order);
    for (std::size_t c = 0; c < 3; ++c) CHECK(r2.scores[c] == doctest::Approx(r.scores[c]).epsilon(1e-12));
    const auto e1 = rank_by_entropy(d), e2 = rank_by_entropy(shuffled);
    for (std::size_t c = 0; c < 3; ++c) CHECK(e2.scores[c] == doctest::Approx(e1.scores[c]).epsilon(1e-12));
  }
  SUBCASE("single class") {
    auto one = d;
    for (auto& s : one.samples) s.label = 0;
    CHECK_THROWS_AS(rank_by_mutual_info(one), ValidationError);
  }
}
