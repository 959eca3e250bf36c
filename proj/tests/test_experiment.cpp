#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cheer/error.hpp"
#include "cheer/experiment.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cheer;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cheer_test_experiment_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_config_json(const fs::path& out) {
  return {{"synthetic",
           {{"n_classes", 2}, {"seq_len", 16}, {"n_latent", 2}, {"rich_channels", 3}, {"poor_channels", 2},
            {"class_separation", 2.0}, {"n_rich", 200}, {"n_poor", 150}, {"n_paired", 100}, {"seed", 1}}},
          {"arch", {{"n_segments", 4}, {"conv_layers", {{3, 2, 1}}}, {"rnn_hidden", 3}}},
          {"train", {{"lr", 0.01}, {"max_epochs", 3}, {"patience", 3}, {"batch_size", 16}}},
          {"seeds", {0, 1}},
          {"methods", {"direct", "cheer"}},
          {"output_dir", out.string()}};
}

void write_seed(const fs::path& dir, std::uint64_t seed, const std::map<std::string, double>& roc) {
  json methods = json::object();
  for (const auto& [name, v] : roc) {
    methods[name] = {{"ok", true},
                     {"metrics", {{"accuracy", v}, {"macro_f1", v}, {"roc_auc", v}, {"pr_auc", v}}},
                     {"details", json::object()}};
  }
  write_json_file({{"seed", seed}, {"methods", methods}, {"failures", json::array()}},
                  dir / "seeds" / ("seed_" + std::to_string(seed) + ".json"));
}

}  // namespace

TEST_CASE("config parsing is strict") {
  const auto cfg = experiment_config_from_json(small_config_json("out"));
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(cfg.methods == std::vector<Method>{Method::Direct, Method::Cheer});
  CHECK(cfg.poor_arch.extractor.rnn_hidden == 3);
  CHECK(cfg.rich_arch.extractor.conv_layers.front() == ConvLayerSpec{3, 2, 1});
  CHECK(cfg.synthetic->n_paired == 100);
  CHECK(to_json(experiment_config_from_json(to_json(cfg))) == to_json(cfg));

  auto j = small_config_json("out");
  j["unexpected"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = small_config_json("out");
  j["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = small_config_json("out");
  j["seeds"] = "zero";
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = small_config_json("out");
  j["paired_ratio"] = 0.0;
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = small_config_json("out");
  j["methods"] = {"hda"};
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = small_config_json("out");
  j["channels"] = {{"policy", "top-mi"}, {"count", 1}};
  CHECK(experiment_config_from_json(j).channels.policy == ChannelPolicy::TopMI);
}

TEST_CASE("channel choice") {
  Rng rng(2);
  auto d = cheer::testing::make_dataset(400, 4, 4, 2, rng);
  for (auto& s : d.samples) {
    for (std::size_t t = 0; t < 4; ++t) s.values[2 * 4 + t] += 5.0 * static_cast<double>(s.label);
  }
  CHECK(choose_channels({ChannelPolicy::All, {}, 0}, d) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(choose_channels({ChannelPolicy::TopMI, {}, 1}, d) == std::vector<std::size_t>{2});
  CHECK(choose_channels({ChannelPolicy::TopMI, {}, 0}, d).size() == 2);
  CHECK(choose_channels({ChannelPolicy::BottomMI, {}, 3}, d).size() == 3);
  const auto bottom = choose_channels({ChannelPolicy::BottomMI, {}, 1}, d);
  CHECK(bottom.front() != 2);
  CHECK(choose_channels({ChannelPolicy::Explicit, {3, 1}, 0}, d) == std::vector<std::size_t>{3, 1});
  CHECK_THROWS_AS(choose_channels({ChannelPolicy::Explicit, {4}, 0}, d), ValidationError);
  CHECK_THROWS_AS(choose_channels({ChannelPolicy::TopEntropy, {}, 5}, d), ValidationError);
  CHECK(parse_channel_policy("middle-entropy") == ChannelPolicy::MiddleEntropy);
  CHECK_THROWS_AS(parse_channel_policy("best"), ValidationError);
}

TEST_CASE("splits for one seed") {
  auto cfg = experiment_config_from_json(small_config_json("out"));
  cfg.paired_ratio = 0.5;
  const auto data = experiment_data_for_seed(cfg, 0);
  const auto s = make_splits(data, cfg, 0);
  CHECK(s.rich_train.size() == 160);
  CHECK(s.poor_test.size() == 15);
  CHECK(s.paired.size() == 50);
  const auto full = make_splits(data, cfg, 0, 1.0, 1);
  CHECK(full.paired.size() == 100);
  CHECK(full.poor_channels.size() == 1);
  CHECK(full.poor_train.n_channels == 1);
  CHECK(full.paired.poor.n_channels == 1);
  CHECK(experiment_data_for_seed(cfg, 1).rich.samples != data.rich.samples);
}

TEST_CASE("one method, one seed") {
  const auto out = scratch_dir("single");
  auto j = small_config_json(out);
  j["seeds"] = {3};
  j["methods"] = {"direct"};
  const auto r = run_experiment(experiment_config_from_json(j));
  REQUIRE(r.cells.size() == 1);
  CHECK(r.cells[0].ok);
  CHECK(r.failures.empty());
  CHECK(fs::exists(out / "seeds" / "seed_3.json"));
  CHECK(r.report.at("p_values").empty());
  CHECK(r.report.at("aggregate").at("direct").at("roc_auc").at("n") == 1);
  CHECK(fs::exists(out / "report.txt"));
}

TEST_CASE("runs are deterministic across worker counts, with sweeps") {
  const auto da = scratch_dir("det_a"), db = scratch_dir("det_b");
  auto j = small_config_json(da);
  j["methods"] = {"direct", "kd", "cheer"};
  j["sweep_paired_ratios"] = {0.5, 1.0};
  j["sweep_channel_counts"] = {1, 2};
  const auto a = run_experiment(experiment_config_from_json(j));
  j["output_dir"] = db.string();
  j["workers"] = 3;
  const auto b = run_experiment(experiment_config_from_json(j));
  REQUIRE(a.seed_files.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(slurp(a.seed_files[i]) == slurp(b.seed_files[i]));
  for (const char* f : {"sweep_paired_ratio.csv", "sweep_channel_count.csv", "report.json"}) {
    CHECK(slurp(da / f) == slurp(db / f));
  }
  std::istringstream csv(slurp(da / "sweep_paired_ratio.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  CHECK(line.rfind("paired_ratio,method,n_seeds", 0) == 0);
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2 * 3);
}

TEST_CASE("report aggregates the per-seed files") {
  const auto dir = scratch_dir("report");
  const double cheer_v[] = {0.81, 0.85, 0.79, 0.90};
  const double direct_v[] = {0.80, 0.82, 0.78, 0.84};
  for (std::uint64_t s = 0; s < 4; ++s) write_seed(dir, s, {{"cheer", cheer_v[s]}, {"direct", direct_v[s]}});
  const auto r = report(dir);
  const auto& agg = r.at("aggregate").at("cheer").at("roc_auc");
  double m = 0;
  for (double v : cheer_v) m += v;
  m /= 4;
  double ss = 0;
  for (double v : cheer_v) ss += (v - m) * (v - m);
  CHECK(agg.at("mean").get<double>() == doctest::Approx(m).epsilon(1e-14));
  CHECK(agg.at("std").get<double>() == doctest::Approx(std::sqrt(ss / 3)).epsilon(1e-14));
  CHECK(agg.at("sources").size() == 4);
  const auto o = cheer::testing::welch_oracle(cheer_v, direct_v);
  CHECK(std::abs(r.at("p_values").at("cheer_vs_direct").at("p").get<double>() - o.p) < 1e-6);

  const std::string first = slurp(dir / "report.json");
  report(dir);
  CHECK(slurp(dir / "report.json") == first);

  SUBCASE("equal per-seed values give p = 0.5") {
    const auto eq = scratch_dir("report_eq");
    for (std::uint64_t s = 0; s < 4; ++s) write_seed(eq, s, {{"cheer", direct_v[s]}, {"direct", direct_v[s]}});
    CHECK(report(eq).at("p_values").at("cheer_vs_direct").at("p").get<double>() == doctest::Approx(0.5));
  }
  SUBCASE("zero variance omits the p-value with a warning") {
    const auto flat = scratch_dir("report_flat");
    for (std::uint64_t s = 0; s < 3; ++s) write_seed(flat, s, {{"cheer", 0.7}, {"direct", 0.7}});
    const auto fr = report(flat);
    CHECK(fr.at("p_values").empty());
    CHECK(fr.at("warnings").size() == 1);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(report(dir / "nowhere"), ValidationError); }
}

TEST_CASE("a failing method is named and the rest complete") {
  const auto out = scratch_dir("partial");
  auto j = small_config_json(out);
  j.erase("arch");
  j["rich_arch"] = {{"n_segments", 4}, {"conv_layers", {{3, 2, 1}}}, {"rnn_hidden", 4}};
  j["poor_arch"] = {{"n_segments", 4}, {"conv_layers", {{3, 2, 1}}}, {"rnn_hidden", 3}};
  j["seeds"] = {0};
  j["methods"] = {"direct", "at"};
  const auto r = run_experiment(experiment_config_from_json(j));
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].find("seed 0 method at") != std::string::npos);
  CHECK(r.cells[0].ok);
  CHECK(r.report.at("failures").size() == 1);
  CHECK(r.report.at("aggregate").contains("direct"));
  const auto seed = read_json_file(out / "seeds" / "seed_0.json");
  CHECK_FALSE(seed.at("methods").at("at").at("ok").get<bool>());
}
