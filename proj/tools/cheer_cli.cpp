// Command-line front end: data generation, rich training, infusion,
// baselines, evaluation, theory checks, experiment runs and reports.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cheer/error.hpp"
#include "cheer/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cheer;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> paired_ratio;
  std::string channels;
  std::vector<std::string> methods;
  std::string data;
  std::string rich;
};

/// "0,2,3" selects explicit channels; "top-mi" or "top-mi:2" a ranked policy.
ChannelSelection parse_channels(const std::string& text) {
  ChannelSelection sel;
  if (!text.empty() && std::isdigit(static_cast<unsigned char>(text[0]))) {
    sel.policy = ChannelPolicy::Explicit;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        sel.channels.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw ValidationError("bad channel index '" + item + "'");
      }
    }
    return sel;
  }
  const auto colon = text.find(':');
  sel.policy = parse_channel_policy(text.substr(0, colon));
  if (colon != std::string::npos) {
    try {
      sel.count = std::stoul(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw ValidationError("bad channel count in '" + text + "'");
    }
  }
  return sel;
}

ExperimentConfig load_config(const CommonArgs& a) {
  // Without a config file: the default synthetic spec, or the --data directory.
  const json base = a.data.empty() ? json{{"synthetic", json::object()}} : json{{"data_dir", a.data}};
  ExperimentConfig cfg = experiment_config_from_json(a.config.empty() ? base : read_json_file(a.config));
  if (!a.data.empty()) {
    cfg.synthetic.reset();
    cfg.data_dir = a.data;
  }
  if (!a.rich.empty()) cfg.rich_checkpoint = a.rich;
  if (a.seed) cfg.seeds = {*a.seed};
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.paired_ratio) cfg.paired_ratio = *a.paired_ratio;
  if (!a.channels.empty()) cfg.channels = parse_channels(a.channels);
  if (!a.methods.empty()) {
    cfg.methods.clear();
    for (const auto& m : a.methods) cfg.methods.push_back(parse_method(m));
  }
  cfg.validate();
  return cfg;
}

fs::path require_out(const CommonArgs& a) {
  if (a.out.empty()) throw ValidationError("--out is required");
  return a.out;
}

std::uint64_t single_seed(const ExperimentConfig& cfg) { return cfg.seeds.front(); }

void print_cell(const CellResult& c) {
  std::cout << to_string(c.method) << " (seed " << c.seed << ")\n" << c.metrics.to_table();
}

int cmd_gen_data(const CommonArgs& a, bool binary) {
  SyntheticSpec spec;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    spec = synthetic_spec_from_json(j.contains("synthetic") ? j.at("synthetic") : j);
  }
  if (a.seed) spec.seed = *a.seed;
  const fs::path out = require_out(a);
  const auto d = generate_synthetic(spec);
  save_experiment_data({d.rich, d.poor, d.paired}, out, binary);
  write_json_file(to_json(spec), out / "spec.json");
  std::printf("wrote %zu rich, %zu poor, %zu paired samples to %s\n", d.rich.size(), d.poor.size(), d.paired.size(),
              out.string().c_str());
  return 0;
}

int cmd_train_rich(const CommonArgs& a) {
  ExperimentConfig cfg = load_config(a);
  cfg.rich_checkpoint.clear();
  const auto seed = single_seed(cfg);
  const fs::path out = require_out(a);
  const auto data = experiment_data_for_seed(cfg, seed);
  const auto splits = make_splits(data, cfg, seed);
  const auto rich = rich_model_for(cfg, splits, seed);
  save_checkpoint(rich, out);
  const auto cell = run_cell(Method::Rich, splits, rich, cfg, seed);
  if (!cell.ok) throw Error(cell.error);
  write_json_file({{"seed", seed}, {"metrics", cell.metrics.to_json()}}, out / "report.json");
  print_cell(cell);
  return 0;
}

int cmd_method(const CommonArgs& a, Method method) {
  ExperimentConfig cfg = load_config(a);
  const auto seed = single_seed(cfg);
  const fs::path out = require_out(a);
  const auto data = experiment_data_for_seed(cfg, seed);
  const auto splits = make_splits(data, cfg, seed);
  TransferableModel rich;
  if (method != Method::Direct) {
    if (cfg.rich_checkpoint.empty()) throw ValidationError("--rich <checkpoint> is required for " + to_string(method));
    rich = load_checkpoint(cfg.rich_checkpoint);
  }
  const auto cell = run_cell(method, splits, rich, cfg, seed);
  if (!cell.ok) throw Error(to_string(method) + " failed: " + cell.error);
  save_checkpoint(cell.model, out / "model");
  write_json_file({{"seed", seed},
                   {"method", to_string(method)},
                   {"poor_channels", splits.poor_channels},
                   {"metrics", cell.metrics.to_json()},
                   {"details", cell.details}},
                  out / "report.json");
  print_cell(cell);
  return 0;
}

int cmd_evaluate(const std::string& model_dir, const std::string& data_dir, const std::string& channels,
                 const std::string& out) {
  const auto model = load_checkpoint(model_dir);
  Dataset data = load_dataset(data_dir);
  if (!channels.empty()) {
    const auto sel = parse_channels(channels);
    data = select_channels(data, choose_channels(sel, data));
  }
  std::vector<std::size_t> truth;
  for (const auto& s : data.samples) truth.push_back(s.label);
  const auto m = evaluate_predictions(predict_proba(data, model), truth, model.arch().n_classes);
  if (!out.empty()) write_json_file(m.to_json(), out);
  std::cout << m.to_table();
  return 0;
}

int cmd_verify_theory(const CommonArgs& a, std::optional<std::size_t> trials) {
  Theorem1Config cfg = a.config.empty() ? realizable_theorem1_config() : theorem1_config_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (trials) cfg.trials = *trials;
  const auto r = verify_theorem1(cfg);
  if (!a.out.empty()) write_json_file(r.to_json(), a.out);
  std::printf("%-6s %-8s %-10s %-9s %-9s %s\n", "trial", "phi", "alpha_hat", "bound", "agree", "status");
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    const auto& t = r.trials[i];
    std::printf("%-6zu %-8.4f %-10.3g %-9.4f %-9.4f %s\n", i, t.phi, t.alpha_hat, t.bound, t.empirical_agreement,
                t.vacuous ? "vacuous" : (t.satisfied ? "ok" : "violated"));
  }
  std::printf("satisfied %zu of %zu trials (%zu vacuous), k = %zu pairs per trial\n", r.satisfied_non_vacuous,
              r.trials.size(), r.vacuous, r.trials.empty() ? std::size_t{0} : r.trials.front().k_used);
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto r = report(dir);
  std::cout << report_table(r);
  return 0;
}

int cmd_run(const CommonArgs& a, std::optional<std::size_t> workers) {
  ExperimentConfig cfg = load_config(a);
  if (workers) cfg.workers = *workers;
  const auto r = run_experiment(cfg);
  std::cout << report_table(r.report);
  for (const auto& f : r.failures) std::cerr << "failed: " << f << '\n';
  return r.failures.empty() ? 0 : 2;
}

void add_common(CLI::App* cmd, CommonArgs& a, bool data_flags) {
  cmd->add_option("--config", a.config, "JSON configuration file");
  cmd->add_option("--seed", a.seed, "seed (overrides the configured seed list)");
  cmd->add_option("--out", a.out, "output path");
  if (!data_flags) return;
  cmd->add_option("--data", a.data, "dataset directory with rich/, poor/ and paired/");
  cmd->add_option("--paired-ratio", a.paired_ratio, "fraction of H_o to use, in (0, 1]");
  cmd->add_option("--channels", a.channels, "poor channels: '0,1' or a policy such as 'top-mi:2'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cheer: knowledge infusion from rich to poor time-series models"};
  app.require_subcommand(1);

  CommonArgs gen_args, rich_args, infuse_args, base_args, theory_args, run_args;
  bool binary = false;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic rich/poor/paired dataset");
  add_common(gen, gen_args, false);
  gen->add_flag("--binary", binary, "also write data.bin");

  auto* train_rich = app.add_subcommand("train-rich", "train the rich model on the rich split");
  add_common(train_rich, rich_args, true);

  auto* infuse = app.add_subcommand("infuse", "behavior and target infusion into a poor model");
  add_common(infuse, infuse_args, true);
  infuse->add_option("--rich", infuse_args.rich, "rich model checkpoint")->required();

  std::string baseline_method = "direct";
  auto* baseline = app.add_subcommand("baseline", "train a direct, kd or at baseline");
  add_common(baseline, base_args, true);
  baseline->add_option("--rich", base_args.rich, "rich model checkpoint (kd, at)");
  baseline->add_option("--method", baseline_method, "direct | kd | at");

  std::string eval_model, eval_data, eval_channels, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset directory");
  evaluate->add_option("--model", eval_model, "model checkpoint")->required();
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--channels", eval_channels, "channel selection applied before evaluation");
  evaluate->add_option("--out", eval_out, "metrics JSON path");

  std::optional<std::size_t> trials;
  auto* theory = app.add_subcommand("verify-theory", "Monte-Carlo check of the agreement bound");
  add_common(theory, theory_args, false);
  theory->add_option("--trials", trials, "number of trials");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "aggregate per-seed results into a comparison table");
  rep->add_option("results", report_dir, "results directory")->required();

  std::optional<std::size_t> workers;
  auto* run = app.add_subcommand("run", "run every configured seed and method, then report");
  add_common(run, run_args, true);
  run->add_option("--method", run_args.methods, "methods to run (repeatable)");
  run->add_option("--rich", run_args.rich, "rich model checkpoint to reuse");
  run->add_option("--workers", workers, "parallel (seed, method) cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_args, binary);
    if (*train_rich) return cmd_train_rich(rich_args);
    if (*infuse) return cmd_method(infuse_args, Method::Cheer);
    if (*baseline) {
      const Method m = parse_method(baseline_method);
      if (m == Method::Cheer || m == Method::Rich) throw ValidationError("baseline method must be direct, kd or at");
      return cmd_method(base_args, m);
    }
    if (*evaluate) return cmd_evaluate(eval_model, eval_data, eval_channels, eval_out);
    if (*theory) return cmd_verify_theory(theory_args, trials);
    if (*rep) return cmd_report(report_dir);
    if (*run) return cmd_run(run_args, workers);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
