#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cheer/baselines.hpp"
#include "cheer/data.hpp"
#include "cheer/infusion.hpp"
#include "cheer/metrics.hpp"
#include "cheer/model.hpp"
#include "cheer/theory.hpp"
#include "cheer/training.hpp"
#include "json.hpp"

namespace cheer {

enum class Method { Direct, KD, AT, Cheer, Rich };

std::string to_string(Method method);
Method parse_method(const std::string& text);

enum class ChannelPolicy { All, Explicit, TopMI, BottomMI, TopEntropy, MiddleEntropy, BottomEntropy };

std::string to_string(ChannelPolicy policy);
ChannelPolicy parse_channel_policy(const std::string& text);

struct ChannelSelection {
  ChannelPolicy policy = ChannelPolicy::All;
  std::vector<std::size_t> channels;  // Explicit only: local poor-view positions
  std::size_t count = 0;              // ranked policies; 0 -> half of the poor channels (at least 1)
};

/// Poor-view channel positions chosen by `sel`, ranked on `poor_train`.
std::vector<std::size_t> choose_channels(const ChannelSelection& sel, const Dataset& poor_train);

/// All data needed by one seed of an experiment.
struct ExperimentData {
  Dataset rich;
  Dataset poor;
  PairedDataset paired;
};

/// Writes rich/, poor/ and paired/ under `dir`.
void save_experiment_data(const ExperimentData& data, const std::filesystem::path& dir, bool write_binary = false);
ExperimentData load_experiment_data(const std::filesystem::path& dir);

struct ExperimentConfig {
  std::optional<SyntheticSpec> synthetic;  // either this or data_dir
  std::filesystem::path data_dir;
  std::filesystem::path rich_checkpoint;   // optional: skip rich training
  Architecture rich_arch;                  // shapes are filled from the data
  Architecture poor_arch;
  TrainConfig train;
  BehaviorFitConfig behavior;
  KDConfig kd;
  ATConfig at;
  double holdout_fraction = 0.1;
  double paired_ratio = 0.5;
  ChannelSelection channels;
  std::vector<Method> methods{Method::Direct, Method::KD, Method::AT, Method::Cheer};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::filesystem::path output_dir = "results";
  std::vector<double> sweep_paired_ratios;
  std::vector<std::size_t> sweep_channel_counts;
  std::size_t workers = 1;

  void validate() const;
};

/// Strict parsing: unknown keys raise ValidationError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);
Architecture architecture_from_json(const nlohmann::json& j, const Architecture& defaults = {});
nlohmann::json to_json(const Architecture& arch);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});
nlohmann::json to_json(const TrainConfig& cfg);
BehaviorFitConfig behavior_config_from_json(const nlohmann::json& j, const BehaviorFitConfig& defaults = {});
nlohmann::json to_json(const BehaviorFitConfig& cfg);
KDConfig kd_config_from_json(const nlohmann::json& j, const KDConfig& defaults = {});
ATConfig at_config_from_json(const nlohmann::json& j, const ATConfig& defaults = {});
Theorem1Config theorem1_config_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);
void write_text_file(const std::string& text, const std::filesystem::path& path);

/// Data for one seed: a synthetic draw (distribution fixed by the spec seed,
/// sample draw by `seed`) or the configured directory.
ExperimentData experiment_data_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Splits and subsamples for one seed.
struct SeedSplits {
  Dataset rich_train, rich_val, rich_test;
  Dataset poor_train, poor_val, poor_test;
  PairedDataset paired;  // H_o after subsampling by the paired ratio
  std::vector<std::size_t> poor_channels;
};

SeedSplits make_splits(const ExperimentData& data, const ExperimentConfig& cfg, std::uint64_t seed,
                       std::optional<double> paired_ratio = std::nullopt,
                       std::optional<std::size_t> channel_count = std::nullopt);

/// Loads cfg.rich_checkpoint when set, otherwise trains on the rich splits.
TransferableModel rich_model_for(const ExperimentConfig& cfg, const SeedSplits& splits, std::uint64_t seed);

/// Seed shared by every method's training run for this experiment seed.
std::uint64_t training_seed(std::uint64_t seed);

struct CellResult {
  std::uint64_t seed = 0;
  Method method = Method::Direct;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  nlohmann::json details;
  double wall_seconds = 0.0;
  TransferableModel model;  // trained model when ok
};

/// Trains `method` on the splits and evaluates it on the poor test split
/// (the rich test split for Method::Rich). Errors are captured in the result.
CellResult run_cell(Method method, const SeedSplits& splits, const TransferableModel& rich, const ExperimentConfig& cfg,
                    std::uint64_t seed);

struct ExperimentResult {
  std::vector<CellResult> cells;   // seed-major, methods in configured order
  std::vector<std::string> failures;  // "seed S method M: message"
  std::vector<std::filesystem::path> seed_files;
  nlohmann::json report;
};

/// Runs every (seed, method) cell, writes seeds/seed_<s>.json, the optional
/// sweep CSVs and the aggregate report under cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Aggregates seeds/*.json under `results_dir` into report.json and
/// report.txt. Output depends only on the per-seed files.
nlohmann::json report(const std::filesystem::path& results_dir);

/// Plain-text rendering of a report produced by `report`.
std::string report_table(const nlohmann::json& report);

}  // namespace cheer
