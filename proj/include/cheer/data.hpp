#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace cheer {

enum class DatasetRole { Rich, Poor, PairedRichView, PairedPoorView };

std::string to_string(DatasetRole role);
DatasetRole parse_role(const std::string& text);

/// One subject: a channel x time matrix stored channel-major, plus its label.
struct TimeSeriesSample {
  std::uint64_t id = 0;
  std::size_t label = 0;
  std::size_t n_channels = 0;
  std::size_t seq_len = 0;
  std::vector<double> values;

  double at(std::size_t channel, std::size_t t) const { return values[channel * seq_len + t]; }
  std::span<const double> channel(std::size_t c) const { return {values.data() + c * seq_len, seq_len}; }

  friend bool operator==(const TimeSeriesSample&, const TimeSeriesSample&) = default;
};

struct Dataset {
  std::string name;
  DatasetRole role = DatasetRole::Rich;
  std::size_t n_channels = 0;
  std::size_t seq_len = 0;
  std::size_t n_classes = 0;
  std::vector<std::size_t> channel_ids;  // global channel identity, one per local channel
  std::uint64_t seed = 0;
  std::vector<TimeSeriesSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// Checks shapes, labels, channel ids and finiteness. Throws ValidationError.
  void validate() const;

  /// Same metadata, no samples.
  Dataset empty_like() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// H_o: aligned rich and poor views of the same subjects. Sample i of `rich`
/// and sample i of `poor` share id and label.
struct PairedDataset {
  Dataset rich;
  Dataset poor;

  std::size_t size() const { return rich.size(); }
  bool empty() const { return rich.empty(); }
  void validate() const;

  friend bool operator==(const PairedDataset&, const PairedDataset&) = default;
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  std::string name;
  DatasetRole role = DatasetRole::Rich;
  std::size_t n_channels = 0;
  std::size_t seq_len = 0;
  std::size_t n_classes = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  int format_version = kFormatVersion;
  std::vector<std::size_t> channel_ids;
};

DatasetManifest make_manifest(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Synthetic generator

/// Class-conditioned latent sources, linearly mixed into rich and poor channels.
/// Each rich channel j observes informativeness[j] * (M_r latent)_j + noise[j] * N(0,1);
/// poor channels likewise with their own mixing matrix. Paired samples share
/// the latent draw.
struct SyntheticSpec {
  std::size_t n_classes = 4;
  std::size_t seq_len = 32;
  std::size_t n_latent = 4;
  std::size_t rich_channels = 8;
  std::size_t poor_channels = 2;
  std::vector<double> rich_noise;              // per channel; empty -> all 0.3
  std::vector<double> poor_noise;              // per channel; empty -> all 1.5
  std::vector<double> rich_informativeness;    // per channel; empty -> all 1.0
  std::vector<double> poor_informativeness;    // per channel; empty -> all 0.5
  double class_separation = 1.0;
  double amplitude_jitter = 0.3;
  double latent_noise = 0.3;
  std::size_t n_rich = 4000;
  std::size_t n_poor = 2000;
  std::size_t n_paired = 1000;
  std::uint64_t seed = 0;  // fixes the distribution (prototypes, mixing) and, with draw, the samples
  std::uint64_t draw = 0;  // independent sample draw from the same distribution
  /// Poor view is an exact copy of the rich view (requires equal channel
  /// counts). Used for realizable settings.
  bool mirror_views = false;

  void validate() const;
};

struct SyntheticData {
  Dataset rich;         // H_r
  Dataset poor;         // H_p
  PairedDataset paired; // H_o
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Partitioning and selection

using SplitFractions = std::array<double, 3>;
inline constexpr SplitFractions kDefaultSplit{0.8, 0.1, 0.1};

/// Seeded partition by sample id. Validation and test sizes are the floors of
/// their fractions; the remainder goes to train.
std::tuple<Dataset, Dataset, Dataset> split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed);
std::tuple<PairedDataset, PairedDataset, PairedDataset> split(const PairedDataset& dataset, SplitFractions fractions,
                                                              std::uint64_t seed);

/// Uniform subsample of floor(ratio * k) pairs: the prefix of one seeded
/// permutation, so smaller ratios are subsets of larger ones under one seed.
PairedDataset subsample_pairs(const PairedDataset& paired, double ratio, std::uint64_t seed);

/// Restricts samples to the given local channel positions, in the given order.
Dataset select_channels(const Dataset& dataset, std::span<const std::size_t> channels);

Dataset concat(const Dataset& a, const Dataset& b);

/// Seeded hold-out of floor(fraction * n) items; returns (kept, held_out)
/// index lists, each sorted ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_indices(std::size_t n, double fraction,
                                                                              std::uint64_t seed);

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);
PairedDataset subset(const PairedDataset& dataset, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Channel ranking

inline constexpr std::size_t kRankingBins = 16;

struct ChannelRanking {
  std::vector<std::size_t> order;  // local channel positions, best first
  std::vector<double> scores;      // indexed by local channel position (bits)
};

/// Per-sample time-mean of each channel, as [sample][channel].
std::vector<std::vector<double>> channel_means(const Dataset& dataset);

/// Equal-width bin of `value` over [lo, hi] using kRankingBins bins.
std::size_t ranking_bin(double value, double lo, double hi);

/// Average over classes of the histogram entropy of each channel's time-mean.
ChannelRanking rank_by_entropy(const Dataset& dataset);

/// Plug-in mutual information between each channel's binned time-mean and the label.
ChannelRanking rank_by_mutual_info(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Persistence

enum class DataFormat { Auto, Csv, Binary };

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, bool write_binary = false);
Dataset load_dataset(const std::filesystem::path& dir, DataFormat format = DataFormat::Auto);

void save_paired(const PairedDataset& paired, const std::filesystem::path& dir, bool write_binary = false);
PairedDataset load_paired(const std::filesystem::path& dir, DataFormat format = DataFormat::Auto);

}  // namespace cheer
