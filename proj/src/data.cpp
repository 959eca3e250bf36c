#include "cheer/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

std::string to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::Rich: return "rich";
    case DatasetRole::Poor: return "poor";
    case DatasetRole::PairedRichView: return "paired-rich-view";
    case DatasetRole::PairedPoorView: return "paired-poor-view";
  }
  return "rich";
}

DatasetRole parse_role(const std::string& text) {
  if (text == "rich") return DatasetRole::Rich;
  if (text == "poor") return DatasetRole::Poor;
  if (text == "paired-rich-view") return DatasetRole::PairedRichView;
  if (text == "paired-poor-view") return DatasetRole::PairedPoorView;
  throw ValidationError("unknown dataset role '" + text + "'");
}

void Dataset::validate() const {
  if (n_channels == 0 || seq_len == 0) throw ValidationError("dataset '" + name + "' must have C, T >= 1");
  if (n_classes == 0) throw ValidationError("dataset '" + name + "' must have at least one class");
  if (channel_ids.size() != n_channels) {
    throw ValidationError("dataset '" + name + "' lists " + std::to_string(channel_ids.size()) +
                          " channel ids for " + std::to_string(n_channels) + " channels");
  }
  std::set<std::uint64_t> ids;
  for (const auto& s : samples) {
    if (s.n_channels != n_channels || s.seq_len != seq_len || s.values.size() != n_channels * seq_len) {
      throw ValidationError("sample " + std::to_string(s.id) + " in '" + name + "' has the wrong shape");
    }
    if (s.label >= n_classes) {
      throw ValidationError("sample " + std::to_string(s.id) + " has label " + std::to_string(s.label) +
                            " outside [0, " + std::to_string(n_classes) + ")");
    }
    for (double v : s.values) {
      if (!std::isfinite(v)) throw ValidationError("sample " + std::to_string(s.id) + " has a non-finite value");
    }
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id " + std::to_string(s.id));
  }
}

Dataset Dataset::empty_like() const {
  Dataset out = *this;
  out.samples.clear();
  return out;
}

void PairedDataset::validate() const {
  rich.validate();
  poor.validate();
  if (rich.size() != poor.size()) {
    throw ValidationError("paired views differ in size: " + std::to_string(rich.size()) + " vs " +
                          std::to_string(poor.size()));
  }
  for (std::size_t i = 0; i < rich.size(); ++i) {
    if (rich.samples[i].id != poor.samples[i].id) {
      throw ValidationError("paired views misaligned at position " + std::to_string(i));
    }
    if (rich.samples[i].label != poor.samples[i].label) {
      throw ValidationError("paired sample " + std::to_string(rich.samples[i].id) + " has mismatched labels");
    }
  }
  for (std::size_t a : rich.channel_ids) {
    if (std::find(poor.channel_ids.begin(), poor.channel_ids.end(), a) != poor.channel_ids.end()) {
      throw ValidationError("channel " + std::to_string(a) + " appears in both paired views");
    }
  }
}

DatasetManifest make_manifest(const Dataset& dataset) {
  DatasetManifest m;
  m.name = dataset.name;
  m.role = dataset.role;
  m.n_channels = dataset.n_channels;
  m.seq_len = dataset.seq_len;
  m.n_classes = dataset.n_classes;
  m.n_samples = dataset.size();
  m.seed = dataset.seed;
  m.channel_ids = dataset.channel_ids;
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

constexpr std::uint64_t kStreamPrototype = 1;
constexpr std::uint64_t kStreamRichMix = 2;
constexpr std::uint64_t kStreamPoorMix = 3;
constexpr std::uint64_t kStreamRichSamples = 10;
constexpr std::uint64_t kStreamPoorSamples = 11;
constexpr std::uint64_t kStreamPairedSamples = 12;

std::vector<double> per_channel(const std::vector<double>& given, std::size_t n, double fallback, const char* what) {
  if (given.empty()) return std::vector<double>(n, fallback);
  if (given.size() != n) {
    throw ValidationError(std::string(what) + " lists " + std::to_string(given.size()) + " values for " +
                          std::to_string(n) + " channels");
  }
  return given;
}

struct Generator {
  const SyntheticSpec& spec;
  std::vector<double> prototypes;  // [class][latent][t]
  std::vector<double> rich_mix;    // [r][latent]
  std::vector<double> poor_mix;    // [p][latent]
  std::vector<double> rich_noise, poor_noise, rich_info, poor_info;

  explicit Generator(const SyntheticSpec& s) : spec(s) {
    const std::size_t c = s.n_classes, L = s.n_latent, T = s.seq_len;
    Rng proto_rng = Rng::derive(s.seed, kStreamPrototype);
    prototypes.resize(c * L * T);
    for (std::size_t y = 0; y < c; ++y) {
      for (std::size_t l = 0; l < L; ++l) {
        const double level = s.class_separation * proto_rng.normal();
        const double amplitude = s.class_separation * proto_rng.uniform(0.5, 1.5);
        const double freq = static_cast<double>(1 + proto_rng.below(3));
        const double phase = proto_rng.uniform(0.0, 6.283185307179586);
        for (std::size_t t = 0; t < T; ++t) {
          prototypes[(y * L + l) * T + t] =
              level + amplitude * std::sin(6.283185307179586 * freq * static_cast<double>(t) / static_cast<double>(T) + phase);
        }
      }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(L));
    Rng rich_rng = Rng::derive(s.seed, kStreamRichMix);
    rich_mix.resize(s.rich_channels * L);
    for (double& m : rich_mix) m = scale * rich_rng.normal();
    Rng poor_rng = Rng::derive(s.seed, kStreamPoorMix);
    poor_mix.resize(s.poor_channels * L);
    for (double& m : poor_mix) m = scale * poor_rng.normal();
    rich_noise = per_channel(s.rich_noise, s.rich_channels, 0.3, "rich_noise");
    poor_noise = per_channel(s.poor_noise, s.poor_channels, 1.5, "poor_noise");
    rich_info = per_channel(s.rich_informativeness, s.rich_channels, 1.0, "rich_informativeness");
    poor_info = per_channel(s.poor_informativeness, s.poor_channels, 0.5, "poor_informativeness");
  }

  // Latent sources for one subject: [latent][t].
  std::vector<double> latent(std::size_t label, Rng& rng) const {
    const std::size_t L = spec.n_latent, T = spec.seq_len;
    std::vector<double> z(L * T);
    for (std::size_t l = 0; l < L; ++l) {
      const double gain = 1.0 + spec.amplitude_jitter * rng.normal();
      const double shift = spec.amplitude_jitter * rng.normal();
      double drift = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        drift = 0.8 * drift + 0.6 * spec.latent_noise * rng.normal();
        z[l * T + t] = gain * prototypes[(label * L + l) * T + t] + shift + drift;
      }
    }
    return z;
  }

  TimeSeriesSample observe(const std::vector<double>& z, std::uint64_t id, std::size_t label,
                           const std::vector<double>& mix, const std::vector<double>& info,
                           const std::vector<double>& noise, std::size_t channels, Rng& rng) const {
    const std::size_t L = spec.n_latent, T = spec.seq_len;
    TimeSeriesSample s;
    s.id = id;
    s.label = label;
    s.n_channels = channels;
    s.seq_len = T;
    s.values.assign(channels * T, 0.0);
    for (std::size_t j = 0; j < channels; ++j) {
      for (std::size_t t = 0; t < T; ++t) {
        double v = 0.0;
        for (std::size_t l = 0; l < L; ++l) v += mix[j * L + l] * z[l * T + t];
        s.values[j * T + t] = info[j] * v + noise[j] * rng.normal();
      }
    }
    return s;
  }

  TimeSeriesSample rich_view(const std::vector<double>& z, std::uint64_t id, std::size_t label, Rng& rng) const {
    return observe(z, id, label, rich_mix, rich_info, rich_noise, spec.rich_channels, rng);
  }

  TimeSeriesSample poor_view(const std::vector<double>& z, std::uint64_t id, std::size_t label, Rng& rng) const {
    return observe(z, id, label, poor_mix, poor_info, poor_noise, spec.poor_channels, rng);
  }
};

Dataset make_dataset(const SyntheticSpec& spec, std::string name, DatasetRole role, std::size_t channels,
                     std::size_t first_channel_id) {
  Dataset d;
  d.name = std::move(name);
  d.role = role;
  d.n_channels = channels;
  d.seq_len = spec.seq_len;
  d.n_classes = spec.n_classes;
  d.seed = spec.seed;
  d.channel_ids.resize(channels);
  std::iota(d.channel_ids.begin(), d.channel_ids.end(), first_channel_id);
  return d;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_classes < 1) throw ValidationError("synthetic spec needs at least one class");
  if (seq_len < 1 || n_latent < 1) throw ValidationError("synthetic spec needs seq_len, n_latent >= 1");
  if (poor_channels < 1) throw ValidationError("synthetic spec needs at least one poor channel");
  if (mirror_views) {
    if (rich_channels != poor_channels) throw ValidationError("mirrored views need equal rich and poor channel counts");
  } else if (rich_channels <= poor_channels) {
    throw ValidationError("synthetic spec needs more rich channels than poor channels (r > p)");
  }
  auto check_nonneg = [](const std::vector<double>& v, const char* what) {
    for (double x : v) {
      if (!(x >= 0.0)) throw ValidationError(std::string(what) + " must be non-negative");
    }
  };
  check_nonneg(rich_noise, "rich_noise");
  check_nonneg(poor_noise, "poor_noise");
  if (!(class_separation >= 0.0) || !(amplitude_jitter >= 0.0) || !(latent_noise >= 0.0)) {
    throw ValidationError("synthetic spec scales must be non-negative");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Generator gen(spec);
  const std::size_t poor_first = spec.rich_channels;
  SyntheticData out;
  out.rich = make_dataset(spec, "rich", DatasetRole::Rich, spec.rich_channels, 0);
  out.poor = make_dataset(spec, "poor", DatasetRole::Poor, spec.poor_channels, poor_first);
  out.paired.rich = make_dataset(spec, "paired-rich", DatasetRole::PairedRichView, spec.rich_channels, 0);
  out.paired.poor = make_dataset(spec, "paired-poor", DatasetRole::PairedPoorView, spec.poor_channels, poor_first);

  const std::uint64_t sample_seed = spec.draw == 0 ? spec.seed : mix64(spec.seed ^ mix64(spec.draw));
  std::uint64_t next_id = 0;
  out.rich.samples.reserve(spec.n_rich);
  for (std::size_t i = 0; i < spec.n_rich; ++i) {
    Rng rng = Rng::derive(sample_seed, kStreamRichSamples, i);
    const std::size_t y = rng.below(spec.n_classes);
    const auto z = gen.latent(y, rng);
    out.rich.samples.push_back(gen.rich_view(z, next_id++, y, rng));
  }
  out.poor.samples.reserve(spec.n_poor);
  for (std::size_t i = 0; i < spec.n_poor; ++i) {
    Rng rng = Rng::derive(sample_seed, kStreamPoorSamples, i);
    const std::size_t y = rng.below(spec.n_classes);
    const auto z = gen.latent(y, rng);
    out.poor.samples.push_back(spec.mirror_views ? gen.rich_view(z, next_id++, y, rng)
                                                    : gen.poor_view(z, next_id++, y, rng));
  }
  out.paired.rich.samples.reserve(spec.n_paired);
  out.paired.poor.samples.reserve(spec.n_paired);
  for (std::size_t i = 0; i < spec.n_paired; ++i) {
    Rng rng = Rng::derive(sample_seed, kStreamPairedSamples, i);
    const std::size_t y = rng.below(spec.n_classes);
    const auto z = gen.latent(y, rng);
    const std::uint64_t id = next_id++;
    out.paired.rich.samples.push_back(gen.rich_view(z, id, y, rng));
    if (spec.mirror_views) {
      out.paired.poor.samples.push_back(out.paired.rich.samples.back());
    } else {
      out.paired.poor.samples.push_back(gen.poor_view(z, id, y, rng));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

namespace {

void check_fractions(const SplitFractions& f) {
  double total = 0.0;
  for (double x : f) {
    if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("split fractions must lie in [0, 1]");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1, got " + std::to_string(total));
}

std::array<std::vector<std::size_t>, 3> partition(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  check_fractions(f);
  Rng rng(seed);
  const auto order = rng.permutation(n);
  const auto n_val = static_cast<std::size_t>(std::floor(f[1] * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(f[2] * static_cast<double>(n)));
  const std::size_t n_train = n - n_val - n_test;
  std::array<std::vector<std::size_t>, 3> parts;
  parts[0].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  parts[1].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                  order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  parts[2].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

}  // namespace

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out = dataset.empty_like();
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(dataset.samples.at(i));
  return out;
}

PairedDataset subset(const PairedDataset& dataset, std::span<const std::size_t> indices) {
  return PairedDataset{subset(dataset.rich, indices), subset(dataset.poor, indices)};
}

std::tuple<Dataset, Dataset, Dataset> split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed) {
  const auto parts = partition(dataset.size(), fractions, seed);
  return {subset(dataset, parts[0]), subset(dataset, parts[1]), subset(dataset, parts[2])};
}

std::tuple<PairedDataset, PairedDataset, PairedDataset> split(const PairedDataset& dataset, SplitFractions fractions,
                                                              std::uint64_t seed) {
  const auto parts = partition(dataset.size(), fractions, seed);
  return {subset(dataset, parts[0]), subset(dataset, parts[1]), subset(dataset, parts[2])};
}

PairedDataset subsample_pairs(const PairedDataset& paired, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("paired ratio must lie in (0, 1], got " + std::to_string(ratio));
  const std::size_t k = paired.size();
  const auto keep = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(k)));
  Rng rng(seed);
  auto order = rng.permutation(k);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return subset(paired, order);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_indices(std::size_t n, double fraction,
                                                                              std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("hold-out fraction must lie in [0, 1)");
  Rng rng(seed);
  auto order = rng.permutation(n);
  const auto n_out = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_out));
  std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(n_out), order.end());
  std::sort(held.begin(), held.end());
  std::sort(kept.begin(), kept.end());
  return {std::move(kept), std::move(held)};
}

Dataset select_channels(const Dataset& dataset, std::span<const std::size_t> channels) {
  if (channels.empty()) throw ValidationError("select_channels needs at least one channel");
  std::set<std::size_t> seen;
  for (std::size_t c : channels) {
    if (c >= dataset.n_channels) {
      throw ValidationError("channel index " + std::to_string(c) + " out of range for " +
                            std::to_string(dataset.n_channels) + " channels");
    }
    if (!seen.insert(c).second) throw ValidationError("duplicate channel index " + std::to_string(c));
  }
  Dataset out = dataset.empty_like();
  out.n_channels = channels.size();
  out.channel_ids.clear();
  for (std::size_t c : channels) out.channel_ids.push_back(dataset.channel_ids[c]);
  out.samples.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    TimeSeriesSample r;
    r.id = s.id;
    r.label = s.label;
    r.n_channels = channels.size();
    r.seq_len = s.seq_len;
    r.values.reserve(channels.size() * s.seq_len);
    for (std::size_t c : channels) {
      const auto ch = s.channel(c);
      r.values.insert(r.values.end(), ch.begin(), ch.end());
    }
    out.samples.push_back(std::move(r));
  }
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.n_channels != b.n_channels || a.seq_len != b.seq_len || a.n_classes != b.n_classes) {
    throw ValidationError("cannot concatenate datasets with different shapes");
  }
  Dataset out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

// ---------------------------------------------------------------------------
// Channel ranking

std::vector<std::vector<double>> channel_means(const Dataset& dataset) {
  std::vector<std::vector<double>> means(dataset.size(), std::vector<double>(dataset.n_channels));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    for (std::size_t c = 0; c < s.n_channels; ++c) {
      double acc = 0.0;
      for (double v : s.channel(c)) acc += v;
      means[i][c] = acc / static_cast<double>(s.seq_len);
    }
  }
  return means;
}

std::size_t ranking_bin(double value, double lo, double hi) {
  if (!(hi > lo)) return 0;
  const double pos = (value - lo) / (hi - lo) * static_cast<double>(kRankingBins);
  const auto bin = static_cast<std::size_t>(std::max(0.0, std::floor(pos)));
  return std::min(bin, kRankingBins - 1);
}

namespace {

double entropy_bits(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double n : counts) {
    if (n > 0.0) {
      const double p = n / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

// bins[sample][channel]
std::vector<std::vector<std::size_t>> binned_means(const Dataset& dataset) {
  const auto means = channel_means(dataset);
  std::vector<std::vector<std::size_t>> bins(dataset.size(), std::vector<std::size_t>(dataset.n_channels));
  for (std::size_t c = 0; c < dataset.n_channels; ++c) {
    double lo = means[0][c], hi = means[0][c];
    for (const auto& row : means) {
      lo = std::min(lo, row[c]);
      hi = std::max(hi, row[c]);
    }
    for (std::size_t i = 0; i < means.size(); ++i) bins[i][c] = ranking_bin(means[i][c], lo, hi);
  }
  return bins;
}

ChannelRanking order_by_score(std::vector<double> scores) {
  ChannelRanking r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  r.scores = std::move(scores);
  return r;
}

}  // namespace

ChannelRanking rank_by_entropy(const Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("rank_by_entropy needs a nonempty dataset");
  const auto bins = binned_means(dataset);
  std::vector<double> scores(dataset.n_channels, 0.0);
  for (std::size_t c = 0; c < dataset.n_channels; ++c) {
    std::vector<std::vector<double>> hist(dataset.n_classes, std::vector<double>(kRankingBins, 0.0));
    std::vector<double> class_totals(dataset.n_classes, 0.0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const std::size_t y = dataset.samples[i].label;
      hist[y][bins[i][c]] += 1.0;
      class_totals[y] += 1.0;
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t y = 0; y < dataset.n_classes; ++y) {
      if (class_totals[y] == 0.0) continue;
      sum += entropy_bits(hist[y], class_totals[y]);
      ++present;
    }
    scores[c] = sum / static_cast<double>(present);
  }
  return order_by_score(std::move(scores));
}

ChannelRanking rank_by_mutual_info(const Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("rank_by_mutual_info needs a nonempty dataset");
  std::set<std::size_t> labels;
  for (const auto& s : dataset.samples) labels.insert(s.label);
  if (labels.size() < 2) throw ValidationError("rank_by_mutual_info needs at least two classes present");
  const auto bins = binned_means(dataset);
  const double n = static_cast<double>(dataset.size());
  std::vector<double> label_counts(dataset.n_classes, 0.0);
  for (const auto& s : dataset.samples) label_counts[s.label] += 1.0;
  std::vector<double> scores(dataset.n_channels, 0.0);
  for (std::size_t c = 0; c < dataset.n_channels; ++c) {
    std::vector<double> joint(kRankingBins * dataset.n_classes, 0.0);
    std::vector<double> bin_counts(kRankingBins, 0.0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      joint[bins[i][c] * dataset.n_classes + dataset.samples[i].label] += 1.0;
      bin_counts[bins[i][c]] += 1.0;
    }
    double mi = 0.0;
    for (std::size_t b = 0; b < kRankingBins; ++b) {
      for (std::size_t y = 0; y < dataset.n_classes; ++y) {
        const double nxy = joint[b * dataset.n_classes + y];
        if (nxy == 0.0) continue;
        mi += (nxy / n) * std::log2(nxy * n / (bin_counts[b] * label_counts[y]));
      }
    }
    scores[c] = std::max(0.0, mi);
  }
  return order_by_score(std::move(scores));
}

}  // namespace cheer
