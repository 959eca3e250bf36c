#include "cheer/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kRichSplitStream = 0x5201;
constexpr std::uint64_t kPoorSplitStream = 0x5202;
constexpr std::uint64_t kPairSubsampleStream = 0x5203;
constexpr std::uint64_t kTrainSeedStream = 0x5204;
constexpr std::uint64_t kRichTrainStream = 0x5205;

constexpr std::array<Method, 5> kAllMethods{Method::Direct, Method::KD, Method::AT, Method::Cheer, Method::Rich};
constexpr std::array<const char*, 4> kMetricNames{"accuracy", "macro_f1", "roc_auc", "pr_auc"};

/// Reads keys of one JSON object and rejects any key that was not read.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + " must be a JSON object");
  }

  template <class T>
  bool get(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const json* find(const char* key) {
    const auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ValidationError("unknown key " + where_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x - v[0];
  return v[0] + s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<std::size_t> labels_of(const Dataset& d) {
  std::vector<std::size_t> y;
  y.reserve(d.size());
  for (const auto& s : d.samples) y.push_back(s.label);
  return y;
}

MetricsReport evaluate_on(const Dataset& test, const TransferableModel& model) {
  if (test.empty()) throw ValidationError("test split is empty");
  return evaluate_predictions(predict_proba(test, model), labels_of(test), model.arch().n_classes);
}

}  // namespace

// ---------------------------------------------------------------------------
// Enumerations

std::string to_string(Method method) {
  switch (method) {
    case Method::Direct: return "direct";
    case Method::KD: return "kd";
    case Method::AT: return "at";
    case Method::Cheer: return "cheer";
    case Method::Rich: return "rich";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : kAllMethods) {
    if (to_string(m) == text) return m;
  }
  throw ValidationError("unknown method '" + text + "' (expected direct, kd, at, cheer or rich)");
}

std::string to_string(ChannelPolicy policy) {
  switch (policy) {
    case ChannelPolicy::All: return "all";
    case ChannelPolicy::Explicit: return "explicit";
    case ChannelPolicy::TopMI: return "top-mi";
    case ChannelPolicy::BottomMI: return "bottom-mi";
    case ChannelPolicy::TopEntropy: return "top-entropy";
    case ChannelPolicy::MiddleEntropy: return "middle-entropy";
    case ChannelPolicy::BottomEntropy: return "bottom-entropy";
  }
  return "?";
}

ChannelPolicy parse_channel_policy(const std::string& text) {
  for (auto p : {ChannelPolicy::All, ChannelPolicy::Explicit, ChannelPolicy::TopMI, ChannelPolicy::BottomMI,
                 ChannelPolicy::TopEntropy, ChannelPolicy::MiddleEntropy, ChannelPolicy::BottomEntropy}) {
    if (to_string(p) == text) return p;
  }
  throw ValidationError("unknown channel policy '" + text + "'");
}

std::vector<std::size_t> choose_channels(const ChannelSelection& sel, const Dataset& poor_train) {
  const std::size_t total = poor_train.n_channels;
  if (sel.policy == ChannelPolicy::Explicit) {
    if (sel.channels.empty()) throw ValidationError("explicit channel policy needs a channel list");
    for (std::size_t c : sel.channels) {
      if (c >= total) throw ValidationError("channel " + std::to_string(c) + " out of range");
    }
    return sel.channels;
  }
  const std::size_t count = sel.count == 0 ? std::max<std::size_t>(1, total / 2) : sel.count;
  if (count > total) {
    throw ValidationError("requested " + std::to_string(count) + " channels but the poor view has " +
                          std::to_string(total));
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  if (sel.policy == ChannelPolicy::All) {
    if (sel.count == 0) return order;
    order.resize(count);
    return order;
  }
  const bool mi = sel.policy == ChannelPolicy::TopMI || sel.policy == ChannelPolicy::BottomMI;
  order = mi ? rank_by_mutual_info(poor_train).order : rank_by_entropy(poor_train).order;
  std::size_t start = 0;
  switch (sel.policy) {
    case ChannelPolicy::BottomMI:
    case ChannelPolicy::BottomEntropy: start = total - count; break;
    case ChannelPolicy::MiddleEntropy: start = (total - count) / 2; break;
    default: break;
  }
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(start + count)};
}

// ---------------------------------------------------------------------------
// Files

void save_experiment_data(const ExperimentData& data, const fs::path& dir, bool write_binary) {
  save_dataset(data.rich, dir / "rich", write_binary);
  save_dataset(data.poor, dir / "poor", write_binary);
  save_paired(data.paired, dir / "paired", write_binary);
}

ExperimentData load_experiment_data(const fs::path& dir) {
  for (const char* sub : {"rich", "poor", "paired"}) {
    if (!fs::is_directory(dir / sub)) throw ValidationError("missing directory " + (dir / sub).string());
  }
  return {load_dataset(dir / "rich"), load_dataset(dir / "poor"), load_paired(dir / "paired")};
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const std::string& text, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void write_json_file(const json& j, const fs::path& path) { write_text_file(j.dump(2) + "\n", path); }

// ---------------------------------------------------------------------------
// Configuration

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  ObjectReader r(j, "synthetic");
  r.get("n_classes", s.n_classes);
  r.get("seq_len", s.seq_len);
  r.get("n_latent", s.n_latent);
  r.get("rich_channels", s.rich_channels);
  r.get("poor_channels", s.poor_channels);
  r.get("rich_noise", s.rich_noise);
  r.get("poor_noise", s.poor_noise);
  r.get("rich_informativeness", s.rich_informativeness);
  r.get("poor_informativeness", s.poor_informativeness);
  r.get("class_separation", s.class_separation);
  r.get("amplitude_jitter", s.amplitude_jitter);
  r.get("latent_noise", s.latent_noise);
  r.get("n_rich", s.n_rich);
  r.get("n_poor", s.n_poor);
  r.get("n_paired", s.n_paired);
  r.get("seed", s.seed);
  r.get("draw", s.draw);
  r.get("mirror_views", s.mirror_views);
  r.finish();
  s.validate();
  return s;
}

json to_json(const SyntheticSpec& s) {
  return {{"n_classes", s.n_classes},
          {"seq_len", s.seq_len},
          {"n_latent", s.n_latent},
          {"rich_channels", s.rich_channels},
          {"poor_channels", s.poor_channels},
          {"rich_noise", s.rich_noise},
          {"poor_noise", s.poor_noise},
          {"rich_informativeness", s.rich_informativeness},
          {"poor_informativeness", s.poor_informativeness},
          {"class_separation", s.class_separation},
          {"amplitude_jitter", s.amplitude_jitter},
          {"latent_noise", s.latent_noise},
          {"n_rich", s.n_rich},
          {"n_poor", s.n_poor},
          {"n_paired", s.n_paired},
          {"seed", s.seed},
          {"draw", s.draw},
          {"mirror_views", s.mirror_views}};
}

Architecture architecture_from_json(const json& j, const Architecture& defaults) {
  Architecture a = defaults;
  ObjectReader r(j, "arch");
  r.get("n_channels", a.n_channels);
  r.get("seq_len", a.seq_len);
  r.get("n_classes", a.n_classes);
  r.get("n_segments", a.extractor.n_segments);
  r.get("rnn_hidden", a.extractor.rnn_hidden);
  r.get("temperature", a.temperature);
  std::string mode;
  if (r.get("scorer_mode", mode)) a.scorer_mode = parse_scorer_mode(mode);
  if (const json* layers = r.find("conv_layers")) {
    if (!layers->is_array()) throw ValidationError("arch.conv_layers must be an array");
    a.extractor.conv_layers.clear();
    for (const auto& l : *layers) {
      ConvLayerSpec spec;
      if (l.is_array()) {
        if (l.size() != 3) throw ValidationError("conv layer must be [filters, kernel, stride]");
        spec = {l[0].get<std::size_t>(), l[1].get<std::size_t>(), l[2].get<std::size_t>()};
      } else {
        ObjectReader lr(l, "arch.conv_layers[]");
        lr.get("filters", spec.filters);
        lr.get("kernel", spec.kernel);
        lr.get("stride", spec.stride);
        lr.finish();
      }
      a.extractor.conv_layers.push_back(spec);
    }
  }
  r.finish();
  if (!(a.temperature > 0.0)) throw ValidationError("arch.temperature must be > 0");
  return a;
}

json to_json(const Architecture& a) {
  json layers = json::array();
  for (const auto& l : a.extractor.conv_layers) layers.push_back({l.filters, l.kernel, l.stride});
  return {{"n_channels", a.n_channels},
          {"seq_len", a.seq_len},
          {"n_classes", a.n_classes},
          {"n_segments", a.extractor.n_segments},
          {"conv_layers", layers},
          {"rnn_hidden", a.extractor.rnn_hidden},
          {"scorer_mode", to_string(a.scorer_mode)},
          {"temperature", a.temperature}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  ObjectReader r(j, "train");
  r.get("lr", c.lr);
  r.get("max_epochs", c.max_epochs);
  r.get("patience", c.patience);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

BehaviorFitConfig behavior_config_from_json(const json& j, const BehaviorFitConfig& defaults) {
  BehaviorFitConfig c = defaults;
  ObjectReader r(j, "behavior");
  r.get("lambda", c.lambda);
  std::string solver;
  if (r.get("solver", solver)) c.solver = parse_behavior_solver(solver);
  r.get("max_iters", c.max_iters);
  r.get("tolerance", c.tolerance);
  r.get("intercept", c.intercept);
  r.get("fallback_lambda", c.fallback_lambda);
  r.finish();
  c.validate();
  return c;
}

json to_json(const BehaviorFitConfig& c) {
  return {{"lambda", c.lambda},
          {"solver", to_string(c.solver)},
          {"max_iters", c.max_iters},
          {"tolerance", c.tolerance},
          {"intercept", c.intercept},
          {"fallback_lambda", c.fallback_lambda}};
}

KDConfig kd_config_from_json(const json& j, const KDConfig& defaults) {
  KDConfig c = defaults;
  ObjectReader r(j, "kd");
  r.get("distill_temperature", c.distill_temperature);
  r.get("soft_weight", c.soft_weight);
  r.get("hard_weight", c.hard_weight);
  r.get("holdout_fraction", c.holdout_fraction);
  r.finish();
  c.validate();
  return c;
}

ATConfig at_config_from_json(const json& j, const ATConfig& defaults) {
  ATConfig c = defaults;
  ObjectReader r(j, "at");
  r.get("beta", c.beta);
  r.get("holdout_fraction", c.holdout_fraction);
  r.finish();
  c.validate();
  return c;
}

Theorem1Config theorem1_config_from_json(const json& j) {
  Theorem1Config c = realizable_theorem1_config();
  ObjectReader r(j, "theorem");
  if (const json* g = r.find("generator")) c.generator = synthetic_spec_from_json(*g);
  if (const json* a = r.find("arch")) c.arch = architecture_from_json(*a, c.arch);
  if (const json* t = r.find("train")) c.train = train_config_from_json(*t, c.train);
  if (const json* b = r.find("behavior")) c.behavior = behavior_config_from_json(*b, c.behavior);
  r.get("rich_temperature", c.rich_temperature);
  r.get("n_rich_train", c.n_rich_train);
  r.get("n_poor", c.n_poor);
  r.get("n_eval", c.n_eval);
  r.get("epsilon", c.epsilon);
  r.get("delta", c.delta);
  r.get("trials", c.trials);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (synthetic && !data_dir.empty()) throw ValidationError("give either a synthetic spec or a data directory");
  if (!synthetic && data_dir.empty()) throw ValidationError("no dataset source configured");
  if (synthetic) synthetic->validate();
  if (methods.empty()) throw ValidationError("at least one method is required");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ValidationError("methods must be distinct");
  }
  if (seeds.empty()) throw ValidationError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("seeds must be distinct");
  }
  if (!(paired_ratio > 0.0 && paired_ratio <= 1.0)) throw ValidationError("paired ratio must lie in (0, 1]");
  for (double r : sweep_paired_ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw ValidationError("sweep paired ratios must lie in (0, 1]");
  }
  for (std::size_t c : sweep_channel_counts) {
    if (c == 0) throw ValidationError("sweep channel counts must be >= 1");
  }
  if (channels.policy == ChannelPolicy::Explicit) {
    if (channels.channels.empty()) throw ValidationError("explicit channel policy needs a channel list");
    if (std::set<std::size_t>(channels.channels.begin(), channels.channels.end()).size() != channels.channels.size()) {
      throw ValidationError("explicit channels must be distinct");
    }
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ValidationError("holdout fraction must be in [0, 1)");
  if (workers == 0) throw ValidationError("workers must be >= 1");
  if (output_dir.empty()) throw ValidationError("output directory is empty");
  train.validate();
  behavior.validate();
  kd.validate();
  at.validate();
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "config");
  if (const json* s = r.find("synthetic")) c.synthetic = synthetic_spec_from_json(*s);
  std::string path;
  if (r.get("data_dir", path)) c.data_dir = path;
  if (r.get("rich_checkpoint", path)) c.rich_checkpoint = path;
  if (r.get("output_dir", path)) c.output_dir = path;
  if (const json* a = r.find("arch")) {
    c.rich_arch = architecture_from_json(*a, c.rich_arch);
    c.poor_arch = architecture_from_json(*a, c.poor_arch);
  }
  if (const json* a = r.find("rich_arch")) c.rich_arch = architecture_from_json(*a, c.rich_arch);
  if (const json* a = r.find("poor_arch")) c.poor_arch = architecture_from_json(*a, c.poor_arch);
  if (const json* t = r.find("train")) c.train = train_config_from_json(*t, c.train);
  if (const json* b = r.find("behavior")) c.behavior = behavior_config_from_json(*b, c.behavior);
  if (const json* k = r.find("kd")) c.kd = kd_config_from_json(*k, c.kd);
  if (const json* a = r.find("at")) c.at = at_config_from_json(*a, c.at);
  r.get("holdout_fraction", c.holdout_fraction);
  r.get("paired_ratio", c.paired_ratio);
  if (const json* ch = r.find("channels")) {
    ObjectReader cr(*ch, "config.channels");
    std::string policy;
    if (cr.get("policy", policy)) c.channels.policy = parse_channel_policy(policy);
    cr.get("channels", c.channels.channels);
    cr.get("count", c.channels.count);
    cr.finish();
  }
  std::vector<std::string> methods;
  if (r.get("methods", methods)) {
    c.methods.clear();
    for (const auto& m : methods) c.methods.push_back(parse_method(m));
  }
  r.get("seeds", c.seeds);
  r.get("sweep_paired_ratios", c.sweep_paired_ratios);
  r.get("sweep_channel_counts", c.sweep_channel_counts);
  r.get("workers", c.workers);
  r.finish();
  if (!c.synthetic && c.data_dir.empty()) c.synthetic = SyntheticSpec{};
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json j = {{"rich_arch", to_json(c.rich_arch)},
            {"poor_arch", to_json(c.poor_arch)},
            {"train", to_json(c.train)},
            {"behavior", to_json(c.behavior)},
            {"kd", c.kd.to_json()},
            {"at", c.at.to_json()},
            {"holdout_fraction", c.holdout_fraction},
            {"paired_ratio", c.paired_ratio},
            {"channels",
             {{"policy", to_string(c.channels.policy)}, {"channels", c.channels.channels}, {"count", c.channels.count}}},
            {"methods", methods},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir.string()},
            {"sweep_paired_ratios", c.sweep_paired_ratios},
            {"sweep_channel_counts", c.sweep_channel_counts},
            {"workers", c.workers}};
  if (c.synthetic) j["synthetic"] = to_json(*c.synthetic);
  if (!c.data_dir.empty()) j["data_dir"] = c.data_dir.string();
  if (!c.rich_checkpoint.empty()) j["rich_checkpoint"] = c.rich_checkpoint.string();
  return j;
}

// ---------------------------------------------------------------------------
// Running

ExperimentData experiment_data_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.synthetic) return load_experiment_data(cfg.data_dir);
  SyntheticSpec spec = *cfg.synthetic;
  spec.draw = seed;
  auto d = generate_synthetic(spec);
  return {std::move(d.rich), std::move(d.poor), std::move(d.paired)};
}

std::uint64_t training_seed(std::uint64_t seed) { return mix64(seed ^ mix64(kTrainSeedStream)); }

SeedSplits make_splits(const ExperimentData& data, const ExperimentConfig& cfg, std::uint64_t seed,
                       std::optional<double> paired_ratio, std::optional<std::size_t> channel_count) {
  if (data.paired.poor.n_channels != data.poor.n_channels) {
    throw ValidationError("paired poor view and H_p have different channel counts");
  }
  SeedSplits s;
  std::tie(s.rich_train, s.rich_val, s.rich_test) = split(data.rich, kDefaultSplit, mix64(seed ^ kRichSplitStream));
  Dataset ptr, pva, pte;
  std::tie(ptr, pva, pte) = split(data.poor, kDefaultSplit, mix64(seed ^ kPoorSplitStream));
  const double ratio = paired_ratio.value_or(cfg.paired_ratio);
  PairedDataset paired = subsample_pairs(data.paired, ratio, mix64(seed ^ kPairSubsampleStream));

  ChannelSelection sel = cfg.channels;
  if (channel_count) {
    if (sel.policy == ChannelPolicy::Explicit) {
      if (*channel_count > sel.channels.size()) throw ValidationError("channel count exceeds the explicit list");
      sel.channels.resize(*channel_count);
    } else {
      sel.count = *channel_count;
    }
  }
  s.poor_channels = choose_channels(sel, ptr);
  s.poor_train = select_channels(ptr, s.poor_channels);
  s.poor_val = select_channels(pva, s.poor_channels);
  s.poor_test = select_channels(pte, s.poor_channels);
  paired.poor = select_channels(paired.poor, s.poor_channels);
  s.paired = std::move(paired);
  return s;
}

TransferableModel rich_model_for(const ExperimentConfig& cfg, const SeedSplits& s, std::uint64_t seed) {
  if (!cfg.rich_checkpoint.empty()) return load_checkpoint(cfg.rich_checkpoint);
  TrainConfig tc = cfg.train;
  tc.seed = mix64(seed ^ mix64(kRichTrainStream));
  return train_supervised(s.rich_train, s.rich_val, architecture_for(cfg.rich_arch, s.rich_train), tc);
}

namespace {

json cell_json(const CellResult& c) {
  json j = {{"ok", c.ok}};
  if (c.ok) {
    j["metrics"] = c.metrics.to_json();
    j["details"] = c.details;
  } else {
    j["error"] = c.error;
  }
  return j;
}

void strip_timing(json& j) {
  if (j.is_object()) {
    j.erase("wall_seconds");
    for (auto& item : j.items()) strip_timing(item.value());
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

CellResult failed_cell(std::uint64_t seed, Method method, std::string error) {
  CellResult c;
  c.seed = seed;
  c.method = method;
  c.error = std::move(error);
  return c;
}

std::string failure_text(const CellResult& c) {
  return "seed " + std::to_string(c.seed) + " method " + to_string(c.method) + ": " + c.error;
}

struct SeedState {
  std::uint64_t seed = 0;
  std::optional<ExperimentData> data;
  SeedSplits splits;
  TransferableModel rich;
  std::string error;
};

void write_sweep_csv(const std::string& axis, const std::vector<std::string>& keys, const std::vector<Method>& methods,
                     const std::map<std::pair<std::string, Method>, std::vector<MetricsReport>>& values,
                     const fs::path& path) {
  std::ostringstream out;
  out << axis << ",method,n_seeds,roc_auc_mean,roc_auc_std,pr_auc_mean,pr_auc_std,accuracy_mean,macro_f1_mean\n";
  for (const auto& key : keys) {
    for (Method m : methods) {
      const auto it = values.find({key, m});
      std::vector<double> roc, pr, acc, f1;
      if (it != values.end()) {
        for (const auto& r : it->second) {
          roc.push_back(r.roc_auc);
          pr.push_back(r.pr_auc);
          acc.push_back(r.accuracy);
          f1.push_back(r.macro_f1);
        }
      }
      out << key << ',' << to_string(m) << ',' << roc.size();
      if (roc.empty()) {
        out << ",,,,,,\n";
        continue;
      }
      out << ',' << fmt(mean_of(roc)) << ',' << fmt(std_of(roc)) << ',' << fmt(mean_of(pr)) << ','
          << fmt(std_of(pr)) << ',' << fmt(mean_of(acc)) << ',' << fmt(mean_of(f1)) << '\n';
    }
  }
  write_text_file(out.str(), path);
}

using SplitFn = std::function<SeedSplits(std::size_t seed_index, std::size_t key)>;
using CellFn = std::function<CellResult(std::size_t seed_index, std::size_t key, Method, const SeedSplits&)>;

/// Cells indexed [seed][key][method]; each (seed, key) pair is one task.
std::vector<CellResult> run_sweep(const std::vector<SeedState>& states, std::size_t n_keys,
                                  const std::vector<Method>& methods, std::size_t workers, const SplitFn& make,
                                  const CellFn& run) {
  const std::size_t n_methods = methods.size();
  std::vector<CellResult> cells(states.size() * n_keys * n_methods);
  parallel_for(states.size() * n_keys, workers, [&](std::size_t task) {
    const std::size_t i = task / n_keys;
    const std::size_t key = task % n_keys;
    CellResult* row = &cells[task * n_methods];
    std::optional<SeedSplits> splits;
    std::string error = states[i].error.empty() ? "" : "seed setup failed: " + states[i].error;
    if (error.empty()) {
      try {
        splits = make(i, key);
      } catch (const std::exception& e) {
        error = e.what();
      }
    }
    for (std::size_t k = 0; k < n_methods; ++k) {
      row[k] = splits ? run(i, key, methods[k], *splits) : failed_cell(states[i].seed, methods[k], error);
      row[k].model = TransferableModel{};
    }
  });
  return cells;
}

void collect_sweep(const std::string& axis, const std::vector<std::string>& keys, const std::vector<Method>& methods,
                   const std::vector<CellResult>& cells, std::vector<std::string>& failures, const fs::path& path) {
  std::map<std::pair<std::string, Method>, std::vector<MetricsReport>> values;
  const std::size_t n_methods = methods.size();
  for (std::size_t idx = 0; idx < cells.size(); ++idx) {
    const std::size_t key = (idx / n_methods) % keys.size();
    const auto& c = cells[idx];
    if (c.ok) {
      values[{keys[key], methods[idx % n_methods]}].push_back(c.metrics);
    } else {
      failures.push_back(axis + " " + keys[key] + ": " + failure_text(c));
    }
  }
  write_sweep_csv(axis, keys, methods, values, path);
}

}  // namespace

CellResult run_cell(Method method, const SeedSplits& s, const TransferableModel& rich, const ExperimentConfig& cfg,
                    std::uint64_t seed) {
  CellResult out;
  out.seed = seed;
  out.method = method;
  const auto start = std::chrono::steady_clock::now();
  try {
    TrainConfig tc = cfg.train;
    tc.seed = training_seed(seed);
    const Architecture arch = architecture_for(cfg.poor_arch, s.poor_train);
    TransferableModel model;
    switch (method) {
      case Method::Direct: {
        TrainingReport rep;
        model = train_supervised(s.poor_train, s.poor_val, arch, tc, &rep);
        out.details = {{"training", rep.to_json()}};
        break;
      }
      case Method::KD: {
        auto r = train_kd(rich, s.paired, s.poor_train, s.poor_val, arch, cfg.kd, tc);
        model = std::move(r.model);
        out.details = r.report;
        break;
      }
      case Method::AT: {
        auto r = train_at(rich, s.paired, s.poor_train, s.poor_val, arch, cfg.at, tc);
        model = std::move(r.model);
        out.details = r.report;
        break;
      }
      case Method::Cheer: {
        CheerConfig cc;
        cc.poor_arch = arch;
        cc.behavior = cfg.behavior;
        cc.train = tc;
        cc.holdout_fraction = cfg.holdout_fraction;
        auto r = cheer(concat(s.poor_train, s.poor_val), rich, s.paired, cc);
        model = std::move(r.model);
        out.details = r.report();
        break;
      }
      case Method::Rich:
        model = rich;
        out.details = json::object();
        break;
    }
    // Wall times stay out of the per-seed files so reruns are byte-identical.
    strip_timing(out.details);
    out.metrics = evaluate_on(method == Method::Rich ? s.rich_test : s.poor_test, model);
    out.model = std::move(model);
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out_dir = cfg.output_dir;
  fs::create_directories(out_dir / "seeds");

  std::optional<ExperimentData> shared;
  if (!cfg.synthetic) shared = load_experiment_data(cfg.data_dir);

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<SeedState> states(n_seeds);
  auto data_for = [&](std::size_t i) -> const ExperimentData& {
    return shared ? *shared : *states[i].data;
  };
  parallel_for(n_seeds, cfg.workers, [&](std::size_t i) {
    auto& st = states[i];
    st.seed = cfg.seeds[i];
    try {
      if (!shared) st.data = experiment_data_for_seed(cfg, cfg.seeds[i]);
      st.splits = make_splits(data_for(i), cfg, cfg.seeds[i]);
      st.rich = rich_model_for(cfg, st.splits, cfg.seeds[i]);
    } catch (const std::exception& e) {
      st.error = e.what();
    }
  });

  ExperimentResult result;
  const std::size_t n_methods = cfg.methods.size();
  result.cells.resize(n_seeds * n_methods);
  parallel_for(n_seeds * n_methods, cfg.workers, [&](std::size_t idx) {
    const std::size_t i = idx / n_methods;
    const Method m = cfg.methods[idx % n_methods];
    auto& st = states[i];
    if (!st.error.empty()) {
      result.cells[idx] = failed_cell(cfg.seeds[i], m, "seed setup failed: " + st.error);
      return;
    }
    result.cells[idx] = run_cell(m, st.splits, st.rich, cfg, cfg.seeds[i]);
    result.cells[idx].model = TransferableModel{};
  });

  json timings = json::object();
  for (std::size_t i = 0; i < n_seeds; ++i) {
    const auto& st = states[i];
    json methods = json::object();
    json failures = json::array();
    json seconds = json::object();
    for (std::size_t k = 0; k < n_methods; ++k) {
      const auto& c = result.cells[i * n_methods + k];
      methods[to_string(c.method)] = cell_json(c);
      seconds[to_string(c.method)] = c.wall_seconds;
      if (!c.ok) {
        failures.push_back(failure_text(c));
        result.failures.push_back(failure_text(c));
      }
    }
    json seed_json = {{"seed", cfg.seeds[i]}, {"methods", methods}, {"failures", failures}};
    if (st.error.empty()) {
      const auto& s = st.splits;
      seed_json["sizes"] = {{"rich_train", s.rich_train.size()}, {"rich_val", s.rich_val.size()},
                            {"rich_test", s.rich_test.size()},   {"poor_train", s.poor_train.size()},
                            {"poor_val", s.poor_val.size()},     {"poor_test", s.poor_test.size()},
                            {"paired", s.paired.size()}};
      seed_json["poor_channels"] = s.poor_channels;
      seed_json["paired_ratio"] = cfg.paired_ratio;
      seed_json["channel_policy"] = to_string(cfg.channels.policy);
    }
    const fs::path file = out_dir / "seeds" / ("seed_" + std::to_string(cfg.seeds[i]) + ".json");
    write_json_file(seed_json, file);
    result.seed_files.push_back(file);
    timings[std::to_string(cfg.seeds[i])] = seconds;
  }

  // Sweeps reuse each seed's data and rich model. Direct and rich do not
  // depend on the paired set, so their main-run results fill every ratio row.
  if (!cfg.sweep_paired_ratios.empty()) {
    std::vector<std::string> keys;
    for (double r : cfg.sweep_paired_ratios) keys.push_back(fmt(r, "%.6g"));
    const auto methods = cfg.methods;
    auto cells = run_sweep(states, keys.size(), methods, cfg.workers, [&](std::size_t i, std::size_t key) {
      return make_splits(data_for(i), cfg, cfg.seeds[i], cfg.sweep_paired_ratios[key]);
    }, [&](std::size_t i, std::size_t, Method m, const SeedSplits& splits) {
      if (m == Method::Direct || m == Method::Rich) {
        const auto pos = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), m) - methods.begin());
        return result.cells[i * n_methods + pos];
      }
      return run_cell(m, splits, states[i].rich, cfg, cfg.seeds[i]);
    });
    collect_sweep("paired_ratio", keys, methods, cells, result.failures, out_dir / "sweep_paired_ratio.csv");
  }

  if (!cfg.sweep_channel_counts.empty()) {
    std::vector<std::string> keys;
    for (std::size_t c : cfg.sweep_channel_counts) keys.push_back(std::to_string(c));
    std::vector<Method> methods;
    for (Method m : cfg.methods) {
      if (m != Method::Rich) methods.push_back(m);
    }
    auto cells = run_sweep(states, keys.size(), methods, cfg.workers, [&](std::size_t i, std::size_t key) {
      return make_splits(data_for(i), cfg, cfg.seeds[i], std::nullopt, cfg.sweep_channel_counts[key]);
    }, [&](std::size_t i, std::size_t, Method m, const SeedSplits& splits) {
      return run_cell(m, splits, states[i].rich, cfg, cfg.seeds[i]);
    });
    collect_sweep("channel_count", keys, methods, cells, result.failures, out_dir / "sweep_channel_count.csv");
  }

  write_json_file(timings, out_dir / "timings.json");
  write_json_file(to_json(cfg), out_dir / "config.json");
  result.report = report(out_dir);
  return result;
}

// ---------------------------------------------------------------------------
// Reporting

json report(const fs::path& results_dir) {
  const fs::path seeds_dir = results_dir / "seeds";
  if (!fs::is_directory(seeds_dir)) throw ValidationError("no seeds/ directory under " + results_dir.string());
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(seeds_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("seed_", 0) != 0 || entry.path().extension() != ".json") continue;
    const json j = read_json_file(entry.path());
    if (!j.contains("seed")) throw ValidationError(name + " has no seed field");
    files.emplace_back(j.at("seed").get<std::uint64_t>(), entry.path());
  }
  if (files.empty()) throw ValidationError("no per-seed results under " + seeds_dir.string());
  std::sort(files.begin(), files.end());

  struct Series {
    std::vector<double> values;
    std::vector<std::string> sources;
  };
  std::map<Method, std::map<std::string, Series>> table;
  std::map<Method, std::map<std::uint64_t, double>> roc_by_seed;
  json failures = json::array();
  for (const auto& [seed, path] : files) {
    const json j = read_json_file(path);
    const std::string source = fs::relative(path, results_dir).generic_string();
    for (const auto& item : j.at("methods").items()) {
      const Method m = parse_method(item.key());
      const json& cell = item.value();
      if (!cell.at("ok").get<bool>()) {
        failures.push_back("seed " + std::to_string(seed) + " method " + item.key() + ": " +
                           cell.at("error").get<std::string>());
        continue;
      }
      for (const char* metric : kMetricNames) {
        auto& series = table[m][metric];
        series.values.push_back(cell.at("metrics").at(metric).get<double>());
        series.sources.push_back(source);
      }
      roc_by_seed[m][seed] = cell.at("metrics").at("roc_auc").get<double>();
    }
  }

  json methods = json::array();
  json aggregate = json::object();
  for (Method m : kAllMethods) {
    if (!table.count(m)) continue;
    methods.push_back(to_string(m));
    json per_metric = json::object();
    for (const char* metric : kMetricNames) {
      const auto& s = table[m][metric];
      per_metric[metric] = {{"mean", mean_of(s.values)},
                            {"std", std_of(s.values)},
                            {"n", s.values.size()},
                            {"values", s.values},
                            {"sources", s.sources}};
    }
    per_metric["evaluated_on"] = m == Method::Rich ? "rich test split" : "poor test split";
    aggregate[to_string(m)] = per_metric;
  }

  json warnings = json::array();
  json p_values = json::object();
  if (table.count(Method::Cheer)) {
    const auto& cheer_roc = table[Method::Cheer]["roc_auc"].values;
    for (Method m : {Method::Direct, Method::KD, Method::AT}) {
      if (!table.count(m)) continue;
      const auto& other = table[m]["roc_auc"].values;
      if (cheer_roc.size() < 2 || other.size() < 2) {
        warnings.push_back("fewer than 2 seeds for cheer or " + to_string(m) + "; p-value omitted");
        continue;
      }
      try {
        const auto t = welch_t_test(cheer_roc, other);
        p_values["cheer_vs_" + to_string(m)] = {{"p", t.p_value}, {"t", t.t}, {"df", t.df}};
      } catch (const ValidationError& e) {
        warnings.push_back("cheer vs " + to_string(m) + ": " + e.what() + "; p-value omitted");
      }
    }
  }

  json seed_list = json::array();
  for (const auto& f : files) seed_list.push_back(f.first);
  json out = {{"methods", methods},
              {"aggregate", aggregate},
              {"p_values", p_values},
              {"p_value_test", "Welch one-tailed, H1: mean roc_auc(cheer) > mean roc_auc(baseline)"},
              {"std", "sample standard deviation (n - 1)"},
              {"seeds", seed_list},
              {"failures", failures},
              {"warnings", warnings}};
  write_json_file(out, results_dir / "report.json");
  write_text_file(report_table(out), results_dir / "report.txt");
  return out;
}

std::string report_table(const json& r) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-17s %-17s %-17s %-17s %s\n", "method", "accuracy", "macro_f1", "roc_auc",
                "pr_auc", "n");
  out << line;
  for (const auto& name : r.at("methods")) {
    const auto& a = r.at("aggregate").at(name.get<std::string>());
    std::string cells[4];
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
      const auto& m = a.at(kMetricNames[k]);
      cells[k] = fmt(m.at("mean").get<double>(), "%.4f") + " +- " + fmt(m.at("std").get<double>(), "%.4f");
    }
    std::snprintf(line, sizeof line, "%-8s %-17s %-17s %-17s %-17s %zu\n", name.get<std::string>().c_str(),
                  cells[0].c_str(), cells[1].c_str(), cells[2].c_str(), cells[3].c_str(),
                  a.at("roc_auc").at("n").get<std::size_t>());
    out << line;
  }
  if (!r.at("p_values").empty()) {
    out << "\none-tailed p (roc_auc, cheer > baseline)\n";
    for (const auto& item : r.at("p_values").items()) {
      out << "  " << item.key() << ": " << fmt(item.value().at("p").get<double>(), "%.4g") << '\n';
    }
  }
  for (const auto& w : r.at("warnings")) out << "warning: " << w.get<std::string>() << '\n';
  for (const auto& f : r.at("failures")) out << "failed: " << f.get<std::string>() << '\n';
  return out.str();
}

}  // namespace cheer
