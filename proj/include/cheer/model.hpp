#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cheer/data.hpp"
#include "cheer/graph.hpp"
#include "cheer/tensor.hpp"

namespace cheer {

struct ConvLayerSpec {
  std::size_t filters = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

struct ExtractorConfig {
  std::size_t n_segments = 4;
  std::vector<ConvLayerSpec> conv_layers{{8, 3, 1}, {8, 3, 1}};
  std::size_t rnn_hidden = 8;

  friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

enum class ScorerMode { RawLinear, RawTanh, FeatureAttention };

std::string to_string(ScorerMode mode);
ScorerMode parse_scorer_mode(const std::string& text);

struct Architecture {
  std::size_t n_channels = 1;
  std::size_t seq_len = 1;
  std::size_t n_classes = 2;
  ExtractorConfig extractor;
  ScorerMode scorer_mode = ScorerMode::RawLinear;
  double temperature = 1.0;

  /// Throws ValidationError when segments are too short for the conv stack,
  /// or any size is zero.
  void validate() const;

  std::size_t segment_length() const { return seq_len / extractor.n_segments; }
  std::size_t feature_dim() const { return extractor.rnn_hidden; }
  std::size_t scorer_input_size() const;
  std::size_t pooled_size() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Copy of `base` adapted to a dataset's channel count, length and classes.
Architecture architecture_for(const Architecture& base, const Dataset& dataset);

/// One named parameter block inside the flat parameter vector.
struct ParameterBlock {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t fan_in = 1;

  std::size_t size() const { return shape_size(shape); }
};

/// Fixed order: conv layers (w, b) in order, lstm W, U, b, scorer w [d, in],
/// scorer b [d], dense w [c, l], dense b [c].
struct ParameterLayout {
  std::vector<ParameterBlock> blocks;
  std::size_t total = 0;

  static ParameterLayout for_architecture(const Architecture& arch);
  const ParameterBlock& block(const std::string& name) const;
};

/// Contiguous [begin, end) slice of the flat parameter vector.
struct ParamRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct FeatureMatrix {
  Tensor q;  // [d, l]

  std::size_t dim() const { return q.shape()[0]; }
  std::size_t segments() const { return q.shape()[1]; }
  std::vector<double> column(std::size_t m) const;
};

/// Scorer heads: head i owns row i of `weights` and bias[i].
struct ScorerParams {
  ScorerMode mode = ScorerMode::RawLinear;
  Tensor weights;  // [d, in]
  std::vector<double> bias;

  std::size_t heads() const { return bias.size(); }
  std::size_t input_size() const { return weights.shape().at(1); }
  friend bool operator==(const ScorerParams&, const ScorerParams&) = default;
};

struct AggregatorParams {
  Tensor weights;  // [c, l]
  std::vector<double> bias;
  double temperature = 1.0;
};

class TransferableModel {
 public:
  TransferableModel() = default;
  TransferableModel(Architecture arch, std::vector<double> params, std::uint64_t seed = 0);

  /// Fan-in uniform initialization from `seed`.
  static TransferableModel create(const Architecture& arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  const ParameterLayout& layout() const { return layout_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  std::span<const double> block(const std::string& name) const;
  std::span<double> block(const std::string& name);

  ScorerParams scorer() const;
  void set_scorer(const ScorerParams& scorer);
  AggregatorParams aggregator() const;
  void set_temperature(double temperature);

  /// Extractor (conv + lstm) and aggregator (dense) slices.
  std::vector<ParamRange> extractor_aggregator_ranges() const;
  ParamRange scorer_range() const;
  ParamRange all_range() const { return {0, params_.size()}; }

  friend bool operator==(const TransferableModel& a, const TransferableModel& b) {
    return a.arch_ == b.arch_ && a.params_ == b.params_;
  }

 private:
  Architecture arch_;
  ParameterLayout layout_;
  std::vector<double> params_;
  std::uint64_t seed_ = 0;
};

/// Named scalar and vector nodes of the per-sample program.
enum class ModelOutput {
  Features,      // Q [d, l]
  Scores,        // a [d]
  Logits,        // g [c]
  Probs,         // softmax(g / tau)
  CrossEntropy,  // -<target, log softmax(g / tau)>
  SquaredGap,    // sum_y (target_y - S_y)^2
  PoorFit,       // (1 - <target, S>)^2 with one-hot target
  DistillCE,     // -<target, log softmax(g / distill_temperature)>
  AttentionGap,  // || a / |a| - attention_target ||^2
};

struct ProgramOptions {
  double distill_temperature = 5.0;
};

/// Reusable single-sample forward/backward program for one architecture.
/// Parameters are bound once per update with set_params; samples and targets
/// are rebound per sample.
class ModelProgram {
 public:
  explicit ModelProgram(const Architecture& arch, ProgramOptions options = {});
  ModelProgram(const ModelProgram&) = delete;
  ModelProgram& operator=(const ModelProgram&) = delete;

  const Architecture& arch() const { return arch_; }
  const ExprGraph& graph() const { return *graph_; }

  void set_params(std::span<const double> params);
  void set_sample(const TimeSeriesSample& sample);
  void set_sample(std::span<const double> values);
  void set_target(std::span<const double> target);
  void set_attention_target(std::span<const double> target);

  /// Forward pass to `output`; returns its values.
  std::span<const double> run(ModelOutput output);
  /// Forward and backward from a scalar loss; adds scale * dLoss/dParams to
  /// `grad` (flat layout order) and returns the loss.
  double accumulate(ModelOutput loss, std::span<double> grad, double scale);

  NodeId node(ModelOutput output) const;

 private:
  Architecture arch_;
  ParameterLayout layout_;
  std::unique_ptr<ExprGraph> graph_;
  std::unique_ptr<Executor> exec_;
  NodeId x_;
  NodeId target_;
  NodeId att_target_;
  std::vector<NodeId> param_nodes_;
  std::vector<NodeId> outputs_;
  std::vector<double> onehot_;
};

/// Builds the forward graph with parameter inputs named after the layout
/// blocks and a sample input "x"; returns node ids indexed by ModelOutput.
std::vector<NodeId> build_forward_graph(ExprGraph& graph, const Architecture& arch, ProgramOptions options = {});

FeatureMatrix extract_features(const TimeSeriesSample& sample, const TransferableModel& model);
std::vector<double> score_features(const TimeSeriesSample& sample, const FeatureMatrix& q,
                                   const TransferableModel& model);
std::vector<double> predict_proba(const TimeSeriesSample& sample, const TransferableModel& model);
std::size_t predict(const TimeSeriesSample& sample, const TransferableModel& model);

/// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

/// Batch helpers that reuse one program across the dataset.
std::vector<std::vector<double>> predict_proba(const Dataset& dataset, const TransferableModel& model);
std::vector<std::vector<double>> scores(const Dataset& dataset, const TransferableModel& model);
std::vector<std::size_t> predict(const Dataset& dataset, const TransferableModel& model);

/// Checks the sample matches the model input spec. Throws ShapeError.
void check_sample(const TimeSeriesSample& sample, const Architecture& arch);

// Checkpoints: <dir>/model.json + <dir>/params.bin (little-endian float64).
void save_checkpoint(const TransferableModel& model, const std::filesystem::path& dir);
TransferableModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace cheer
