#include "cheer/model.hpp"

#include <algorithm>
#include <cmath>

#include "cheer/autodiff.hpp"
#include "cheer/error.hpp"
#include "cheer/random.hpp"

namespace cheer {

std::string to_string(ScorerMode mode) {
  switch (mode) {
    case ScorerMode::RawLinear: return "raw-linear";
    case ScorerMode::RawTanh: return "raw-tanh";
    case ScorerMode::FeatureAttention: return "feature-attention";
  }
  return "raw-linear";
}

ScorerMode parse_scorer_mode(const std::string& text) {
  if (text == "raw-linear") return ScorerMode::RawLinear;
  if (text == "raw-tanh") return ScorerMode::RawTanh;
  if (text == "feature-attention") return ScorerMode::FeatureAttention;
  throw ValidationError("unknown scorer mode '" + text + "'");
}

void Architecture::validate() const {
  if (n_channels == 0 || seq_len == 0) throw ValidationError("architecture needs positive channels and length");
  if (n_classes < 2) throw ValidationError("architecture needs at least 2 classes");
  if (extractor.n_segments == 0) throw ValidationError("n_segments must be positive");
  if (extractor.rnn_hidden == 0) throw ValidationError("rnn_hidden must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("softmax temperature must be > 0");
  if (seq_len < extractor.n_segments) {
    throw ValidationError("sequence length " + std::to_string(seq_len) + " is shorter than " +
                          std::to_string(extractor.n_segments) + " segments");
  }
  std::size_t len = segment_length();
  for (std::size_t j = 0; j < extractor.conv_layers.size(); ++j) {
    const auto& layer = extractor.conv_layers[j];
    if (layer.filters == 0 || layer.kernel == 0 || layer.stride == 0) {
      throw ValidationError("conv layer " + std::to_string(j) + " has a zero size");
    }
    if (len < layer.kernel) {
      throw ValidationError("segment too short: conv layer " + std::to_string(j) + " sees length " +
                            std::to_string(len) + " but kernel is " + std::to_string(layer.kernel));
    }
    len = (len - layer.kernel) / layer.stride + 1;
  }
}

std::size_t Architecture::pooled_size() const {
  return extractor.conv_layers.empty() ? n_channels : extractor.conv_layers.back().filters;
}

std::size_t Architecture::scorer_input_size() const {
  return scorer_mode == ScorerMode::FeatureAttention ? extractor.rnn_hidden * extractor.n_segments
                                                     : n_channels * seq_len;
}

Architecture architecture_for(const Architecture& base, const Dataset& dataset) {
  Architecture arch = base;
  arch.n_channels = dataset.n_channels;
  arch.seq_len = dataset.seq_len;
  arch.n_classes = dataset.n_classes;
  arch.validate();
  return arch;
}

ParameterLayout ParameterLayout::for_architecture(const Architecture& arch) {
  arch.validate();
  ParameterLayout layout;
  auto add = [&](std::string name, Shape shape, std::size_t fan_in) {
    ParameterBlock b{std::move(name), std::move(shape), layout.total, fan_in};
    layout.total += b.size();
    layout.blocks.push_back(std::move(b));
  };
  std::size_t cin = arch.n_channels;
  for (std::size_t j = 0; j < arch.extractor.conv_layers.size(); ++j) {
    const auto& layer = arch.extractor.conv_layers[j];
    const std::string p = "conv" + std::to_string(j);
    add(p + ".w", {layer.filters, cin, layer.kernel}, cin * layer.kernel);
    add(p + ".b", {layer.filters}, cin * layer.kernel);
    cin = layer.filters;
  }
  const std::size_t d = arch.extractor.rnn_hidden;
  add("lstm.W", {4 * d, cin}, cin);
  add("lstm.U", {4 * d, d}, d);
  add("lstm.b", {4 * d}, d);
  const std::size_t in = arch.scorer_input_size();
  add("scorer.w", {d, in}, in);
  add("scorer.b", {d}, in);
  const std::size_t l = arch.extractor.n_segments;
  add("dense.w", {arch.n_classes, l}, l);
  add("dense.b", {arch.n_classes}, l);
  return layout;
}

const ParameterBlock& ParameterLayout::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ValidationError("no parameter block named '" + name + "'");
}

std::vector<double> FeatureMatrix::column(std::size_t m) const {
  std::vector<double> out(dim());
  for (std::size_t i = 0; i < dim(); ++i) out[i] = q.at(i, m);
  return out;
}

// ---------------------------------------------------------------------------

TransferableModel::TransferableModel(Architecture arch, std::vector<double> params, std::uint64_t seed)
    : arch_(std::move(arch)), layout_(ParameterLayout::for_architecture(arch_)), params_(std::move(params)), seed_(seed) {
  if (params_.size() != layout_.total) {
    throw ShapeError("model expects " + std::to_string(layout_.total) + " parameters, got " +
                     std::to_string(params_.size()));
  }
}

TransferableModel TransferableModel::create(const Architecture& arch, std::uint64_t seed) {
  ParameterLayout layout = ParameterLayout::for_architecture(arch);
  std::vector<double> params(layout.total);
  Rng rng(seed);
  for (const auto& b : layout.blocks) {
    init_uniform_fan_in(std::span(params).subspan(b.offset, b.size()), b.fan_in, rng);
  }
  return TransferableModel(arch, std::move(params), seed);
}

std::span<const double> TransferableModel::block(const std::string& name) const {
  const auto& b = layout_.block(name);
  return std::span<const double>(params_).subspan(b.offset, b.size());
}

std::span<double> TransferableModel::block(const std::string& name) {
  const auto& b = layout_.block(name);
  return std::span<double>(params_).subspan(b.offset, b.size());
}

ScorerParams TransferableModel::scorer() const {
  const auto& w = layout_.block("scorer.w");
  auto b = block("scorer.b");
  ScorerParams s;
  s.mode = arch_.scorer_mode;
  s.weights = Tensor(w.shape, std::vector<double>(params_.begin() + w.offset, params_.begin() + w.offset + w.size()));
  s.bias.assign(b.begin(), b.end());
  return s;
}

void TransferableModel::set_scorer(const ScorerParams& scorer) {
  const auto& w = layout_.block("scorer.w");
  if (scorer.mode != arch_.scorer_mode) {
    throw ValidationError("scorer mode " + to_string(scorer.mode) + " does not match model mode " +
                          to_string(arch_.scorer_mode));
  }
  if (scorer.weights.shape() != w.shape || scorer.bias.size() != arch_.extractor.rnn_hidden) {
    throw ShapeError("scorer shape " + shape_to_string(scorer.weights.shape()) + " does not match model " +
                     shape_to_string(w.shape));
  }
  std::copy(scorer.weights.storage().begin(), scorer.weights.storage().end(), params_.begin() + w.offset);
  auto b = block("scorer.b");
  std::copy(scorer.bias.begin(), scorer.bias.end(), b.begin());
}

AggregatorParams TransferableModel::aggregator() const {
  const auto& w = layout_.block("dense.w");
  auto b = block("dense.b");
  AggregatorParams a;
  a.weights = Tensor(w.shape, std::vector<double>(params_.begin() + w.offset, params_.begin() + w.offset + w.size()));
  a.bias.assign(b.begin(), b.end());
  a.temperature = arch_.temperature;
  return a;
}

void TransferableModel::set_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("softmax temperature must be > 0");
  arch_.temperature = temperature;
}

ParamRange TransferableModel::scorer_range() const {
  const auto& w = layout_.block("scorer.w");
  const auto& b = layout_.block("scorer.b");
  return {w.offset, b.offset + b.size()};
}

std::vector<ParamRange> TransferableModel::extractor_aggregator_ranges() const {
  const ParamRange s = scorer_range();
  return {{0, s.begin}, {s.end, params_.size()}};
}

// ---------------------------------------------------------------------------
// Graph

std::vector<NodeId> build_forward_graph(ExprGraph& g, const Architecture& arch, ProgramOptions options) {
  const ParameterLayout layout = ParameterLayout::for_architecture(arch);
  std::map<std::string, NodeId> p;
  for (const auto& b : layout.blocks) p[b.name] = g.input(b.name, b.shape);
  const NodeId x = g.input("x", {arch.n_channels, arch.seq_len});
  const std::size_t d = arch.extractor.rnn_hidden;
  const std::size_t l = arch.extractor.n_segments;
  const std::size_t seg = arch.segment_length();

  NodeId h = g.zeros({d});
  NodeId c = g.zeros({d});
  std::vector<NodeId> columns;
  for (std::size_t m = 0; m < l; ++m) {
    NodeId s = g.slice_cols(x, m * seg, (m + 1) * seg);
    for (std::size_t j = 0; j < arch.extractor.conv_layers.size(); ++j) {
      const std::string name = "conv" + std::to_string(j);
      s = g.relu(g.conv1d(s, p[name + ".w"], p[name + ".b"], arch.extractor.conv_layers[j].stride));
    }
    const NodeId pooled = g.mean_pool_time(s);
    const NodeId state = g.lstm_cell(pooled, h, c, p["lstm.W"], p["lstm.U"], p["lstm.b"]);
    h = g.row(state, 0);
    c = g.row(state, 1);
    columns.push_back(h);
  }
  const NodeId q = g.stack_cols(columns);

  NodeId a;
  if (arch.scorer_mode == ScorerMode::FeatureAttention) {
    a = g.tanh(g.add(g.matvec(p["scorer.w"], g.flatten(q)), p["scorer.b"]));
  } else {
    a = g.add(g.matvec(p["scorer.w"], g.flatten(x)), p["scorer.b"]);
    if (arch.scorer_mode == ScorerMode::RawTanh) a = g.tanh(a);
  }
  const NodeId z = g.matTvec(q, a);
  const NodeId logits = g.add(g.matvec(p["dense.w"], z), p["dense.b"]);
  const NodeId probs = g.softmax(logits, arch.temperature);

  const NodeId target = g.input("target", {arch.n_classes});
  const NodeId att_target = g.input("att_target", {d});
  const NodeId ce = g.scale(g.dot(target, g.log_softmax(logits, arch.temperature)), -1.0);
  const NodeId gap = g.sum(g.square(g.sub(probs, target)));
  const NodeId fit = g.square(g.affine(g.dot(target, probs), -1.0, 1.0));
  const NodeId kd = g.scale(g.dot(target, g.log_softmax(logits, options.distill_temperature)), -1.0);
  const NodeId att = g.sum(g.square(g.sub(g.l2_normalize(a), att_target)));

  std::vector<NodeId> out{q, a, logits, probs, ce, gap, fit, kd, att};
  const char* names[] = {"features", "scores", "logits", "probs", "cross_entropy",
                         "squared_gap", "poor_fit", "distill_ce", "attention_gap"};
  for (std::size_t i = 0; i < out.size(); ++i) g.set_output(names[i], out[i]);
  return out;
}

ModelProgram::ModelProgram(const Architecture& arch, ProgramOptions options)
    : arch_(arch), layout_(ParameterLayout::for_architecture(arch)), graph_(std::make_unique<ExprGraph>()) {
  if (!(options.distill_temperature > 0.0)) throw ValidationError("distill temperature must be > 0");
  outputs_ = build_forward_graph(*graph_, arch_, options);
  exec_ = std::make_unique<Executor>(*graph_);
  for (const auto& b : layout_.blocks) param_nodes_.push_back(*graph_->find_input(b.name));
  x_ = *graph_->find_input("x");
  target_ = *graph_->find_input("target");
  att_target_ = *graph_->find_input("att_target");
  exec_->bind(target_, std::vector<double>(arch_.n_classes, 0.0));
  exec_->bind(att_target_, std::vector<double>(arch_.extractor.rnn_hidden, 0.0));
}

void ModelProgram::set_params(std::span<const double> params) {
  if (params.size() != layout_.total) {
    throw ShapeError("program expects " + std::to_string(layout_.total) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout_.blocks.size(); ++i) {
    const auto& b = layout_.blocks[i];
    exec_->bind(param_nodes_[i], params.subspan(b.offset, b.size()));
  }
}

void ModelProgram::set_sample(const TimeSeriesSample& sample) {
  check_sample(sample, arch_);
  exec_->bind(x_, sample.values);
}

void ModelProgram::set_sample(std::span<const double> values) { exec_->bind(x_, values); }

void ModelProgram::set_target(std::span<const double> target) { exec_->bind(target_, target); }

void ModelProgram::set_attention_target(std::span<const double> target) { exec_->bind(att_target_, target); }

NodeId ModelProgram::node(ModelOutput output) const { return outputs_[static_cast<std::size_t>(output)]; }

std::span<const double> ModelProgram::run(ModelOutput output) {
  const NodeId n = node(output);
  exec_->forward(n);
  return exec_->value(n);
}

double ModelProgram::accumulate(ModelOutput loss, std::span<double> grad, double scale) {
  const NodeId n = node(loss);
  exec_->forward(n);
  const double value = exec_->value(n)[0];
  exec_->backward(n);
  for (std::size_t i = 0; i < layout_.blocks.size(); ++i) {
    const auto& b = layout_.blocks[i];
    const auto g = exec_->grad(param_nodes_[i]);
    double* dst = grad.data() + b.offset;
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += scale * g[k];
  }
  return value;
}

// ---------------------------------------------------------------------------
// Single-sample and batch inference

void check_sample(const TimeSeriesSample& sample, const Architecture& arch) {
  if (sample.n_channels != arch.n_channels || sample.seq_len != arch.seq_len ||
      sample.values.size() != arch.n_channels * arch.seq_len) {
    throw ShapeError("sample " + std::to_string(sample.id) + " is " + std::to_string(sample.n_channels) + "x" +
                     std::to_string(sample.seq_len) + " but the model expects " + std::to_string(arch.n_channels) +
                     "x" + std::to_string(arch.seq_len));
  }
}

namespace {

ModelProgram& bound_program(std::unique_ptr<ModelProgram>& slot, const TransferableModel& model) {
  slot = std::make_unique<ModelProgram>(model.arch());
  slot->set_params(model.params());
  return *slot;
}

template <class F>
auto for_each_sample(const Dataset& dataset, const TransferableModel& model, ModelOutput output, F&& convert) {
  std::unique_ptr<ModelProgram> slot;
  ModelProgram& prog = bound_program(slot, model);
  std::vector<decltype(convert(std::span<const double>{}))> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    prog.set_sample(s);
    out.push_back(convert(prog.run(output)));
  }
  return out;
}

std::vector<double> to_vec(std::span<const double> v) { return {v.begin(), v.end()}; }

}  // namespace

FeatureMatrix extract_features(const TimeSeriesSample& sample, const TransferableModel& model) {
  std::unique_ptr<ModelProgram> slot;
  ModelProgram& prog = bound_program(slot, model);
  prog.set_sample(sample);
  const auto v = prog.run(ModelOutput::Features);
  const auto& a = model.arch();
  return FeatureMatrix{Tensor({a.extractor.rnn_hidden, a.extractor.n_segments}, to_vec(v))};
}

std::vector<double> score_features(const TimeSeriesSample& sample, const FeatureMatrix& q,
                                   const TransferableModel& model) {
  const auto& arch = model.arch();
  check_sample(sample, arch);
  const auto w = model.block("scorer.w");
  const auto b = model.block("scorer.b");
  const std::size_t d = arch.extractor.rnn_hidden;
  std::span<const double> input;
  if (arch.scorer_mode == ScorerMode::FeatureAttention) {
    if (q.q.shape() != Shape{d, arch.extractor.n_segments}) {
      throw ShapeError("feature matrix " + shape_to_string(q.q.shape()) + " does not match the model");
    }
    input = q.q.values();
  } else {
    input = sample.values;
  }
  const std::size_t n = input.size();
  std::vector<double> a(d);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * input[j];
    a[i] = acc + b[i];
    if (arch.scorer_mode != ScorerMode::RawLinear) a[i] = std::tanh(a[i]);
  }
  return a;
}

std::vector<double> predict_proba(const TimeSeriesSample& sample, const TransferableModel& model) {
  std::unique_ptr<ModelProgram> slot;
  ModelProgram& prog = bound_program(slot, model);
  prog.set_sample(sample);
  return to_vec(prog.run(ModelOutput::Probs));
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ValidationError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t predict(const TimeSeriesSample& sample, const TransferableModel& model) {
  return argmax(predict_proba(sample, model));
}

std::vector<std::vector<double>> predict_proba(const Dataset& dataset, const TransferableModel& model) {
  return for_each_sample(dataset, model, ModelOutput::Probs, to_vec);
}

std::vector<std::vector<double>> scores(const Dataset& dataset, const TransferableModel& model) {
  return for_each_sample(dataset, model, ModelOutput::Scores, to_vec);
}

std::vector<std::size_t> predict(const Dataset& dataset, const TransferableModel& model) {
  return for_each_sample(dataset, model, ModelOutput::Probs, [](std::span<const double> v) { return argmax(v); });
}

}  // namespace cheer
