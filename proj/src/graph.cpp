#include "cheer/graph.hpp"

#include <algorithm>
#include <cmath>

#include "cheer/error.hpp"

namespace cheer {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Affine: return "affine";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Square: return "square";
    case OpKind::Log: return "log";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Dot: return "dot";
    case OpKind::MatVec: return "matvec";
    case OpKind::MatTVec: return "matTvec";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::MeanPoolTime: return "mean_pool_time";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::Reshape: return "reshape";
    case OpKind::StackCols: return "stack_cols";
    case OpKind::LstmCell: return "lstm_cell";
    case OpKind::Row: return "row";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Pick: return "pick";
    case OpKind::L2Normalize: return "l2_normalize";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Construction

std::string ExprGraph::describe(NodeId node) const {
  const Node& n = nodes_.at(node.index);
  std::string label = "#" + std::to_string(node.index) + " " + std::string(op_name(n.kind));
  if (!n.name.empty()) label += " '" + n.name + "'";
  return label;
}

void ExprGraph::check_ref(NodeId ref) const {
  if (ref.index >= nodes_.size()) {
    throw ValidationError("node reference #" + std::to_string(ref.index) + " does not exist");
  }
}

NodeId ExprGraph::push(Node node) {
  for (std::uint32_t in : node.inputs) check_ref(NodeId{in});
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

namespace {

[[noreturn]] void shape_fail(const ExprGraph& g, OpKind kind, const std::string& detail) {
  throw ShapeError("shape mismatch at node #" + std::to_string(g.size()) + " " + std::string(op_name(kind)) + ": " +
                   detail);
}

std::string dims(const ExprGraph& g, NodeId n) { return shape_to_string(g.shape(n)); }

}  // namespace

NodeId ExprGraph::input(std::string name, Shape shape) {
  if (find_input(name)) throw ValidationError("duplicate input name '" + name + "'");
  Tensor probe(shape);  // validates positivity
  Node node;
  node.kind = OpKind::Input;
  node.shape = std::move(shape);
  node.name = std::move(name);
  NodeId id = push(std::move(node));
  inputs_.push_back(id);
  return id;
}

NodeId ExprGraph::constant(Tensor value) {
  Node node;
  node.kind = OpKind::Constant;
  node.shape = value.shape();
  node.constant = std::move(value.storage());
  return push(std::move(node));
}

namespace {

Node unary(OpKind kind, NodeId x, const Shape& shape) {
  Node node;
  node.kind = kind;
  node.inputs = {x.index};
  node.shape = shape;
  return node;
}

}  // namespace

NodeId ExprGraph::add(NodeId a, NodeId b) {
  check_ref(a);
  check_ref(b);
  if (shape(a) != shape(b)) shape_fail(*this, OpKind::Add, dims(*this, a) + " vs " + dims(*this, b));
  Node node = unary(OpKind::Add, a, shape(a));
  node.inputs.push_back(b.index);
  return push(std::move(node));
}

NodeId ExprGraph::sub(NodeId a, NodeId b) {
  check_ref(a);
  check_ref(b);
  if (shape(a) != shape(b)) shape_fail(*this, OpKind::Sub, dims(*this, a) + " vs " + dims(*this, b));
  Node node = unary(OpKind::Sub, a, shape(a));
  node.inputs.push_back(b.index);
  return push(std::move(node));
}

NodeId ExprGraph::mul(NodeId a, NodeId b) {
  check_ref(a);
  check_ref(b);
  if (shape(a) != shape(b)) shape_fail(*this, OpKind::Mul, dims(*this, a) + " vs " + dims(*this, b));
  Node node = unary(OpKind::Mul, a, shape(a));
  node.inputs.push_back(b.index);
  return push(std::move(node));
}

NodeId ExprGraph::affine(NodeId x, double scale, double shift) {
  check_ref(x);
  Node node = unary(OpKind::Affine, x, shape(x));
  node.real_a = scale;
  node.real_b = shift;
  return push(std::move(node));
}

NodeId ExprGraph::relu(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Relu, x, shape(x)));
}

NodeId ExprGraph::tanh(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Tanh, x, shape(x)));
}

NodeId ExprGraph::sigmoid(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Sigmoid, x, shape(x)));
}

NodeId ExprGraph::square(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Square, x, shape(x)));
}

NodeId ExprGraph::log(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Log, x, shape(x)));
}

NodeId ExprGraph::sum(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Sum, x, {1}));
}

NodeId ExprGraph::mean(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::Mean, x, {1}));
}

NodeId ExprGraph::dot(NodeId a, NodeId b) {
  check_ref(a);
  check_ref(b);
  if (shape_size(shape(a)) != shape_size(shape(b))) {
    shape_fail(*this, OpKind::Dot, dims(*this, a) + " vs " + dims(*this, b));
  }
  Node node = unary(OpKind::Dot, a, {1});
  node.inputs.push_back(b.index);
  return push(std::move(node));
}

NodeId ExprGraph::matvec(NodeId w, NodeId x) {
  check_ref(w);
  check_ref(x);
  const Shape& ws = shape(w);
  const Shape& xs = shape(x);
  if (ws.size() != 2 || xs.size() != 1 || ws[1] != xs[0]) {
    shape_fail(*this, OpKind::MatVec, "W" + dims(*this, w) + " x" + dims(*this, x));
  }
  Node node = unary(OpKind::MatVec, w, {ws[0]});
  node.inputs.push_back(x.index);
  return push(std::move(node));
}

NodeId ExprGraph::matTvec(NodeId q, NodeId a) {
  check_ref(q);
  check_ref(a);
  const Shape& qs = shape(q);
  const Shape& as = shape(a);
  if (qs.size() != 2 || as.size() != 1 || qs[0] != as[0]) {
    shape_fail(*this, OpKind::MatTVec, "Q" + dims(*this, q) + " a" + dims(*this, a));
  }
  Node node = unary(OpKind::MatTVec, q, {qs[1]});
  node.inputs.push_back(a.index);
  return push(std::move(node));
}

NodeId ExprGraph::conv1d(NodeId x, NodeId w, NodeId b, std::size_t stride) {
  check_ref(x);
  check_ref(w);
  check_ref(b);
  const Shape& xs = shape(x);
  const Shape& ws = shape(w);
  const Shape& bs = shape(b);
  if (stride == 0) shape_fail(*this, OpKind::Conv1d, "stride must be positive");
  if (xs.size() != 2 || ws.size() != 3 || bs.size() != 1 || ws[1] != xs[0] || bs[0] != ws[0]) {
    shape_fail(*this, OpKind::Conv1d, "x" + dims(*this, x) + " w" + dims(*this, w) + " b" + dims(*this, b));
  }
  if (xs[1] < ws[2]) {
    shape_fail(*this, OpKind::Conv1d,
               "signal length " + std::to_string(xs[1]) + " shorter than kernel " + std::to_string(ws[2]));
  }
  Node node = unary(OpKind::Conv1d, x, {ws[0], (xs[1] - ws[2]) / stride + 1});
  node.inputs.push_back(w.index);
  node.inputs.push_back(b.index);
  node.int_a = stride;
  return push(std::move(node));
}

NodeId ExprGraph::mean_pool_time(NodeId x) {
  check_ref(x);
  if (shape(x).size() != 2) shape_fail(*this, OpKind::MeanPoolTime, "expected [C,L], got " + dims(*this, x));
  return push(unary(OpKind::MeanPoolTime, x, {shape(x)[0]}));
}

NodeId ExprGraph::slice_cols(NodeId x, std::size_t begin, std::size_t end) {
  check_ref(x);
  const Shape& xs = shape(x);
  if (xs.size() != 2 || begin >= end || end > xs[1]) {
    shape_fail(*this, OpKind::SliceCols,
               "cannot slice columns [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + dims(*this, x));
  }
  Node node = unary(OpKind::SliceCols, x, {xs[0], end - begin});
  node.int_a = begin;
  node.int_b = end;
  return push(std::move(node));
}

NodeId ExprGraph::reshape(NodeId x, Shape new_shape) {
  check_ref(x);
  if (new_shape.empty() || shape_size(new_shape) != shape_size(shape(x))) {
    shape_fail(*this, OpKind::Reshape, dims(*this, x) + " -> " + shape_to_string(new_shape));
  }
  return push(unary(OpKind::Reshape, x, new_shape));
}

NodeId ExprGraph::stack_cols(std::span<const NodeId> columns) {
  if (columns.empty()) shape_fail(*this, OpKind::StackCols, "no columns");
  Node node;
  node.kind = OpKind::StackCols;
  const std::size_t d = shape_size(shape(columns[0]));
  for (NodeId c : columns) {
    check_ref(c);
    if (shape(c).size() != 1 || shape(c)[0] != d) {
      shape_fail(*this, OpKind::StackCols, "column " + dims(*this, c) + " expected [" + std::to_string(d) + "]");
    }
    node.inputs.push_back(c.index);
  }
  node.shape = {d, columns.size()};
  return push(std::move(node));
}

NodeId ExprGraph::lstm_cell(NodeId x, NodeId h, NodeId c, NodeId w, NodeId u, NodeId b) {
  for (NodeId n : {x, h, c, w, u, b}) check_ref(n);
  const Shape& xs = shape(x);
  const Shape& hs = shape(h);
  const Shape& cs = shape(c);
  const Shape& ws = shape(w);
  const Shape& us = shape(u);
  const Shape& bs = shape(b);
  const bool ok = xs.size() == 1 && hs.size() == 1 && cs == hs && ws.size() == 2 && us.size() == 2 &&
                  bs.size() == 1 && ws[0] == 4 * hs[0] && ws[1] == xs[0] && us[0] == 4 * hs[0] &&
                  us[1] == hs[0] && bs[0] == 4 * hs[0];
  if (!ok) {
    shape_fail(*this, OpKind::LstmCell,
               "x" + dims(*this, x) + " h" + dims(*this, h) + " c" + dims(*this, c) + " W" + dims(*this, w) + " U" +
                   dims(*this, u) + " b" + dims(*this, b));
  }
  Node node;
  node.kind = OpKind::LstmCell;
  node.inputs = {x.index, h.index, c.index, w.index, u.index, b.index};
  node.shape = {2, hs[0]};
  return push(std::move(node));
}

NodeId ExprGraph::row(NodeId x, std::size_t r) {
  check_ref(x);
  const Shape& xs = shape(x);
  if (xs.size() != 2 || r >= xs[0]) shape_fail(*this, OpKind::Row, "row " + std::to_string(r) + " of " + dims(*this, x));
  Node node = unary(OpKind::Row, x, {xs[1]});
  node.int_a = r;
  return push(std::move(node));
}

NodeId ExprGraph::softmax(NodeId x, double temperature) {
  check_ref(x);
  if (!(temperature > 0.0)) shape_fail(*this, OpKind::Softmax, "temperature must be positive");
  if (shape(x).size() != 1) shape_fail(*this, OpKind::Softmax, "expected a vector, got " + dims(*this, x));
  Node node = unary(OpKind::Softmax, x, shape(x));
  node.real_a = temperature;
  return push(std::move(node));
}

NodeId ExprGraph::log_softmax(NodeId x, double temperature) {
  check_ref(x);
  if (!(temperature > 0.0)) shape_fail(*this, OpKind::LogSoftmax, "temperature must be positive");
  if (shape(x).size() != 1) shape_fail(*this, OpKind::LogSoftmax, "expected a vector, got " + dims(*this, x));
  Node node = unary(OpKind::LogSoftmax, x, shape(x));
  node.real_a = temperature;
  return push(std::move(node));
}

NodeId ExprGraph::pick(NodeId x, std::size_t index) {
  check_ref(x);
  if (index >= shape_size(shape(x))) {
    shape_fail(*this, OpKind::Pick, "index " + std::to_string(index) + " outside " + dims(*this, x));
  }
  Node node = unary(OpKind::Pick, x, {1});
  node.int_a = index;
  return push(std::move(node));
}

NodeId ExprGraph::l2_normalize(NodeId x) {
  check_ref(x);
  return push(unary(OpKind::L2Normalize, x, shape(x)));
}

void ExprGraph::set_output(std::string name, NodeId node) {
  check_ref(node);
  outputs_[std::move(name)] = node;
}

std::optional<NodeId> ExprGraph::find_input(std::string_view name) const {
  for (NodeId id : inputs_) {
    if (nodes_[id.index].name == name) return id;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Execution

Executor::Executor(const ExprGraph& graph) : graph_(&graph) {
  const std::size_t n = graph.size();
  values_.resize(n);
  grads_.resize(n);
  aux_.resize(n);
  bound_.assign(n, false);
  computed_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = graph.nodes()[i];
    values_[i].assign(shape_size(node.shape), 0.0);
    grads_[i].assign(values_[i].size(), 0.0);
    if (node.kind == OpKind::Constant) values_[i] = node.constant;
    if (node.kind == OpKind::LstmCell) aux_[i].assign(4 * node.shape[1] + node.shape[1], 0.0);
  }
}

void Executor::bind(NodeId input, std::span<const double> values) {
  const Node& node = graph_->node(input);
  if (node.kind != OpKind::Input) throw ValidationError(graph_->describe(input) + " is not an input");
  if (values.size() != values_[input.index].size()) {
    throw ShapeError("binding for input '" + node.name + "' has " + std::to_string(values.size()) +
                     " values, expected shape " + shape_to_string(node.shape));
  }
  std::copy(values.begin(), values.end(), values_[input.index].begin());
  bound_[input.index] = true;
}

void Executor::bind(std::string_view name, const Tensor& value) {
  auto id = graph_->find_input(name);
  if (!id) throw UnboundInputError("graph has no input named '" + std::string(name) + "'");
  const Node& node = graph_->node(*id);
  if (value.shape() != node.shape) {
    throw ShapeError("binding for input '" + node.name + "' has shape " + shape_to_string(value.shape()) +
                     ", expected " + shape_to_string(node.shape));
  }
  bind(*id, value.values());
}

Tensor Executor::tensor(NodeId node) const { return Tensor(graph_->shape(node), values_[node.index]); }

const std::vector<char>& Executor::ancestors(NodeId target) {
  auto it = ancestor_cache_.find(target.index);
  if (it != ancestor_cache_.end()) return it->second;
  std::vector<char> mask(graph_->size(), 0);
  mask[target.index] = 1;
  for (std::size_t i = target.index + 1; i-- > 0;) {
    if (!mask[i]) continue;
    for (std::uint32_t in : graph_->nodes()[i].inputs) mask[in] = 1;
  }
  return ancestor_cache_.emplace(target.index, std::move(mask)).first->second;
}

void Executor::forward() {
  for (std::size_t i = 0; i < graph_->size(); ++i) compute(i);
  std::fill(computed_.begin(), computed_.end(), 1);
}

void Executor::forward(NodeId target) {
  if (target.index >= graph_->size()) throw ValidationError("forward target does not exist");
  const auto& mask = ancestors(target);
  for (std::size_t i = 0; i <= target.index; ++i) {
    if (mask[i]) compute(i);
    computed_[i] = mask[i];
  }
  for (std::size_t i = target.index + 1; i < graph_->size(); ++i) computed_[i] = 0;
}

namespace {

inline double sigmoid_fn(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void Executor::compute(std::size_t index) {
  const Node& node = graph_->nodes()[index];
  std::vector<double>& out = values_[index];
  auto in = [&](std::size_t k) -> const std::vector<double>& { return values_[node.inputs[k]]; };
  auto in_shape = [&](std::size_t k) -> const Shape& { return graph_->nodes()[node.inputs[k]].shape; };

  switch (node.kind) {
    case OpKind::Input:
      if (!bound_[index]) throw UnboundInputError("input '" + node.name + "' is not bound");
      return;  // bound values already validated
    case OpKind::Constant:
      return;
    case OpKind::Add: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
      break;
    }
    case OpKind::Sub: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
      break;
    }
    case OpKind::Mul: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
      break;
    }
    case OpKind::Affine: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = node.real_a * a[i] + node.real_b;
      break;
    }
    case OpKind::Relu: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
      break;
    }
    case OpKind::Tanh: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
      break;
    }
    case OpKind::Sigmoid: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_fn(a[i]);
      break;
    }
    case OpKind::Square: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
      break;
    }
    case OpKind::Log: {
      const auto& a = in(0);
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a[i] > 0.0)) throw NonFiniteError("log of non-positive value at " + graph_->describe(NodeId{uint32_t(index)}));
        out[i] = std::log(a[i]);
      }
      break;
    }
    case OpKind::Sum: {
      double s = 0.0;
      for (double v : in(0)) s += v;
      out[0] = s;
      break;
    }
    case OpKind::Mean: {
      double s = 0.0;
      for (double v : in(0)) s += v;
      out[0] = s / static_cast<double>(in(0).size());
      break;
    }
    case OpKind::Dot: {
      const auto& a = in(0);
      const auto& b = in(1);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
      out[0] = s;
      break;
    }
    case OpKind::MatVec: {
      const auto& w = in(0);
      const auto& x = in(1);
      const std::size_t m = out.size();
      const std::size_t n = x.size();
      for (std::size_t r = 0; r < m; ++r) {
        const double* wr = w.data() + r * n;
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += wr[c] * x[c];
        out[r] = s;
      }
      break;
    }
    case OpKind::MatTVec: {
      const auto& q = in(0);
      const auto& a = in(1);
      const std::size_t d = a.size();
      const std::size_t l = out.size();
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        const double* qi = q.data() + i * l;
        for (std::size_t m = 0; m < l; ++m) out[m] += qi[m] * a[i];
      }
      break;
    }
    case OpKind::Conv1d: {
      const auto& x = in(0);
      const auto& w = in(1);
      const auto& b = in(2);
      const std::size_t cin = in_shape(0)[0];
      const std::size_t len = in_shape(0)[1];
      const std::size_t cout = node.shape[0];
      const std::size_t lout = node.shape[1];
      const std::size_t k = in_shape(1)[2];
      const std::size_t stride = node.int_a;
      for (std::size_t o = 0; o < cout; ++o) {
        double* yo = out.data() + o * lout;
        for (std::size_t t = 0; t < lout; ++t) yo[t] = b[o];
        for (std::size_t c = 0; c < cin; ++c) {
          const double* xc = x.data() + c * len;
          const double* wk = w.data() + (o * cin + c) * k;
          for (std::size_t t = 0; t < lout; ++t) {
            const double* xt = xc + t * stride;
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += wk[j] * xt[j];
            yo[t] += s;
          }
        }
      }
      break;
    }
    case OpKind::MeanPoolTime: {
      const auto& x = in(0);
      const std::size_t c = in_shape(0)[0];
      const std::size_t len = in_shape(0)[1];
      for (std::size_t r = 0; r < c; ++r) {
        double s = 0.0;
        for (std::size_t t = 0; t < len; ++t) s += x[r * len + t];
        out[r] = s / static_cast<double>(len);
      }
      break;
    }
    case OpKind::SliceCols: {
      const auto& x = in(0);
      const std::size_t rows = node.shape[0];
      const std::size_t width = node.shape[1];
      const std::size_t len = in_shape(0)[1];
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data() + r * len + node.int_a, width, out.data() + r * width);
      }
      break;
    }
    case OpKind::Reshape:
      std::copy(in(0).begin(), in(0).end(), out.begin());
      break;
    case OpKind::StackCols: {
      const std::size_t d = node.shape[0];
      const std::size_t l = node.shape[1];
      for (std::size_t m = 0; m < l; ++m) {
        const auto& col = in(m);
        for (std::size_t i = 0; i < d; ++i) out[i * l + m] = col[i];
      }
      break;
    }
    case OpKind::LstmCell: {
      const auto& x = in(0);
      const auto& h = in(1);
      const auto& c = in(2);
      const auto& w = in(3);
      const auto& u = in(4);
      const auto& b = in(5);
      const std::size_t d = h.size();
      const std::size_t n = x.size();
      std::vector<double>& gates = aux_[index];  // [i f g o] activations, then tanh(c')
      for (std::size_t r = 0; r < 4 * d; ++r) {
        double z = b[r];
        const double* wr = w.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) z += wr[j] * x[j];
        const double* ur = u.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) z += ur[j] * h[j];
        gates[r] = (r >= 2 * d && r < 3 * d) ? std::tanh(z) : sigmoid_fn(z);
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double ig = gates[j];
        const double fg = gates[d + j];
        const double gg = gates[2 * d + j];
        const double og = gates[3 * d + j];
        const double cn = fg * c[j] + ig * gg;
        const double tc = std::tanh(cn);
        gates[4 * d + j] = tc;
        out[j] = og * tc;
        out[d + j] = cn;
      }
      break;
    }
    case OpKind::Row: {
      const std::size_t width = node.shape[0];
      std::copy_n(in(0).data() + node.int_a * width, width, out.data());
      break;
    }
    case OpKind::Softmax:
    case OpKind::LogSoftmax: {
      const auto& x = in(0);
      const double inv_t = 1.0 / node.real_a;
      const double mx = *std::max_element(x.begin(), x.end());
      double z = 0.0;
      for (double v : x) z += std::exp((v - mx) * inv_t);
      if (node.kind == OpKind::Softmax) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp((x[i] - mx) * inv_t) / z;
      } else {
        const double lz = std::log(z);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mx) * inv_t - lz;
      }
      break;
    }
    case OpKind::Pick:
      out[0] = in(0)[node.int_a];
      break;
    case OpKind::L2Normalize: {
      const auto& x = in(0);
      double s = 0.0;
      for (double v : x) s += v * v;
      const double norm = std::sqrt(s);
      if (!(norm > 0.0)) {
        throw NonFiniteError("zero-norm vector at " + graph_->describe(NodeId{uint32_t(index)}));
      }
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / norm;
      break;
    }
  }
  for (double v : out) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value at " + graph_->describe(NodeId{uint32_t(index)}));
  }
}

void Executor::backward(NodeId output) {
  if (output.index >= graph_->size()) throw ValidationError("backward output does not exist");
  if (values_[output.index].size() != 1) {
    throw ShapeError("backward requires a scalar output, " + graph_->describe(output) + " has shape " +
                     shape_to_string(graph_->shape(output)));
  }
  if (!computed_[output.index]) throw ValidationError("backward called before forward for " + graph_->describe(output));
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
  grads_[output.index][0] = 1.0;
  const auto& mask = ancestors(output);
  for (std::size_t i = output.index + 1; i-- > 0;) {
    if (mask[i]) propagate(i);
  }
  for (std::size_t i = 0; i <= output.index; ++i) {
    if (!mask[i]) continue;
    for (double g : grads_[i]) {
      if (!std::isfinite(g)) {
        throw NonFiniteError("non-finite gradient at " + graph_->describe(NodeId{static_cast<std::uint32_t>(i)}));
      }
    }
  }
}

void Executor::propagate(std::size_t index) {
  const Node& node = graph_->nodes()[index];
  const std::vector<double>& gout = grads_[index];
  const std::vector<double>& out = values_[index];
  auto in = [&](std::size_t k) -> const std::vector<double>& { return values_[node.inputs[k]]; };
  auto gin = [&](std::size_t k) -> std::vector<double>& { return grads_[node.inputs[k]]; };
  auto in_shape = [&](std::size_t k) -> const Shape& { return graph_->nodes()[node.inputs[k]].shape; };

  switch (node.kind) {
    case OpKind::Input:
    case OpKind::Constant:
      return;
    case OpKind::Add: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
      auto& gb = gin(1);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i];
      return;
    }
    case OpKind::Sub: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
      auto& gb = gin(1);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] -= gout[i];
      return;
    }
    case OpKind::Mul: {
      const auto& a = in(0);
      const auto& b = in(1);
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * b[i];
      auto& gb = gin(1);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * a[i];
      return;
    }
    case OpKind::Affine: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += node.real_a * gout[i];
      return;
    }
    case OpKind::Relu: {
      const auto& a = in(0);
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) {
        if (a[i] > 0.0) ga[i] += gout[i];
      }
      return;
    }
    case OpKind::Tanh: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * (1.0 - out[i] * out[i]);
      return;
    }
    case OpKind::Sigmoid: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * out[i] * (1.0 - out[i]);
      return;
    }
    case OpKind::Square: {
      const auto& a = in(0);
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += 2.0 * a[i] * gout[i];
      return;
    }
    case OpKind::Log: {
      const auto& a = in(0);
      auto& ga = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] / a[i];
      return;
    }
    case OpKind::Sum: {
      auto& ga = gin(0);
      for (double& g : ga) g += gout[0];
      return;
    }
    case OpKind::Mean: {
      auto& ga = gin(0);
      const double share = gout[0] / static_cast<double>(ga.size());
      for (double& g : ga) g += share;
      return;
    }
    case OpKind::Dot: {
      const auto& a = in(0);
      const auto& b = in(1);
      auto& ga = gin(0);
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += gout[0] * b[i];
      auto& gb = gin(1);
      for (std::size_t i = 0; i < a.size(); ++i) gb[i] += gout[0] * a[i];
      return;
    }
    case OpKind::MatVec: {
      const auto& w = in(0);
      const auto& x = in(1);
      auto& gw = gin(0);
      auto& gx = gin(1);
      const std::size_t m = gout.size();
      const std::size_t n = x.size();
      for (std::size_t r = 0; r < m; ++r) {
        const double g = gout[r];
        if (g == 0.0) continue;
        double* gwr = gw.data() + r * n;
        const double* wr = w.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) {
          gwr[c] += g * x[c];
          gx[c] += g * wr[c];
        }
      }
      return;
    }
    case OpKind::MatTVec: {
      const auto& q = in(0);
      const auto& a = in(1);
      auto& gq = gin(0);
      auto& ga = gin(1);
      const std::size_t d = a.size();
      const std::size_t l = gout.size();
      for (std::size_t i = 0; i < d; ++i) {
        const double* qi = q.data() + i * l;
        double* gqi = gq.data() + i * l;
        double s = 0.0;
        for (std::size_t m = 0; m < l; ++m) {
          gqi[m] += gout[m] * a[i];
          s += gout[m] * qi[m];
        }
        ga[i] += s;
      }
      return;
    }
    case OpKind::Conv1d: {
      const auto& x = in(0);
      const auto& w = in(1);
      auto& gx = gin(0);
      auto& gw = gin(1);
      auto& gb = gin(2);
      const std::size_t cin = in_shape(0)[0];
      const std::size_t len = in_shape(0)[1];
      const std::size_t cout = node.shape[0];
      const std::size_t lout = node.shape[1];
      const std::size_t k = in_shape(1)[2];
      const std::size_t stride = node.int_a;
      for (std::size_t o = 0; o < cout; ++o) {
        const double* go = gout.data() + o * lout;
        double bsum = 0.0;
        for (std::size_t t = 0; t < lout; ++t) bsum += go[t];
        gb[o] += bsum;
        for (std::size_t c = 0; c < cin; ++c) {
          const double* xc = x.data() + c * len;
          double* gxc = gx.data() + c * len;
          const double* wk = w.data() + (o * cin + c) * k;
          double* gwk = gw.data() + (o * cin + c) * k;
          for (std::size_t t = 0; t < lout; ++t) {
            const double g = go[t];
            if (g == 0.0) continue;
            const std::size_t base = t * stride;
            for (std::size_t j = 0; j < k; ++j) {
              gwk[j] += g * xc[base + j];
              gxc[base + j] += g * wk[j];
            }
          }
        }
      }
      return;
    }
    case OpKind::MeanPoolTime: {
      auto& gx = gin(0);
      const std::size_t c = in_shape(0)[0];
      const std::size_t len = in_shape(0)[1];
      for (std::size_t r = 0; r < c; ++r) {
        const double share = gout[r] / static_cast<double>(len);
        for (std::size_t t = 0; t < len; ++t) gx[r * len + t] += share;
      }
      return;
    }
    case OpKind::SliceCols: {
      auto& gx = gin(0);
      const std::size_t rows = node.shape[0];
      const std::size_t width = node.shape[1];
      const std::size_t len = in_shape(0)[1];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t t = 0; t < width; ++t) gx[r * len + node.int_a + t] += gout[r * width + t];
      }
      return;
    }
    case OpKind::Reshape: {
      auto& gx = gin(0);
      for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i];
      return;
    }
    case OpKind::StackCols: {
      const std::size_t d = node.shape[0];
      const std::size_t l = node.shape[1];
      for (std::size_t m = 0; m < l; ++m) {
        auto& gc = gin(m);
        for (std::size_t i = 0; i < d; ++i) gc[i] += gout[i * l + m];
      }
      return;
    }
    case OpKind::LstmCell: {
      const auto& x = in(0);
      const auto& h = in(1);
      const auto& c = in(2);
      const auto& w = in(3);
      const auto& u = in(4);
      auto& gx = gin(0);
      auto& gh = gin(1);
      auto& gc = gin(2);
      auto& gw = gin(3);
      auto& gu = gin(4);
      auto& gb = gin(5);
      const std::size_t d = h.size();
      const std::size_t n = x.size();
      const std::vector<double>& gates = aux_[index];
      thread_local std::vector<double> dz;
      dz.assign(4 * d, 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        const double ig = gates[j];
        const double fg = gates[d + j];
        const double gg = gates[2 * d + j];
        const double og = gates[3 * d + j];
        const double tc = gates[4 * d + j];
        const double dh = gout[j];
        const double dc = gout[d + j] + dh * og * (1.0 - tc * tc);
        dz[j] = dc * gg * ig * (1.0 - ig);
        dz[d + j] = dc * c[j] * fg * (1.0 - fg);
        dz[2 * d + j] = dc * ig * (1.0 - gg * gg);
        dz[3 * d + j] = dh * tc * og * (1.0 - og);
        gc[j] += dc * fg;
      }
      for (std::size_t r = 0; r < 4 * d; ++r) {
        const double g = dz[r];
        if (g == 0.0) continue;
        gb[r] += g;
        const double* wr = w.data() + r * n;
        double* gwr = gw.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) {
          gwr[j] += g * x[j];
          gx[j] += g * wr[j];
        }
        const double* ur = u.data() + r * d;
        double* gur = gu.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          gur[j] += g * h[j];
          gh[j] += g * ur[j];
        }
      }
      return;
    }
    case OpKind::Row: {
      auto& gx = gin(0);
      const std::size_t width = node.shape[0];
      for (std::size_t i = 0; i < width; ++i) gx[node.int_a * width + i] += gout[i];
      return;
    }
    case OpKind::Softmax: {
      auto& gx = gin(0);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += gout[i] * out[i];
      const double inv_t = 1.0 / node.real_a;
      for (std::size_t i = 0; i < out.size(); ++i) gx[i] += inv_t * out[i] * (gout[i] - s);
      return;
    }
    case OpKind::LogSoftmax: {
      auto& gx = gin(0);
      double s = 0.0;
      for (double g : gout) s += g;
      const double inv_t = 1.0 / node.real_a;
      for (std::size_t i = 0; i < out.size(); ++i) gx[i] += inv_t * (gout[i] - std::exp(out[i]) * s);
      return;
    }
    case OpKind::Pick: {
      gin(0)[node.int_a] += gout[0];
      return;
    }
    case OpKind::L2Normalize: {
      const auto& x = in(0);
      auto& gx = gin(0);
      double s = 0.0;
      for (double v : x) s += v * v;
      const double norm = std::sqrt(s);
      double proj = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) proj += out[i] * gout[i];
      for (std::size_t i = 0; i < out.size(); ++i) gx[i] += (gout[i] - out[i] * proj) / norm;
      return;
    }
  }
}

}  // namespace cheer
