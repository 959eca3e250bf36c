#pragma once

// Define-then-run expression graph with reverse-mode differentiation.
//
// An ExprGraph is an immutable-after-construction DAG of primitive operations.
// Nodes can only reference previously created nodes, so creation order is a
// valid topological order. Free inputs are declared with a name and shape and
// bound at evaluation time. An Executor owns the value/gradient buffers for a
// single graph and can be reused across many evaluations.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cheer/tensor.hpp"

namespace cheer {

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Affine,        // scale * x + shift
  Relu,
  Tanh,
  Sigmoid,
  Square,
  Log,
  Sum,
  Mean,
  Dot,
  MatVec,        // W[m,n] x[n] -> [m]
  MatTVec,       // Q[d,l]^T a[d] -> [l]
  Conv1d,        // x[cin,L], w[cout,cin,K], b[cout] -> [cout, (L-K)/stride+1]
  MeanPoolTime,  // x[C,L] -> [C]
  SliceCols,     // x[C,T] -> [C, end-begin]
  Reshape,
  StackCols,     // l vectors of [d] -> [d,l]
  LstmCell,      // x[n], h[d], c[d], W[4d,n], U[4d,d], b[4d] -> [2,d] (row 0 = h', row 1 = c')
  Row,           // x[R,N] -> [N]
  Softmax,       // softmax(x / temperature)
  LogSoftmax,
  Pick,          // x[n] -> [1]
  L2Normalize,
};

std::string_view op_name(OpKind kind);

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<std::uint32_t> inputs;
  Shape shape;
  std::string name;              // inputs only
  std::vector<double> constant;  // constants only
  std::size_t int_a = 0;         // stride / begin / row / index
  std::size_t int_b = 0;         // end
  double real_a = 1.0;           // scale / temperature
  double real_b = 0.0;           // shift
};

class ExprGraph {
 public:
  NodeId input(std::string name, Shape shape);
  NodeId constant(Tensor value);
  NodeId zeros(Shape shape) { return constant(Tensor(std::move(shape))); }

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId affine(NodeId x, double scale, double shift);
  NodeId scale(NodeId x, double factor) { return affine(x, factor, 0.0); }
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId square(NodeId x);
  NodeId log(NodeId x);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId dot(NodeId a, NodeId b);
  NodeId matvec(NodeId w, NodeId x);
  NodeId matTvec(NodeId q, NodeId a);
  NodeId conv1d(NodeId x, NodeId w, NodeId b, std::size_t stride);
  NodeId mean_pool_time(NodeId x);
  NodeId slice_cols(NodeId x, std::size_t begin, std::size_t end);
  NodeId reshape(NodeId x, Shape shape);
  NodeId flatten(NodeId x) { return reshape(x, {shape_size(shape(x))}); }
  NodeId stack_cols(std::span<const NodeId> columns);
  NodeId lstm_cell(NodeId x, NodeId h, NodeId c, NodeId w, NodeId u, NodeId b);
  NodeId row(NodeId x, std::size_t r);
  NodeId softmax(NodeId x, double temperature);
  NodeId log_softmax(NodeId x, double temperature);
  NodeId pick(NodeId x, std::size_t index);
  NodeId l2_normalize(NodeId x);

  void set_output(std::string name, NodeId node);
  const std::map<std::string, NodeId>& outputs() const { return outputs_; }

  const Shape& shape(NodeId node) const { return nodes_.at(node.index).shape; }
  const Node& node(NodeId node) const { return nodes_.at(node.index); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<NodeId>& inputs() const { return inputs_; }
  std::optional<NodeId> find_input(std::string_view name) const;

  /// Human-readable label such as "#12 matvec" used in error messages.
  std::string describe(NodeId node) const;

 private:
  NodeId push(Node node);
  void check_ref(NodeId ref) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> inputs_;
  std::map<std::string, NodeId> outputs_;
};

/// Reusable evaluation workspace bound to one graph. Not thread-safe; use one
/// executor per thread. The graph must outlive the executor.
class Executor {
 public:
  explicit Executor(const ExprGraph& graph);

  void bind(NodeId input, std::span<const double> values);
  void bind(std::string_view name, const Tensor& value);
  bool is_bound(NodeId input) const { return bound_[input.index]; }

  /// Evaluates every node.
  void forward();
  /// Evaluates only the ancestors of `target`.
  void forward(NodeId target);

  std::span<const double> value(NodeId node) const { return values_[node.index]; }
  Tensor tensor(NodeId node) const;

  /// Reverse pass from a scalar node. Requires a preceding forward() that
  /// covered `output`. Gradients of nodes that do not influence `output` are 0.
  void backward(NodeId output);
  std::span<const double> grad(NodeId node) const { return grads_[node.index]; }

  const ExprGraph& graph() const { return *graph_; }

 private:
  void compute(std::size_t index);
  void propagate(std::size_t index);
  const std::vector<char>& ancestors(NodeId target);

  const ExprGraph* graph_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<double>> grads_;
  std::vector<std::vector<double>> aux_;
  std::vector<bool> bound_;
  std::vector<char> computed_;
  std::map<std::uint32_t, std::vector<char>> ancestor_cache_;
};

}  // namespace cheer
