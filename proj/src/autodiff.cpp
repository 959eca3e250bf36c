#include "cheer/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cheer/error.hpp"

namespace cheer {

namespace {

Executor bound_executor(const ExprGraph& graph, const Bindings& bindings) {
  Executor exec(graph);
  for (const auto& [name, tensor] : bindings) exec.bind(name, tensor);
  for (NodeId id : graph.inputs()) {
    if (!exec.is_bound(id)) throw UnboundInputError("input '" + graph.node(id).name + "' is not bound");
  }
  return exec;
}

}  // namespace

std::map<std::string, Tensor> eval(const ExprGraph& graph, const Bindings& bindings) {
  Executor exec = bound_executor(graph, bindings);
  exec.forward();
  std::map<std::string, Tensor> result;
  for (const auto& [name, node] : graph.outputs()) result.emplace(name, exec.tensor(node));
  return result;
}

std::map<std::string, Tensor> backward(const ExprGraph& graph, const Bindings& bindings, NodeId output) {
  if (shape_size(graph.shape(output)) != 1) {
    throw ShapeError("backward requires a scalar output, " + graph.describe(output) + " has shape " +
                     shape_to_string(graph.shape(output)));
  }
  Executor exec = bound_executor(graph, bindings);
  exec.forward(output);
  exec.backward(output);
  std::map<std::string, Tensor> grads;
  for (NodeId id : graph.inputs()) {
    const auto g = exec.grad(id);
    grads.emplace(graph.node(id).name, Tensor(graph.shape(id), std::vector<double>(g.begin(), g.end())));
  }
  return grads;
}

double grad_check(const DifferentiableFunction& f, std::span<const double> point, double h) {
  if (!(h > 0.0)) throw ValidationError("grad_check step must be positive");
  std::vector<double> x(point.begin(), point.end());
  const std::vector<double> analytic = f.gradient(x);
  if (analytic.size() != x.size()) throw ShapeError("gradient length does not match point length");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f.value(x);
    x[i] = saved - h;
    const double down = f.value(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("function value is not finite near coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const ExprGraph& graph, const Bindings& bindings, NodeId output, const std::string& wrt, double h) {
  auto it = bindings.find(wrt);
  if (it == bindings.end()) throw UnboundInputError("grad_check: no binding named '" + wrt + "'");
  const Shape wrt_shape = it->second.shape();
  Executor exec = bound_executor(graph, bindings);
  const NodeId wrt_node = *graph.find_input(wrt);
  DifferentiableFunction f;
  f.value = [&](std::span<const double> p) {
    exec.bind(wrt_node, p);
    exec.forward(output);
    return exec.value(output)[0];
  };
  f.gradient = [&](std::span<const double> p) {
    exec.bind(wrt_node, p);
    exec.forward(output);
    exec.backward(output);
    const auto g = exec.grad(wrt_node);
    return std::vector<double>(g.begin(), g.end());
  };
  return grad_check(f, it->second.values(), h);
}

AdamState AdamState::for_size(std::size_t n, double lr) {
  AdamState state;
  state.first_moment.assign(n, 0.0);
  state.second_moment.assign(n, 0.0);
  state.lr = lr;
  return state;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("adam_step length mismatch: params " + std::to_string(n) + ", grads " +
                     std::to_string(grads.size()) + ", moments " + std::to_string(state.first_moment.size()) + "/" +
                     std::to_string(state.second_moment.size()));
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps_hat);
  }
}

void init_uniform_fan_in(std::span<double> values, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : values) v = rng.uniform(-bound, bound);
}

}  // namespace cheer
