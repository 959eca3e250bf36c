#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cheer/graph.hpp"
#include "cheer/random.hpp"
#include "cheer/tensor.hpp"

namespace cheer {

using Bindings = std::map<std::string, Tensor>;

/// Evaluates every named output of `graph`. Pure: equal bindings give
/// bit-identical results.
std::map<std::string, Tensor> eval(const ExprGraph& graph, const Bindings& bindings);

/// d(output)/d(input) for every bound input, keyed by input name. Inputs that
/// do not influence `output` get zero-filled gradients.
std::map<std::string, Tensor> backward(const ExprGraph& graph, const Bindings& bindings, NodeId output);

/// A scalar function with its analytic gradient.
struct DifferentiableFunction {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const DifferentiableFunction& f, std::span<const double> point, double h);

/// Graph form: checks d(output)/d(wrt) at the bound point.
double grad_check(const ExprGraph& graph, const Bindings& bindings, NodeId output, const std::string& wrt, double h);

struct AdamState {
  std::size_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;

  static AdamState for_size(std::size_t n, double lr = 1e-3);
};

/// One bias-corrected Adam update, in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
void init_uniform_fan_in(std::span<double> values, std::size_t fan_in, Rng& rng);

}  // namespace cheer
