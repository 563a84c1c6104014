#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "emoattn/autodiff.hpp"
#include "emoattn/rng.hpp"

namespace emoattn {

/// Builds an op on the given graph from leaf variables and returns its output.
using GradCheckOp = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients against centered finite differences.
///
/// The op output is reduced to a scalar through a fixed random projection so
/// that non-scalar outputs are checked along every output coordinate. The
/// error per component is |a - n| / max(1, |a|, |n|).
inline GradCheckResult grad_check(const GradCheckOp& op, std::vector<Tensor<double>> inputs, double eps = 1e-4,
                                  std::uint64_t seed = 17) {
  Tensor<double> projection;
  auto evaluate = [&](std::vector<Tensor<double>>& xs, bool with_grad, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    leaves.reserve(xs.size());
    for (auto& x : xs) leaves.push_back(with_grad ? g.variable(x) : g.constant(x));
    Var<double> out = op(g, leaves);
    if (projection.empty()) {
      Rng rng(seed);
      projection = Tensor<double>(out.shape());
      for (auto& v : projection.values()) v = rng.uniform(-1.0, 1.0);
    }
    Var<double> loss = sum_all(mul(out, g.constant(projection)));
    if (with_grad) {
      g.backward(loss);
      for (auto& l : leaves) grads->push_back(g.grad(l));
    }
    return loss.value()[0];
  };

  std::vector<Tensor<double>> analytic;
  evaluate(inputs, true, &analytic);

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double up = evaluate(inputs, false, nullptr);
      inputs[k][i] = orig - eps;
      const double down = evaluate(inputs, false, nullptr);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace emoattn
