#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emoattn/autodiff.hpp"
#include "emoattn/error.hpp"
#include "emoattn/rng.hpp"
#include "emoattn/tensor.hpp"

namespace emoattn {

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t step = 0;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of one parameter tensor in place.
template <class T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state, double lr) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("adam_step: gradient " + shape_string(grad.shape()) + " for parameter " +
                     shape_string(param.shape()));
  }
  if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
  if (!grad.all_finite()) throw Error("adam_step: non-finite gradient");
  if (state.m.shape() != param.shape()) {
    state.m = Tensor<T>(param.shape());
    state.v = Tensor<T>(param.shape());
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
  }
}

// ---------------------------------------------------------------------------
// Learning-rate schedules

enum class ScheduleKind { constant, slanted_triangular };

struct LRSchedule {
  ScheduleKind kind = ScheduleKind::slanted_triangular;
  double lr_max = 0.01;
  std::int64_t total_steps = 1;
  double cut_frac = 0.1;
  double ratio = 32.0;
};

/// Slanted triangular rate: linear warm-up over the first cut steps, then
/// linear decay to lr_max / ratio at total_steps. The decay fraction is
/// clamped at zero so the rate never drops below lr_max / ratio.
inline double stlr(std::int64_t t, const LRSchedule& sched) {
  if (t < 0 || t > sched.total_steps) {
    throw Error("stlr: step " + std::to_string(t) + " outside [0, " + std::to_string(sched.total_steps) + "]");
  }
  if (sched.kind == ScheduleKind::constant) return sched.lr_max;
  const auto cut = static_cast<std::int64_t>(std::floor(static_cast<double>(sched.total_steps) * sched.cut_frac));
  if (cut == 0) throw Error("stlr: cut = floor(total_steps * cut_frac) is zero");
  double p;
  if (t < cut) {
    p = static_cast<double>(t) / static_cast<double>(cut);
  } else {
    p = 1.0 - static_cast<double>(t - cut) / (static_cast<double>(cut) * (1.0 / sched.cut_frac - 1.0));
  }
  p = std::max(p, 0.0);
  return sched.lr_max * (1.0 + p * (sched.ratio - 1.0)) / sched.ratio;
}

// ---------------------------------------------------------------------------
// Dropout masks

/// Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).
/// p = 1 yields all zeros.
template <class T>
Tensor<T> dropout_mask(const Shape& shape, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw Error("dropout probability must lie in [0, 1]");
  Tensor<T> mask(shape, T(1));
  if (p == 0.0) return mask;
  if (p == 1.0) {
    mask.fill(T(0));
    return mask;
  }
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : mask.values()) v = rng.bernoulli(p) ? T(0) : keep;
  return mask;
}

/// DropConnect on a weight tensor (training mode).
template <class T>
Tensor<T> dropconnect(const Tensor<T>& weight, double p, Rng& rng) {
  Tensor<T> mask = dropout_mask<T>(weight.shape(), p, rng);
  mask.map() = mask.map().cwiseProduct(weight.map());
  return mask;
}

/// Graph form: the mask is a constant, gradients flow to surviving weights.
template <class T>
Var<T> dropconnect(Var<T> weight, double p, Rng& rng) {
  if (p == 0.0) return weight;
  return mul(weight, weight.graph->constant(dropout_mask<T>(weight.shape(), p, rng)));
}

template <class T>
Var<T> dropout(Var<T> x, double p, Rng& rng) {
  if (p == 0.0) return x;
  return mul(x, x.graph->constant(dropout_mask<T>(x.shape(), p, rng)));
}

// ---------------------------------------------------------------------------

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (T g : p->grad.values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto* p : params) p->grad.map() *= s;
  }
  return norm;
}

}  // namespace emoattn
