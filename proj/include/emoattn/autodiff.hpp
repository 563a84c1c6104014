#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "emoattn/error.hpp"
#include "emoattn/tensor.hpp"

namespace emoattn {

template <class T>
class Graph;

/// Handle to a node on a Graph tape.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards visits every node after all of its consumers.
template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    const char* op = "";
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), {}, {}, false, "constant"); }

  Var<T> variable(Tensor<T> v) { return push(std::move(v), {}, {}, true, "variable"); }

  /// Leaf bound to a parameter; its gradient is added to p.grad on backward().
  Var<T> param(Parameter<T>& p) {
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    Var<T> v = push(p.value, {}, {}, true, "param");
    nodes_[v.id].param = &p;
    return v;
  }

  /// Append an op result. The node requires a gradient when any input does;
  /// otherwise its backward function is dropped.
  Var<T> record(const char* op, Tensor<T> value, std::vector<std::size_t> inputs, Backward fn) {
    if (!value.all_finite()) throw Error(std::string("non-finite value produced by ") + op);
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
    if (!needs) fn = nullptr;
    return push(std::move(value), std::move(inputs), std::move(fn), needs, op);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }

  /// Gradient of the last backward() root with respect to this node; zeros
  /// when the node was not reached.
  Tensor<T> grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() && !n.value.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }
  Tensor<T> grad(Var<T> v) const { return grad(v.id); }

  /// Lazily allocated accumulator used by backward functions.
  Tensor<T>& accum(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

  void backward(Var<T> root) {
    if (root.value().size() != 1) {
      throw ShapeError("backward root must be a scalar, got " + shape_string(root.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    accum(root.id)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto g = n.param->grad.map();
        g += n.grad.map();
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Var<T> push(Tensor<T> v, std::vector<std::size_t> inputs, Backward fn, bool needs, const char* op) {
    Node n;
    n.value = std::move(v);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    n.requires_grad = needs;
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

inline Shape mat(std::size_t r, std::size_t c) { return {r, c}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) detail::shape_mismatch("matmul", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.cols());
  out.map().noalias() = a.value().map() * b.value().map();
  return a.graph->record("matmul", std::move(out), {a.id, b.id}, [](Graph<T>& g, std::size_t self) {
    const auto ia = g.input(self, 0), ib = g.input(self, 1);
    const auto& dy = g.out_grad(self).map();
    if (g.requires_grad(ia)) g.accum(ia).map().noalias() += dy * g.value(ib).map().transpose();
    if (g.requires_grad(ib)) g.accum(ib).map().noalias() += g.value(ia).map().transpose() * dy;
  });
}

/// a * b^T, used by the tied decoder (hidden x embedding^T).
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) detail::shape_mismatch("matmul_nt", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.rows());
  out.map().noalias() = a.value().map() * b.value().map().transpose();
  return a.graph->record("matmul_nt", std::move(out), {a.id, b.id}, [](Graph<T>& g, std::size_t self) {
    const auto ia = g.input(self, 0), ib = g.input(self, 1);
    const auto& dy = g.out_grad(self).map();
    if (g.requires_grad(ia)) g.accum(ia).map().noalias() += dy * g.value(ib).map();
    if (g.requires_grad(ib)) g.accum(ib).map().noalias() += dy.transpose() * g.value(ia).map();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  out.map() = a.value().map() + b.value().map();
  return a.graph->record("add", std::move(out), {a.id, b.id}, [](Graph<T>& g, std::size_t self) {
    for (int k = 0; k < 2; ++k) {
      const auto in = g.input(self, k);
      if (g.requires_grad(in)) g.accum(in).map() += g.out_grad(self).map();
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("sub", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  out.map() = a.value().map() - b.value().map();
  return a.graph->record("sub", std::move(out), {a.id, b.id}, [](Graph<T>& g, std::size_t self) {
    const auto ia = g.input(self, 0), ib = g.input(self, 1);
    if (g.requires_grad(ia)) g.accum(ia).map() += g.out_grad(self).map();
    if (g.requires_grad(ib)) g.accum(ib).map() -= g.out_grad(self).map();
  });
}

/// a + broadcast(row), row being 1 x cols(a).
template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) detail::shape_mismatch("add_row", a.shape(), row.shape());
  Tensor<T> out(detail::mat(a.rows(), a.cols()));
  out.map() = a.value().map().rowwise() + row.value().map().row(0);
  return a.graph->record("add_row", std::move(out), {a.id, row.id}, [](Graph<T>& g, std::size_t self) {
    const auto ia = g.input(self, 0), ib = g.input(self, 1);
    const auto& dy = g.out_grad(self).map();
    if (g.requires_grad(ia)) g.accum(ia).map() += dy;
    if (g.requires_grad(ib)) g.accum(ib).map().row(0) += dy.colwise().sum();
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  out.map() = a.value().map().cwiseProduct(b.value().map());
  return a.graph->record("mul", std::move(out), {a.id, b.id}, [](Graph<T>& g, std::size_t self) {
    const auto ia = g.input(self, 0), ib = g.input(self, 1);
    const auto& dy = g.out_grad(self).map();
    if (g.requires_grad(ia)) g.accum(ia).map() += dy.cwiseProduct(g.value(ib).map());
    if (g.requires_grad(ib)) g.accum(ib).map() += dy.cwiseProduct(g.value(ia).map());
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out(a.shape());
  out.map() = a.value().map() * s;
  return a.graph->record("scale", std::move(out), {a.id}, [s](Graph<T>& g, std::size_t self) {
    g.accum(g.input(self, 0)).map() += g.out_grad(self).map() * s;
  });
}

namespace detail {

template <class T, class Fwd, class Deriv>
Var<T> unary(const char* name, Var<T> a, Fwd fwd, Deriv deriv) {
  Tensor<T> out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return a.graph->record(name, std::move(out), {a.id}, [deriv](Graph<T>& g, std::size_t self) {
    const auto ia = g.input(self, 0);
    const auto& y = g.value(self);
    const auto& x = g.value(ia);
    const auto& dy = g.out_grad(self);
    auto& dx = g.accum(ia);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
  });
}

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a, [](T x) { return detail::sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Structural

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.graph->record("reshape", std::move(out), {a.id}, [](Graph<T>& g, std::size_t self) {
    auto& dx = g.accum(g.input(self, 0));
    const auto& dy = g.out_grad(self);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) detail::shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    out.map().middleCols(off, p.cols()) = p.value().map();
    off += p.cols();
    ids.push_back(p.id);
  }
  const std::size_t n = parts.size();
  return parts[0].graph->record("concat_cols", std::move(out), std::move(ids), [n](Graph<T>& g, std::size_t self) {
    std::size_t off = 0;
    const auto& dy = g.out_grad(self).map();
    for (std::size_t k = 0; k < n; ++k) {
      const auto in = g.input(self, k);
      const std::size_t c = g.value(in).cols();
      if (g.requires_grad(in)) g.accum(in).map() += dy.middleCols(off, c);
      off += c;
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) detail::shape_mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off * cols);
    off += p.rows();
    ids.push_back(p.id);
  }
  const std::size_t n = parts.size();
  return parts[0].graph->record("concat_rows", std::move(out), std::move(ids), [n](Graph<T>& g, std::size_t self) {
    const auto& dy = g.out_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto in = g.input(self, k);
      const std::size_t sz = g.value(in).size();
      if (g.requires_grad(in)) {
        auto& dx = g.accum(in);
        for (std::size_t i = 0; i < sz; ++i) dx[i] += dy[off + i];
      }
      off += sz;
    }
  });
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_string(a.shape()));
  }
  const std::size_t cols = a.cols();
  Tensor<T> out = Tensor<T>::matrix(end - begin, cols);
  std::copy(a.value().data() + begin * cols, a.value().data() + end * cols, out.data());
  return a.graph->record("slice_rows", std::move(out), {a.id}, [begin, cols](Graph<T>& g, std::size_t self) {
    const auto& dy = g.out_grad(self);
    auto& dx = g.accum(g.input(self, 0));
    for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * cols + i] += dy[i];
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_string(a.shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(a.rows(), end - begin);
  out.map() = a.value().map().middleCols(begin, end - begin);
  return a.graph->record("slice_cols", std::move(out), {a.id}, [begin](Graph<T>& g, std::size_t self) {
    const auto& dy = g.out_grad(self).map();
    g.accum(g.input(self, 0)).map().middleCols(begin, dy.cols()) += dy;
  });
}

/// Row gather (embedding lookup, span extraction, sequence permutation).
/// The backward pass scatter-adds, so repeated indices accumulate.
template <class T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> index) {
  const std::size_t cols = a.cols();
  Tensor<T> out = Tensor<T>::matrix(index.size(), cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of " + shape_string(a.shape()));
    }
    std::copy_n(a.value().data() + index[r] * cols, cols, out.data() + r * cols);
  }
  return a.graph->record("gather_rows", std::move(out), {a.id},
                         [index = std::move(index), cols](Graph<T>& g, std::size_t self) {
                           const auto& dy = g.out_grad(self);
                           auto& dx = g.accum(g.input(self, 0));
                           for (std::size_t r = 0; r < index.size(); ++r) {
                             T* dst = dx.data() + index[r] * cols;
                             const T* src = dy.data() + r * cols;
                             for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum_all(Var<T> a) {
  Tensor<T> out = Tensor<T>::matrix(1, 1, a.value().map().sum());
  return a.graph->record("sum_all", std::move(out), {a.id}, [](Graph<T>& g, std::size_t self) {
    g.accum(g.input(self, 0)).map().array() += g.out_grad(self)[0];
  });
}

/// Mean over axis 0 (rows -> 1 x cols) or axis 1 (cols -> rows x 1).
template <class T>
Var<T> mean(Var<T> a, int axis) {
  const std::size_t r = a.rows(), c = a.cols();
  if (axis != 0 && axis != 1) throw ShapeError("mean: axis must be 0 or 1");
  if ((axis == 0 && r == 0) || (axis == 1 && c == 0)) throw ShapeError("mean: empty axis in " + shape_string(a.shape()));
  Tensor<T> out = axis == 0 ? Tensor<T>::matrix(1, c) : Tensor<T>::matrix(r, 1);
  if (axis == 0) {
    out.map().row(0) = a.value().map().colwise().mean();
  } else {
    out.map().col(0) = a.value().map().rowwise().mean();
  }
  return a.graph->record("mean", std::move(out), {a.id}, [axis, r, c](Graph<T>& g, std::size_t self) {
    const auto& dy = g.out_grad(self).map();
    auto dx = g.accum(g.input(self, 0)).map();
    if (axis == 0) {
      dx.rowwise() += dy.row(0) / static_cast<T>(r);
    } else {
      dx.colwise() += dy.col(0) / static_cast<T>(c);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family

/// Softmax along axis 1 (within each row) or axis 0 (within each column).
template <class T>
Var<T> softmax(Var<T> a, int axis = 1) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  RowMatrix<T> x = axis == 1 ? RowMatrix<T>(a.value().map()) : RowMatrix<T>(a.value().map().transpose());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - m).exp();
    x.row(i) /= x.row(i).sum();
  }
  Tensor<T> out(a.shape());
  if (axis == 1) {
    out.map() = x;
  } else {
    out.map() = x.transpose();
  }
  return a.graph->record("softmax", std::move(out), {a.id}, [axis](Graph<T>& g, std::size_t self) {
    const auto& y = g.value(self).map();
    const auto& dy = g.out_grad(self).map();
    auto dx = g.accum(g.input(self, 0)).map();
    if (axis == 1) {
      const auto dots = (dy.cwiseProduct(y)).rowwise().sum().eval();
      dx.array() += y.array() * (dy.colwise() - dots.col(0)).array();
    } else {
      const auto dots = (dy.cwiseProduct(y)).colwise().sum().eval();
      dx.array() += y.array() * (dy.rowwise() - dots.row(0)).array();
    }
  });
}

/// Row-wise softmax ignoring positions where mask is non-zero; those
/// positions receive exactly zero probability and zero gradient.
template <class T>
Var<T> masked_softmax(Var<T> a, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != a.value().size()) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " for " + shape_string(a.shape()));
  }
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask[r * cols + c]) m = std::max(m, x[r * cols + c]);
    }
    if (m == -std::numeric_limits<T>::infinity()) {
      throw Error("masked_softmax: row " + std::to_string(r) + " has every position masked");
    }
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = mask[i] ? T(0) : std::exp(x[i] - m);
      z += out[i];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return a.graph->record("masked_softmax", std::move(out), {a.id}, [rows, cols](Graph<T>& g, std::size_t self) {
    const auto& y = g.value(self);
    const auto& dy = g.out_grad(self);
    auto& dx = g.accum(g.input(self, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        dx[i] += y[i] * (dy[i] - dot);
      }
    }
  });
}

/// Mean cross entropy of row-wise softmax(logits) against integer targets.
template <class T>
Var<T> cross_entropy_logits(Var<T> logits, const std::vector<std::size_t>& targets) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_string(logits.shape()));
  }
  if (rows == 0) throw ShapeError("cross_entropy_logits: empty batch");
  Tensor<T> probs = Tensor<T>::matrix(rows, cols);
  T loss = 0;
  const auto& x = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw ShapeError("cross_entropy_logits: target " + std::to_string(targets[r]) + " >= " + std::to_string(cols));
    T m = x[r * cols];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x[r * cols + c]);
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (probs[r * cols + c] = std::exp(x[r * cols + c] - m));
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= z;
    loss += std::log(z) + m - x[r * cols + targets[r]];
  }
  loss /= static_cast<T>(rows);
  return logits.graph->record(
      "cross_entropy_logits", Tensor<T>::matrix(1, 1, loss), {logits.id},
      [probs = std::move(probs), targets, rows, cols](Graph<T>& g, std::size_t self) {
        const T s = g.out_grad(self)[0] / static_cast<T>(rows);
        auto& dx = g.accum(g.input(self, 0));
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += s * probs[r * cols + c];
          dx[r * cols + targets[r]] -= s;
        }
      });
}

// ---------------------------------------------------------------------------
// Attention helpers

/// out[r, :] = s[r] * x[r, :], with s holding one weight per row of x.
template <class T>
Var<T> scale_rows(Var<T> x, Var<T> s) {
  if (s.value().size() != x.rows()) detail::shape_mismatch("scale_rows", x.shape(), s.shape());
  Tensor<T> out(x.shape());
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T w = s.value()[r];
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = w * x.value()[r * cols + c];
  }
  return x.graph->record("scale_rows", std::move(out), {x.id, s.id}, [cols](Graph<T>& g, std::size_t self) {
    const auto ix = g.input(self, 0), is = g.input(self, 1);
    const auto& dy = g.out_grad(self);
    const auto& xv = g.value(ix);
    const auto& sv = g.value(is);
    const std::size_t rows = xv.rows();
    if (g.requires_grad(ix)) {
      auto& dx = g.accum(ix);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += sv[r] * dy[r * cols + c];
    }
    if (g.requires_grad(is)) {
      auto& ds = g.accum(is);
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += xv[r * cols + c] * dy[r * cols + c];
        ds[r] += acc;
      }
    }
  });
}

enum class PoolMode { mean, sum };

/// x holds `groups` consecutive blocks of equal height; each output row
/// pools the unmasked rows of one block (mean or sum).
template <class T>
Var<T> masked_pool(Var<T> x, const std::vector<std::uint8_t>& mask, std::size_t groups, PoolMode mode = PoolMode::mean) {
  if (groups == 0 || x.rows() % groups != 0 || mask.size() != x.rows()) {
    throw ShapeError("masked_pool: " + std::to_string(groups) + " groups, mask of " + std::to_string(mask.size()) +
                     " over " + shape_string(x.shape()));
  }
  const std::size_t per = x.rows() / groups, cols = x.cols();
  std::vector<T> weight(x.rows(), T(0));
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    std::size_t live = 0;
    for (std::size_t j = 0; j < per; ++j) live += mask[gidx * per + j] ? 0 : 1;
    if (live == 0) throw Error("masked_pool: group " + std::to_string(gidx) + " has every position masked");
    const T w = mode == PoolMode::mean ? T(1) / static_cast<T>(live) : T(1);
    for (std::size_t j = 0; j < per; ++j) weight[gidx * per + j] = mask[gidx * per + j] ? T(0) : w;
  }
  Tensor<T> out = Tensor<T>::matrix(groups, cols);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (weight[r] == T(0)) continue;
    const std::size_t gidx = r / per;
    for (std::size_t c = 0; c < cols; ++c) out[gidx * cols + c] += weight[r] * x.value()[r * cols + c];
  }
  return x.graph->record("masked_pool", std::move(out), {x.id},
                         [weight = std::move(weight), per, cols](Graph<T>& g, std::size_t self) {
                           const auto& dy = g.out_grad(self);
                           auto& dx = g.accum(g.input(self, 0));
                           for (std::size_t r = 0; r < weight.size(); ++r) {
                             if (weight[r] == T(0)) continue;
                             const std::size_t gidx = r / per;
                             for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += weight[r] * dy[gidx * cols + c];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Recurrent step

/// One LSTM step for a batch. `gates_x` is the input projection plus bias
/// (B x 4H, gate order i, f, g, o), `state` packs [h | c] (B x 2H) and
/// `w_hh` is H x 4H. Returns the next packed state.
template <class T>
Var<T> lstm_step(Var<T> gates_x, Var<T> state, Var<T> w_hh) {
  const std::size_t hidden = w_hh.rows();
  const std::size_t batch = gates_x.rows();
  if (w_hh.cols() != 4 * hidden) detail::shape_mismatch("lstm_step", w_hh.shape(), Shape{hidden, 4 * hidden});
  if (gates_x.cols() != 4 * hidden) detail::shape_mismatch("lstm_step", gates_x.shape(), w_hh.shape());
  if (state.rows() != batch || state.cols() != 2 * hidden) detail::shape_mismatch("lstm_step", state.shape(), gates_x.shape());

  const auto st = state.value().map();
  RowMatrix<T> act = gates_x.value().map();
  act.noalias() += st.leftCols(hidden) * w_hh.value().map();
  const auto H = static_cast<Eigen::Index>(hidden);
  act.leftCols(2 * H) = act.leftCols(2 * H).array().logistic().matrix();
  act.middleCols(2 * H, H) = act.middleCols(2 * H, H).array().tanh().matrix();
  act.rightCols(H) = act.rightCols(H).array().logistic().matrix();
  Tensor<T> out = Tensor<T>::matrix(batch, 2 * hidden);
  auto o = out.map();
  o.rightCols(H) = act.middleCols(H, H).cwiseProduct(st.rightCols(H)) + act.leftCols(H).cwiseProduct(act.middleCols(2 * H, H));
  o.leftCols(H) = act.rightCols(H).cwiseProduct(o.rightCols(H).array().tanh().matrix());

  return gates_x.graph->record(
      "lstm_step", std::move(out), {gates_x.id, state.id, w_hh.id},
      [act = std::move(act), H](Graph<T>& g, std::size_t self) {
        const auto igx = g.input(self, 0), ist = g.input(self, 1), iw = g.input(self, 2);
        const auto dy = g.out_grad(self).map();
        const auto y = g.value(self).map();
        const auto prev = g.value(ist).map();
        const auto ig = act.leftCols(H).array();
        const auto fg = act.middleCols(H, H).array();
        const auto gg = act.middleCols(2 * H, H).array();
        const auto og = act.rightCols(H).array();
        const auto tc = y.rightCols(H).array().tanh().eval();
        const auto dh = dy.leftCols(H).array();
        const auto dc = (dy.rightCols(H).array() + dh * og * (T(1) - tc * tc)).eval();
        RowMatrix<T> da(act.rows(), 4 * H);
        da.leftCols(H) = (dc * gg * ig * (T(1) - ig)).matrix();
        da.middleCols(H, H) = (dc * prev.rightCols(H).array() * fg * (T(1) - fg)).matrix();
        da.middleCols(2 * H, H) = (dc * ig * (T(1) - gg * gg)).matrix();
        da.rightCols(H) = (dh * tc * og * (T(1) - og)).matrix();
        if (g.requires_grad(igx)) g.accum(igx).map() += da;
        if (g.requires_grad(ist)) {
          auto dst = g.accum(ist).map();
          dst.leftCols(H).noalias() += da * g.value(iw).map().transpose();
          dst.rightCols(H) += (dc * fg).matrix();
        }
        if (g.requires_grad(iw)) g.accum(iw).map().noalias() += prev.leftCols(H).transpose() * da;
      });
}

}  // namespace emoattn
