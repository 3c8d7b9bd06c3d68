// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense matrices. A Tape records every
// operation in creation order, which is already a topological order, so
// backward() is a single reverse sweep.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gvae/error.hpp"
#include "gvae/tensor.hpp"

namespace gvae {

/// Named learnable tensors. Names are unique and shapes never change once a
/// name is registered. Iteration order is lexicographic by name.
class ParamStore {
public:
  void add(const std::string &name, Tensor value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate parameter '" + name + "'");
    }
  }

  bool contains(const std::string &name) const { return tensors_.count(name) != 0; }

  const Tensor &at(const std::string &name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + name + "'");
    }
    return it->second;
  }

  Tensor &at(const std::string &name) {
    return const_cast<Tensor &>(std::as_const(*this).at(name));
  }

  void set(const std::string &name, Tensor value) {
    Tensor &slot = at(name);
    if (slot.shape() != value.shape()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "parameter '" + name + "' has shape " + shape_string(slot.shape()) +
                      ", got " + shape_string(value.shape()));
    }
    slot = std::move(value);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto &[name, _] : tensors_) out.push_back(name);
    return out;
  }

  std::size_t size() const noexcept { return tensors_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto &[_, t] : tensors_) n += t.size();
    return n;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  /// Same names and shapes, all values zero.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto &[name, t] : tensors_) out.add(name, Tensor(t.shape()));
    return out;
  }

  friend bool operator==(const ParamStore &a, const ParamStore &b) {
    return a.tensors_ == b.tensors_;
  }

private:
  std::map<std::string, Tensor> tensors_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
  Var() = default;
  Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor &value() const;
  std::size_t id() const noexcept { return id_; }
  Tape &tape() const { return *tape_; }
  const Shape &shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

private:
  Tape *tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates d(loss)/d(inputs) given d(loss)/d(output). `input_grads[k]`
/// is null when input k does not need a gradient.
using BackwardFn =
    std::function<void(const Tape &, const Tensor &upstream, std::span<Tensor *const> input_grads)>;

class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false, "constant"); }

  /// Leaf that receives a gradient.
  Var variable(Tensor value) { return push(std::move(value), {}, nullptr, true, "variable"); }

  /// Leaf bound to a named parameter. Binding the same name twice returns the
  /// same node, so gradients from every use accumulate in one place.
  Var param(const ParamStore &store, const std::string &name) {
    auto it = params_.find(name);
    if (it != params_.end()) return Var(this, it->second);
    Var v = variable(store.at(name));
    params_.emplace(name, v.id());
    return v;
  }

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
             const char *op) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).needs_grad;
    return push(std::move(value), std::move(inputs), std::move(backward), needs, op);
  }

  const Tensor &value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Afterwards grad(v) is available for
  /// every node that depends on a variable.
  void backward(Var loss) {
    const Tensor &lv = value(loss.id());
    if (lv.size() != 1) {
      throw Error(ErrorCode::NotScalar,
                  "loss has shape " + shape_string(lv.shape()));
    }
    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), false);
    grad_slot(loss.id()).data()[0] = 1.0;

    std::vector<Tensor *> in_grads;
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node &node = nodes_[k];
      if (!has_grad_[k] || !node.backward || !node.needs_grad) continue;
      in_grads.clear();
      for (std::size_t in : node.inputs) {
        in_grads.push_back(nodes_[in].needs_grad ? &grad_slot(in) : nullptr);
      }
      node.backward(*this, grads_[k], in_grads);
    }
    for (std::size_t k = 0; k <= loss.id(); ++k) {
      if (has_grad_[k] && !grads_[k].all_finite()) {
        throw Error(ErrorCode::NonFiniteValue,
                    std::string("gradient of '") + nodes_[k].op + "' is not finite");
      }
    }
  }

  /// Gradient of the last backward() loss w.r.t. a node; zero if unreached.
  Tensor grad(Var v) const {
    if (v.id() < has_grad_.size() && has_grad_[v.id()]) return grads_[v.id()];
    return Tensor(value(v.id()).shape());
  }

  /// Gradients for every entry of `store`; entries never bound get zeros.
  ParamStore param_grads(const ParamStore &store) const {
    ParamStore out = store.zeros_like();
    for (const auto &[name, id] : params_) {
      if (!store.contains(name)) continue;
      if (id < has_grad_.size() && has_grad_[id]) out.set(name, grads_[id]);
    }
    return out;
  }

private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    const char *op = "";
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
           bool needs_grad, const char *op) {
    if (!value.all_finite()) {
      throw Error(ErrorCode::NonFiniteValue, std::string("output of '") + op + "' is not finite");
    }
    nodes_.push_back({std::move(value), std::move(inputs), std::move(backward), needs_grad, op});
    return Var(this, nodes_.size() - 1);
  }

  Tensor &grad_slot(std::size_t id) {
    if (!has_grad_[id]) {
      grads_[id] = Tensor(nodes_[id].value.shape());
      has_grad_[id] = true;
    }
    return grads_[id];
  }

  std::deque<Node> nodes_; // deque keeps value() references stable
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  std::map<std::string, std::size_t> params_;
};

inline const Tensor &Var::value() const { return tape_->value(id_); }

/// Backward sweep from `loss`, returning one gradient per entry of `params`.
inline ParamStore backward(Tape &tape, Var loss, const ParamStore &params) {
  tape.backward(loss);
  return tape.param_grads(params);
}

// ---------------------------------------------------------------------------
// Operations

namespace detail {

inline void require_matrix(const Tensor &t, const char *op) {
  if (!t.is_matrix()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) +
                                              " vs " + shape_string(b.shape()));
  }
}

inline void same_tape(const Var &a, const Var &b) {
  if (&a.tape() != &b.tape()) {
    throw Error(ErrorCode::InvalidArgument, "operands recorded on different tapes");
  }
}

// out (m x n) += a (m x k) * b (k x n)
inline void gemm_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double *orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double *brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out (m x n) += a^T * b with a (k x m), b (k x n)
inline void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                        std::span<double> out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double *arow = a.data() + p * m;
    const double *brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double *orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out (m x k) += a (m x n) * b^T with b (k x n)
inline void gemm_nt_acc(std::span<const double> a, std::span<const double> b,
                        std::span<double> out, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double *arow = a.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double *brow = b.data() + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      out[i * k + p] += s;
    }
  }
}

template <class F, class G>
Var unary(const Var &x, const char *op, F forward, G derivative) {
  const Tensor &xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t k = 0; k < xv.size(); ++k) out[k] = forward(xv[k]);
  const std::size_t xid = x.id();
  Tape &tape = x.tape();
  const std::size_t out_id = tape.size();
  return tape.record(
      std::move(out), {xid},
      [xid, out_id, derivative](const Tape &t, const Tensor &up, std::span<Tensor *const> g) {
        const Tensor &xv = t.value(xid);
        const Tensor &yv = t.value(out_id);
        for (std::size_t k = 0; k < xv.size(); ++k) (*g[0])[k] += up[k] * derivative(xv[k], yv[k]);
      },
      op);
}

} // namespace detail

inline Tensor matmul(const Tensor &a, const Tensor &b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  detail::gemm_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

inline Tensor transpose(const Tensor &a) {
  detail::require_matrix(a, "transpose");
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Var matmul(const Var &a, const Var &b) {
  detail::same_tape(a, b);
  Tensor out = matmul(a.value(), b.value());
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out), {aid, bid},
      [aid, bid](const Tape &t, const Tensor &up, std::span<Tensor *const> g) {
        const Tensor &av = t.value(aid);
        const Tensor &bv = t.value(bid);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
        if (g[0]) detail::gemm_nt_acc(up.data(), bv.data(), g[0]->data(), m, n, k);
        if (g[1]) detail::gemm_tn_acc(av.data(), up.data(), g[1]->data(), k, m, n);
      },
      "matmul");
}

inline Var add(const Var &a, const Var &b) {
  detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b.value()[k];
  return a.tape().record(
      std::move(out), {a.id(), b.id()},
      [](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        for (Tensor *gi : g) {
          if (!gi) continue;
          for (std::size_t k = 0; k < up.size(); ++k) (*gi)[k] += up[k];
        }
      },
      "add");
}

inline Var sub(const Var &a, const Var &b) {
  detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b.value()[k];
  return a.tape().record(
      std::move(out), {a.id(), b.id()},
      [](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        if (g[0])
          for (std::size_t k = 0; k < up.size(); ++k) (*g[0])[k] += up[k];
        if (g[1])
          for (std::size_t k = 0; k < up.size(); ++k) (*g[1])[k] -= up[k];
      },
      "sub");
}

inline Var scale(const Var &x, double s) {
  Tensor out = x.value();
  for (double &v : out.values()) v *= s;
  return x.tape().record(
      std::move(out), {x.id()},
      [s](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        for (std::size_t k = 0; k < up.size(); ++k) (*g[0])[k] += s * up[k];
      },
      "scale");
}

inline Var add_scalar(const Var &x, double c) {
  Tensor out = x.value();
  for (double &v : out.values()) v += c;
  return x.tape().record(
      std::move(out), {x.id()},
      [](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        for (std::size_t k = 0; k < up.size(); ++k) (*g[0])[k] += up[k];
      },
      "add_scalar");
}

inline Var hadamard(const Var &a, const Var &b) {
  detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "hadamard");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.value()[k];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out), {aid, bid},
      [aid, bid](const Tape &t, const Tensor &up, std::span<Tensor *const> g) {
        const Tensor &av = t.value(aid);
        const Tensor &bv = t.value(bid);
        if (g[0])
          for (std::size_t k = 0; k < up.size(); ++k) (*g[0])[k] += up[k] * bv[k];
        if (g[1])
          for (std::size_t k = 0; k < up.size(); ++k) (*g[1])[k] += up[k] * av[k];
      },
      "hadamard");
}

inline Var transpose(const Var &x) {
  Tensor out = transpose(x.value());
  return x.tape().record(
      std::move(out), {x.id()},
      [](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        Tensor &gx = *g[0];
        for (std::size_t i = 0; i < up.rows(); ++i)
          for (std::size_t j = 0; j < up.cols(); ++j) gx(j, i) += up(i, j);
      },
      "transpose");
}

/// Stacks matrices with equal column counts vertically.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var &p : parts) {
    detail::same_tape(parts[0], p);
    detail::require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != cols) {
      throw Error(ErrorCode::ShapeMismatch, "concat_rows column mismatch");
    }
    rows += p.value().rows();
    ids.push_back(p.id());
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var &p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  std::vector<std::size_t> sizes;
  for (const Var &p : parts) sizes.push_back(p.value().size());
  return parts[0].tape().record(
      std::move(out), ids,
      [sizes](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < g.size(); ++p) {
          if (g[p])
            for (std::size_t k = 0; k < sizes[p]; ++k) (*g[p])[k] += up[off + k];
          off += sizes[p];
        }
      },
      "concat_rows");
}

namespace detail {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

} // namespace detail

/// Sum along an axis of a matrix: axis 0 collapses rows (result 1 x n),
/// axis 1 collapses columns (result m x 1).
inline Var reduce_sum(const Var &x, std::size_t axis) {
  const Tensor &xv = x.value();
  detail::require_matrix(xv, "reduce_sum");
  if (axis > 1) throw Error(ErrorCode::ShapeMismatch, "reduce_sum axis must be 0 or 1");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = axis == 0 ? Tensor::matrix(1, n) : Tensor::matrix(m, 1);
  const std::size_t outer = axis == 0 ? n : m, inner = axis == 0 ? m : n;
  for (std::size_t a = 0; a < outer; ++a) {
    detail::CompensatedSum acc;
    for (std::size_t b = 0; b < inner; ++b) acc.add(axis == 0 ? xv(b, a) : xv(a, b));
    out[a] = acc.value();
  }
  return x.tape().record(
      std::move(out), {x.id()},
      [axis, m, n](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        Tensor &gx = *g[0];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx(i, j) += axis == 0 ? up(0, j) : up(i, 0);
      },
      "reduce_sum");
}

/// Sum of all entries as a 1 x 1 scalar.
inline Var sum(const Var &x) {
  const Tensor &xv = x.value();
  detail::CompensatedSum acc;
  for (double v : xv.values()) acc.add(v);
  return x.tape().record(
      Tensor::scalar(acc.value()), {x.id()},
      [](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        for (double &v : g[0]->values()) v += up[0];
      },
      "sum");
}

inline constexpr double kEluAlpha = 1.0;

inline Var elu(const Var &x) {
  return detail::unary(
      x, "elu", [](double v) { return v > 0.0 ? v : kEluAlpha * std::expm1(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : kEluAlpha * std::exp(v); });
}

inline double logistic(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Var logistic(const Var &x) {
  return detail::unary(
      x, "logistic", [](double v) { return logistic(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var &x) {
  return detail::unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var &x) {
  return detail::unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(const Var &x) {
  return detail::unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Softmax of each row, computed after subtracting the row maximum.
inline Tensor row_softmax(const Tensor &x) {
  detail::require_matrix(x, "row_softmax");
  Tensor out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= z;
  }
  return out;
}

inline Var row_softmax(const Var &x) {
  Tensor out = row_softmax(x.value());
  Tape &tape = x.tape();
  const std::size_t out_id = tape.size();
  return tape.record(
      std::move(out), {x.id()},
      [out_id](const Tape &t, const Tensor &up, std::span<Tensor *const> g) {
        const Tensor &y = t.value(out_id);
        Tensor &gx = *g[0];
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += up(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += y(i, j) * (up(i, j) - dot);
        }
      },
      "row_softmax");
}

/// Adds a 1 x n row to every row of an m x n matrix.
inline Var add_row(const Var &x, const Var &row) {
  detail::same_tape(x, row);
  const Tensor &xv = x.value();
  const Tensor &rv = row.value();
  detail::require_matrix(xv, "add_row");
  if (!rv.is_matrix() || rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "add_row " + shape_string(xv.shape()) + " + " + shape_string(rv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) += rv(0, j);
  return x.tape().record(
      std::move(out), {x.id(), row.id()},
      [](const Tape &, const Tensor &up, std::span<Tensor *const> g) {
        if (g[0])
          for (std::size_t k = 0; k < up.size(); ++k) (*g[0])[k] += up[k];
        if (g[1])
          for (std::size_t i = 0; i < up.rows(); ++i)
            for (std::size_t j = 0; j < up.cols(); ++j) (*g[1])(0, j) += up(i, j);
      },
      "add_row");
}

inline constexpr double kProbClamp = 1e-12;

/// Mean binary cross-entropy over the strict upper triangle of an N x N
/// probability matrix against a 0/1 target matrix. Probabilities are clamped
/// to [1e-12, 1 - 1e-12]; clamped entries pass no gradient. N = 1 gives 0.
inline Var pairwise_bce(const Var &p, const Tensor &target) {
  const Tensor &pv = p.value();
  detail::require_matrix(pv, "pairwise_bce");
  detail::require_same_shape(pv, target, "pairwise_bce");
  if (pv.rows() != pv.cols()) throw Error(ErrorCode::ShapeMismatch, "pairwise_bce needs square");
  const std::size_t n = pv.rows();
  const double pairs = static_cast<double>(n * (n - 1) / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double q = std::clamp(pv(i, j), kProbClamp, 1.0 - kProbClamp);
      const double a = target(i, j);
      total -= a * std::log(q) + (1.0 - a) * std::log(1.0 - q);
    }
  }
  const double value = pairs > 0 ? total / pairs : 0.0;
  const std::size_t pid = p.id();
  return p.tape().record(
      Tensor::scalar(value), {pid},
      [pid, target, n, pairs](const Tape &t, const Tensor &up, std::span<Tensor *const> g) {
        if (pairs == 0) return;
        const Tensor &pv = t.value(pid);
        Tensor &gp = *g[0];
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            const double q = pv(i, j);
            if (q < kProbClamp || q > 1.0 - kProbClamp) continue;
            const double a = target(i, j);
            gp(i, j) += up[0] * (-a / q + (1.0 - a) / (1.0 - q)) / pairs;
          }
        }
      },
      "pairwise_bce");
}

/// Same quantity as pairwise_bce(logistic(x), target), evaluated from logits
/// as softplus(x) - a*x. Clamping p to [1e-12, 1 - 1e-12] is equivalent to
/// clamping x to +-log((1 - 1e-12) / 1e-12); outside that band the gradient
/// is zero, as in pairwise_bce.
inline Var pairwise_bce_logits(const Var &x, const Tensor &target) {
  const Tensor &xv = x.value();
  detail::require_matrix(xv, "pairwise_bce_logits");
  detail::require_same_shape(xv, target, "pairwise_bce_logits");
  if (xv.rows() != xv.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "pairwise_bce_logits needs square");
  }
  static const double limit = std::log((1.0 - kProbClamp) / kProbClamp);
  const std::size_t n = xv.rows();
  const double pairs = static_cast<double>(n * (n - 1) / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::clamp(xv(i, j), -limit, limit);
      const double softplus = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
      total += softplus - target(i, j) * v;
    }
  }
  const double value = pairs > 0 ? total / pairs : 0.0;
  const std::size_t xid = x.id();
  return x.tape().record(
      Tensor::scalar(value), {xid},
      [xid, target, n, pairs](const Tape &t, const Tensor &up, std::span<Tensor *const> g) {
        if (pairs == 0) return;
        const Tensor &xv = t.value(xid);
        Tensor &gx = *g[0];
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            const double v = xv(i, j);
            if (v < -limit || v > limit) continue;
            gx(i, j) += up[0] * (logistic(v) - target(i, j)) / pairs;
          }
        }
      },
      "pairwise_bce_logits");
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Builds a scalar loss on `tape` from parameters bound out of `params`.
using LossFn = std::function<Var(Tape &, const ParamStore &)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

namespace detail {

inline void check_grad_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw Error(ErrorCode::InvalidArgument, "grad_check eps must lie in [1e-7, 1e-3]");
  }
}

/// Seeded sample of (name, flat index) pairs; every coordinate when there
/// are no more than `samples` (raised to at least 200).
inline std::vector<std::pair<std::string, std::size_t>>
sample_coordinates(const ParamStore &params, std::size_t samples, std::uint64_t seed) {
  samples = std::max<std::size_t>(samples, 200);
  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto &[name, t] : params) {
    for (std::size_t k = 0; k < t.size(); ++k) coords.emplace_back(name, k);
  }
  if (coords.size() > samples) {
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, std::size_t>> picked;
    std::sample(coords.begin(), coords.end(), std::back_inserter(picked), samples, rng);
    coords = std::move(picked);
  }
  return coords;
}

inline double relative_error(double numeric, double exact) {
  const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-8});
  return std::abs(numeric - exact) / denom;
}

inline void record_error(GradCheckResult &r, double rel, const std::string &name, std::size_t k) {
  if (r.worst_param.empty() || rel > r.max_rel_error) {
    r.max_rel_error = rel;
    r.worst_param = name;
    r.worst_index = k;
  }
}

} // namespace detail

/// Compares backward() against central differences on a seeded sample of
/// coordinates (all of them when there are fewer than `samples`). Relative
/// error uses max(|a|, |b|, 1e-8) as denominator.
inline GradCheckResult grad_check_detailed(const LossFn &f, ParamStore &params, double eps,
                                           std::size_t samples = 256, std::uint64_t seed = 0) {
  detail::check_grad_eps(eps);
  ParamStore analytic;
  {
    Tape tape;
    Var loss = f(tape, params);
    analytic = backward(tape, loss, params);
  }
  const auto coords = detail::sample_coordinates(params, samples, seed);

  auto eval = [&]() {
    Tape tape;
    return f(tape, params).value().item();
  };

  GradCheckResult result;
  result.coordinates = coords.size();
  for (const auto &[name, k] : coords) {
    double &slot = params.at(name)[k];
    const double saved = slot;
    slot = saved + eps;
    const double up = eval();
    slot = saved - eps;
    const double down = eval();
    slot = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::NonFiniteValue, "loss not finite while perturbing " + name);
    }
    const double numeric = (up - down) / (2.0 * eps);
    detail::record_error(result, detail::relative_error(numeric, analytic.at(name)[k]), name, k);
  }
  return result;
}

inline double grad_check(const LossFn &f, ParamStore &params, double eps,
                         std::size_t samples = 256, std::uint64_t seed = 0) {
  return grad_check_detailed(f, params, eps, samples, seed).max_rel_error;
}

} // namespace gvae
