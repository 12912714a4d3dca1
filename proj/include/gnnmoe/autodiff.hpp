// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense row-major matrices.
// A Tape is rebuilt on every forward pass; Var is a cheap handle into it.
#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gnnmoe/matrix.hpp"
#include "gnnmoe/rng.hpp"

namespace gnnmoe {

/// A trainable tensor that outlives individual tapes.
struct Parameter {
  std::string name;
  DenseMatrix value;
  DenseMatrix grad;
  bool decay = true;  // subject to weight decay

  Parameter() = default;
  Parameter(std::string n, DenseMatrix v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(wd) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = DenseMatrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  const DenseMatrix& value() const;
  DenseMatrix grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the output gradient and accumulates into input gradients.
  using BackwardFn = std::function<void(const DenseMatrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseMatrix value) { return push(std::move(value), false, {}, nullptr); }
  Var leaf(DenseMatrix value, bool requires_grad = true) { return push(std::move(value), requires_grad, {}, nullptr); }

  /// Leaf bound to a Parameter; backward adds into param.grad.
  Var param(Parameter& p) {
    Var v = push(p.value, true, {}, nullptr);
    nodes_[v.id()].param = &p;
    return v;
  }

  /// Appends an op output. The backward rule is kept only if some input needs a gradient.
  Var record(DenseMatrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool rg = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape() != this) throw std::logic_error("Tape::record: input belongs to a different tape");
      ids.push_back(in.id());
      rg = rg || nodes_[in.id()].requires_grad;
    }
    if (!value.all_finite()) throw DomainError("non-finite value produced on tape");
    return push(std::move(value), rg, std::move(ids), rg ? std::move(fn) : BackwardFn{});
  }

  std::size_t size() const { return nodes_.size(); }
  const DenseMatrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  DenseMatrix grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.same_shape(n.value)) return n.grad;
    return DenseMatrix(n.value.rows(), n.value.cols());
  }

  /// Gradient accumulator for `id`, or nullptr if that node needs no gradient.
  DenseMatrix* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.grad.same_shape(n.value)) n.grad = DenseMatrix(n.value.rows(), n.value.cols());
    return &n.grad;
  }
  DenseMatrix* grad_sink(const Var& v) { return grad_sink(v.id()); }

  void backward(const Var& loss) {
    if (loss.tape() != this) throw std::logic_error("backward: loss belongs to a different tape");
    const DenseMatrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw DimensionError("backward: loss must be scalar, got " + shape_str(lv.rows(), lv.cols()));
    if (DenseMatrix* g = grad_sink(loss.id())) (*g)[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.grad.same_shape(n.value)) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) {
        if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(DenseMatrix value, bool rg, std::vector<std::size_t> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, rg, std::move(inputs), std::move(fn), nullptr});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const DenseMatrix& Var::value() const { return tape_->value(id_); }
inline DenseMatrix Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace ad {

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
constexpr double kLeakySlope = 0.2;

inline void softmax_row(std::span<const double> in, std::span<double> out, double inv_temp) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : in) mx = std::max(mx, v);
  double s = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp((in[j] - mx) * inv_temp);
    s += out[j];
  }
  for (double& v : out) v /= s;
}

// dA = (y ⊙ (G − rowsum(G ⊙ y))) · inv_temp, accumulated into `sink`.
inline void softmax_backward(const DenseMatrix& y, const DenseMatrix& g, double inv_temp, DenseMatrix& sink) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) dot += g(r, j) * y(r, j);
    for (std::size_t j = 0; j < y.cols(); ++j) sink(r, j) += y(r, j) * (g(r, j) - dot) * inv_temp;
  }
}

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  DenseMatrix out;
  gemm(a.value(), b.value(), out);
  return t.record(std::move(out), {a, b}, [&t, a, b](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a)) gemm_nt(g, b.value(), *ga, true);
    if (DenseMatrix* gb = t.grad_sink(b)) gemm_tn(a.value(), g, *gb, true);
  });
}

/// s · d with constant sparse structure. `s` must outlive the tape.
inline Var spmm(const SparseMatrix& s, const Var& d) {
  Tape& t = *d.tape();
  DenseMatrix out;
  gnnmoe::spmm(s, d.value(), out);
  return t.record(std::move(out), {d}, [&t, &s, d](const DenseMatrix& g) {
    if (DenseMatrix* gd = t.grad_sink(d)) spmm_t(s, g, *gd, true);
  });
}

enum class Elementwise { Add, Sub, Hadamard, Scale, Relu, LeakyRelu, Sigmoid, Swish, Gelu, Log, Exp };

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  out += b.value();
  return t.record(std::move(out), {a, b}, [&t, a, b](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a)) *ga += g;
    if (DenseMatrix* gb = t.grad_sink(b)) *gb += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record(std::move(out), {a, b}, [&t, a, b](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a)) *ga += g;
    if (DenseMatrix* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record(std::move(out), {a, b}, [&t, a, b](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (DenseMatrix* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

inline Var scale(const Var& a, double c) {
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (double& v : out.data()) v *= c;
  return t.record(std::move(out), {a}, [&t, a, c](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (double& v : out.data()) v += c;
  return t.record(std::move(out), {a}, [&t, a](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a)) *ga += g;
  });
}

namespace detail {
// Unary map with derivative expressed through (input, output).
template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (double& v : out.data()) v = f(v);
  const std::size_t out_id = t.size();  // id the record below will receive
  return t.record(std::move(out), {a}, [&t, a, out_id, df](const DenseMatrix& g) {
    DenseMatrix* ga = t.grad_sink(a);
    if (!ga) return;
    const DenseMatrix& x = a.value();
    const DenseMatrix& y = t.value(out_id);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i], y[i]);
  });
}
}  // namespace detail

inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; },
                       [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0 ? x : detail::kLeakySlope * x; },
                       [](double x, double) { return x > 0 ? 1.0 : detail::kLeakySlope; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, [](double x) { return detail::sigmoid(x); },
                       [](double, double y) { return y * (1.0 - y); });
}

/// x · sigmoid(x)
inline Var swish(const Var& a) {
  return detail::unary(a, [](double x) { return x * detail::sigmoid(x); },
                       [](double x, double) {
                         const double s = detail::sigmoid(x);
                         return s + x * s * (1.0 - s);
                       });
}

/// tanh approximation.
inline Var gelu(const Var& a) {
  using detail::kGeluA;
  using detail::kGeluC;
  return detail::unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

inline Var log(const Var& a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log: non-positive entry " + std::to_string(v));
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// max(a, floor); gradient passes only where a >= floor.
inline Var clamp_min(const Var& a, double floor) {
  return detail::unary(a, [floor](double x) { return x < floor ? floor : x; },
                       [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

inline Var elementwise(Elementwise kind, const Var& a, const Var& b) {
  switch (kind) {
    case Elementwise::Add: return add(a, b);
    case Elementwise::Sub: return sub(a, b);
    case Elementwise::Hadamard: return hadamard(a, b);
    default: throw std::invalid_argument("elementwise: kind is not binary");
  }
}

inline Var elementwise(Elementwise kind, const Var& a, double c = 1.0) {
  switch (kind) {
    case Elementwise::Scale: return scale(a, c);
    case Elementwise::Relu: return relu(a);
    case Elementwise::LeakyRelu: return leaky_relu(a);
    case Elementwise::Sigmoid: return sigmoid(a);
    case Elementwise::Swish: return swish(a);
    case Elementwise::Gelu: return gelu(a);
    case Elementwise::Log: return log(a);
    case Elementwise::Exp: return exp(a);
    default: throw std::invalid_argument("elementwise: kind needs a second operand");
  }
}

/// Sum of all entries, as a 1×1.
inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(DenseMatrix(1, 1, s), {a}, [&t, a](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a))
      for (double& v : ga->data()) v += g[0];
  });
}

/// 1×1 `s` times every entry of `m`.
inline Var scalar_mul(const Var& s, const Var& m) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("scalar_mul: first operand must be 1x1");
  Tape& t = *m.tape();
  DenseMatrix out = m.value();
  const double c = s.scalar();
  for (double& v : out.data()) v *= c;
  return t.record(std::move(out), {s, m}, [&t, s, m](const DenseMatrix& g) {
    if (DenseMatrix* gs = t.grad_sink(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * m.value()[i];
      (*gs)[0] += acc;
    }
    if (DenseMatrix* gm = t.grad_sink(m)) {
      const double c2 = s.scalar();
      for (std::size_t i = 0; i < g.size(); ++i) (*gm)[i] += c2 * g[i];
    }
  });
}

/// Column j of `a` as an n×1.
inline Var column(const Var& a, std::size_t j) {
  if (j >= a.cols()) throw DimensionError("column: index out of range");
  Tape& t = *a.tape();
  DenseMatrix out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) out(r, 0) = a.value()(r, j);
  return t.record(std::move(out), {a}, [&t, a, j](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a))
      for (std::size_t r = 0; r < g.rows(); ++r) (*ga)(r, j) += g(r, 0);
  });
}

/// Scales row r of `m` by w(r, 0).
inline Var scale_rows(const Var& m, const Var& w) {
  if (w.cols() != 1 || w.rows() != m.rows())
    throw DimensionError("scale_rows: weights " + shape_str(w.rows(), w.cols()) + " for " +
                         shape_str(m.rows(), m.cols()));
  Tape& t = *m.tape();
  DenseMatrix out = m.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v *= w.value()(r, 0);
  return t.record(std::move(out), {m, w}, [&t, m, w](const DenseMatrix& g) {
    if (DenseMatrix* gm = t.grad_sink(m))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gm)(r, c) += g(r, c) * w.value()(r, 0);
    if (DenseMatrix* gw = t.grad_sink(w))
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * m.value()(r, c);
        (*gw)(r, 0) += acc;
      }
  });
}

/// Adds the 1×cols `row` to every row of `m`.
inline Var add_row(const Var& m, const Var& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) throw DimensionError("add_row: bias shape mismatch");
  Tape& t = *m.tape();
  DenseMatrix out = m.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += row.value()(0, c);
  return t.record(std::move(out), {m, row}, [&t, m, row](const DenseMatrix& g) {
    if (DenseMatrix* gm = t.grad_sink(m)) *gm += g;
    if (DenseMatrix* gr = t.grad_sink(row))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gr)(0, c) += g(r, c);
  });
}

/// Same value, no gradient path.
inline Var detach(const Var& a) { return a.tape()->constant(a.value()); }

inline Var rowwise_softmax(const Var& a, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw DomainError("rowwise_softmax: temperature must be positive");
  Tape& t = *a.tape();
  const double inv = 1.0 / temperature;
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) detail::softmax_row(a.value().row(r), out.row(r), inv);
  const std::size_t out_id = t.size();
  return t.record(std::move(out), {a}, [&t, a, inv, out_id](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a)) detail::softmax_backward(t.value(out_id), g, inv, *ga);
  });
}

/// Softmax over the k largest entries of each row; the rest are exactly zero.
/// Ties are resolved towards the lower index.
inline Var rowwise_topk_softmax(const Var& a, std::size_t k, double temperature = 1.0) {
  if (k == 0 || k > a.cols()) throw DomainError("rowwise_topk_softmax: k must lie in [1, cols]");
  if (!(temperature > 0.0)) throw DomainError("rowwise_topk_softmax: temperature must be positive");
  Tape& t = *a.tape();
  const double inv = 1.0 / temperature;
  const std::size_t n = a.rows(), m = a.cols();
  DenseMatrix out(n, m);
  std::vector<std::size_t> idx(m);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = a.value().row(r);
    for (std::size_t j = 0; j < m; ++j) idx[j] = j;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return row[x] > row[y]; });
    const double mx = row[idx[0]];
    double s = 0.0;
    for (std::size_t q = 0; q < k; ++q) s += (out(r, idx[q]) = std::exp((row[idx[q]] - mx) * inv));
    for (std::size_t q = 0; q < k; ++q) out(r, idx[q]) /= s;
  }
  DenseMatrix y = out;
  return t.record(std::move(out), {a}, [&t, a, inv, y = std::move(y)](const DenseMatrix& g) {
    // Zero entries of y contribute nothing, so the full softmax rule applies unchanged.
    if (DenseMatrix* ga = t.grad_sink(a)) detail::softmax_backward(y, g, inv, *ga);
  });
}

/// Per-row standardization (population variance) followed by gain/bias.
inline Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5) {
  const std::size_t n = a.rows(), d = a.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  Tape& t = *a.tape();
  DenseMatrix xhat(n, d), out(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = a.value().row(r);
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (x[c] - mu) * inv_std[r];
      out(r, c) = xhat(r, c) * gain.value()(0, c) + bias.value()(0, c);
    }
  }
  return t.record(std::move(out), {a, gain, bias},
                  [&t, a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](const DenseMatrix& g) {
                    const std::size_t n2 = g.rows(), d2 = g.cols();
                    if (DenseMatrix* gg = t.grad_sink(gain))
                      for (std::size_t r = 0; r < n2; ++r)
                        for (std::size_t c = 0; c < d2; ++c) (*gg)(0, c) += g(r, c) * xhat(r, c);
                    if (DenseMatrix* gb = t.grad_sink(bias))
                      for (std::size_t r = 0; r < n2; ++r)
                        for (std::size_t c = 0; c < d2; ++c) (*gb)(0, c) += g(r, c);
                    DenseMatrix* ga = t.grad_sink(a);
                    if (!ga) return;
                    std::vector<double> dxhat(d2);
                    for (std::size_t r = 0; r < n2; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t c = 0; c < d2; ++c) {
                        dxhat[c] = g(r, c) * gain.value()(0, c);
                        m1 += dxhat[c];
                        m2 += dxhat[c] * xhat(r, c);
                      }
                      m1 /= static_cast<double>(d2);
                      m2 /= static_cast<double>(d2);
                      for (std::size_t c = 0; c < d2; ++c)
                        (*ga)(r, c) += inv_std[r] * (dxhat[c] - m1 - xhat(r, c) * m2);
                    }
                  });
}

/// Inverted dropout. Identity in eval mode or when rate is 0.
inline Var dropout(const Var& a, double rate, RngState& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  Tape& t = *a.tape();
  const double keep = 1.0 / (1.0 - rate);
  DenseMatrix mask(a.rows(), a.cols());
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  DenseMatrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return t.record(std::move(out), {a}, [&t, a, mask = std::move(mask)](const DenseMatrix& g) {
    if (DenseMatrix* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * mask[i];
  });
}

inline Var mean_rows(const Var& a) {
  if (a.rows() == 0 || a.cols() == 0) throw DimensionError("mean_rows: empty matrix");
  Tape& t = *a.tape();
  const std::size_t n = a.rows(), d = a.cols();
  DenseMatrix out(1, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out(0, c) += a.value()(r, c);
  for (double& v : out.data()) v /= static_cast<double>(n);
  return t.record(std::move(out), {a}, [&t, a](const DenseMatrix& g) {
    DenseMatrix* ga = t.grad_sink(a);
    if (!ga) return;
    const double inv = 1.0 / static_cast<double>(ga->rows());
    for (std::size_t r = 0; r < ga->rows(); ++r)
      for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g(0, c) * inv;
  });
}

/// Mean over `mask` rows of −Σ_c y_c log softmax(logits)_c.
inline Var softmax_cross_entropy(const Var& logits, const DenseMatrix& onehot, std::span<const std::size_t> mask) {
  if (mask.empty()) throw DomainError("softmax_cross_entropy: empty mask");
  if (!logits.value().same_shape(onehot))
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.rows(), logits.cols()) +
                         " vs targets " + shape_str(onehot.rows(), onehot.cols()));
  Tape& t = *logits.tape();
  const std::size_t c = logits.cols();
  DenseMatrix probs(logits.rows(), c);
  double loss = 0.0;
  for (std::size_t i : mask) {
    if (i >= logits.rows()) throw DimensionError("softmax_cross_entropy: mask index out of range");
    auto row = logits.value().row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(row[j] - lse);
      loss -= onehot(i, j) * (row[j] - lse);
    }
  }
  const double inv = 1.0 / static_cast<double>(mask.size());
  std::vector<std::size_t> rows(mask.begin(), mask.end());
  return t.record(DenseMatrix(1, 1, loss * inv), {logits},
                  [&t, logits, &onehot, inv, rows = std::move(rows), probs = std::move(probs)](const DenseMatrix& g) {
                    DenseMatrix* gl = t.grad_sink(logits);
                    if (!gl) return;
                    for (std::size_t i : rows)
                      for (std::size_t j = 0; j < probs.cols(); ++j)
                        (*gl)(i, j) += g[0] * inv * (probs(i, j) - onehot(i, j));
                  });
}

/// Gumbel-softmax relaxation. In training mode noise is drawn from `rng`; with
/// `hard` the forward value is the one-hot argmax while gradients follow the
/// soft sample. Eval mode returns the noise-free argmax one-hot as a constant.
inline Var gumbel_softmax(const Var& logits, double temperature, bool hard, RngState& rng, bool training) {
  if (!(temperature > 0.0)) throw DomainError("gumbel_softmax: temperature must be positive");
  Tape& t = *logits.tape();
  const std::size_t n = logits.rows(), m = logits.cols();
  if (!training) {
    DenseMatrix onehot(n, m);
    for (std::size_t r = 0; r < n; ++r) onehot(r, detail::argmax_row(logits.value().row(r))) = 1.0;
    return t.constant(std::move(onehot));
  }
  const double inv = 1.0 / temperature;
  DenseMatrix perturbed = logits.value();
  for (double& v : perturbed.data()) v += rng.gumbel();
  DenseMatrix soft(n, m);
  for (std::size_t r = 0; r < n; ++r) detail::softmax_row(perturbed.row(r), soft.row(r), inv);
  DenseMatrix out = soft;
  if (hard) {
    out.fill(0.0);
    for (std::size_t r = 0; r < n; ++r) out(r, detail::argmax_row(soft.row(r))) = 1.0;
  }
  return t.record(std::move(out), {logits}, [&t, logits, inv, soft = std::move(soft)](const DenseMatrix& g) {
    if (DenseMatrix* gl = t.grad_sink(logits)) detail::softmax_backward(soft, g, inv, *gl);
  });
}

}  // namespace ad
}  // namespace gnnmoe
