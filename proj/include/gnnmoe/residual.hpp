// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gnnmoe/autodiff.hpp"

namespace gnnmoe {

/// LN(c·H⁽⁰⁾ + (1−c)·H) with c = sigmoid(raw). `raw` starts at 0, so c = 0.5.
struct ResidualNorm {
  Parameter raw;
  Parameter gain;
  Parameter bias;

  ResidualNorm() = default;
  ResidualNorm(const std::string& prefix, std::size_t width)
      : raw(prefix + ".residual", DenseMatrix(1, 1), false),
        gain(prefix + ".ln_gain", DenseMatrix(1, width, 1.0), false),
        bias(prefix + ".ln_bias", DenseMatrix(1, width), false) {}

  double coefficient() const { return ad::detail::sigmoid(raw.value[0]); }

  void collect(std::vector<Parameter*>& out, bool adaptive) {
    if (adaptive) out.push_back(&raw);
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

/// With `adaptive` off the coefficient is pinned at 0 and H⁽⁰⁾ drops out.
inline Var residual_norm(ResidualNorm& r, const Var& h0, const Var& h, bool adaptive) {
  if (!h0.value().same_shape(h.value()))
    throw DimensionError("residual_norm: H0 " + shape_str(h0.rows(), h0.cols()) + " vs H " +
                         shape_str(h.rows(), h.cols()));
  Tape& t = *h.tape();
  Var mixed = h;
  if (adaptive) {
    Var c = ad::sigmoid(t.param(r.raw));
    Var one_minus = ad::add_scalar(ad::scale(c, -1.0), 1.0);
    mixed = ad::add(ad::scalar_mul(c, h0), ad::scalar_mul(one_minus, h));
  }
  return ad::layer_norm(mixed, t.param(r.gain), t.param(r.bias));
}

}  // namespace gnnmoe
