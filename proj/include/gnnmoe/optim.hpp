// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "gnnmoe/autodiff.hpp"

namespace gnnmoe {

/// AdamW with decoupled weight decay. Moments are indexed by position in the
/// parameter list, so the list must keep the same order across steps.
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<DenseMatrix> m, v;
};

inline void optimizer_step(OptimizerState& s, const std::vector<Parameter*>& params, double lr, double weight_decay) {
  if (s.m.empty()) {
    for (Parameter* p : params) {
      s.m.emplace_back(p->value.rows(), p->value.cols());
      s.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (s.m.size() != params.size()) throw std::logic_error("optimizer_step: parameter list changed size");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.grad.same_shape(p.value)) p.zero_grad();
    if (!s.m[k].same_shape(p.value)) throw DimensionError("optimizer_step: moment shape mismatch for " + p.name);
    const double decay = p.decay ? lr * weight_decay : 0.0;
    auto& w = p.value.data();
    const auto& g = p.grad.data();
    auto& m = s.m[k].data();
    auto& v = s.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= decay * w[i];
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
    }
  }
}

}  // namespace gnnmoe
