// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gnnmoe/autodiff.hpp"

namespace gnnmoe {

/// Builds a scalar output on `tape` from leaf variables bound to `inputs`.
using ComputationBuilder = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords_per_input = 0;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

/// Max over (sampled) coordinates of |analytic − central difference| / max(1e-8, |central difference|).
inline double grad_check(const ComputationBuilder& f, const std::vector<DenseMatrix>& inputs,
                         const GradCheckOptions& opt = {}) {
  auto evaluate = [&](const std::vector<DenseMatrix>& xs) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(t.leaf(x));
    return f(t, vars).scalar();
  };

  std::vector<DenseMatrix> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(t.leaf(x));
    Var out = f(t, vars);
    t.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  RngState rng(opt.seed);
  std::vector<DenseMatrix> probe = inputs;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_input > 0 && coords.size() > opt.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_input);
    }
    for (std::size_t i : coords) {
      const double orig = probe[k][i];
      probe[k][i] = orig + opt.step;
      const double fp = evaluate(probe);
      probe[k][i] = orig - opt.step;
      const double fm = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1e-8, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Same measure for Parameters reached through Tape::param. `f` must build a
/// scalar on the given tape; it is re-run for every probe.
inline double grad_check_parameters(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                                    const GradCheckOptions& opt = {}) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Var out = f(t);
    t.backward(out);
  }
  std::vector<DenseMatrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto evaluate = [&] {
    Tape t;
    return f(t).scalar();
  };

  RngState rng(opt.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    DenseMatrix& w = params[k]->value;
    std::vector<std::size_t> coords(w.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_input > 0 && coords.size() > opt.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_input);
    }
    for (std::size_t i : coords) {
      const double orig = w[i];
      w[i] = orig + opt.step;
      const double fp = evaluate();
      w[i] = orig - opt.step;
      const double fm = evaluate();
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      worst = std::max(worst, std::abs(analytic[k][i] - numeric) / std::max(1e-8, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace gnnmoe
