// SPDX-License-Identifier: Apache-2.0
//
// Numerical checks for the entropy-regularized routing update
//   π* = argmin_π  −⟨u, π⟩ − λ Σ π log π + (1/η) KL(π ‖ πᵗ)
// whose closed form is π* ∝ exp((log πᵗ + η u) / (1 − ηλ)) for 0 ≤ ηλ < 1.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "gnnmoe/autodiff.hpp"
#include "gnnmoe/rng.hpp"

namespace gnnmoe {

struct RoutingInstance {
  std::vector<double> base;   // πᵗ, strictly positive, sums to 1
  std::vector<double> gains;  // u
  double eta = 0.5;
  double lambda = 0.0;
};

inline void validate(const RoutingInstance& inst) {
  const std::size_t m = inst.base.size();
  if (m < 2) throw DomainError("routing instance needs at least two experts");
  if (inst.gains.size() != m) throw DimensionError("routing instance: gains and base differ in length");
  if (!(inst.eta > 0.0)) throw DomainError("routing instance: step must be positive");
  if (inst.lambda < 0.0) throw DomainError("routing instance: lambda must be non-negative");
  double s = 0.0;
  for (double p : inst.base) {
    if (!(p > 0.0)) throw DomainError("routing instance: base must be strictly positive");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DomainError("routing instance: base must sum to 1");
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// J(π); zero entries contribute nothing, mass where πᵗ = 0 gives +∞.
inline double surrogate_value(const std::vector<double>& pi, const RoutingInstance& inst) {
  if (pi.size() != inst.base.size()) throw DimensionError("surrogate_value: length mismatch");
  double j = 0.0;
  for (std::size_t g = 0; g < pi.size(); ++g) {
    j -= inst.gains[g] * pi[g];
    if (pi[g] <= 0.0) continue;
    if (inst.base[g] <= 0.0) return std::numeric_limits<double>::infinity();
    const double lp = std::log(pi[g]);
    j += -inst.lambda * pi[g] * lp + pi[g] * (lp - std::log(inst.base[g])) / inst.eta;
  }
  return j;
}

/// π ∝ (πᵗ)^{1/(1−ηλ)} · exp(u/τ), τ = (1−ηλ)/η.
inline std::vector<double> mirror_descent_update(const RoutingInstance& inst) {
  validate(inst);
  const double shrink = 1.0 - inst.eta * inst.lambda;
  if (!(shrink > 0.0)) throw DomainError("mirror_descent_update: requires eta * lambda < 1");
  const double tau = shrink / inst.eta;
  const std::size_t m = inst.base.size();
  std::vector<double> logit(m);
  for (std::size_t g = 0; g < m; ++g) logit[g] = std::log(inst.base[g]) / shrink + inst.gains[g] / tau;
  const double mx = *std::max_element(logit.begin(), logit.end());
  std::vector<double> pi(m);
  double z = 0.0;
  for (std::size_t g = 0; g < m; ++g) z += (pi[g] = std::exp(logit[g] - mx));
  for (double& p : pi) p /= z;
  return pi;
}

struct SimplexGrid {
  std::size_t m = 4;
  std::size_t resolution = 100;

  /// Visits every point with coordinates k_g / resolution, Σ k_g = resolution.
  void for_each(const std::function<void(const std::vector<double>&)>& visit) const {
    if (m == 0 || resolution == 0) throw DomainError("SimplexGrid: empty grid");
    std::vector<std::size_t> k(m, 0);
    std::vector<double> p(m);
    k[m - 1] = resolution;
    const double inv = 1.0 / static_cast<double>(resolution);
    while (true) {
      for (std::size_t g = 0; g < m; ++g) p[g] = static_cast<double>(k[g]) * inv;
      visit(p);
      // Next composition in reverse-lexicographic order.
      std::size_t i = m - 1;
      while (i > 0 && k[i] == 0) --i;
      if (i == 0) break;
      const std::size_t rest = k[i];
      k[i] = 0;
      ++k[i - 1];
      k[m - 1] = rest - 1;
    }
  }

  std::size_t size() const {
    // C(resolution + m − 1, m − 1)
    double c = 1.0;
    for (std::size_t i = 1; i < m; ++i) c = c * static_cast<double>(resolution + i) / static_cast<double>(i);
    return static_cast<std::size_t>(std::llround(c));
  }
};

/// Best grid point, then pairwise mass transfers with step halving down to `tol`.
inline std::vector<double> brute_force_argmin(const RoutingInstance& inst, const SimplexGrid& grid,
                                              double tol = 1e-8) {
  validate(inst);
  if (grid.m != inst.base.size()) throw DimensionError("brute_force_argmin: grid dimension mismatch");
  std::vector<double> best;
  double best_j = std::numeric_limits<double>::infinity();
  grid.for_each([&](const std::vector<double>& p) {
    const double j = surrogate_value(p, inst);
    if (j < best_j) {
      best_j = j;
      best = p;
    }
  });

  const std::size_t m = best.size();
  std::vector<double> trial(m);
  for (double step = 1.0 / static_cast<double>(grid.resolution); step > tol * 1e-2; step *= 0.5) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t from = 0; from < m; ++from)
        for (std::size_t to = 0; to < m; ++to) {
          if (from == to || best[from] <= 0.0) continue;
          trial = best;
          const double moved = std::min(step, best[from]);
          trial[from] -= moved;
          trial[to] += moved;
          const double j = surrogate_value(trial, inst);
          if (j < best_j) {
            best_j = j;
            best = trial;
            improved = true;
          }
        }
    }
  }
  return best;
}

inline double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

/// θ = 1/η + δ_k / ln(kε/(m−k)): smallest λ for which the update is ε-soft top-k
/// (uniform base). Requires 1 ≤ k < m, kε/(m−k) < 1 and δ_k > 0.
inline double epsilon_topk_threshold(std::size_t m, std::size_t k, double eps, double eta, double delta) {
  if (k < 1 || k >= m) throw DomainError("epsilon_topk_threshold: need 1 <= k < m");
  if (!(eps > 0.0)) throw DomainError("epsilon_topk_threshold: eps must be positive");
  if (!(eta > 0.0)) throw DomainError("epsilon_topk_threshold: eta must be positive");
  if (!(delta > 0.0)) throw DomainError("epsilon_topk_threshold: delta must be positive");
  const double ratio = static_cast<double>(k) * eps / static_cast<double>(m - k);
  if (!(ratio < 1.0)) throw DomainError("epsilon_topk_threshold: need k*eps/(m-k) < 1");
  return 1.0 / eta + delta / std::log(ratio);
}

/// Indices of the k largest gains; ties go to the lower index.
inline std::vector<std::size_t> top_k_indices(const std::vector<double>& u, std::size_t k) {
  if (k < 1 || k > u.size()) throw DomainError("top_k_indices: need 1 <= k <= m");
  std::vector<std::size_t> idx(u.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
  idx.resize(k);
  return idx;
}

/// u_(k) − u_(k+1) for sorted gains.
inline double gain_gap(const std::vector<double>& u, std::size_t k) {
  if (k < 1 || k >= u.size()) throw DomainError("gain_gap: need 1 <= k < m");
  std::vector<double> s = u;
  std::sort(s.begin(), s.end(), std::greater<>());
  return s[k - 1] - s[k];
}

/// Σ π over indices outside Top_k(u).
inline double tail_mass(const std::vector<double>& pi, const std::vector<double>& u, std::size_t k) {
  if (pi.size() != u.size()) throw DimensionError("tail_mass: length mismatch");
  const auto top = top_k_indices(u, k);
  double tail = 0.0;
  for (std::size_t g = 0; g < pi.size(); ++g)
    if (std::find(top.begin(), top.end(), g) == top.end()) tail += pi[g];
  return tail;
}

struct SharpeningReport {
  bool skipped = false;  // log πᵗ + η u is constant
  std::vector<double> entropies;
  std::vector<std::size_t> argmaxes;
  bool strictly_decreasing = true;
  bool argmax_constant = true;
};

inline SharpeningReport verify_sharpening(const std::vector<double>& base, const std::vector<double>& u, double eta,
                                          const std::vector<double>& lambdas) {
  SharpeningReport r;
  std::vector<double> s(base.size());
  for (std::size_t g = 0; g < base.size(); ++g) s[g] = std::log(base[g]) + eta * u[g];
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  if (*hi - *lo < 1e-12) r.skipped = true;
  for (double lambda : lambdas) {
    if (!(eta * lambda < 1.0)) throw DomainError("verify_sharpening: every lambda needs eta * lambda < 1");
    const auto pi = mirror_descent_update({base, u, eta, lambda});
    r.entropies.push_back(entropy(pi));
    r.argmaxes.push_back(ad::detail::argmax_row(pi));
  }
  for (std::size_t i = 1; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > lambdas[i - 1])) throw DomainError("verify_sharpening: lambda grid must increase");
    if (!(r.entropies[i] < r.entropies[i - 1])) r.strictly_decreasing = false;
    if (r.argmaxes[i] != r.argmaxes[0]) r.argmax_constant = false;
  }
  if (r.skipped) r.strictly_decreasing = r.argmax_constant = false;
  return r;
}

// ---------------------------------------------------------------------------
// Randomized suites.

/// m = 4, η ~ U(0.1, 0.9), λ ~ U(0, 0.9/η), interior base, gains ~ U(−2, 2).
inline RoutingInstance random_instance(RngState& rng, std::size_t m = 4) {
  RoutingInstance inst;
  inst.base.resize(m);
  double s = 0.0;
  for (double& p : inst.base) s += (p = rng.uniform(0.05, 1.0));
  for (double& p : inst.base) p /= s;
  inst.gains.resize(m);
  for (double& u : inst.gains) u = rng.uniform(-2.0, 2.0);
  inst.eta = rng.uniform(0.1, 0.9);
  inst.lambda = rng.uniform(0.0, 0.9 / inst.eta);
  return inst;
}

struct ClosedFormCase {
  RoutingInstance instance;
  std::vector<double> closed_form;
  std::vector<double> brute_force;
  double l1 = 0.0;
  double softmax_gap = 0.0;  // vs softmax((log πᵗ + η u)/(1 − ηλ)) through the autodiff softmax
};

inline std::vector<ClosedFormCase> closed_form_suite(std::size_t instances, std::uint64_t seed,
                                                     std::size_t resolution = 100) {
  RngState rng = RngState(seed).fork(0xC10);
  std::vector<ClosedFormCase> out;
  for (std::size_t i = 0; i < instances; ++i) {
    ClosedFormCase c;
    c.instance = random_instance(rng);
    c.closed_form = mirror_descent_update(c.instance);
    c.brute_force = brute_force_argmin(c.instance, {c.instance.base.size(), resolution});
    c.l1 = l1_distance(c.closed_form, c.brute_force);

    const double shrink = 1.0 - c.instance.eta * c.instance.lambda;
    DenseMatrix s(1, c.instance.base.size());
    for (std::size_t g = 0; g < s.cols(); ++g)
      s(0, g) = (std::log(c.instance.base[g]) + c.instance.eta * c.instance.gains[g]) / shrink;
    Tape t;
    const DenseMatrix sm = ad::rowwise_softmax(t.constant(s)).value();
    for (std::size_t g = 0; g < s.cols(); ++g)
      c.softmax_gap = std::max(c.softmax_gap, std::abs(sm(0, g) - c.closed_form[g]));
    out.push_back(std::move(c));
  }
  return out;
}

struct ThresholdCase {
  RoutingInstance instance;  // lambda left at 0; the sweep varies it
  std::size_t k = 1;
  double eps = 0.1;
  double delta = 0.0;
  double theta = 0.0;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_tail = 0.0;
};

/// Uniform base over 4 experts, k ∈ {1, 2}, ε ∈ {0.05, 0.1}, δ_k ≥ 1; samples
/// λ on [max(θ, 0), 1/η) at `points` evenly spaced values.
inline std::vector<ThresholdCase> threshold_suite(std::size_t instances, std::uint64_t seed, std::size_t points = 20) {
  RngState rng = RngState(seed).fork(0xC0);
  std::vector<ThresholdCase> out;
  constexpr std::size_t m = 4;
  for (std::size_t i = 0; i < instances; ++i) {
    ThresholdCase c;
    c.k = 1 + rng.below(2);
    c.eps = rng.below(2) == 0 ? 0.05 : 0.1;
    c.instance.base.assign(m, 1.0 / m);
    c.instance.eta = rng.uniform(0.1, 0.9);
    // Top k gains sit at least `gap` above the rest.
    const double gap = rng.uniform(1.0, 3.0);
    std::vector<double> u(m);
    for (std::size_t g = 0; g < m; ++g) u[g] = g < c.k ? gap + rng.uniform(0.0, 1.0) : -rng.uniform(0.0, 1.0);
    rng.shuffle(u);
    c.instance.gains = u;
    c.delta = gain_gap(u, c.k);
    c.theta = epsilon_topk_threshold(m, c.k, c.eps, c.instance.eta, c.delta);
    const double hi = 1.0 / c.instance.eta;
    const double lo = std::max(c.theta, 0.0);
    for (std::size_t p = 0; p < points; ++p) {
      RoutingInstance inst = c.instance;
      inst.lambda = lo + (hi - lo) * static_cast<double>(p) / static_cast<double>(points);
      const double tail = tail_mass(mirror_descent_update(inst), u, c.k);
      c.worst_tail = std::max(c.worst_tail, tail);
      ++c.samples;
      c.violations += tail > c.eps;
    }
    out.push_back(std::move(c));
  }
  return out;
}

struct SharpeningCase {
  std::vector<double> base, gains;
  double eta = 0.5;
  std::vector<double> lambdas;
  SharpeningReport report;
};

/// Random interior base and gains, λ grid of `points` values on [0, 0.95/η).
inline std::vector<SharpeningCase> sharpening_suite(std::size_t instances, std::uint64_t seed,
                                                    std::size_t points = 8) {
  RngState rng = RngState(seed).fork(0x5A);
  std::vector<SharpeningCase> out;
  for (std::size_t i = 0; i < instances; ++i) {
    RoutingInstance inst = random_instance(rng);
    SharpeningCase c{inst.base, inst.gains, inst.eta, {}, {}};
    for (std::size_t p = 0; p < points; ++p)
      c.lambdas.push_back(0.95 / inst.eta * static_cast<double>(p) / static_cast<double>(points));
    c.report = verify_sharpening(c.base, c.gains, c.eta, c.lambdas);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace gnnmoe
