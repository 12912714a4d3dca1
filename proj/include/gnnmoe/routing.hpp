// SPDX-License-Identifier: Apache-2.0
//
// Per-node routing over the four message-passing experts and the MoE block
//   H ← LN(α·H⁽⁰⁾ + (1−α)·Σ_e π_e ⊙ E_e(A, H)).
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gnnmoe/experts.hpp"
#include "gnnmoe/residual.hpp"

namespace gnnmoe {

inline constexpr std::size_t kNumExperts = 4;

/// How the block turns H into π.
///   Soft          softmax(ReLU(H W₁) W₂ / T)
///   Uniform       constant 1/4
///   TopK          softmax over the k largest router logits, zero elsewhere
///   DotAttention  softmax(H K / T), K holds one learnable key per expert
///   Forced        constant one-hot on `forced`
enum class RouterKind { Soft, Uniform, TopK, DotAttention, Forced };

struct RoutingOptions {
  RouterKind kind = RouterKind::Soft;
  double temperature = 1.0;
  std::size_t topk = 1;
  ExpertKind forced = ExpertKind::PP;
};

struct SoftRouter {
  Parameter w1;    // d′×d_r, d_r = d′
  Parameter w2;    // d_r×4
  Parameter keys;  // d′×4, dot-attention variant only
};

inline SoftRouter init_router(std::size_t hidden, RngState& rng, const std::string& prefix = "") {
  SoftRouter r;
  r.w1 = Parameter(prefix + "router.W1", glorot_uniform(hidden, hidden, rng));
  r.w2 = Parameter(prefix + "router.W2", glorot_uniform(hidden, kNumExperts, rng));
  r.keys = Parameter(prefix + "router.keys", glorot_uniform(hidden, kNumExperts, rng));
  return r;
}

/// Router logits ReLU(H W₁) W₂.
inline Var router_logits(SoftRouter& r, const Var& h) {
  if (h.cols() != r.w1.value.rows())
    throw DimensionError("router: H has " + std::to_string(h.cols()) + " columns, W1 expects " +
                         std::to_string(r.w1.value.rows()));
  Tape& t = *h.tape();
  return ad::matmul(ad::relu(ad::matmul(h, t.param(r.w1))), t.param(r.w2));
}

inline Var route_soft(SoftRouter& r, const Var& h, double temperature = 1.0) {
  return ad::rowwise_softmax(router_logits(r, h), temperature);
}

inline Var route(SoftRouter& r, const RoutingOptions& opt, const Var& h) {
  Tape& t = *h.tape();
  const std::size_t n = h.rows();
  switch (opt.kind) {
    case RouterKind::Soft: return route_soft(r, h, opt.temperature);
    case RouterKind::Uniform: return t.constant(DenseMatrix(n, kNumExperts, 1.0 / kNumExperts));
    case RouterKind::TopK: return ad::rowwise_topk_softmax(router_logits(r, h), opt.topk, opt.temperature);
    case RouterKind::DotAttention:
      if (h.cols() != r.keys.value.rows()) throw DimensionError("router: key width mismatch");
      return ad::rowwise_softmax(ad::matmul(h, t.param(r.keys)), opt.temperature);
    case RouterKind::Forced: {
      DenseMatrix pi(n, kNumExperts);
      for (std::size_t i = 0; i < n; ++i) pi(i, static_cast<std::size_t>(opt.forced)) = 1.0;
      return t.constant(std::move(pi));
    }
  }
  throw std::logic_error("route: unknown router kind");
}

struct MoEBlock {
  SoftRouter router;
  std::array<ExpertParams, kNumExperts> experts;  // PP, PT, TP, TT
  ResidualNorm residual;

  double alpha() const { return residual.coefficient(); }
};

inline MoEBlock init_block(std::size_t hidden, PropagationKind prop, RngState& rng, const std::string& prefix = "") {
  MoEBlock b;
  b.router = init_router(hidden, rng, prefix);
  for (std::size_t e = 0; e < kNumExperts; ++e) b.experts[e] = init_expert(kAllExperts[e], prop, hidden, rng, prefix);
  b.residual = ResidualNorm(prefix + "block", hidden);
  return b;
}

/// Parameters that actually receive gradient under `opt`.
inline void collect_parameters(MoEBlock& b, const RoutingOptions& opt, bool adaptive_residual,
                               std::vector<Parameter*>& out) {
  if (opt.kind == RouterKind::Soft || opt.kind == RouterKind::TopK) {
    out.push_back(&b.router.w1);
    out.push_back(&b.router.w2);
  } else if (opt.kind == RouterKind::DotAttention) {
    out.push_back(&b.router.keys);
  }
  for (std::size_t e = 0; e < kNumExperts; ++e)
    if (opt.kind != RouterKind::Forced || e == static_cast<std::size_t>(opt.forced))
      collect_parameters(b.experts[e], out);
  b.residual.collect(out, adaptive_residual);
}

struct RoutingRecord {
  std::size_t block = 0;
  Var weights;  // |V|×4, rows on the simplex
};

struct BlockSettings {
  PropagationKind prop = PropagationKind::GCNLike;
  RoutingOptions routing;
  double dropout = 0.0;
  bool adaptive_residual = true;
};

/// `rng` is private to this block; expert e draws from rng.fork(e).
inline std::pair<Var, RoutingRecord> moe_block_forward(MoEBlock& b, const BlockSettings& s, const GraphContext& ctx,
                                                       const Var& h, const Var& h0, std::size_t index, RngState& rng,
                                                       bool training) {
  Var pi = route(b.router, s.routing, h);
  std::optional<Var> mix;
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    // A column that is identically zero contributes nothing to value or gradient.
    bool all_zero = true;
    for (std::size_t i = 0; i < pi.rows() && all_zero; ++i) all_zero = pi.value()(i, e) == 0.0;
    if (all_zero) continue;
    RngState erng = rng.fork(e);
    Var out = apply_expert(b.experts[e], s.prop, ctx, h, s.dropout, erng, training);
    Var weighted = ad::scale_rows(out, ad::column(pi, e));
    mix = mix ? ad::add(*mix, weighted) : weighted;
  }
  if (!mix) throw std::logic_error("moe_block_forward: routing assigned no mass");
  return {residual_norm(b.residual, h0, *mix, s.adaptive_residual), RoutingRecord{index, pi}};
}

/// −(1 / (blocks·|V|)) Σ π log max(π, 1e-12)
inline Var routing_entropy(const std::vector<RoutingRecord>& records) {
  if (records.empty()) throw DomainError("routing_entropy: no routing records");
  Var total = ad::sum(ad::hadamard(records[0].weights, ad::log(ad::clamp_min(records[0].weights, 1e-12))));
  std::size_t rows = records[0].weights.rows();
  for (std::size_t k = 1; k < records.size(); ++k) {
    const Var& w = records[k].weights;
    total = ad::add(total, ad::sum(ad::hadamard(w, ad::log(ad::clamp_min(w, 1e-12)))));
    rows += w.rows();
  }
  return ad::scale(total, -1.0 / static_cast<double>(rows));
}

/// Mean entropy of each record's rows, no tape involved.
inline double mean_row_entropy(const DenseMatrix& pi) {
  double s = 0.0;
  for (double v : pi.data())
    if (v > 0.0) s -= v * std::log(v);
  return s / static_cast<double>(pi.rows());
}

inline std::array<double, kNumExperts> mean_weights(const DenseMatrix& pi) {
  std::array<double, kNumExperts> m{};
  for (std::size_t i = 0; i < pi.rows(); ++i)
    for (std::size_t e = 0; e < kNumExperts; ++e) m[e] += pi(i, e);
  for (double& v : m) v /= static_cast<double>(pi.rows());
  return m;
}

}  // namespace gnnmoe
