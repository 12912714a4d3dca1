// SPDX-License-Identifier: Apache-2.0
//
// Enhanced feed-forward network: a hard router picks one gated activation
// (σ_j(H W₃) ⊙ H W₄) W₅, followed by an adaptive residual to H⁽⁰⁾ and layer norm.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gnnmoe/experts.hpp"
#include "gnnmoe/residual.hpp"

namespace gnnmoe {

enum class ActivationExpertKind { SwishGLU = 0, GEGLU = 1, REGLU = 2 };
inline constexpr std::size_t kNumActivations = 3;
inline constexpr std::array<ActivationExpertKind, 3> kAllActivations{
    ActivationExpertKind::SwishGLU, ActivationExpertKind::GEGLU, ActivationExpertKind::REGLU};

inline std::string_view to_string(ActivationExpertKind k) {
  constexpr std::array<std::string_view, 3> names{"SwishGLU", "GEGLU", "REGLU"};
  return names[static_cast<std::size_t>(k)];
}

struct EFFN {
  Parameter w3, w4, w5;  // d′×d′
  Parameter w_hr;        // d′×3 hard-router projection
  ResidualNorm residual;
  double gumbel_temperature = 1.0;

  double beta() const { return residual.coefficient(); }
};

inline EFFN init_effn(std::size_t hidden, RngState& rng, const std::string& prefix = "") {
  EFFN f;
  f.w3 = Parameter(prefix + "effn.W3", glorot_uniform(hidden, hidden, rng));
  f.w4 = Parameter(prefix + "effn.W4", glorot_uniform(hidden, hidden, rng));
  f.w5 = Parameter(prefix + "effn.W5", glorot_uniform(hidden, hidden, rng));
  f.w_hr = Parameter(prefix + "effn.W_hr", glorot_uniform(hidden, kNumActivations, rng));
  f.residual = ResidualNorm(prefix + "effn", hidden);
  return f;
}

struct EffnSettings {
  std::optional<ActivationExpertKind> forced;  // skips the hard router
  bool per_node = false;                       // one selection per node instead of per graph
  bool adaptive_residual = true;
};

inline void collect_parameters(EFFN& f, const EffnSettings& s, std::vector<Parameter*>& out) {
  out.push_back(&f.w3);
  out.push_back(&f.w4);
  out.push_back(&f.w5);
  if (!s.forced) out.push_back(&f.w_hr);
  f.residual.collect(out, s.adaptive_residual);
}

/// One-hot selection weights: 1×3 from the mean-pooled rows, or |V|×3 per node.
/// Training draws straight-through hard Gumbel samples; eval is the plain
/// argmax (lowest index on ties) and carries no gradient.
inline Var route_hard(EFFN& f, const Var& h, RngState& rng, bool training, bool per_node = false) {
  if (h.cols() != f.w_hr.value.rows()) throw DimensionError("route_hard: width mismatch");
  Tape& t = *h.tape();
  Var pooled = per_node ? h : ad::mean_rows(h);
  Var logits = ad::matmul(pooled, t.param(f.w_hr));
  return ad::gumbel_softmax(logits, f.gumbel_temperature, true, rng, training);
}

inline Var gated_activation(ActivationExpertKind kind, const Var& h, EFFN& f) {
  if (h.cols() != f.w3.value.rows()) throw DimensionError("gated_activation: width mismatch");
  Tape& t = *h.tape();
  Var gate = ad::matmul(h, t.param(f.w3));
  switch (kind) {
    case ActivationExpertKind::SwishGLU: gate = ad::swish(gate); break;
    case ActivationExpertKind::GEGLU: gate = ad::gelu(gate); break;
    case ActivationExpertKind::REGLU: gate = ad::relu(gate); break;
  }
  return ad::matmul(ad::hadamard(gate, ad::matmul(h, t.param(f.w4))), t.param(f.w5));
}

struct EffnOutput {
  Var z;
  std::size_t selected = 0;                      // graph-level pick, or the most frequent per-node pick
  std::array<std::size_t, kNumActivations> counts{};  // nodes per branch (1 in graph-level mode)
};

/// Only branches that are actually selected are evaluated.
inline EffnOutput effn_forward(EFFN& f, const EffnSettings& s, const Var& h, const Var& h0, RngState& rng,
                               bool training) {
  EffnOutput out;
  Var z = h;
  if (s.forced) {
    out.selected = static_cast<std::size_t>(*s.forced);
    out.counts[out.selected] = s.per_node ? h.rows() : 1;
    z = gated_activation(*s.forced, h, f);
  } else {
    Var sel = route_hard(f, h, rng, training, s.per_node);
    for (std::size_t r = 0; r < sel.rows(); ++r)
      for (std::size_t j = 0; j < kNumActivations; ++j)
        if (sel.value()(r, j) == 1.0) ++out.counts[j];
    for (std::size_t j = 1; j < kNumActivations; ++j)
      if (out.counts[j] > out.counts[out.selected]) out.selected = j;
    if (!s.per_node) {
      z = ad::scalar_mul(ad::column(sel, out.selected), gated_activation(kAllActivations[out.selected], h, f));
    } else {
      std::optional<Var> acc;
      for (std::size_t j = 0; j < kNumActivations; ++j) {
        if (out.counts[j] == 0) continue;
        Var part = ad::scale_rows(gated_activation(kAllActivations[j], h, f), ad::column(sel, j));
        acc = acc ? ad::add(*acc, part) : part;
      }
      z = *acc;
    }
  }
  out.z = residual_norm(f.residual, h0, z, s.adaptive_residual);
  return out;
}

}  // namespace gnnmoe
