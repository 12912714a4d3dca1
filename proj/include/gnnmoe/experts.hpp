// SPDX-License-Identifier: Apache-2.0
//
// Decoupled message passing: parameter-light propagation (P) and per-node
// transformation (T), composed pairwise into the four experts PP, PT, TP, TT.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gnnmoe/autodiff.hpp"
#include "gnnmoe/graph.hpp"

namespace gnnmoe {

enum class PropagationKind { GCNLike, SAGELike, GATLike };
enum class ExpertKind { PP = 0, PT = 1, TP = 2, TT = 3 };

inline constexpr std::array<ExpertKind, 4> kAllExperts{ExpertKind::PP, ExpertKind::PT, ExpertKind::TP, ExpertKind::TT};

inline std::string_view to_string(ExpertKind k) {
  constexpr std::array<std::string_view, 4> names{"PP", "PT", "TP", "TT"};
  return names[static_cast<std::size_t>(k)];
}

inline std::string_view to_string(PropagationKind k) {
  switch (k) {
    case PropagationKind::GCNLike: return "gcn";
    case PropagationKind::SAGELike: return "sage";
    case PropagationKind::GATLike: return "gat";
  }
  return "?";
}

inline PropagationKind parse_propagation(std::string_view s) {
  if (s == "gcn") return PropagationKind::GCNLike;
  if (s == "sage") return PropagationKind::SAGELike;
  if (s == "gat") return PropagationKind::GATLike;
  throw std::invalid_argument("unknown propagation kind '" + std::string(s) + "'");
}

/// Stage sequence of an expert, e.g. TP = {T, P}.
inline std::array<char, 2> stages(ExpertKind k) {
  const auto name = to_string(k);
  return {name[0], name[1]};
}

/// Sparse operators derived once per graph. Must outlive any tape that uses them.
struct GraphContext {
  const GraphDataset* graph = nullptr;
  SparseMatrix normalized;  // Â, for GCN-like propagation
  SparseMatrix mean;        // D⁻¹A, for SAGE-like propagation
  SparseMatrix with_self;   // structure of A + I, for GAT-like propagation

  explicit GraphContext(const GraphDataset& g)
      : graph(&g), normalized(normalize_adjacency(g)), mean(mean_adjacency(g)) {
    std::vector<double> ones(normalized.nnz(), 1.0);
    with_self = SparseMatrix(g.num_nodes, g.num_nodes, normalized.row_ptr(), normalized.col_idx(), std::move(ones));
  }
};

struct AttentionParams {
  Parameter src;  // d′×1, scores the centre node
  Parameter dst;  // d′×1, scores the neighbour
};

/// Weights for one expert: one d′×d′ matrix per T stage and, for GAT-like
/// propagation, one attention pair per P stage.
struct ExpertParams {
  ExpertKind kind = ExpertKind::TT;
  std::vector<Parameter> weights;
  std::vector<AttentionParams> attention;
};

inline DenseMatrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, RngState& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseMatrix w(fan_in, fan_out);
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

inline DenseMatrix small_uniform(std::size_t rows, std::size_t cols, double scale, RngState& rng) {
  DenseMatrix w(rows, cols);
  for (double& v : w.data()) v = rng.uniform(-scale, scale);
  return w;
}

inline ExpertParams init_expert(ExpertKind kind, PropagationKind prop, std::size_t hidden, RngState& rng,
                                const std::string& prefix = "") {
  ExpertParams p;
  p.kind = kind;
  const std::string base = prefix + std::string(to_string(kind));
  std::size_t t_idx = 0, p_idx = 0;
  for (char s : stages(kind)) {
    if (s == 'T') {
      p.weights.emplace_back(base + ".W" + std::to_string(t_idx++), glorot_uniform(hidden, hidden, rng));
    } else if (prop == PropagationKind::GATLike) {
      const std::string a = base + ".att" + std::to_string(p_idx++);
      p.attention.push_back({Parameter(a + ".src", small_uniform(hidden, 1, 0.1, rng)),
                             Parameter(a + ".dst", small_uniform(hidden, 1, 0.1, rng))});
    }
  }
  return p;
}

inline void collect_parameters(ExpertParams& e, std::vector<Parameter*>& out) {
  for (auto& w : e.weights) out.push_back(&w);
  for (auto& a : e.attention) {
    out.push_back(&a.src);
    out.push_back(&a.dst);
  }
}

/// Â · h
inline Var propagate_gcn(const GraphContext& ctx, const Var& h) { return ad::spmm(ctx.normalized, h); }

/// Row i = mean of h over N(i), self excluded; zero for isolated nodes.
inline Var propagate_sage(const GraphContext& ctx, const Var& h) { return ad::spmm(ctx.mean, h); }

namespace detail {
// out_i = Σ_{j∈N(i)∪{i}} softmax_j(leaky_relu(s_i + t_j)) h_j
inline Var attention_aggregate(const SparseMatrix& structure, const Var& s, const Var& t, const Var& h) {
  Tape& tape = *h.tape();
  const std::size_t n = h.rows(), d = h.cols();
  if (s.rows() != n || t.rows() != n || s.cols() != 1 || t.cols() != 1 || structure.rows() != n)
    throw DimensionError("attention_aggregate: score/feature shapes disagree");
  const auto& rp = structure.row_ptr();
  const auto& ci = structure.col_idx();
  std::vector<double> pre(structure.nnz()), alpha(structure.nnz());
  DenseMatrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) {
      pre[k] = s.value()(i, 0) + t.value()(ci[k], 0);
      const double e = pre[k] > 0 ? pre[k] : ad::detail::kLeakySlope * pre[k];
      alpha[k] = e;
      mx = std::max(mx, e);
    }
    double z = 0.0;
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) z += (alpha[k] = std::exp(alpha[k] - mx));
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) {
      alpha[k] /= z;
      const auto hj = h.value().row(ci[k]);
      auto oi = out.row(i);
      for (std::size_t c = 0; c < d; ++c) oi[c] += alpha[k] * hj[c];
    }
  }
  return tape.record(std::move(out), {s, t, h},
                     [&tape, &structure, s, t, h, pre = std::move(pre), alpha = std::move(alpha)](const DenseMatrix& g) {
                       const auto& rp2 = structure.row_ptr();
                       const auto& ci2 = structure.col_idx();
                       const std::size_t n2 = g.rows(), d2 = g.cols();
                       DenseMatrix* gs = tape.grad_sink(s);
                       DenseMatrix* gt = tape.grad_sink(t);
                       DenseMatrix* gh = tape.grad_sink(h);
                       std::vector<double> dalpha;
                       for (std::size_t i = 0; i < n2; ++i) {
                         const auto gi = g.row(i);
                         dalpha.assign(rp2[i + 1] - rp2[i], 0.0);
                         double weighted = 0.0;
                         for (std::size_t k = rp2[i]; k < rp2[i + 1]; ++k) {
                           const auto hj = h.value().row(ci2[k]);
                           double dot = 0.0;
                           for (std::size_t c = 0; c < d2; ++c) dot += gi[c] * hj[c];
                           dalpha[k - rp2[i]] = dot;
                           weighted += alpha[k] * dot;
                           if (gh) {
                             auto dst = gh->row(ci2[k]);
                             for (std::size_t c = 0; c < d2; ++c) dst[c] += alpha[k] * gi[c];
                           }
                         }
                         for (std::size_t k = rp2[i]; k < rp2[i + 1]; ++k) {
                           const double de = alpha[k] * (dalpha[k - rp2[i]] - weighted);
                           const double dz = de * (pre[k] > 0 ? 1.0 : ad::detail::kLeakySlope);
                           if (gs) (*gs)(i, 0) += dz;
                           if (gt) (*gt)(ci2[k], 0) += dz;
                         }
                       }
                     });
}
}  // namespace detail

/// Single-head additive attention over N(i) ∪ {i}.
inline Var propagate_gat(const GraphContext& ctx, const Var& h, AttentionParams& att) {
  Tape& t = *h.tape();
  Var s = ad::matmul(h, t.param(att.src));
  Var u = ad::matmul(h, t.param(att.dst));
  return detail::attention_aggregate(ctx.with_self, s, u, h);
}

/// dropout(relu(h W))
inline Var transform(const Var& h, Parameter& weight, double dropout_rate, RngState& rng, bool training) {
  Tape& t = *h.tape();
  return ad::dropout(ad::relu(ad::matmul(h, t.param(weight))), dropout_rate, rng, training);
}

/// Runs the expert's two stages in order. `rng` should be private to this expert.
inline Var apply_expert(ExpertParams& params, PropagationKind prop, const GraphContext& ctx, const Var& h,
                        double dropout_rate, RngState& rng, bool training) {
  Var x = h;
  std::size_t t_idx = 0, p_idx = 0;
  for (char s : stages(params.kind)) {
    if (s == 'T') {
      if (t_idx >= params.weights.size()) throw DimensionError("apply_expert: missing transform weight");
      if (params.weights[t_idx].value.rows() != x.cols())
        throw DimensionError("apply_expert: weight rows do not match feature width");
      RngState stage_rng = rng.fork(t_idx);
      x = transform(x, params.weights[t_idx++], dropout_rate, stage_rng, training);
      continue;
    }
    switch (prop) {
      case PropagationKind::GCNLike: x = propagate_gcn(ctx, x); break;
      case PropagationKind::SAGELike: x = propagate_sage(ctx, x); break;
      case PropagationKind::GATLike:
        if (p_idx >= params.attention.size()) throw DimensionError("apply_expert: missing attention parameters");
        x = propagate_gat(ctx, x, params.attention[p_idx++]);
        break;
    }
  }
  return x;
}

}  // namespace gnnmoe
