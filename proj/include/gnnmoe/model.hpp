// SPDX-License-Identifier: Apache-2.0
//
// Full model:  H⁽⁰⁾ = ReLU(X W₀) → l MoE blocks → EFFN → logits Z W₆.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gnnmoe/effn.hpp"
#include "gnnmoe/routing.hpp"

namespace gnnmoe {

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  double lambda = 0.01;  // routing-entropy coefficient
  std::size_t blocks = 2;
  std::size_t hidden = 64;
  std::size_t epochs = 500;
  std::size_t patience = 100;
  std::uint64_t seed = 0;
  PropagationKind prop = PropagationKind::GCNLike;

  // Architecture switches used by ablations and routing comparisons.
  RoutingOptions routing;
  bool use_effn = true;
  EffnSettings effn;
  bool adaptive_residual = true;
};

/// Ablation names accepted by apply_variant.
inline constexpr std::array<std::string_view, 7> kVariants{"full",   "no-route-loss", "no-sr",    "no-effn",
                                                            "no-hr", "no-ares",       "delta-tau"};

/// Rewrites `cfg` for a named ablation. `temperature` applies to delta-tau only.
inline void apply_variant(TrainConfig& cfg, std::string_view name, double temperature = 0.5) {
  if (name == "full") return;
  if (name == "no-route-loss") {
    cfg.lambda = 0.0;
  } else if (name == "no-sr") {
    cfg.routing.kind = RouterKind::Uniform;
  } else if (name == "no-effn") {
    cfg.use_effn = false;
  } else if (name == "no-hr") {
    cfg.effn.forced = ActivationExpertKind::SwishGLU;
  } else if (name == "no-ares") {
    cfg.adaptive_residual = false;
    cfg.effn.adaptive_residual = false;
  } else if (name == "delta-tau") {
    if (!(temperature > 0.0)) throw std::invalid_argument("delta-tau needs a positive temperature");
    cfg.lambda = 0.0;
    cfg.routing.temperature = temperature;
  } else {
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
  }
}

struct GNNMoEModel {
  Parameter w0;  // d×d′
  std::vector<MoEBlock> blocks;
  EFFN effn;
  Parameter w6;  // d′×C
  TrainConfig config;
};

inline GNNMoEModel init_model(const TrainConfig& cfg, std::size_t in_features, std::size_t classes, RngState& rng) {
  if (cfg.hidden == 0) throw std::invalid_argument("hidden width must be positive");
  GNNMoEModel m;
  m.config = cfg;
  m.w0 = Parameter("W0", glorot_uniform(in_features, cfg.hidden, rng));
  for (std::size_t l = 0; l < cfg.blocks; ++l)
    m.blocks.push_back(init_block(cfg.hidden, cfg.prop, rng, "block" + std::to_string(l) + "."));
  m.effn = init_effn(cfg.hidden, rng);
  m.w6 = Parameter("W6", glorot_uniform(cfg.hidden, classes, rng));
  return m;
}

/// Every parameter the configured forward pass can reach, in a fixed order.
inline std::vector<Parameter*> model_parameters(GNNMoEModel& m) {
  std::vector<Parameter*> out{&m.w0};
  for (auto& b : m.blocks) collect_parameters(b, m.config.routing, m.config.adaptive_residual, out);
  if (m.config.use_effn) collect_parameters(m.effn, m.config.effn, out);
  out.push_back(&m.w6);
  return out;
}

struct ForwardResult {
  Var logits;
  std::vector<RoutingRecord> records;
  std::optional<std::size_t> hr_selection;  // absent without an EFFN
};

/// Block l draws noise from rng.fork(l); the EFFN from rng.fork(blocks).
inline ForwardResult model_forward(GNNMoEModel& m, const GraphContext& ctx, Tape& t, RngState& rng, bool training) {
  const GraphDataset& g = *ctx.graph;
  if (g.num_features != m.w0.value.rows())
    throw DimensionError("model_forward: graph has " + std::to_string(g.num_features) + " features, model expects " +
                         std::to_string(m.w0.value.rows()));
  const TrainConfig& cfg = m.config;
  ForwardResult r;
  Var h0 = ad::relu(ad::matmul(t.constant(g.features), t.param(m.w0)));
  Var h = h0;
  BlockSettings bs{cfg.prop, cfg.routing, cfg.dropout, cfg.adaptive_residual};
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    RngState brng = rng.fork(l);
    auto [next, rec] = moe_block_forward(m.blocks[l], bs, ctx, h, h0, l, brng, training);
    h = next;
    r.records.push_back(rec);
  }
  if (cfg.use_effn) {
    RngState erng = rng.fork(m.blocks.size());
    auto e = effn_forward(m.effn, cfg.effn, h, h0, erng, training);
    h = e.z;
    r.hr_selection = e.selected;
  }
  r.logits = ad::matmul(h, t.param(m.w6));
  return r;
}

/// Masked-mean cross-entropy plus λ times the mean routing entropy.
/// `onehot` must outlive the tape.
inline Var total_loss(const Var& logits, const DenseMatrix& onehot, std::span<const std::size_t> mask,
                      const std::vector<RoutingRecord>& records, double lambda) {
  if (lambda < 0.0) throw DomainError("total_loss: lambda must be non-negative");
  Var task = ad::softmax_cross_entropy(logits, onehot, mask);
  if (lambda == 0.0 || records.empty()) return task;
  return ad::add(task, ad::scale(routing_entropy(records), lambda));
}

/// Fraction of `mask` rows whose argmax (lowest index on ties) equals the label.
inline double accuracy(const DenseMatrix& logits, const std::vector<int>& labels, std::span<const std::size_t> mask) {
  if (mask.empty()) throw DomainError("accuracy: empty mask");
  std::size_t hit = 0;
  for (std::size_t i : mask)
    hit += ad::detail::argmax_row(logits.row(i)) == static_cast<std::size_t>(labels.at(i));
  return static_cast<double>(hit) / static_cast<double>(mask.size());
}

}  // namespace gnnmoe
