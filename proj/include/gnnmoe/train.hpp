// SPDX-License-Identifier: Apache-2.0
//
// Full-batch training with early stopping on validation accuracy.
#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "gnnmoe/model.hpp"
#include "gnnmoe/optim.hpp"

namespace gnnmoe {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double task_loss = 0.0;
  double route_loss = 0.0;  // mean routing entropy of the training pass, logged even when λ = 0
  double total_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::optional<std::size_t> hr_selection;  // EFFN branch picked in the training pass
  double routing_row_error = 0.0;           // max |row sum − 1| over all routing rows
  double routing_min = 0.0;                 // smallest routing weight
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = -1.0;
};

struct EvalResult {
  DenseMatrix logits;
  std::vector<DenseMatrix> routing;  // one |V|×4 per block
  std::optional<std::size_t> hr_selection;
};

/// Eval-mode forward: no dropout, deterministic hard routing.
inline EvalResult evaluate_full(GNNMoEModel& m, const GraphContext& ctx) {
  Tape t;
  RngState unused(0);
  auto fr = model_forward(m, ctx, t, unused, false);
  EvalResult r;
  r.logits = fr.logits.value();
  for (const auto& rec : fr.records) r.routing.push_back(rec.weights.value());
  r.hr_selection = fr.hr_selection;
  return r;
}

inline double evaluate(GNNMoEModel& m, const GraphContext& ctx, std::span<const std::size_t> mask) {
  if (mask.empty()) throw DomainError("evaluate: empty mask");
  return accuracy(evaluate_full(m, ctx).logits, ctx.graph->labels, mask);
}

struct TrainResult {
  GNNMoEModel model;  // parameters from the best validation epoch
  TrainHistory history;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  EvalResult best_eval;
};

/// Trains `model` in place on `split`; hyperparameters come from model.config.
inline TrainResult train(GNNMoEModel model, const GraphContext& ctx, const SplitSpec& split) {
  const TrainConfig& cfg = model.config;
  const GraphDataset& g = *ctx.graph;
  if (split.train.empty() || split.val.empty() || split.test.empty())
    throw DataError("train: every split part must be non-empty");
  const DenseMatrix onehot = one_hot_labels(g);
  auto params = model_parameters(model);
  OptimizerState opt;
  RngState noise = RngState(cfg.seed).fork(2);

  TrainResult result;
  result.model = model;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    {
      Tape t;
      RngState erng = noise.fork(epoch);
      auto fr = model_forward(model, ctx, t, erng, true);
      Var task = ad::softmax_cross_entropy(fr.logits, onehot, split.train);
      Var loss = task;
      if (!fr.records.empty()) {
        Var ent = routing_entropy(fr.records);
        rec.route_loss = ent.scalar();
        if (cfg.lambda > 0.0) loss = ad::add(task, ad::scale(ent, cfg.lambda));
      }
      rec.task_loss = task.scalar();
      rec.total_loss = loss.scalar();
      rec.hr_selection = fr.hr_selection;
      rec.routing_min = fr.records.empty() ? 0.0 : std::numeric_limits<double>::infinity();
      for (const auto& r : fr.records)
        for (std::size_t i = 0; i < r.weights.rows(); ++i) {
          double s = 0.0;
          for (double v : r.weights.value().row(i)) {
            s += v;
            rec.routing_min = std::min(rec.routing_min, v);
          }
          rec.routing_row_error = std::max(rec.routing_row_error, std::abs(s - 1.0));
        }
      for (Parameter* p : params) p->zero_grad();
      t.backward(loss);
    }
    optimizer_step(opt, params, cfg.lr, cfg.weight_decay);

    auto ev = evaluate_full(model, ctx);
    rec.train_acc = accuracy(ev.logits, g.labels, split.train);
    rec.val_acc = accuracy(ev.logits, g.labels, split.val);
    result.history.epochs.push_back(rec);
    if (rec.val_acc > result.history.best_val) {
      result.history.best_val = rec.val_acc;
      result.history.best_epoch = epoch;
      result.model = model;
      result.best_eval = std::move(ev);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  if (result.history.best_epoch == 0) result.best_eval = evaluate_full(result.model, ctx);
  const auto& logits = result.best_eval.logits;
  result.train_acc = accuracy(logits, g.labels, split.train);
  result.val_acc = accuracy(logits, g.labels, split.val);
  result.test_acc = accuracy(logits, g.labels, split.test);
  return result;
}

/// Seeds the model from cfg.seed and uses the dataset's split for that seed.
inline TrainResult train_with_config(const GraphContext& ctx, const TrainConfig& cfg) {
  const GraphDataset& g = *ctx.graph;
  RngState init = RngState(cfg.seed).fork(1);
  GNNMoEModel model = init_model(cfg, g.num_features, g.num_classes, init);
  return train(std::move(model), ctx, default_splits(g, cfg.seed));
}

}  // namespace gnnmoe
