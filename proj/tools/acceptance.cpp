// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL/BLOCKED line per criterion. Exit status is
// nonzero iff any criterion FAILs. BLOCKED means required external data is absent.
//
// Set GNNMOE_CHAMELEON_DIR to a Chameleon-fix dataset directory (see
// dataset_io.hpp for the layout) to run the real-data part of criterion 9.
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "gnnmoe/experiments.hpp"
#include "gnnmoe/gradcheck.hpp"

using namespace gnnmoe;
namespace ex = gnnmoe::experiments;

namespace {

enum class Status { Pass, Fail, Blocked };

int failures = 0;

void report(int id, const std::string& title, Status s, const std::string& detail) {
  const char* tag = s == Status::Pass ? "PASS" : s == Status::Fail ? "FAIL" : "BLOCKED";
  if (s == Status::Fail) ++failures;
  std::cout << std::left << std::setw(8) << tag << "[" << std::setw(2) << id << "] " << title << ": " << detail
            << std::endl;
}

Status verdict(bool ok) { return ok ? Status::Pass : Status::Fail; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

DenseMatrix random_matrix(std::size_t r, std::size_t c, RngState& rng, double lo = -1.0, double hi = 1.0) {
  DenseMatrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity.

struct OpCase {
  std::string name;
  ComputationBuilder build;  // returns a non-scalar output; contracted with a fixed random weight below
  std::vector<DenseMatrix> inputs;
};

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  RngState rng(101);
  RngState graph_rng(7);
  SbmOptions so;
  so.num_nodes = 10;
  so.num_classes = 2;
  so.p_in = 0.5;
  so.p_out = 0.2;
  so.num_features = 3;
  const GraphDataset g = generate_sbm(so, graph_rng);
  const GraphContext ctx(g);
  const std::size_t n = g.num_nodes;

  DenseMatrix onehot(4, 3);
  for (std::size_t i = 0; i < 4; ++i) onehot(i, i % 3) = 1.0;
  const std::vector<std::size_t> mask{0, 1, 3};

  std::vector<OpCase> ops;
  auto unary = [&](std::string name, std::function<Var(const Var&)> f, DenseMatrix x) {
    ops.push_back({std::move(name), [f](Tape&, std::span<const Var> v) { return f(v[0]); }, {std::move(x)}});
  };
  // Inputs kept away from kinks (0 for relu, the clamp floor).
  auto away = [&](std::size_t r, std::size_t c) {
    DenseMatrix m = random_matrix(r, c, rng, 0.2, 1.0);
    for (std::size_t i = 0; i < m.size(); i += 2) m[i] = -m[i];
    return m;
  };
  ops.push_back({"matmul", [](Tape&, std::span<const Var> v) { return ad::matmul(v[0], v[1]); },
                 {random_matrix(3, 4, rng), random_matrix(4, 2, rng)}});
  ops.push_back({"spmm", [&](Tape&, std::span<const Var> v) { return ad::spmm(ctx.normalized, v[0]); },
                 {random_matrix(n, 3, rng)}});
  ops.push_back({"add", [](Tape&, std::span<const Var> v) { return ad::add(v[0], v[1]); },
                 {random_matrix(3, 3, rng), random_matrix(3, 3, rng)}});
  ops.push_back({"sub", [](Tape&, std::span<const Var> v) { return ad::sub(v[0], v[1]); },
                 {random_matrix(3, 3, rng), random_matrix(3, 3, rng)}});
  ops.push_back({"hadamard", [](Tape&, std::span<const Var> v) { return ad::hadamard(v[0], v[1]); },
                 {random_matrix(3, 3, rng), random_matrix(3, 3, rng)}});
  unary("scale", [](const Var& a) { return ad::scale(a, -1.7); }, random_matrix(3, 3, rng));
  unary("add_scalar", [](const Var& a) { return ad::add_scalar(a, 0.3); }, random_matrix(3, 3, rng));
  unary("relu", [](const Var& a) { return ad::relu(a); }, away(3, 4));
  unary("leaky_relu", [](const Var& a) { return ad::leaky_relu(a); }, away(3, 4));
  unary("sigmoid", [](const Var& a) { return ad::sigmoid(a); }, random_matrix(3, 4, rng, -3, 3));
  unary("swish", [](const Var& a) { return ad::swish(a); }, random_matrix(3, 4, rng, -3, 3));
  unary("gelu", [](const Var& a) { return ad::gelu(a); }, random_matrix(3, 4, rng, -3, 3));
  unary("log", [](const Var& a) { return ad::log(a); }, random_matrix(3, 4, rng, 0.2, 2.0));
  unary("exp", [](const Var& a) { return ad::exp(a); }, random_matrix(3, 4, rng));
  unary("clamp_min", [](const Var& a) { return ad::clamp_min(a, 0.0); }, away(3, 4));
  unary("sum", [](const Var& a) { return ad::scale(ad::sum(a), 0.9); }, random_matrix(3, 4, rng));
  ops.push_back({"scalar_mul", [](Tape&, std::span<const Var> v) { return ad::scalar_mul(v[0], v[1]); },
                 {random_matrix(1, 1, rng), random_matrix(3, 3, rng)}});
  unary("column", [](const Var& a) { return ad::column(a, 2); }, random_matrix(4, 3, rng));
  ops.push_back({"scale_rows", [](Tape&, std::span<const Var> v) { return ad::scale_rows(v[0], v[1]); },
                 {random_matrix(4, 3, rng), random_matrix(4, 1, rng)}});
  ops.push_back({"add_row", [](Tape&, std::span<const Var> v) { return ad::add_row(v[0], v[1]); },
                 {random_matrix(4, 3, rng), random_matrix(1, 3, rng)}});
  unary("rowwise_softmax", [](const Var& a) { return ad::rowwise_softmax(a, 0.7); }, random_matrix(4, 4, rng, -2, 2));
  unary("rowwise_topk_softmax", [](const Var& a) { return ad::rowwise_topk_softmax(a, 2, 1.0); },
        random_matrix(4, 4, rng, -2, 2));
  ops.push_back({"layer_norm", [](Tape&, std::span<const Var> v) { return ad::layer_norm(v[0], v[1], v[2]); },
                 {random_matrix(3, 5, rng), random_matrix(1, 5, rng), random_matrix(1, 5, rng)}});
  unary("dropout",
        [](const Var& a) {
          RngState r(5);
          return ad::dropout(a, 0.4, r, true);
        },
        random_matrix(4, 4, rng));
  unary("mean_rows", [](const Var& a) { return ad::mean_rows(a); }, random_matrix(4, 3, rng));
  unary("softmax_cross_entropy", [&](const Var& a) { return ad::softmax_cross_entropy(a, onehot, mask); },
        random_matrix(4, 3, rng, -2, 2));
  unary("gumbel_softmax(soft)",
        [](const Var& a) {
          RngState r(6);
          return ad::gumbel_softmax(a, 0.8, false, r, true);
        },
        random_matrix(3, 3, rng, -1, 1));
  ops.push_back({"attention_aggregate",
                 [&](Tape&, std::span<const Var> v) {
                   return gnnmoe::detail::attention_aggregate(ctx.with_self, v[0], v[1], v[2]);
                 },
                 {random_matrix(n, 1, rng), random_matrix(n, 1, rng), random_matrix(n, 3, rng)}});

  double worst_op = 0.0;
  std::string worst_name;
  for (auto& op : ops) {
    // Contract with a fixed random weight so ops with constant row sums still have a signal.
    const DenseMatrix probe_shape = [&] {
      Tape t;
      std::vector<Var> vs;
      for (const auto& x : op.inputs) vs.push_back(t.leaf(x));
      return op.build(t, vs).value();
    }();
    const DenseMatrix w = random_matrix(probe_shape.rows(), probe_shape.cols(), rng, 0.5, 1.5);
    ComputationBuilder contracted = [&op, &w](Tape& t, std::span<const Var> v) {
      return ad::sum(ad::hadamard(op.build(t, v), t.constant(w)));
    };
    const double err = grad_check(contracted, op.inputs, {1e-6, 0, 0});
    if (err > worst_op) {
      worst_op = err;
      worst_name = op.name;
    }
  }

  // End-to-end: 2-block model, every parameter spot-checked, all propagation kinds.
  double worst_e2e = 0.0;
  std::size_t checked = 0;
  for (auto prop : {PropagationKind::GCNLike, PropagationKind::SAGELike, PropagationKind::GATLike}) {
    RngState mr(202);
    SbmOptions mo;
    mo.num_nodes = 12;
    mo.num_classes = 3;
    mo.p_in = 0.4;
    mo.p_out = 0.1;
    mo.num_features = 5;
    const GraphDataset mg = generate_sbm(mo, mr);
    const GraphContext mctx(mg);
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.blocks = 2;
    cfg.prop = prop;
    GNNMoEModel m = init_model(cfg, mg.num_features, mg.num_classes, mr);
    for (auto& b : m.blocks) b.residual.raw.value[0] = mr.uniform(-1.0, 1.0);
    m.effn.residual.raw.value[0] = mr.uniform(-1.0, 1.0);
    const DenseMatrix y = one_hot_labels(mg);
    const std::vector<std::size_t> tmask{0, 2, 3, 5, 7, 8, 11};
    for (Parameter* p : model_parameters(m)) {
      // Eval mode: in training mode the hard router's forward value is piecewise
      // constant in its logits, so a finite difference cannot see the straight-through term.
      const double err = grad_check_parameters(
          [&](Tape& t) {
            RngState r(9);
            auto fr = model_forward(m, mctx, t, r, false);
            return total_loss(fr.logits, y, tmask, fr.records, 0.1);
          },
          {p}, {1e-5, 5, 77});
      worst_e2e = std::max(worst_e2e, err);
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_op < 1e-4 && worst_e2e < 1e-3 && secs < 60.0;
  report(1, "Gradient integrity", verdict(ok),
         std::to_string(ops.size()) + " ops, worst rel err " + num(worst_op) + " (" + worst_name + ") < 1e-4; " +
             std::to_string(checked) + " model parameters, worst " + num(worst_e2e) + " < 1e-3; " + num(secs, 3) +
             " s < 60 s");
}

// ---------------------------------------------------------------------------
// 2–5. Routing theory.

void criteria_theory() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = closed_form_suite(100, 2024, 100);
  const double secs = seconds_since(t0);
  double worst_l1 = 0.0, worst_gap = 0.0;
  std::size_t within = 0, bounds_ok = 0;
  for (const auto& c : cases) {
    worst_l1 = std::max(worst_l1, c.l1);
    worst_gap = std::max(worst_gap, c.softmax_gap);
    within += c.l1 <= 1e-3;
    const auto& i = c.instance;
    bounds_ok += i.eta > 0.1 && i.eta < 0.9 && i.lambda > 0.0 && i.lambda < 0.9 / i.eta;
  }
  report(2, "Closed form vs brute-force argmin", verdict(within == 100 && bounds_ok == 100 && secs < 300.0),
         std::to_string(within) + "/100 within L1 1e-3 (worst " + num(worst_l1) + "), " + num(secs, 3) +
             " s < 300 s");
  report(3, "Temperature identity", verdict(worst_gap <= 1e-12),
         "max |closed form - softmax((log p + eta u)/(1 - eta lambda))| = " + num(worst_gap) + " <= 1e-12 over " +
             std::to_string(cases.size()) + " instances");

  std::size_t violations = 0, samples = 0, malformed = 0;
  const auto cor = threshold_suite(50, 2025, 20);
  for (const auto& c : cor) {
    violations += c.violations;
    samples += c.samples;
    const bool shape = (c.k == 1 || c.k == 2) && (c.eps == 0.05 || c.eps == 0.1) && c.delta >= 1.0 &&
                       c.theta < 1.0 / c.instance.eta && c.samples == 20 && c.instance.base.size() == 4;
    malformed += !shape;
  }
  report(4, "Soft top-k threshold sweep", verdict(violations == 0 && malformed == 0 && cor.size() == 50),
         std::to_string(violations) + " violations in " + std::to_string(samples) + " samples over " +
             std::to_string(cor.size()) + " instances");

  std::size_t sharp_fail = 0;
  const auto sh = sharpening_suite(100, 2026, 8);
  for (const auto& c : sh) sharp_fail += c.report.skipped || !c.report.strictly_decreasing || !c.report.argmax_constant;
  report(5, "Sharpening monotonicity", verdict(sharp_fail == 0 && sh.size() == 100),
         std::to_string(sharp_fail) + " violations over " + std::to_string(sh.size()) + " instances");
}

// ---------------------------------------------------------------------------
// 6–11. Training.

GraphDataset homophilous_sbm() {
  SbmOptions o;  // n=400, 4 classes, p_in 0.05, p_out 0.005, noise 1.0
  RngState rng(0);
  return generate_sbm(o, rng);
}

GraphDataset heterophilous_sbm() {
  SbmOptions o;
  o.p_in = 0.005;
  o.p_out = 0.03;
  RngState rng(1);
  GraphDataset g = generate_sbm(o, rng);
  g.name = "het-sbm";
  return g;
}

struct InvariantTally {
  std::size_t runs = 0, epochs = 0, rows = 0;
  double worst_row_error = 0.0, min_weight = 1.0, min_route = 1e9, max_route = -1e9;

  void add(const TrainResult& r) {
    ++runs;
    for (const auto& e : r.history.epochs) {
      ++epochs;
      worst_row_error = std::max(worst_row_error, e.routing_row_error);
      min_weight = std::min(min_weight, e.routing_min);
      min_route = std::min(min_route, e.route_loss);
      max_route = std::max(max_route, e.route_loss);
    }
    for (const auto& pi : r.best_eval.routing)
      for (std::size_t i = 0; i < pi.rows(); ++i) {
        ++rows;
        double s = 0.0;
        for (double v : pi.row(i)) {
          s += v;
          min_weight = std::min(min_weight, v);
        }
        worst_row_error = std::max(worst_row_error, std::abs(s - 1.0));
      }
  }
  bool ok() const {
    return runs > 0 && worst_row_error <= 1e-6 && min_weight >= 0.0 && min_route >= 0.0 &&
           max_route <= std::log(4.0);
  }
};

void criteria_training() {
  InvariantTally tally;

  // 8 and 10.
  const GraphDataset homo = homophilous_sbm();
  const GraphContext hctx(homo);
  TrainConfig dflt;
  auto t0 = std::chrono::steady_clock::now();
  const TrainResult r8 = train_with_config(hctx, dflt);
  const double secs8 = seconds_since(t0);
  tally.add(r8);
  const TrainResult r10 = train_with_config(hctx, dflt);
  const bool same = ex::metrics_csv(r8.history) == ex::metrics_csv(r10.history);

  // 7 and 11.
  const GraphDataset het = heterophilous_sbm();
  const GraphContext xctx(het);
  TrainConfig l0 = dflt, l1 = dflt, nrl = dflt;
  l0.lambda = 0.0;
  l1.lambda = 1.0;
  apply_variant(nrl, "no-route-loss");
  const TrainResult r_l0 = train_with_config(xctx, l0);
  const TrainResult r_l1 = train_with_config(xctx, l1);
  const TrainResult r_nrl = train_with_config(xctx, nrl);
  for (const auto* r : {&r_l0, &r_l1, &r_nrl}) tally.add(*r);
  const double h0 = r_l0.history.epochs.back().route_loss, h1 = r_l1.history.epochs.back().route_loss;

  // 9, synthetic part.
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  auto mean_test = [&](TrainConfig cfg, const std::string& label) {
    std::vector<double> acc;
    for (const auto& run : ex::run_seeds(xctx, cfg, label, seeds)) {
      tally.add(run.result);
      acc.push_back(run.row.test_acc);
    }
    return ex::mean_std(acc).mean;
  };
  TrainConfig no_sr = dflt, pp = dflt;
  apply_variant(no_sr, "no-sr");
  pp.routing.kind = RouterKind::Forced;
  pp.routing.forced = ExpertKind::PP;
  const double full_acc = mean_test(dflt, "full"), nosr_acc = mean_test(no_sr, "no-sr"), pp_acc = mean_test(pp, "pp");

  // Accuracies are multiples of 1/|test|; the slack only absorbs summation-order rounding in the means.
  auto at_least = [](double a, double b) { return a >= b - 1e-9; };
  report(6, "Routing invariants", verdict(tally.ok()),
         std::to_string(tally.runs) + " runs, " + std::to_string(tally.epochs) + " epochs, " +
             std::to_string(tally.rows) + " eval rows: max |row sum - 1| " + num(tally.worst_row_error) +
             ", min weight " + num(tally.min_weight) + ", route loss in [" + num(tally.min_route + 0.0) + ", " +
             num(tally.max_route) + "]");
  report(7, "Entropy regularization sharpens routing", verdict(h1 <= h0 - 1e-3),
         "final-epoch routing entropy lambda=1: " + num(h1) + " vs lambda=0: " + num(h0) + " (margin 1e-3)");
  report(8, "End-to-end learning", verdict(r8.test_acc >= 0.90 && secs8 <= 120.0),
         "homophilous SBM test accuracy " + num(r8.test_acc) + " >= 0.90, " + num(secs8, 3) + " s <= 120 s (" +
             std::to_string(r8.history.epochs.size()) + " epochs)");
  report(9, "Expert diversity (heterophilous SBM)", verdict(at_least(full_acc, nosr_acc) && at_least(full_acc, pp_acc)),
         "mean test over 5 seeds: full " + num(full_acc, 6) + ", no-sr " + num(nosr_acc, 6) + ", PP only " +
             num(pp_acc, 6));
  report(10, "Determinism", verdict(same), same ? "metrics.csv byte-identical on rerun" : "metrics.csv differs on rerun");
  const bool eq11 = r_l0.test_acc == r_nrl.test_acc && r_l0.val_acc == r_nrl.val_acc &&
                    ex::metrics_csv(r_l0.history) == ex::metrics_csv(r_nrl.history);
  report(11, "Ablation equivalence", verdict(eq11),
         "no-route-loss vs lambda=0: test " + num(r_nrl.test_acc) + " / " + num(r_l0.test_acc) +
             (eq11 ? ", identical histories" : ", histories differ"));
}

void criterion_chameleon() {
  const char* dir = std::getenv("GNNMOE_CHAMELEON_DIR");
  if (!dir || !*dir) {
    report(9, "Chameleon-fix, GCN-like, 10 seeds", Status::Blocked,
           "dataset not available; set GNNMOE_CHAMELEON_DIR to run (target mean test >= 0.42)");
    return;
  }
  const GraphDataset g = load_dataset(dir);
  const GraphContext ctx(g);
  TrainConfig cfg;  // optimum reported for this dataset with GCN-like propagation
  cfg.lr = 0.005;
  cfg.weight_decay = 0.005;
  cfg.dropout = 0.9;
  cfg.lambda = 0.1;
  std::vector<double> acc;
  double worst_secs = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    cfg.seed = s;
    const auto t0 = std::chrono::steady_clock::now();
    acc.push_back(train_with_config(ctx, cfg).test_acc);
    worst_secs = std::max(worst_secs, seconds_since(t0));
  }
  const auto ms = ex::mean_std(acc);
  report(9, "Chameleon-fix, GCN-like, 10 seeds", verdict(ms.mean >= 0.42 && worst_secs <= 600.0),
         "mean test " + num(ms.mean) + " +/- " + num(ms.std) + " >= 0.42, slowest seed " + num(worst_secs, 3) +
             " s <= 600 s");
}

}  // namespace

int main() {
  try {
    criterion_gradients();
    criteria_theory();
    criteria_training();
    criterion_chameleon();
  } catch (const std::exception& e) {
    std::cout << "FAIL    acceptance suite aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion check(s) failed"
                         : std::string("acceptance: all attainable criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
