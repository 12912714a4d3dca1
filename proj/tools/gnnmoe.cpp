// SPDX-License-Identifier: Apache-2.0
//
// gnnmoe: train, observe, compare, ablate, verify-theory, export-routing, gen-sbm.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#include <iostream>

#include "CLI11.hpp"

#include "gnnmoe/experiments.hpp"

namespace ex = gnnmoe::experiments;
using gnnmoe::TrainConfig;

namespace {

struct Flags {
  std::string data;
  std::string out = "runs/out";
  std::string prop = "gcn";
  TrainConfig cfg;
  std::string seeds = "0..9";
  std::string variant;
  double temperature = 0.5;
  std::optional<std::size_t> topk;
  std::size_t homophily_bins = 5;
  std::size_t degree_bins = 3;
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  std::string baseline, regularized;

  // gen-sbm
  gnnmoe::SbmOptions sbm;
  bool mixed = false;
  std::string name;
};

void add_training_flags(CLI::App* c, Flags& f) {
  c->add_option("--data", f.data, "Dataset directory")->required();
  c->add_option("--out", f.out, "Output directory")->capture_default_str();
  c->add_option("--prop", f.prop, "Propagation operator: gcn, sage, gat")->capture_default_str();
  c->add_option("--blocks", f.cfg.blocks, "MoE blocks")->capture_default_str();
  c->add_option("--hidden", f.cfg.hidden, "Hidden width")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--lr", f.cfg.lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--dropout", f.cfg.dropout, "Dropout rate")->capture_default_str()->check(CLI::Range(0.0, 0.99));
  c->add_option("--weight-decay", f.cfg.weight_decay, "Decoupled weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
  c->add_option("--lambda", f.cfg.lambda, "Routing entropy coefficient")->capture_default_str()->check(CLI::NonNegativeNumber);
  c->add_option("--seeds", f.seeds, "Seed list, e.g. 0..9 or 1,3,5")->capture_default_str();
  c->add_option("--epochs", f.cfg.epochs, "Maximum epochs")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--patience", f.cfg.patience, "Early-stopping patience")->capture_default_str()->check(CLI::PositiveNumber);
}

std::string joined_variants() {
  std::string s;
  for (auto v : gnnmoe::kVariants) s += (s.empty() ? "" : ", ") + std::string(v);
  return s;
}

struct Prepared {
  gnnmoe::GraphDataset graph;
  std::vector<std::uint64_t> seeds;
};

Prepared prepare(Flags& f) {
  try {
    f.cfg.prop = gnnmoe::parse_propagation(f.prop);
  } catch (const std::invalid_argument& e) {
    throw ex::UsageError(e.what());
  }
  Prepared p{{}, ex::parse_seeds(f.seeds)};
  p.graph = gnnmoe::load_dataset(f.data);
  return p;
}

void apply_named_variant(TrainConfig& cfg, const std::string& name, double temperature) {
  try {
    gnnmoe::apply_variant(cfg, name, temperature);
  } catch (const std::invalid_argument& e) {
    throw ex::UsageError(std::string(e.what()) + " (expected one of: " + joined_variants() + ")");
  }
}

int cmd_train(Flags& f, const std::string& command) {
  Prepared p = prepare(f);
  const std::string variant = f.variant.empty() ? "full" : f.variant;
  apply_named_variant(f.cfg, variant, f.temperature);
  gnnmoe::GraphContext ctx(p.graph);
  ex::RunWriter w(f.out, command, ex::config_json(f.cfg), ex::dataset_json(p.graph), p.seeds);
  auto runs = ex::run_seeds(ctx, f.cfg, variant, p.seeds);
  std::vector<ex::ResultRow> rows;
  for (const auto& r : runs) {
    rows.push_back(r.row);
    std::cerr << "seed " << r.seed << ": test " << r.row.test_acc << " (best epoch " << r.row.best_epoch << ")\n";
  }
  ex::write_seed_files(w, runs);
  w.write_json("results.json", ex::results_json(command, f.cfg, rows));
  w.finish();
  return 0;
}

int cmd_ablate(Flags& f, const std::string& command) {
  Prepared p = prepare(f);
  std::vector<std::string> names;
  if (f.variant.empty() || f.variant == "all") {
    for (auto v : gnnmoe::kVariants)
      if (v != "full") names.emplace_back(v);
  } else {
    std::stringstream ss(f.variant);
    for (std::string tok; std::getline(ss, tok, ',');) names.push_back(tok);
  }
  for (const auto& n : names) {
    TrainConfig probe = f.cfg;
    apply_named_variant(probe, n, f.temperature);
  }
  gnnmoe::GraphContext ctx(p.graph);
  ex::RunWriter w(f.out, command, ex::config_json(f.cfg), ex::dataset_json(p.graph), p.seeds);
  std::vector<ex::ResultRow> rows;
  for (const auto& n : names) {
    TrainConfig cfg = f.cfg;
    apply_named_variant(cfg, n, f.temperature);
    auto runs = ex::run_seeds(ctx, cfg, n, p.seeds);
    for (const auto& r : runs) rows.push_back(r.row);
    ex::write_seed_files(w, runs, n + "/");
    std::cerr << n << ": mean test " << ex::results_json(command, cfg, rows)["summary"].back()["test_mean"] << "\n";
  }
  w.write_json("results.json", ex::results_json(command, f.cfg, rows));
  w.finish();
  return 0;
}

int cmd_compare_routing(Flags& f, const std::string& command) {
  Prepared p = prepare(f);
  const auto variants = ex::routing_variants(f.cfg.routing, f.topk);
  gnnmoe::GraphContext ctx(p.graph);
  ex::RunWriter w(f.out, command, ex::config_json(f.cfg), ex::dataset_json(p.graph), p.seeds);
  std::vector<ex::ResultRow> rows;
  for (const auto& v : variants) {
    TrainConfig cfg = f.cfg;
    cfg.routing = v.options;
    auto runs = ex::run_seeds(ctx, cfg, v.label, p.seeds);
    for (const auto& r : runs) rows.push_back(r.row);
    ex::write_seed_files(w, runs, v.label + "/");
  }
  const auto results = ex::results_json(command, f.cfg, rows);
  std::string table = "variant,seeds,test_mean,test_std,val_mean,val_std\n";
  for (const auto& s : results["summary"])
    table += s["variant"].get<std::string>() + ',' + std::to_string(s["seeds"].get<std::size_t>()) + ',' +
             ex::fmt(s["test_mean"]) + ',' + ex::fmt(s["test_std"]) + ',' + ex::fmt(s["val_mean"]) + ',' +
             ex::fmt(s["val_std"]) + '\n';
  w.write("comparison.csv", table);
  w.write_json("results.json", results);
  w.finish();
  std::cerr << table;
  return 0;
}

int cmd_observe(Flags& f, const std::string& command) {
  Prepared p = prepare(f);
  if (f.homophily_bins == 0 || f.degree_bins == 0) throw ex::UsageError("bin counts must be positive");
  gnnmoe::GraphContext ctx(p.graph);
  ex::RunWriter w(f.out, command, ex::config_json(f.cfg), ex::dataset_json(p.graph), p.seeds);
  const auto rows = ex::observe_subspaces(ctx, f.cfg, p.seeds, f.homophily_bins, f.degree_bins);
  w.write("subspaces.csv", ex::subspaces_csv(rows));
  w.finish();
  return 0;
}

int cmd_verify_theory(Flags& f, const std::string& command) {
  if (f.instances == 0) throw ex::UsageError("--instances must be positive");
  ex::TheoryOptions o;
  o.instances = f.instances;
  o.seed = f.seed;
  ex::RunWriter w(f.out, command, ex::Json{{"instances", o.instances}, {"grid_resolution", o.resolution}},
                  nullptr, {f.seed});
  const auto rep = ex::verify_theory(o);
  w.write_json("theory_report.json", rep.json);
  w.finish(rep.ok);
  const auto& s = rep.json["summary"];
  std::cerr << "closed form " << s["closed_form_matches"] << "/" << s["closed_form_total"] << ", temperature identity "
            << s["temperature_identity_matches"] << "/" << s["closed_form_total"] << ", threshold violations "
            << s["threshold_violations"] << ", sharpening " << s["sharpening_passes"] << "/" << s["sharpening_total"]
            << "\n";
  for (const auto& msg : rep.failures) std::cerr << "FAILED " << msg << "\n";
  return rep.ok ? 0 : 1;
}

int cmd_export_routing(Flags& f, const std::string& command) {
  const auto base = ex::load_run_routing(f.baseline);
  const auto reg = ex::load_run_routing(f.regularized);
  ex::RunWriter w(f.out, command, ex::Json{{"baseline", f.baseline}, {"regularized", f.regularized}}, nullptr, {});
  w.write("routing_compare.csv", ex::routing_compare_csv(base, reg));
  w.finish();
  return 0;
}

int cmd_gen_sbm(Flags& f, const std::string&) {
  gnnmoe::RngState rng(f.seed);
  gnnmoe::GraphDataset g = f.mixed ? ex::generate_mixed_sbm(f.sbm, rng) : gnnmoe::generate_sbm(f.sbm, rng);
  if (!f.name.empty()) g.name = f.name;
  gnnmoe::save_dataset(g, f.out);
  std::cerr << g.name << ": " << g.num_nodes << " nodes, " << g.num_undirected_edges() << " edges, homophily "
            << gnnmoe::mean_node_homophily(g) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNNMoE: mixture of message-passing experts for node classification"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "Train over a seed list");
  add_training_flags(train, f);
  train->add_option("--variant", f.variant, "Ablation variant: " + joined_variants());
  train->add_option("--temperature", f.temperature, "Router temperature for delta-tau")->check(CLI::PositiveNumber);

  auto* observe = app.add_subcommand("observe-subspaces", "Single-expert accuracy per homophily/degree subspace");
  add_training_flags(observe, f);
  observe->add_option("--homophily-bins", f.homophily_bins)->capture_default_str();
  observe->add_option("--degree-bins", f.degree_bins)->capture_default_str();

  auto* compare = app.add_subcommand("compare-routing", "Soft vs mean vs top-k vs dot-attention routing");
  add_training_flags(compare, f);
  compare->add_option("--topk", f.topk, "Only this k for the top-k variant");

  auto* ablate = app.add_subcommand("ablate", "Run ablation variants");
  add_training_flags(ablate, f);
  ablate->add_option("--variant", f.variant, "'all' or comma list of: " + joined_variants())->default_str("all");
  ablate->add_option("--temperature", f.temperature, "Router temperature for delta-tau")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* theory = app.add_subcommand("verify-theory", "Check the closed-form routing update against brute force");
  theory->add_option("--instances", f.instances)->capture_default_str();
  theory->add_option("--seed", f.seed)->capture_default_str();
  theory->add_option("--out", f.out)->capture_default_str();

  auto* exportr = app.add_subcommand("export-routing", "Side-by-side routing weights of two train runs");
  exportr->add_option("--baseline", f.baseline, "Run directory trained with lambda = 0")->required();
  exportr->add_option("--regularized", f.regularized, "Run directory trained with lambda > 0")->required();
  exportr->add_option("--out", f.out)->capture_default_str();

  auto* gen = app.add_subcommand("gen-sbm", "Write a stochastic block model dataset");
  gen->add_option("--out", f.out, "Dataset directory")->required();
  gen->add_option("--nodes", f.sbm.num_nodes)->capture_default_str();
  gen->add_option("--classes", f.sbm.num_classes)->capture_default_str();
  gen->add_option("--p-in", f.sbm.p_in)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  gen->add_option("--p-out", f.sbm.p_out)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  gen->add_option("--features", f.sbm.num_features)->capture_default_str();
  gen->add_option("--noise", f.sbm.noise)->capture_default_str();
  gen->add_option("--seed", f.seed)->capture_default_str();
  gen->add_option("--name", f.name, "Dataset name");
  gen->add_flag("--mixed", f.mixed, "Half the classes assortative, half disassortative");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "train") return cmd_train(f, command);
    if (command == "ablate") return cmd_ablate(f, command);
    if (command == "compare-routing") return cmd_compare_routing(f, command);
    if (command == "observe-subspaces") return cmd_observe(f, command);
    if (command == "verify-theory") return cmd_verify_theory(f, command);
    if (command == "export-routing") return cmd_export_routing(f, command);
    if (command == "gen-sbm") return cmd_gen_sbm(f, command);
  } catch (const ex::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
