// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "gnnmoe/experiments.hpp"

using namespace gnnmoe;
namespace ex = gnnmoe::experiments;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_config() {
  TrainConfig c;
  c.hidden = 8;
  c.epochs = 15;
  c.patience = 15;
  return c;
}

GraphDataset small_sbm(double p_in, double p_out, std::uint64_t seed = 3) {
  SbmOptions o;
  o.num_nodes = 80;
  o.p_in = p_in;
  o.p_out = p_out;
  o.num_features = 8;
  RngState rng(seed);
  return generate_sbm(o, rng);
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gnnmoe_experiments_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(ParseSeeds, RangesAndLists) {
  EXPECT_EQ(ex::parse_seeds("0..9").size(), 10u);
  EXPECT_EQ(ex::parse_seeds("0..9").back(), 9u);
  EXPECT_EQ(ex::parse_seeds("4"), (std::vector<std::uint64_t>{4}));
  EXPECT_EQ(ex::parse_seeds("1,3..4,7"), (std::vector<std::uint64_t>{1, 3, 4, 7}));
  for (const char* bad : {"", "a", "3..1", "1,,2", "1..", "-1", "1.5"})
    EXPECT_THROW(ex::parse_seeds(bad), ex::UsageError) << bad;
}

TEST(MeanStd, PopulationFormula) {
  const auto r = ex::mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(r.mean, 2.5);
  EXPECT_DOUBLE_EQ(r.std, std::sqrt(1.25));
  EXPECT_EQ(r.n, 4u);
  EXPECT_EQ(ex::mean_std({0.7}).std, 0.0);
}

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(ex::fmt(0.25), "0.25");
  EXPECT_EQ(ex::fmt(1.0), "1");
  EXPECT_EQ(std::stod(ex::fmt(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(MixedSbm, HalfAssortativeHalfNot) {
  SbmOptions o;
  o.num_nodes = 400;
  o.p_in = 0.06;
  o.p_out = 0.003;
  RngState rng(4);
  const GraphDataset g = ex::generate_mixed_sbm(o, rng);
  const auto h = node_homophily(g);
  double lo_sum = 0.0, hi_sum = 0.0;
  std::size_t lo_n = 0, hi_n = 0;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (!h[i]) continue;
    if (g.labels[i] < 2) {
      hi_sum += *h[i];
      ++hi_n;
    } else {
      lo_sum += *h[i];
      ++lo_n;
    }
  }
  EXPECT_GT(hi_sum / static_cast<double>(hi_n), 0.8);
  EXPECT_LT(lo_sum / static_cast<double>(lo_n), 0.2);
  RngState r2(4);
  o.num_classes = 3;
  EXPECT_THROW(ex::generate_mixed_sbm(o, r2), std::invalid_argument);
}

TEST(RoutingVariants, LabelsAndTopKRestriction) {
  const auto all = ex::routing_variants({}, std::nullopt);
  std::vector<std::string> labels;
  for (const auto& v : all) labels.push_back(v.label);
  EXPECT_EQ(labels, (std::vector<std::string>{"soft", "mean", "top1", "top2", "top3", "dot-att"}));
  const auto one = ex::routing_variants({}, 2);
  ASSERT_EQ(one.size(), 4u);
  EXPECT_EQ(one[2].options.topk, 2u);
  EXPECT_THROW(ex::routing_variants({}, 4), ex::UsageError);
}

TEST(RunSeeds, RowsMetricsAndRoutingFiles) {
  const GraphDataset g = small_sbm(0.2, 0.02);
  const GraphContext ctx(g);
  const auto runs = ex::run_seeds(ctx, quick_config(), "full", {0, 1});
  ASSERT_EQ(runs.size(), 2u);
  for (const auto& r : runs) {
    EXPECT_GE(r.row.test_acc, 0.0);
    EXPECT_LE(r.row.test_acc, 1.0);
    EXPECT_EQ(r.row.block_entropy.size(), 2u);
  }

  const std::string metrics = ex::metrics_csv(runs[0].result.history);
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "epoch,task_loss,route_loss,total_loss,train_acc,val_acc,hr_selection");
  EXPECT_EQ(static_cast<std::size_t>(std::count(metrics.begin(), metrics.end(), '\n')),
            runs[0].result.history.epochs.size() + 1);

  const std::string routing = ex::routing_rows(0, runs[0].result.best_eval);
  EXPECT_EQ(std::count(routing.begin(), routing.end(), '\n'), 8);  // 2 blocks × 4 experts

  const auto j = ex::results_json("train", quick_config(), {runs[0].row, runs[1].row});
  ASSERT_EQ(j["summary"].size(), 1u);
  const auto ms = ex::mean_std({runs[0].row.test_acc, runs[1].row.test_acc});
  EXPECT_EQ(j["summary"][0]["test_mean"].get<double>(), ms.mean);
  EXPECT_EQ(j["summary"][0]["test_std"].get<double>(), ms.std);
  EXPECT_EQ(j["config"]["hidden"].get<std::size_t>(), 8u);
}

TEST(RunSeeds, MeanRouterWeightsAreExactlyAQuarter) {
  const GraphDataset g = small_sbm(0.2, 0.02);
  const GraphContext ctx(g);
  TrainConfig c = quick_config();
  c.routing.kind = RouterKind::Uniform;
  const auto runs = ex::run_seeds(ctx, c, "mean", {0});
  for (const auto& pi : runs[0].result.best_eval.routing)
    for (double w : mean_weights(pi)) EXPECT_EQ(w, 0.25);
}

TEST(RunSeeds, TopOneRowsAreOneHot) {
  const GraphDataset g = small_sbm(0.2, 0.02);
  const GraphContext ctx(g);
  TrainConfig c = quick_config();
  c.routing.kind = RouterKind::TopK;
  c.routing.topk = 1;
  const auto runs = ex::run_seeds(ctx, c, "top1", {0});
  for (const auto& pi : runs[0].result.best_eval.routing)
    for (std::size_t i = 0; i < pi.rows(); ++i) {
      std::size_t ones = 0;
      for (double w : pi.row(i)) {
        EXPECT_TRUE(w == 0.0 || w == 1.0);
        ones += w == 1.0;
      }
      EXPECT_EQ(ones, 1u);
    }
}

TEST(RunWriter, ManifestWrittenFirstAndCompletedLast) {
  const fs::path dir = scratch_dir("manifest");
  {
    ex::RunWriter w(dir, "train", ex::config_json(TrainConfig{}), nullptr, {0, 1});
    auto m = ex::Json::parse(slurp(dir / "manifest.json"));
    EXPECT_EQ(m["status"], "running");
    EXPECT_TRUE(m["files"].empty());
    EXPECT_EQ(m["config"]["hidden"], 64);
    EXPECT_EQ(m["config"]["blocks"], 2);
    EXPECT_EQ(m["config"]["patience"], 100);
    w.write("a/b.csv", "x\n");
    w.write_json("results.json", ex::Json{{"k", 1}});
    w.finish();
  }
  auto m = ex::Json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["status"], "complete");
  EXPECT_EQ(m["files"], (ex::Json{"a/b.csv", "results.json"}));
  for (const auto& f : m["files"]) EXPECT_TRUE(fs::exists(dir / f.get<std::string>()));
  fs::remove_all(dir);
}

TEST(Subspaces, PureAssortativeGraphSitsInTopBin) {
  const GraphDataset g = small_sbm(0.2, 0.0);
  const GraphContext ctx(g);
  const auto rows = ex::observe_subspaces(ctx, quick_config(), {0}, 4, 2);
  ASSERT_EQ(rows.size(), 8u);
  std::size_t counted = 0, non_isolated = 0;
  for (const auto& r : rows) {
    counted += r.nodes;
    if (r.homophily_bin != 3) {
      EXPECT_EQ(r.nodes, 0u);
    }
    EXPECT_EQ(r.winner.has_value(), r.test_nodes > 0);
  }
  for (std::size_t i = 0; i < g.num_nodes; ++i) non_isolated += g.degree(i) > 0;
  EXPECT_EQ(counted, non_isolated);

  const std::string csv = ex::subspaces_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
}

TEST(ExportRouting, RoundTripThroughRunDirectories) {
  const GraphDataset g = small_sbm(0.02, 0.2);
  const GraphContext ctx(g);
  auto make_run = [&](double lambda, const std::string& name) {
    TrainConfig c = quick_config();
    c.lambda = lambda;
    const fs::path dir = scratch_dir(name);
    ex::RunWriter w(dir, "train", ex::config_json(c), ex::dataset_json(g), {0});
    const auto runs = ex::run_seeds(ctx, c, "full", {0});
    ex::write_seed_files(w, runs);
    w.write_json("results.json", ex::results_json("train", c, {runs[0].row}));
    w.finish();
    return dir;
  };
  const fs::path a = make_run(0.0, "l0"), b = make_run(1.0, "l1");
  const auto ra = ex::load_run_routing(a), rb = ex::load_run_routing(b);
  EXPECT_EQ(ra.lambda, 0.0);
  EXPECT_EQ(rb.lambda, 1.0);
  for (const auto* r : {&ra, &rb})
    for (const auto& w : r->weight) EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-6);
  const std::string csv = ex::routing_compare_csv(ra, rb);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 4 * 2);
  EXPECT_THROW(ex::load_run_routing(scratch_dir("missing")), DataError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(VerifyTheory, ReportIsDeterministicAndPasses) {
  ex::TheoryOptions o;
  o.instances = 5;
  o.seed = 7;
  o.resolution = 50;
  const auto a = ex::verify_theory(o), b = ex::verify_theory(o);
  EXPECT_TRUE(a.ok);
  EXPECT_EQ(a.json.dump(), b.json.dump());
  EXPECT_EQ(a.json["summary"]["closed_form_matches"], 5);
  EXPECT_EQ(a.json["summary"]["threshold_violations"], 0);
}
