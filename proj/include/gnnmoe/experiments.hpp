// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration behind the gnnmoe command-line tool. Every command
// writes manifest.json before doing any work and rewrites it on completion with
// the list of files produced. All outputs other than the manifest's timestamp
// are a pure function of the flags, so reruns are byte-identical.
#pragma once

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnmoe/dataset_io.hpp"
#include "gnnmoe/theory.hpp"
#include "gnnmoe/train.hpp"

namespace gnnmoe::experiments {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Bad flag values; the CLI maps this to exit code 2.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// "0..9" (inclusive), "3", or a comma list of either.
inline std::vector<std::uint64_t> parse_seeds(std::string_view text) {
  std::vector<std::uint64_t> out;
  auto number = [&](std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size())
      throw UsageError("bad seed '" + std::string(s) + "' in '" + std::string(text) + "'");
    return v;
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string_view part = text.substr(start, comma - start);
    if (const auto dots = part.find(".."); dots != std::string_view::npos) {
      const std::uint64_t lo = number(part.substr(0, dots)), hi = number(part.substr(dots + 2));
      if (hi < lo) throw UsageError("empty seed range '" + std::string(part) + "'");
      if (hi - lo >= 100000) throw UsageError("seed range too large");
      for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      out.push_back(number(part));
    }
    start = comma + 1;
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population: sqrt(Σ(x − mean)² / n)
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return r;
}

/// Shortest round-trip decimal.
inline std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

// ---------------------------------------------------------------------------
// Result rows and file writers.

struct ResultRow {
  std::string dataset;
  std::string variant;
  std::uint64_t seed = 0;
  double test_acc = 0.0;
  double val_acc = 0.0;
  double train_acc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<double> block_entropy;  // mean row entropy per block at the best epoch, eval mode
  double final_route_loss = 0.0;      // training-pass routing entropy of the last epoch
};

inline ResultRow make_row(const std::string& dataset, const std::string& variant, std::uint64_t seed,
                          const TrainResult& r) {
  ResultRow row{dataset, variant, seed, r.test_acc, r.val_acc, r.train_acc, r.history.best_epoch,
                r.history.epochs.size(), {}, 0.0};
  for (const auto& pi : r.best_eval.routing) row.block_entropy.push_back(mean_row_entropy(pi));
  if (!r.history.epochs.empty()) row.final_route_loss = r.history.epochs.back().route_loss;
  return row;
}

inline std::string_view router_name(RouterKind k) {
  switch (k) {
    case RouterKind::Soft: return "soft";
    case RouterKind::Uniform: return "mean";
    case RouterKind::TopK: return "topk";
    case RouterKind::DotAttention: return "dot-att";
    case RouterKind::Forced: return "forced";
  }
  return "?";
}

inline Json config_json(const TrainConfig& c) {
  Json routing{{"kind", router_name(c.routing.kind)}, {"temperature", c.routing.temperature}};
  if (c.routing.kind == RouterKind::TopK) routing["topk"] = c.routing.topk;
  if (c.routing.kind == RouterKind::Forced) routing["forced"] = to_string(c.routing.forced);
  Json effn{{"enabled", c.use_effn},
            {"forced", c.effn.forced ? Json(to_string(*c.effn.forced)) : Json(nullptr)},
            {"per_node", c.effn.per_node},
            {"adaptive_residual", c.effn.adaptive_residual}};
  return Json{{"prop", to_string(c.prop)},
              {"blocks", c.blocks},
              {"hidden", c.hidden},
              {"lr", c.lr},
              {"dropout", c.dropout},
              {"weight_decay", c.weight_decay},
              {"lambda", c.lambda},
              {"epochs", c.epochs},
              {"patience", c.patience},
              {"routing", routing},
              {"effn", effn},
              {"adaptive_residual", c.adaptive_residual}};
}

inline Json row_json(const ResultRow& r) {
  return Json{{"dataset", r.dataset},         {"variant", r.variant},       {"seed", r.seed},
              {"test_acc", r.test_acc},       {"val_acc", r.val_acc},       {"train_acc", r.train_acc},
              {"best_epoch", r.best_epoch},   {"epochs_run", r.epochs_run}, {"block_entropy", r.block_entropy},
              {"final_route_loss", r.final_route_loss}};
}

/// Rows plus per-variant mean/std, variants in order of first appearance.
inline Json results_json(const std::string& command, const TrainConfig& cfg, const std::vector<ResultRow>& rows) {
  Json j{{"command", command}, {"config", config_json(cfg)}, {"std", "population"}, {"rows", Json::array()}};
  std::vector<std::string> order;
  for (const auto& r : rows) {
    j["rows"].push_back(row_json(r));
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  Json summary = Json::array();
  for (const auto& v : order) {
    std::vector<double> test, val;
    for (const auto& r : rows)
      if (r.variant == v) {
        test.push_back(r.test_acc);
        val.push_back(r.val_acc);
      }
    const MeanStd t = mean_std(test), va = mean_std(val);
    summary.push_back(Json{{"variant", v}, {"seeds", t.n}, {"test_mean", t.mean}, {"test_std", t.std},
                           {"val_mean", va.mean}, {"val_std", va.std}});
  }
  j["summary"] = summary;
  return j;
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed: " + p.string());
}

inline std::string metrics_csv(const TrainHistory& h) {
  std::string s = "epoch,task_loss,route_loss,total_loss,train_acc,val_acc,hr_selection\n";
  for (const auto& e : h.epochs) {
    s += std::to_string(e.epoch) + ',' + fmt(e.task_loss) + ',' + fmt(e.route_loss) + ',' + fmt(e.total_loss) + ',' +
         fmt(e.train_acc) + ',' + fmt(e.val_acc) + ',' + (e.hr_selection ? std::to_string(*e.hr_selection) : "") +
         '\n';
  }
  return s;
}

inline constexpr std::string_view kRoutingHeader = "seed,block,expert,mean_weight\n";

inline std::string routing_rows(std::uint64_t seed, const EvalResult& ev) {
  std::string s;
  for (std::size_t b = 0; b < ev.routing.size(); ++b) {
    const auto w = mean_weights(ev.routing[b]);
    for (std::size_t e = 0; e < kNumExperts; ++e)
      s += std::to_string(seed) + ',' + std::to_string(b) + ',' + std::string(to_string(kAllExperts[e])) + ',' +
           fmt(w[e]) + '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------
// Manifest.

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunWriter {
 public:
  RunWriter(fs::path out, std::string command, Json config, Json dataset, std::vector<std::uint64_t> seeds)
      : out_(std::move(out)) {
    manifest_ = Json{{"command", std::move(command)},
                     {"config", std::move(config)},
                     {"dataset", std::move(dataset)},
                     {"seeds", std::move(seeds)},
                     {"output_dir", out_.string()},
                     {"timestamp", utc_timestamp()},
                     {"status", "running"},
                     {"files", Json::array()}};
    fs::create_directories(out_);
    flush();
  }

  const fs::path& dir() const { return out_; }

  void write(const std::string& relative, const std::string& text) {
    write_text(out_ / relative, text);
    if (std::find(files_.begin(), files_.end(), relative) == files_.end()) files_.push_back(relative);
  }

  void write_json(const std::string& relative, const Json& j) { write(relative, j.dump(2) + "\n"); }

  void finish(bool ok = true) {
    manifest_["status"] = ok ? "complete" : "failed";
    manifest_["files"] = files_;
    flush();
  }

 private:
  void flush() const { write_text(out_ / "manifest.json", manifest_.dump(2) + "\n"); }

  fs::path out_;
  Json manifest_;
  std::vector<std::string> files_;
};

inline Json dataset_json(const GraphDataset& g) {
  return Json{{"name", g.name}, {"nodes", g.num_nodes}, {"edges", g.num_undirected_edges()},
              {"features", g.num_features}, {"classes", g.num_classes}};
}

// ---------------------------------------------------------------------------
// Synthetic data.

/// Half the classes are assortative (p_in inside, p_out elsewhere); the other
/// half link to each other at p_in and to themselves at p_out. Needs ≥ 4 classes
/// so the disassortative half has someone to link to.
inline GraphDataset generate_mixed_sbm(const SbmOptions& o, RngState& rng) {
  const std::size_t c = o.num_classes;
  if (c < 4) throw std::invalid_argument("generate_mixed_sbm: need at least 4 classes");
  const std::size_t half = c / 2;
  std::vector<std::vector<double>> prob(c, std::vector<double>(c, o.p_out));
  for (std::size_t a = 0; a < c; ++a) {
    if (a < half) prob[a][a] = o.p_in;
    else
      for (std::size_t b = half; b < c; ++b)
        if (b != a) prob[a][b] = o.p_in;
  }
  return generate_block_model("mixed-sbm", o.num_nodes, prob, o.num_features, o.noise, o.centroid_scale, rng);
}

// ---------------------------------------------------------------------------
// Training over seed lists.

struct SeedRun {
  std::uint64_t seed = 0;
  TrainResult result;
  ResultRow row;
};

inline std::vector<SeedRun> run_seeds(const GraphContext& ctx, TrainConfig cfg, const std::string& variant,
                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<SeedRun> out;
  for (std::uint64_t s : seeds) {
    cfg.seed = s;
    SeedRun r{s, train_with_config(ctx, cfg), {}};
    r.row = make_row(ctx.graph->name, variant, s, r.result);
    out.push_back(std::move(r));
  }
  return out;
}

/// Writes <prefix>seed_<s>/metrics.csv for each run and <prefix>routing.csv for all of them.
inline void write_seed_files(RunWriter& w, const std::vector<SeedRun>& runs, const std::string& prefix = "") {
  std::string routing(kRoutingHeader);
  for (const auto& r : runs) {
    w.write(prefix + "seed_" + std::to_string(r.seed) + "/metrics.csv", metrics_csv(r.result.history));
    routing += routing_rows(r.seed, r.result.best_eval);
  }
  w.write(prefix + "routing.csv", routing);
}

// ---------------------------------------------------------------------------
// Subspace observation: single-expert models compared inside homophily × degree cells.

struct SubspaceRow {
  std::size_t id = 0;
  std::size_t homophily_bin = 0, degree_bin = 0;
  double h_lo = 0.0, h_hi = 0.0;
  double deg_lo = 0.0, deg_hi = 0.0;  // observed; NaN if the degree bin is empty
  std::size_t nodes = 0;
  std::size_t test_nodes = 0;  // pooled over seeds
  std::array<std::optional<double>, kNumExperts> accuracy;
  std::optional<ExpertKind> winner;  // first best in PP, PT, TP, TT order
};

inline std::vector<SubspaceRow> observe_subspaces(const GraphContext& ctx, TrainConfig cfg,
                                                  const std::vector<std::uint64_t>& seeds, std::size_t hbins,
                                                  std::size_t dbins) {
  const GraphDataset& g = *ctx.graph;
  const HomophilyProfile prof = partition_subspaces(g, hbins, dbins);
  std::vector<SubspaceRow> rows(prof.num_subspaces());
  for (std::size_t s = 0; s < rows.size(); ++s) {
    auto& r = rows[s];
    r.id = s;
    r.homophily_bin = prof.homophily_bin(s);
    r.degree_bin = prof.degree_bin(s);
    r.h_lo = static_cast<double>(r.homophily_bin) / static_cast<double>(hbins);
    r.h_hi = static_cast<double>(r.homophily_bin + 1) / static_cast<double>(hbins);
    std::tie(r.deg_lo, r.deg_hi) = prof.degree_bounds[r.degree_bin];
  }
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (prof.subspace[i]) ++rows[*prof.subspace[i]].nodes;

  std::vector<std::array<std::size_t, kNumExperts>> correct(rows.size(), std::array<std::size_t, kNumExperts>{});
  std::vector<std::size_t> total(rows.size(), 0);
  cfg.routing.kind = RouterKind::Forced;
  for (std::uint64_t seed : seeds) {
    const SplitSpec split = default_splits(g, seed);
    for (std::size_t i : split.test)
      if (prof.subspace[i]) ++total[*prof.subspace[i]];
    for (std::size_t e = 0; e < kNumExperts; ++e) {
      cfg.routing.forced = kAllExperts[e];
      cfg.seed = seed;
      const TrainResult r = train_with_config(ctx, cfg);
      for (std::size_t i : split.test) {
        if (!prof.subspace[i]) continue;
        const std::size_t pred = ad::detail::argmax_row(r.best_eval.logits.row(i));
        if (static_cast<int>(pred) == g.labels[i]) ++correct[*prof.subspace[i]][e];
      }
    }
  }
  for (std::size_t s = 0; s < rows.size(); ++s) {
    rows[s].test_nodes = total[s];
    if (total[s] == 0) continue;
    double best = -1.0;
    for (std::size_t e = 0; e < kNumExperts; ++e) {
      const double a = static_cast<double>(correct[s][e]) / static_cast<double>(total[s]);
      rows[s].accuracy[e] = a;
      if (a > best) {
        best = a;
        rows[s].winner = kAllExperts[e];
      }
    }
  }
  return rows;
}

inline std::string subspaces_csv(const std::vector<SubspaceRow>& rows) {
  std::string s = "subspace,homophily_bin,degree_bin,h_lo,h_hi,deg_lo,deg_hi,nodes,test_nodes,acc_PP,acc_PT,acc_TP,acc_TT,winner\n";
  auto opt = [](double v) { return std::isnan(v) ? std::string() : fmt(v); };
  for (const auto& r : rows) {
    s += std::to_string(r.id) + ',' + std::to_string(r.homophily_bin) + ',' + std::to_string(r.degree_bin) + ',' +
         fmt(r.h_lo) + ',' + fmt(r.h_hi) + ',' + opt(r.deg_lo) + ',' + opt(r.deg_hi) + ',' + std::to_string(r.nodes) +
         ',' + std::to_string(r.test_nodes);
    for (const auto& a : r.accuracy) s += ',' + (a ? fmt(*a) : std::string());
    s += ',' + (r.winner ? std::string(to_string(*r.winner)) : std::string()) + '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------
// Routing strategy comparison.

struct RoutingVariant {
  std::string label;
  RoutingOptions options;
};

/// Entropy-soft (the configured router), mean, hard top-k and dot-attention.
/// `topk` restricts the top-k variants to a single k.
inline std::vector<RoutingVariant> routing_variants(const RoutingOptions& soft, std::optional<std::size_t> topk) {
  std::vector<RoutingVariant> v;
  v.push_back({"soft", soft});
  v.push_back({"mean", {RouterKind::Uniform, 1.0, 1, ExpertKind::PP}});
  std::vector<std::size_t> ks{1, 2, 3};
  if (topk) {
    if (*topk < 1 || *topk > kNumExperts - 1) throw UsageError("--topk must be in [1, 3]");
    ks = {*topk};
  }
  for (std::size_t k : ks) v.push_back({"top" + std::to_string(k), {RouterKind::TopK, soft.temperature, k, ExpertKind::PP}});
  v.push_back({"dot-att", {RouterKind::DotAttention, soft.temperature, 1, ExpertKind::PP}});
  return v;
}

// ---------------------------------------------------------------------------
// Routing export: two finished train runs side by side.

struct RunRouting {
  double lambda = 0.0;
  std::size_t blocks = 0;
  std::vector<std::array<double, kNumExperts>> weight;  // mean over seeds
  std::vector<double> entropy;                          // mean over seeds of block_entropy
};

inline RunRouting load_run_routing(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("run directory " + dir.string() + " does not exist");
  for (const char* f : {"results.json", "routing.csv"})
    if (!fs::exists(dir / f)) throw DataError("run directory " + dir.string() + " has no " + f);
  RunRouting r;
  Json res = Json::parse(std::ifstream(dir / "results.json"));
  r.lambda = res.at("config").at("lambda").get<double>();
  r.blocks = res.at("config").at("blocks").get<std::size_t>();
  r.weight.assign(r.blocks, {});
  r.entropy.assign(r.blocks, 0.0);
  const auto& rows = res.at("rows");
  if (rows.empty()) throw DataError(dir.string() + "/results.json has no rows");
  for (const auto& row : rows) {
    const auto ent = row.at("block_entropy").get<std::vector<double>>();
    if (ent.size() != r.blocks) throw DataError("block_entropy length disagrees with config.blocks");
    for (std::size_t b = 0; b < r.blocks; ++b) r.entropy[b] += ent[b] / static_cast<double>(rows.size());
  }

  std::ifstream in(dir / "routing.csv");
  std::string line;
  std::getline(in, line);
  if (line + "\n" != kRoutingHeader) throw DataError("routing.csv: unexpected header");
  std::vector<std::size_t> count(r.blocks, 0);
  for (std::size_t ln = 2; std::getline(in, line); ++ln) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    if (f.size() != 4) throw DataError("routing.csv:" + std::to_string(ln) + ": expected 4 fields");
    const std::size_t b = std::stoul(f[1]);
    std::size_t e = kNumExperts;
    for (std::size_t k = 0; k < kNumExperts; ++k)
      if (f[2] == to_string(kAllExperts[k])) e = k;
    if (b >= r.blocks || e == kNumExperts) throw DataError("routing.csv:" + std::to_string(ln) + ": bad block/expert");
    r.weight[b][e] += std::stod(f[3]);
    if (e == 0) ++count[b];
  }
  for (std::size_t b = 0; b < r.blocks; ++b) {
    if (count[b] == 0) throw DataError("routing.csv: no rows for block " + std::to_string(b));
    for (double& w : r.weight[b]) w /= static_cast<double>(count[b]);
  }
  return r;
}

inline std::string routing_compare_csv(const RunRouting& baseline, const RunRouting& regularized) {
  std::string s = "run,lambda,block,expert,mean_weight,block_entropy\n";
  auto emit = [&](const char* name, const RunRouting& r) {
    for (std::size_t b = 0; b < r.blocks; ++b)
      for (std::size_t e = 0; e < kNumExperts; ++e)
        s += std::string(name) + ',' + fmt(r.lambda) + ',' + std::to_string(b) + ',' +
             std::string(to_string(kAllExperts[e])) + ',' + fmt(r.weight[b][e]) + ',' + fmt(r.entropy[b]) + '\n';
  };
  emit("baseline", baseline);
  emit("regularized", regularized);
  return s;
}

// ---------------------------------------------------------------------------
// Theory report.

struct TheoryOptions {
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  std::size_t resolution = 100;
  double l1_tol = 1e-3;
  double softmax_tol = 1e-12;
};

struct TheoryReport {
  Json json;
  bool ok = true;
  std::vector<std::string> failures;
};

inline Json instance_json(const RoutingInstance& i) {
  return Json{{"base", i.base}, {"gains", i.gains}, {"eta", i.eta}, {"lambda", i.lambda}};
}

/// Threshold sweep uses half as many instances as the other suites (50 at the default 100).
inline TheoryReport verify_theory(const TheoryOptions& o) {
  TheoryReport rep;
  Json cf = Json::array();
  std::size_t cf_pass = 0, sm_pass = 0;
  for (const auto& c : closed_form_suite(o.instances, o.seed, o.resolution)) {
    const bool l1_ok = c.l1 <= o.l1_tol, sm_ok = c.softmax_gap <= o.softmax_tol;
    cf_pass += l1_ok;
    sm_pass += sm_ok;
    Json item{{"instance", instance_json(c.instance)}, {"closed_form", c.closed_form},
              {"brute_force", c.brute_force}, {"l1", c.l1}, {"softmax_gap", c.softmax_gap}};
    if (!l1_ok || !sm_ok) rep.failures.push_back("closed_form: " + item.dump());
    cf.push_back(std::move(item));
  }

  const std::size_t threshold_instances = std::max<std::size_t>(1, o.instances / 2);
  Json cor = Json::array();
  std::size_t violations = 0, samples = 0;
  for (const auto& c : threshold_suite(threshold_instances, o.seed)) {
    violations += c.violations;
    samples += c.samples;
    Json item{{"instance", instance_json(c.instance)}, {"k", c.k}, {"eps", c.eps}, {"delta", c.delta},
              {"theta", c.theta}, {"samples", c.samples}, {"violations", c.violations},
              {"worst_tail", c.worst_tail}};
    if (c.violations) rep.failures.push_back("threshold: " + item.dump());
    cor.push_back(std::move(item));
  }

  Json sh = Json::array();
  std::size_t sh_pass = 0;
  for (const auto& c : sharpening_suite(o.instances, o.seed)) {
    const bool ok = !c.report.skipped && c.report.strictly_decreasing && c.report.argmax_constant;
    sh_pass += ok;
    Json item{{"base", c.base}, {"gains", c.gains}, {"eta", c.eta}, {"lambdas", c.lambdas},
              {"entropies", c.report.entropies}, {"strictly_decreasing", c.report.strictly_decreasing},
              {"argmax_constant", c.report.argmax_constant}};
    if (!ok) rep.failures.push_back("sharpening: " + item.dump());
    sh.push_back(std::move(item));
  }

  rep.ok = rep.failures.empty();
  rep.json = Json{
      {"seed", o.seed},
      {"instances", o.instances},
      {"grid_resolution", o.resolution},
      {"summary",
       {{"closed_form_matches", cf_pass},
        {"closed_form_total", cf.size()},
        {"l1_tolerance", o.l1_tol},
        {"temperature_identity_matches", sm_pass},
        {"threshold_instances", cor.size()},
        {"threshold_samples", samples},
        {"threshold_violations", violations},
        {"sharpening_passes", sh_pass},
        {"sharpening_total", sh.size()},
        {"ok", rep.ok}}},
      {"closed_form", cf},
      {"threshold", cor},
      {"sharpening", sh}};
  return rep;
}

}  // namespace gnnmoe::experiments
