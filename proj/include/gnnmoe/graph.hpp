// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gnnmoe/matrix.hpp"
#include "gnnmoe/rng.hpp"

namespace gnnmoe {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Undirected attributed graph with node labels. Adjacency is stored
/// symmetrically with unit weights and without self-loops.
struct GraphDataset {
  std::string name;
  std::size_t num_nodes = 0;
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  SparseMatrix adjacency;
  DenseMatrix features;
  std::vector<int> labels;
  std::map<std::uint64_t, SplitSpec> splits;  // pre-computed splits keyed by seed

  std::size_t num_undirected_edges() const { return adjacency.nnz() / 2; }
  std::size_t degree(std::size_t i) const { return adjacency.row_nnz(i); }
};

using Edge = std::pair<std::size_t, std::size_t>;

/// Symmetrizes, deduplicates and drops self-loops.
inline SparseMatrix build_adjacency(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(edges.size() * 2);
  for (auto [u, v] : edges) {
    if (u >= n || v >= n)
      throw DataError("edge (" + std::to_string(u) + ", " + std::to_string(v) + ") references a node >= " +
                      std::to_string(n));
    if (u == v) continue;
    t.push_back({u, v, 1.0});
    t.push_back({v, u, 1.0});
  }
  SparseMatrix summed = SparseMatrix::from_triplets(n, n, std::move(t));
  std::vector<double> ones(summed.nnz(), 1.0);
  return SparseMatrix(n, n, summed.row_ptr(), summed.col_idx(), std::move(ones));
}

inline GraphDataset make_graph(std::string name, std::size_t num_classes, const std::vector<Edge>& edges,
                               DenseMatrix features, std::vector<int> labels) {
  GraphDataset g;
  g.name = std::move(name);
  g.num_nodes = labels.size();
  g.num_features = features.cols();
  g.num_classes = num_classes;
  if (features.rows() != g.num_nodes)
    throw DimensionError("features have " + std::to_string(features.rows()) + " rows for " +
                         std::to_string(g.num_nodes) + " nodes");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  g.adjacency = build_adjacency(g.num_nodes, edges);
  g.features = std::move(features);
  g.labels = std::move(labels);
  return g;
}

inline std::vector<Edge> undirected_edges(const GraphDataset& g) {
  std::vector<Edge> out;
  out.reserve(g.num_undirected_edges());
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t j : g.adjacency.row_cols(i))
      if (i < j) out.emplace_back(i, j);
  return out;
}

/// (D+I)^{-1/2} (A+I) (D+I)^{-1/2}
inline SparseMatrix normalize_adjacency(const GraphDataset& g) {
  const std::size_t n = g.num_nodes;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)) + 1.0);
  std::vector<std::size_t> row_ptr(n + 1, 0), col_idx;
  std::vector<double> values;
  col_idx.reserve(g.adjacency.nnz() + n);
  values.reserve(g.adjacency.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool placed_self = false;
    for (std::size_t j : g.adjacency.row_cols(i)) {
      if (!placed_self && j > i) {
        col_idx.push_back(i);
        values.push_back(inv_sqrt[i] * inv_sqrt[i]);
        placed_self = true;
      }
      col_idx.push_back(j);
      values.push_back(inv_sqrt[i] * inv_sqrt[j]);
    }
    if (!placed_self) {
      col_idx.push_back(i);
      values.push_back(inv_sqrt[i] * inv_sqrt[i]);
    }
    row_ptr[i + 1] = values.size();
  }
  return SparseMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::move(values));
}

/// D^{-1} A; rows of isolated nodes are empty.
inline SparseMatrix mean_adjacency(const GraphDataset& g) {
  std::vector<double> values(g.adjacency.nnz());
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const double inv = g.degree(i) ? 1.0 / static_cast<double>(g.degree(i)) : 0.0;
    for (std::size_t k = g.adjacency.row_ptr()[i]; k < g.adjacency.row_ptr()[i + 1]; ++k) values[k] = inv;
  }
  return SparseMatrix(g.num_nodes, g.num_nodes, g.adjacency.row_ptr(), g.adjacency.col_idx(), std::move(values));
}

/// Fraction of each node's neighbors sharing its label; empty for isolated nodes.
inline std::vector<std::optional<double>> node_homophily(const GraphDataset& g) {
  std::vector<std::optional<double>> h(g.num_nodes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const auto nbrs = g.adjacency.row_cols(i);
    if (nbrs.empty()) continue;
    std::size_t same = 0;
    for (std::size_t j : nbrs) same += g.labels[j] == g.labels[i];
    h[i] = static_cast<double>(same) / static_cast<double>(nbrs.size());
  }
  return h;
}

/// Mean node homophily over non-isolated nodes (NaN when every node is isolated).
inline double mean_node_homophily(const GraphDataset& g) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& h : node_homophily(g))
    if (h) {
      s += *h;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::nan("");
}

struct HomophilyProfile {
  std::vector<std::optional<double>> homophily;
  std::vector<std::size_t> degree;
  std::vector<std::optional<std::size_t>> subspace;  // h_bin * degree_bins + d_bin
  std::size_t homophily_bins = 1;
  std::size_t degree_bins = 1;
  std::vector<std::pair<double, double>> degree_bounds;  // observed [min, max] degree per degree bin, NaN if empty

  std::size_t homophily_bin(std::size_t subspace_id) const { return subspace_id / degree_bins; }
  std::size_t degree_bin(std::size_t subspace_id) const { return subspace_id % degree_bins; }
  std::size_t num_subspaces() const { return homophily_bins * degree_bins; }
};

/// Equal-width bin index of `h` in [0, 1] for `bins` intervals [0, 1/b), …, [(b−1)/b, 1].
inline std::size_t homophily_bin_of(double h, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(h * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

/// Homophily is split into equal-width bins, degree into quantile bins over non-isolated nodes.
/// Isolated nodes get no subspace.
inline HomophilyProfile partition_subspaces(const GraphDataset& g, std::size_t homophily_bins,
                                            std::size_t degree_bins) {
  if (homophily_bins == 0 || degree_bins == 0) throw std::invalid_argument("partition_subspaces: bins must be >= 1");
  HomophilyProfile p;
  p.homophily = node_homophily(g);
  p.homophily_bins = homophily_bins;
  p.degree_bins = degree_bins;
  p.degree.resize(g.num_nodes);
  p.subspace.resize(g.num_nodes);
  std::vector<double> degs;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    p.degree[i] = g.degree(i);
    if (p.homophily[i]) degs.push_back(static_cast<double>(p.degree[i]));
  }
  std::sort(degs.begin(), degs.end());
  const auto total = static_cast<double>(degs.size());
  p.degree_bounds.assign(degree_bins, {std::nan(""), std::nan("")});
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (!p.homophily[i]) continue;
    // mid-rank quantile, so tied degrees always share a bin
    const auto d = static_cast<double>(p.degree[i]);
    const auto lo = std::lower_bound(degs.begin(), degs.end(), d) - degs.begin();
    const auto hi = std::upper_bound(degs.begin(), degs.end(), d) - degs.begin();
    const double q = (static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo)) / total;
    const std::size_t dbin = std::min(degree_bins - 1, static_cast<std::size_t>(q * static_cast<double>(degree_bins)));
    p.subspace[i] = homophily_bin_of(*p.homophily[i], homophily_bins) * degree_bins + dbin;
    auto& [bmin, bmax] = p.degree_bounds[dbin];
    bmin = std::isnan(bmin) ? d : std::min(bmin, d);
    bmax = std::isnan(bmax) ? d : std::max(bmax, d);
  }
  return p;
}

struct SbmOptions {
  std::size_t num_nodes = 400;
  std::size_t num_classes = 4;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t num_features = 16;
  double noise = 1.0;
  double centroid_scale = 2.0;
};

/// Block model with an arbitrary class-to-class edge probability table.
inline GraphDataset generate_block_model(std::string name, std::size_t n, const std::vector<std::vector<double>>& prob,
                                         std::size_t d, double noise, double centroid_scale, RngState& rng) {
  const std::size_t classes = prob.size();
  if (classes == 0) throw std::invalid_argument("generate_block_model: need at least one class");
  if (n < classes) throw std::invalid_argument("generate_block_model: fewer nodes than classes");
  if (d == 0) throw std::invalid_argument("generate_block_model: feature dimension must be positive");
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  rng.shuffle(labels);

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < prob[labels[i]][labels[j]]) edges.emplace_back(i, j);

  DenseMatrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) x(i, c) = noise * rng.normal();
    x(i, static_cast<std::size_t>(labels[i]) % d) += centroid_scale;
  }
  return make_graph(std::move(name), classes, edges, std::move(x), std::move(labels));
}

/// Stochastic block model with balanced classes: p_in within a class, p_out across.
inline GraphDataset generate_sbm(const SbmOptions& o, RngState& rng) {
  if (o.num_nodes < o.num_classes) throw std::invalid_argument("generate_sbm: n < classes");
  std::vector<std::vector<double>> prob(o.num_classes, std::vector<double>(o.num_classes, o.p_out));
  for (std::size_t c = 0; c < o.num_classes; ++c) prob[c][c] = o.p_in;
  return generate_block_model("sbm", o.num_nodes, prob, o.num_features, o.noise, o.centroid_scale, rng);
}

/// Per-class stratified split. Nodes of each class are shuffled and interleaved
/// by within-class rank, so every prefix of the ordering is near-stratified; the
/// ordering is then cut at the requested ratios.
inline SplitSpec make_splits(const GraphDataset& g, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw std::invalid_argument("make_splits: ratios must be non-negative and sum to 1");
  std::vector<std::vector<std::size_t>> by_class(g.num_classes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) by_class[g.labels[i]].push_back(i);
  RngState rng = RngState(seed).fork(0x5717);
  struct Keyed {
    double key;
    std::size_t cls;
    std::size_t node;
  };
  std::vector<Keyed> order;
  for (std::size_t c = 0; c < g.num_classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < 3)
      throw DataError("make_splits: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                      " nodes; stratification needs at least 3");
    rng.shuffle(members);
    for (std::size_t r = 0; r < members.size(); ++r)
      order.push_back({static_cast<double>(r) / static_cast<double>(members.size()), c, members[r]});
  }
  std::sort(order.begin(), order.end(),
            [](const Keyed& a, const Keyed& b) { return a.key != b.key ? a.key < b.key : a.cls < b.cls; });
  const auto n = static_cast<double>(g.num_nodes);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * n));
  SplitSpec s;
  s.seed = seed;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < n_train ? s.train : (k < n_train + n_val ? s.val : s.test);
    dst.push_back(order[k].node);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline SplitSpec default_splits(const GraphDataset& g, std::uint64_t seed) {
  if (auto it = g.splits.find(seed); it != g.splits.end()) return it->second;
  return make_splits(g, {0.48, 0.32, 0.20}, seed);
}

inline DenseMatrix one_hot_labels(const GraphDataset& g) {
  DenseMatrix y(g.num_nodes, g.num_classes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) y(i, static_cast<std::size_t>(g.labels[i])) = 1.0;
  return y;
}

/// Relabels node i as perm[i].
inline GraphDataset permute_nodes(const GraphDataset& g, const std::vector<std::size_t>& perm) {
  std::vector<Edge> edges;
  for (auto [u, v] : undirected_edges(g)) edges.emplace_back(perm[u], perm[v]);
  DenseMatrix x(g.num_nodes, g.num_features);
  std::vector<int> labels(g.num_nodes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    auto src = g.features.row(i);
    std::copy(src.begin(), src.end(), x.row(perm[i]).begin());
    labels[perm[i]] = g.labels[i];
  }
  return make_graph(g.name, g.num_classes, edges, std::move(x), std::move(labels));
}

}  // namespace gnnmoe
