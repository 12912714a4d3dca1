// SPDX-License-Identifier: Apache-2.0
//
// Dataset directory layout:
//   meta.json     {"name", "num_nodes", "num_features", "num_classes"}
//   edges.tsv     "u\tv" per undirected edge, 0-based
//   features.bin  "GMXF" | u32 rows | u32 cols | u32 0 | rows*cols f32, all little-endian
//   labels.tsv    one class id per line
//   splits.json   optional {"<seed>": {"train": [...], "val": [...], "test": [...]}}
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnmoe/graph.hpp"

namespace gnnmoe {

namespace io_detail {
namespace fs = std::filesystem;

inline std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(p, mode);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

inline std::uint32_t read_u32_le(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

inline std::size_t parse_index(const std::string& tok, const fs::path& file, std::size_t line) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size() || v < 0)
    throw DataError(file.string() + ":" + std::to_string(line) + ": bad integer '" + tok + "'");
  return static_cast<std::size_t>(v);
}

inline std::vector<std::size_t> index_array(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) throw DataError(std::string("splits.json: missing array '") + key + "'");
  return j[key].get<std::vector<std::size_t>>();
}
}  // namespace io_detail

inline DenseMatrix read_features_bin(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path, std::ios::binary);
  std::array<unsigned char, 16> header{};
  if (!in.read(reinterpret_cast<char*>(header.data()), 16)) throw DataError(path.string() + ": truncated header");
  if (std::memcmp(header.data(), "GMXF", 4) != 0) throw DataError(path.string() + ": bad magic");
  const std::size_t rows = io_detail::read_u32_le(header.data() + 4);
  const std::size_t cols = io_detail::read_u32_le(header.data() + 8);
  if (io_detail::read_u32_le(header.data() + 12) != 0) throw DataError(path.string() + ": reserved field not zero");
  std::vector<unsigned char> raw(rows * cols * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError(path.string() + ": payload shorter than header shape");
  DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::uint32_t bits = io_detail::read_u32_le(raw.data() + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    m[i] = static_cast<double>(f);
  }
  return m;
}

inline void write_features_bin(const DenseMatrix& m, const std::filesystem::path& path) {
  auto out = io_detail::open_out(path, std::ios::binary);
  out.write("GMXF", 4);
  io_detail::write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
  io_detail::write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
  io_detail::write_u32_le(out, 0);
  for (double v : m.data()) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    io_detail::write_u32_le(out, bits);
  }
}

inline GraphDataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* f : {"meta.json", "edges.tsv", "features.bin", "labels.tsv"})
    if (!fs::exists(dir / f)) throw DataError("dataset " + dir.string() + " is missing " + f);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io_detail::open_in(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  for (const char* key : {"name", "num_nodes", "num_features", "num_classes"})
    if (!meta.contains(key)) throw DataError(std::string("meta.json: missing '") + key + "'");
  const auto n = meta["num_nodes"].get<std::size_t>();
  const auto d = meta["num_features"].get<std::size_t>();
  const auto c = meta["num_classes"].get<std::size_t>();

  std::vector<Edge> edges;
  {
    auto in = io_detail::open_in(dir / "edges.tsv");
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
      if (line.empty() || line == "\r") continue;
      if (line.back() == '\r') line.pop_back();
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError("edges.tsv:" + std::to_string(ln) + ": expected two tab-separated ids");
      edges.emplace_back(io_detail::parse_index(line.substr(0, tab), dir / "edges.tsv", ln),
                         io_detail::parse_index(line.substr(tab + 1), dir / "edges.tsv", ln));
    }
  }

  DenseMatrix x = read_features_bin(dir / "features.bin");
  if (x.rows() != n || x.cols() != d)
    throw DimensionError("features.bin shape " + shape_str(x.rows(), x.cols()) + " disagrees with meta.json " +
                         shape_str(n, d));

  std::vector<int> labels;
  {
    auto in = io_detail::open_in(dir / "labels.tsv");
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::size_t y = io_detail::parse_index(line, dir / "labels.tsv", ln);
      if (y >= c) throw DataError("labels.tsv:" + std::to_string(ln) + ": label " + line + " out of range");
      labels.push_back(static_cast<int>(y));
    }
  }
  if (labels.size() != n)
    throw DimensionError("labels.tsv has " + std::to_string(labels.size()) + " rows, meta.json says " +
                         std::to_string(n));

  GraphDataset g = make_graph(meta["name"].get<std::string>(), c, edges, std::move(x), std::move(labels));

  if (fs::exists(dir / "splits.json")) {
    nlohmann::json sj = nlohmann::json::parse(io_detail::open_in(dir / "splits.json"));
    for (auto& [key, val] : sj.items()) {
      SplitSpec s;
      s.seed = std::stoull(key);
      s.train = io_detail::index_array(val, "train");
      s.val = io_detail::index_array(val, "val");
      s.test = io_detail::index_array(val, "test");
      for (const auto* part : {&s.train, &s.val, &s.test})
        for (std::size_t i : *part)
          if (i >= n) throw DataError("splits.json: node " + std::to_string(i) + " out of range");
      g.splits[s.seed] = std::move(s);
    }
  }
  return g;
}

inline void save_dataset(const GraphDataset& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta{{"name", g.name},
                      {"num_nodes", g.num_nodes},
                      {"num_features", g.num_features},
                      {"num_classes", g.num_classes}};
  io_detail::open_out(dir / "meta.json") << meta.dump(2) << "\n";
  {
    auto out = io_detail::open_out(dir / "edges.tsv");
    for (auto [u, v] : undirected_edges(g)) out << u << '\t' << v << '\n';
  }
  write_features_bin(g.features, dir / "features.bin");
  {
    auto out = io_detail::open_out(dir / "labels.tsv");
    for (int y : g.labels) out << y << '\n';
  }
  if (!g.splits.empty()) {
    nlohmann::json sj = nlohmann::json::object();
    for (const auto& [seed, s] : g.splits)
      sj[std::to_string(seed)] = {{"train", s.train}, {"val", s.val}, {"test", s.test}};
    io_detail::open_out(dir / "splits.json") << sj.dump() << "\n";
  }
}

}  // namespace gnnmoe
