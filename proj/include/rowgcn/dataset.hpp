// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rowgcn/partition.hpp"
#include "rowgcn/rng.hpp"

namespace rowgcn {

template <class S>
struct Dataset {
  CsrMatrix<S> graph;  // raw adjacency A, entry (u,v) = edge u -> v
  DenseMatrix<S> features;
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> train_mask;  // empty = all vertices
  std::vector<std::uint8_t> val_mask, test_mask;
  std::string name;

  index_t n() const { return graph.rows; }

  void validate() const {
    graph.validate();
    if (graph.rows != graph.cols)
      throw ShapeError("dataset " + name + ": adjacency is " + detail::shape_str(graph.rows, graph.cols) +
                       ", expected square");
    if (features.rows() != graph.rows)
      throw ShapeError("dataset " + name + ": features have " + std::to_string(features.rows()) +
                       " rows but graph has " + std::to_string(graph.rows) + " vertices");
    if (static_cast<index_t>(labels.size()) != graph.rows)
      throw ShapeError("dataset " + name + ": " + std::to_string(labels.size()) + " labels but graph has " +
                       std::to_string(graph.rows) + " vertices");
    if (!train_mask.empty() && static_cast<index_t>(train_mask.size()) != graph.rows)
      throw ShapeError("dataset " + name + ": train mask length " + std::to_string(train_mask.size()) +
                       " != n " + std::to_string(graph.rows));
  }

  std::vector<std::uint8_t> effective_mask() const {
    if (!train_mask.empty()) return train_mask;
    return std::vector<std::uint8_t>(static_cast<std::size_t>(n()), 1);
  }

  int num_classes() const {
    std::int32_t c = 0;
    for (auto l : labels) c = std::max(c, l);
    return c + 1;
  }
};

/// Inserts unit-weight self loops where missing. Off by default everywhere;
/// the normalization leaves zero-in-degree columns all-zero instead.
template <class S>
CsrMatrix<S> add_self_loops(const CsrMatrix<S>& a) {
  std::vector<CooEdge<S>> edges;
  edges.reserve(static_cast<std::size_t>(a.nnz()) + static_cast<std::size_t>(a.rows));
  for (index_t u = 0; u < a.rows; ++u) {
    bool has_diag = false;
    for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
      if (a.col_idx[e] == u) has_diag = true;
      edges.push_back({u, a.col_idx[e], a.values[e]});
    }
    if (!has_diag) edges.push_back({u, u, S(1)});
  }
  return from_coo(std::move(edges), a.rows);
}

// ---------------------------------------------------------------------------
// Loaders

namespace detail {
inline bool starts_with(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}
}  // namespace detail

/// Matrix Market coordinate files: real, integer or pattern fields, general
/// or symmetric. 1-based indices. Symmetric entries are mirrored (diagonal
/// not duplicated).
template <class S>
CsrMatrix<S> load_matrix_market(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(f, line)) throw ParseError(path + ":1: empty file");
  ++lineno;
  std::istringstream hdr(line);
  std::string banner, object, format, field, symmetry;
  hdr >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket" || object != "matrix" || format != "coordinate")
    throw ParseError(path + ":1: expected '%%MatrixMarket matrix coordinate ...' header");
  const bool pattern = field == "pattern";
  if (!pattern && field != "real" && field != "integer")
    throw ParseError(path + ":1: unsupported field '" + field + "'");
  const bool symmetric = symmetry == "symmetric";
  if (!symmetric && symmetry != "general")
    throw ParseError(path + ":1: unsupported symmetry '" + symmetry + "'");

  index_t rows = 0, cols = 0;
  std::int64_t entries = -1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream sz(line);
    if (!(sz >> rows >> cols >> entries))
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad size line");
    break;
  }
  if (entries < 0) throw ParseError(path + ": missing size line");

  std::vector<CooEdge<S>> edges;
  edges.reserve(static_cast<std::size_t>(symmetric ? 2 * entries : entries));
  std::int64_t seen = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream ls(line);
    index_t u, v;
    double w = 1.0;
    if (!(ls >> u >> v)) throw ParseError(path + ":" + std::to_string(lineno) + ": bad entry");
    if (!pattern && !(ls >> w))
      throw ParseError(path + ":" + std::to_string(lineno) + ": missing value");
    if (u < 1 || u > rows || v < 1 || v > cols)
      throw ParseError(path + ":" + std::to_string(lineno) + ": index (" + std::to_string(u) + ", " +
                       std::to_string(v) + ") out of bounds");
    edges.push_back({u - 1, v - 1, static_cast<S>(w)});
    if (symmetric && u != v) edges.push_back({v - 1, u - 1, static_cast<S>(w)});
    ++seen;
  }
  if (seen != entries)
    throw ParseError(path + ": header promised " + std::to_string(entries) + " entries, found " +
                     std::to_string(seen));
  if (rows != cols)
    throw ParseError(path + ": adjacency must be square, got " + detail::shape_str(rows, cols));
  return from_coo(std::move(edges), rows);
}

/// Whitespace-separated "u v [w]" per line, 0-based ids; blank lines and
/// '#' comments skipped. n is inferred as max id + 1.
template <class S>
CsrMatrix<S> load_edge_list(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<CooEdge<S>> edges;
  index_t n = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ls(line);
    index_t u, v;
    double w = 1.0;
    if (!(ls >> u >> v)) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'u v [w]'");
    ls >> w;
    if (u < 0 || v < 0)
      throw ParseError(path + ":" + std::to_string(lineno) + ": negative vertex id");
    n = std::max({n, u + 1, v + 1});
    edges.push_back({u, v, static_cast<S>(w)});
  }
  return from_coo(std::move(edges), n);
}

template <class S>
CsrMatrix<S> load_graph(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string first;
  std::getline(f, first);
  f.close();
  if (detail::starts_with(first, "%%MatrixMarket")) return load_matrix_market<S>(path);
  return load_edge_list<S>(path);
}

/// Features: dense binary (MGDM magic) or CSV rows.
template <class S>
DenseMatrix<S> load_features(const std::string& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open " + path);
    char magic[4] = {0, 0, 0, 0};
    probe.read(magic, 4);
    if (probe && std::memcmp(magic, "MGDM", 4) == 0) return read_dense<S>(path);
  }
  std::ifstream f(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<S>> rows;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<S> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ','))
      try {
        row.push_back(static_cast<S>(std::stod(cell)));
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": row has " + std::to_string(row.size()) +
                       " columns, expected " + std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": no feature rows");
  DenseMatrix<S> m(static_cast<index_t>(rows.size()), static_cast<index_t>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<index_t>(i), static_cast<index_t>(j)) = rows[i][j];
  return m;
}

inline std::vector<std::int32_t> load_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::int32_t> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    try {
      labels.push_back(static_cast<std::int32_t>(std::stol(line)));
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad label '" + line + "'");
    }
  }
  return labels;
}

/// Masks sidecar: {"train": [ids], "val": [ids], "test": [ids]}.
inline void load_masks(const std::string& path, index_t n, std::vector<std::uint8_t>& train,
                       std::vector<std::uint8_t>& val, std::vector<std::uint8_t>& test) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  auto fill = [&](const char* key, std::vector<std::uint8_t>& out) {
    if (!j.contains(key)) return;
    out.assign(static_cast<std::size_t>(n), 0);
    for (const auto& id : j.at(key)) {
      const index_t v = id.get<index_t>();
      if (v < 0 || v >= n)
        throw ParseError(path + ": vertex id " + std::to_string(v) + " out of range [0, " +
                         std::to_string(n) + ")");
      out[static_cast<std::size_t>(v)] = 1;
    }
  };
  fill("train", train);
  fill("val", val);
  fill("test", test);
}

template <class S>
Dataset<S> load_dataset(const std::string& graph_path, const std::string& features_path,
                        const std::string& labels_path, const std::string& masks_path = "") {
  Dataset<S> ds;
  ds.name = graph_path;
  ds.graph = load_graph<S>(graph_path);
  ds.features = load_features<S>(features_path);
  ds.labels = load_labels(labels_path);
  if (!masks_path.empty()) load_masks(masks_path, ds.n(), ds.train_mask, ds.val_mask, ds.test_mask);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator: power-law degree sequence with uniform endpoints,
// symmetrized, deduplicated. Vertex u's expected degree is proportional to
// (u+1)^-exponent, so the natural ordering is degree-sorted by construction.

template <class S>
Dataset<S> synth_graph(index_t n, double avg_degree, double exponent, std::uint64_t seed,
                       index_t feature_dim = 16, int classes = 4) {
  if (n < 2) throw ValueError("synth_graph: need n >= 2");
  if (avg_degree < 1.0) throw ValueError("synth_graph: need avg_degree >= 1");
  if (avg_degree >= static_cast<double>(n - 1))
    throw ValueError("synth_graph: avg_degree " + std::to_string(avg_degree) +
                     " infeasible for n=" + std::to_string(n));
  Rng rng(seed);
  std::vector<double> weight(static_cast<std::size_t>(n));
  double wsum = 0;
  for (index_t u = 0; u < n; ++u) {
    weight[static_cast<std::size_t>(u)] = std::pow(static_cast<double>(u + 1), -exponent);
    wsum += weight[static_cast<std::size_t>(u)];
  }
  const double stubs_total = avg_degree * static_cast<double>(n) / 2.0;

  std::vector<std::pair<index_t, index_t>> pairs;
  pairs.reserve(static_cast<std::size_t>(stubs_total * 2.2));
  for (index_t u = 0; u < n; ++u) {
    const double exact = stubs_total * weight[static_cast<std::size_t>(u)] / wsum;
    index_t k = static_cast<index_t>(exact);
    if (rng.uniform() < exact - static_cast<double>(k)) ++k;  // stochastic rounding
    k = std::min<index_t>(k, n - 1);
    for (index_t t = 0; t < k; ++t) {
      const index_t v = static_cast<index_t>(rng.below(static_cast<std::uint64_t>(n)));
      if (v == u) continue;
      pairs.emplace_back(u, v);
      pairs.emplace_back(v, u);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<CooEdge<S>> edges;
  edges.reserve(pairs.size());
  for (const auto& [u, v] : pairs) edges.push_back({u, v, S(1)});

  Dataset<S> ds;
  ds.name = "synth-n" + std::to_string(n) + "-d" + std::to_string(avg_degree);
  ds.graph = from_coo(std::move(edges), n);
  ds.features = DenseMatrix<S>(n, feature_dim);
  for (index_t i = 0; i < ds.features.size(); ++i)
    ds.features.data()[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
  ds.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : ds.labels) l = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return ds;
}

}  // namespace rowgcn
