// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "rowgcn/rng.hpp"
#include "rowgcn/sparse.hpp"

namespace rowgcn {

/// Monotone boundary vector with P parts: part i covers rows
/// [bounds[i], bounds[i+1]). Empty parts are allowed.
struct PartitionVector {
  std::vector<index_t> bounds;  // length P + 1

  int parts() const { return static_cast<int>(bounds.size()) - 1; }
  index_t n() const { return bounds.back(); }
  index_t begin(int i) const { return bounds[static_cast<std::size_t>(i)]; }
  index_t end(int i) const { return bounds[static_cast<std::size_t>(i) + 1]; }
  index_t size(int i) const { return end(i) - begin(i); }

  index_t max_part() const {
    index_t m = 0;
    for (int i = 0; i < parts(); ++i) m = std::max(m, size(i));
    return m;
  }

  /// Part containing vertex v. With empty parts, picks the unique part whose
  /// half-open range contains v.
  int part_of(index_t v) const {
    auto it = std::upper_bound(bounds.begin(), bounds.end(), v);
    return static_cast<int>(it - bounds.begin()) - 1;
  }
};

/// bounds[i] = floor(i*n/P); part sizes differ by at most 1.
inline PartitionVector uniform_partition(index_t n, int parts) {
  if (parts <= 0) throw ValueError("uniform_partition: P must be >= 1, got " + std::to_string(parts));
  PartitionVector p;
  p.bounds.resize(static_cast<std::size_t>(parts) + 1);
  for (int i = 0; i <= parts; ++i)
    p.bounds[static_cast<std::size_t>(i)] = static_cast<index_t>(i) * n / parts;
  return p;
}

/// Vertex relabeling as a pair of mutually inverse maps.
struct Permutation {
  std::vector<index_t> forward;  // old id -> new id
  std::vector<index_t> inverse;  // new id -> old id

  index_t n() const { return static_cast<index_t>(forward.size()); }

  static Permutation identity(index_t n) {
    Permutation p;
    p.forward.resize(static_cast<std::size_t>(n));
    std::iota(p.forward.begin(), p.forward.end(), index_t(0));
    p.inverse = p.forward;
    return p;
  }
};

/// Fisher-Yates shuffle from a seeded mt19937_64; same seed gives the same
/// permutation on every platform (see rng.hpp for the determinism contract).
inline Permutation random_permutation(index_t n, std::uint64_t seed) {
  Permutation p = Permutation::identity(n);
  Rng rng(seed);
  for (index_t i = n - 1; i > 0; --i) {
    const index_t j = static_cast<index_t>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(p.inverse[static_cast<std::size_t>(i)], p.inverse[static_cast<std::size_t>(j)]);
  }
  for (index_t i = 0; i < n; ++i)
    p.forward[static_cast<std::size_t>(p.inverse[static_cast<std::size_t>(i)])] = i;
  return p;
}

/// Permutation ordering vertices by decreasing total degree — the
/// adversarial baseline for the load-balance comparisons.
template <class S>
Permutation degree_sorted_permutation(const CsrMatrix<S>& a) {
  const CsrMatrix<S> at = transpose(a);
  std::vector<index_t> deg(static_cast<std::size_t>(a.rows), 0);
  for (index_t u = 0; u < a.rows; ++u)
    deg[static_cast<std::size_t>(u)] =
        (a.row_ptr[u + 1] - a.row_ptr[u]) + (at.row_ptr[u + 1] - at.row_ptr[u]);
  Permutation p = Permutation::identity(a.rows);
  std::stable_sort(p.inverse.begin(), p.inverse.end(), [&](index_t x, index_t y) {
    return deg[static_cast<std::size_t>(x)] > deg[static_cast<std::size_t>(y)];
  });
  for (index_t i = 0; i < a.rows; ++i)
    p.forward[static_cast<std::size_t>(p.inverse[static_cast<std::size_t>(i)])] = i;
  return p;
}

/// Symmetric relabeling: a'(pi(u), pi(v)) = a(u, v), rows of x and labels
/// follow pi.
template <class S>
CsrMatrix<S> permute_graph(const CsrMatrix<S>& a, const Permutation& perm) {
  if (a.rows != a.cols)
    throw ShapeError("permute_graph: matrix is " + detail::shape_str(a.rows, a.cols) +
                     ", expected square");
  if (perm.n() != a.rows)
    throw ShapeError("permute_graph: permutation over " + std::to_string(perm.n()) +
                     " ids, matrix has " + std::to_string(a.rows) + " rows");
  std::vector<CooEdge<S>> edges;
  edges.reserve(static_cast<std::size_t>(a.nnz()));
  for (index_t u = 0; u < a.rows; ++u)
    for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e)
      edges.push_back({perm.forward[static_cast<std::size_t>(u)],
                       perm.forward[static_cast<std::size_t>(a.col_idx[e])], a.values[e]});
  return from_coo(std::move(edges), a.rows);
}

template <class S>
DenseMatrix<S> permute_rows(const DenseMatrix<S>& x, const Permutation& perm) {
  if (perm.n() != x.rows())
    throw ShapeError("permute_rows: permutation over " + std::to_string(perm.n()) +
                     " ids, matrix has " + std::to_string(x.rows()) + " rows");
  DenseMatrix<S> out(x.rows(), x.cols());
  for (index_t u = 0; u < x.rows(); ++u) {
    const index_t v = perm.forward[static_cast<std::size_t>(u)];
    std::copy(x.data() + u * x.cols(), x.data() + (u + 1) * x.cols(), out.data() + v * x.cols());
  }
  return out;
}

template <class T>
std::vector<T> permute_values(const std::vector<T>& vals, const Permutation& perm) {
  if (perm.n() != static_cast<index_t>(vals.size()))
    throw ShapeError("permute_values: permutation over " + std::to_string(perm.n()) +
                     " ids, vector has " + std::to_string(vals.size()) + " entries");
  std::vector<T> out(vals.size());
  for (std::size_t u = 0; u < vals.size(); ++u)
    out[static_cast<std::size_t>(perm.forward[u])] = vals[u];
  return out;
}

/// Relabels the graph, feature rows and labels together (P A P^T, rows of X
/// and labels follow).
template <class S>
void apply_permutation(CsrMatrix<S>& a, DenseMatrix<S>& x, std::vector<std::int32_t>& labels,
                       const Permutation& perm) {
  if (x.rows() != a.rows)
    throw ShapeError("apply_permutation: features have " + std::to_string(x.rows()) +
                     " rows, graph has " + std::to_string(a.rows));
  a = permute_graph(a, perm);
  x = permute_rows(x, perm);
  labels = permute_values(labels, perm);
}

/// Symmetric row/column tiling of a square CSR matrix. tiles[i][j] holds
/// A^{ij} with local indices, directly usable by spmm; reassembling the grid
/// reproduces the original matrix.
template <class S>
struct TilePlan {
  PartitionVector p;
  std::vector<std::vector<CsrMatrix<S>>> tiles;  // P x P

  int parts() const { return p.parts(); }

  index_t total_nnz() const {
    index_t s = 0;
    for (const auto& row : tiles)
      for (const auto& t : row) s += t.nnz();
    return s;
  }
};

template <class S>
TilePlan<S> tile_rows(const CsrMatrix<S>& a, const PartitionVector& p) {
  if (a.rows != a.cols)
    throw ShapeError("tile_rows: matrix is " + detail::shape_str(a.rows, a.cols) +
                     ", expected square (symmetric partitioning)");
  if (p.n() != a.rows)
    throw ShapeError("tile_rows: partition covers " + std::to_string(p.n()) + ", matrix has " +
                     std::to_string(a.rows) + " rows");
  const int parts = p.parts();
  TilePlan<S> plan;
  plan.p = p;
  plan.tiles.assign(static_cast<std::size_t>(parts), {});
  for (int i = 0; i < parts; ++i) {
    auto& row_tiles = plan.tiles[static_cast<std::size_t>(i)];
    row_tiles.resize(static_cast<std::size_t>(parts));
    const index_t r0 = p.begin(i), r1 = p.end(i);
    for (int j = 0; j < parts; ++j) {
      auto& t = row_tiles[static_cast<std::size_t>(j)];
      t.rows = r1 - r0;
      t.cols = p.size(j);
      t.row_ptr.assign(static_cast<std::size_t>(t.rows) + 1, 0);
    }
    // count, then fill: entries stay column-sorted because the source row is.
    for (index_t u = r0; u < r1; ++u)
      for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
        const int j = p.part_of(a.col_idx[e]);
        row_tiles[static_cast<std::size_t>(j)].row_ptr[static_cast<std::size_t>(u - r0) + 1]++;
      }
    for (int j = 0; j < parts; ++j) {
      auto& t = row_tiles[static_cast<std::size_t>(j)];
      for (index_t u = 0; u < t.rows; ++u) t.row_ptr[u + 1] += t.row_ptr[u];
      t.col_idx.resize(static_cast<std::size_t>(t.row_ptr[t.rows]));
      t.values.resize(static_cast<std::size_t>(t.row_ptr[t.rows]));
    }
    std::vector<index_t> fill(static_cast<std::size_t>(parts), 0);
    for (index_t u = r0; u < r1; ++u) {
      std::fill(fill.begin(), fill.end(), 0);
      for (int j = 0; j < parts; ++j)
        fill[static_cast<std::size_t>(j)] =
            plan.tiles[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]
                .row_ptr[static_cast<std::size_t>(u - r0)];
      for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
        const index_t v = a.col_idx[e];
        const int j = p.part_of(v);
        auto& t = plan.tiles[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        const index_t pos = fill[static_cast<std::size_t>(j)]++;
        t.col_idx[static_cast<std::size_t>(pos)] = v - p.begin(j);
        t.values[static_cast<std::size_t>(pos)] = a.values[e];
      }
    }
  }
  return plan;
}

/// Nonzero balance report over a tile grid.
///
/// stage_ratio[j] is stage j's nonzero total over the mean stage total — how
/// much the broadcast round for part j dominates. overall_ratio is the max
/// tile over the mean tile at (worker, stage) granularity. A uniform
/// diagonal reports stage ratios 1.0; a hub-centered star shows up in both.
struct BalanceReport {
  int parts = 0;
  std::vector<std::vector<index_t>> per_tile_nnz;
  std::vector<index_t> stage_nnz;
  std::vector<double> stage_ratio;
  double max_stage_ratio = 1.0;
  double overall_ratio = 1.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"P", parts},
                          {"per_tile_nnz", per_tile_nnz},
                          {"stage_nnz", stage_nnz},
                          {"stage_ratio", stage_ratio},
                          {"max_stage_ratio", max_stage_ratio},
                          {"overall_ratio", overall_ratio}};
  }
};

template <class S>
BalanceReport balance_stats(const TilePlan<S>& plan) {
  const int parts = plan.parts();
  BalanceReport rep;
  rep.parts = parts;
  rep.per_tile_nnz.assign(static_cast<std::size_t>(parts),
                          std::vector<index_t>(static_cast<std::size_t>(parts), 0));
  rep.stage_nnz.assign(static_cast<std::size_t>(parts), 0);
  index_t total = 0, tile_max = 0;
  for (int i = 0; i < parts; ++i)
    for (int j = 0; j < parts; ++j) {
      const index_t z = plan.tiles[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].nnz();
      rep.per_tile_nnz[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = z;
      rep.stage_nnz[static_cast<std::size_t>(j)] += z;
      total += z;
      tile_max = std::max(tile_max, z);
    }
  rep.stage_ratio.assign(static_cast<std::size_t>(parts), 1.0);
  if (total > 0) {
    for (int j = 0; j < parts; ++j) {
      rep.stage_ratio[static_cast<std::size_t>(j)] =
          static_cast<double>(rep.stage_nnz[static_cast<std::size_t>(j)]) * parts /
          static_cast<double>(total);
      rep.max_stage_ratio = std::max(rep.max_stage_ratio, rep.stage_ratio[static_cast<std::size_t>(j)]);
    }
    rep.overall_ratio = static_cast<double>(tile_max) * parts * parts / static_cast<double>(total);
  }
  return rep;
}

}  // namespace rowgcn
