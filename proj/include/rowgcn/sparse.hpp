// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "rowgcn/dense.hpp"
#include "rowgcn/errors.hpp"

namespace rowgcn {

template <class S>
struct CooEdge {
  index_t src = 0;
  index_t dst = 0;
  S weight = S(1);
};

/// Compressed sparse row matrix. Immutable once built; shared read-only
/// across workers. Entry (u, v) is an edge u -> v stored in row u.
template <class S>
struct CsrMatrix {
  index_t rows = 0;
  index_t cols = 0;
  std::vector<index_t> row_ptr;  // length rows + 1
  std::vector<index_t> col_idx;  // length nnz, strictly increasing per row
  std::vector<S> values;         // length nnz

  index_t nnz() const { return static_cast<index_t>(col_idx.size()); }

  /// Checks every structural invariant; throws on violation. Also used by
  /// property tests after each constructor/transform.
  void validate() const {
    if (static_cast<index_t>(row_ptr.size()) != rows + 1)
      throw ValueError("csr: row_ptr length " + std::to_string(row_ptr.size()) + " != rows+1");
    if (row_ptr[0] != 0) throw ValueError("csr: row_ptr[0] != 0");
    if (row_ptr[static_cast<std::size_t>(rows)] != nnz())
      throw ValueError("csr: row_ptr[rows] != nnz");
    if (values.size() != col_idx.size()) throw ValueError("csr: values/col_idx length mismatch");
    for (index_t u = 0; u < rows; ++u) {
      if (row_ptr[u] > row_ptr[u + 1]) throw ValueError("csr: row_ptr not nondecreasing");
      for (index_t e = row_ptr[u]; e < row_ptr[u + 1]; ++e) {
        if (col_idx[e] < 0 || col_idx[e] >= cols)
          throw ValueError("csr: col " + std::to_string(col_idx[e]) + " out of range in row " +
                           std::to_string(u));
        if (e > row_ptr[u] && col_idx[e] <= col_idx[e - 1])
          throw ValueError("csr: columns not strictly increasing in row " + std::to_string(u));
      }
    }
  }
};

/// Builds CSR from an edge list. Rows come out sorted and deduplicated;
/// duplicate (src, dst) weights are summed.
template <class S>
CsrMatrix<S> from_coo(std::vector<CooEdge<S>> edges, index_t n) {
  for (const auto& e : edges)
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
      throw ValueError("from_coo: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                       ") out of range for n=" + std::to_string(n));
  std::sort(edges.begin(), edges.end(), [](const CooEdge<S>& a, const CooEdge<S>& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  });
  CsrMatrix<S> m;
  m.rows = n;
  m.cols = n;
  m.row_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  m.col_idx.reserve(edges.size());
  m.values.reserve(edges.size());
  std::size_t i = 0;
  for (index_t u = 0; u < n; ++u) {
    while (i < edges.size() && edges[i].src == u) {
      const index_t v = edges[i].dst;
      S w = edges[i].weight;
      ++i;
      while (i < edges.size() && edges[i].src == u && edges[i].dst == v) {
        w += edges[i].weight;
        ++i;
      }
      m.col_idx.push_back(v);
      m.values.push_back(w);
    }
    m.row_ptr[static_cast<std::size_t>(u) + 1] = static_cast<index_t>(m.col_idx.size());
  }
  return m;
}

/// A_hat(u,v) = A(u,v) / sum_w A(w,v): every nonzero column of the result
/// sums to 1. Columns with zero in-degree stay all-zero.
template <class S>
CsrMatrix<S> normalize_in_degree(const CsrMatrix<S>& a) {
  if (a.rows != a.cols)
    throw ShapeError("normalize_in_degree: matrix is " + detail::shape_str(a.rows, a.cols) +
                     ", expected square");
  std::vector<S> col_sum(static_cast<std::size_t>(a.cols), S(0));
  for (index_t e = 0; e < a.nnz(); ++e) col_sum[static_cast<std::size_t>(a.col_idx[e])] += a.values[e];
  CsrMatrix<S> out = a;
  for (index_t e = 0; e < out.nnz(); ++e) {
    const S s = col_sum[static_cast<std::size_t>(out.col_idx[e])];
    out.values[e] = s != S(0) ? out.values[e] / s : S(0);
  }
  return out;
}

/// CSR transpose with sorted rows (counting sort over target rows).
template <class S>
CsrMatrix<S> transpose(const CsrMatrix<S>& a) {
  CsrMatrix<S> t;
  t.rows = a.cols;
  t.cols = a.rows;
  t.row_ptr.assign(static_cast<std::size_t>(t.rows) + 1, 0);
  t.col_idx.resize(static_cast<std::size_t>(a.nnz()));
  t.values.resize(static_cast<std::size_t>(a.nnz()));
  for (index_t e = 0; e < a.nnz(); ++e) t.row_ptr[static_cast<std::size_t>(a.col_idx[e]) + 1]++;
  for (index_t v = 0; v < t.rows; ++v) t.row_ptr[v + 1] += t.row_ptr[v];
  std::vector<index_t> fill(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (index_t u = 0; u < a.rows; ++u) {
    for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
      const index_t pos = fill[static_cast<std::size_t>(a.col_idx[e])]++;
      t.col_idx[static_cast<std::size_t>(pos)] = u;
      t.values[static_cast<std::size_t>(pos)] = a.values[e];
    }
  }
  return t;
}

/// Intra-worker parallelism knob for spmm (threads over output rows).
/// Row-parallel execution keeps each row's accumulation order intact, so the
/// result is identical for any thread count.
inline int& spmm_threads() {
  static int threads = 1;
  return threads;
}

namespace detail {
template <class S>
void spmm_rows(const CsrMatrix<S>& a, CMatView<S> h, bool accumulate, MatView<S> out, index_t r0,
               index_t r1) {
  const index_t w = h.cols;
  for (index_t u = r0; u < r1; ++u) {
    S* out_row = out.data + u * w;
    if (!accumulate)
      for (index_t j = 0; j < w; ++j) out_row[j] = S(0);
    for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
      const S val = a.values[e];
      const S* h_row = h.data + a.col_idx[e] * w;
      for (index_t j = 0; j < w; ++j) out_row[j] += val * h_row[j];
    }
  }
}
}  // namespace detail

/// out = (accumulate ? out : 0) + a * h. Nonzeros within a row apply in
/// column order, one at a time — the staged distributed variant preserves
/// exactly this order, which is what makes it bit-identical to the
/// monolithic call. out must not alias h.
template <class S>
void spmm(const CsrMatrix<S>& a, std::type_identity_t<CMatView<S>> h, bool accumulate,
          std::type_identity_t<MatView<S>> out) {
  if (a.cols != h.rows)
    throw ShapeError("spmm: a is " + detail::shape_str(a.rows, a.cols) + ", h is " +
                     detail::shape_str(h.rows, h.cols));
  if (out.rows != a.rows || out.cols != h.cols)
    throw ShapeError("spmm: out is " + detail::shape_str(out.rows, out.cols) + ", expected " +
                     detail::shape_str(a.rows, h.cols));
  if (detail::overlaps<S>(h, out)) throw ValueError("spmm: out must not alias h");

  const int threads = spmm_threads();
  if (threads <= 1 || a.rows < 4 * threads) {
    detail::spmm_rows(a, h, accumulate, out, 0, a.rows);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  const index_t chunk = (a.rows + threads - 1) / threads;
  for (int t = 1; t < threads; ++t) {
    const index_t r0 = std::min<index_t>(a.rows, t * chunk);
    const index_t r1 = std::min<index_t>(a.rows, (t + 1) * chunk);
    if (r0 < r1)
      pool.emplace_back([&, r0, r1] { detail::spmm_rows(a, h, accumulate, out, r0, r1); });
  }
  detail::spmm_rows(a, h, accumulate, out, 0, std::min<index_t>(a.rows, chunk));
  for (auto& th : pool) th.join();
}

/// Dense copy, used by tests and the permutation oracle.
template <class S>
DenseMatrix<S> to_dense(const CsrMatrix<S>& a) {
  DenseMatrix<S> d(a.rows, a.cols);
  for (index_t u = 0; u < a.rows; ++u)
    for (index_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) d(u, a.col_idx[e]) = a.values[e];
  return d;
}

}  // namespace rowgcn
