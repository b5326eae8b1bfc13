// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rowgcn/errors.hpp"

namespace rowgcn {

using index_t = std::int64_t;

/// Counts heap allocations made by DenseMatrix. The training buffer audit
/// snapshots this around a step to prove no transient large buffers appear.
inline std::atomic<std::uint64_t>& dense_alloc_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

template <class S>
struct CMatView;

/// Mutable view of a contiguous row-major block. Rows are full-width; the
/// partitioning in this engine is by rows only, so no strided views exist.
template <class S>
struct MatView {
  S* data = nullptr;
  index_t rows = 0;
  index_t cols = 0;

  S& operator()(index_t i, index_t j) const { return data[i * cols + j]; }
  index_t size() const { return rows * cols; }

  MatView row_block(index_t r0, index_t r1) const {
    return MatView{data + r0 * cols, r1 - r0, cols};
  }
  void set_zero() const { std::memset(data, 0, sizeof(S) * static_cast<std::size_t>(size())); }

  std::span<std::byte> bytes() const {
    return {reinterpret_cast<std::byte*>(data), sizeof(S) * static_cast<std::size_t>(size())};
  }
};

template <class S>
struct CMatView {
  const S* data = nullptr;
  index_t rows = 0;
  index_t cols = 0;

  CMatView() = default;
  CMatView(const S* d, index_t r, index_t c) : data(d), rows(r), cols(c) {}
  CMatView(MatView<S> v) : data(v.data), rows(v.rows), cols(v.cols) {}

  S operator()(index_t i, index_t j) const { return data[i * cols + j]; }
  index_t size() const { return rows * cols; }

  CMatView row_block(index_t r0, index_t r1) const {
    return CMatView{data + r0 * cols, r1 - r0, cols};
  }
};

/// Row-major dense matrix owning its storage. The logical shape may be
/// changed with reshape() without reallocating, as long as the element count
/// fits the original capacity; the shared training buffers rely on this to
/// serve every layer width from one allocation.
template <class S>
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(index_t rows, index_t cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ValueError("DenseMatrix: negative dimension");
    data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), S(0));
    if (!data_.empty()) dense_alloc_count().fetch_add(1, std::memory_order_relaxed);
  }

  index_t rows() const { return rows_; }
  index_t cols() const { return cols_; }
  index_t size() const { return rows_ * cols_; }
  index_t capacity() const { return static_cast<index_t>(data_.size()); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator()(index_t i, index_t j) { return data_[i * cols_ + j]; }
  S operator()(index_t i, index_t j) const { return data_[i * cols_ + j]; }

  /// Reinterpret the allocation as rows x cols. Contents are kept as raw
  /// elements; callers overwrite before reading.
  void reshape(index_t rows, index_t cols) {
    if (rows * cols > capacity())
      throw ShapeError("reshape: " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " exceeds capacity " + std::to_string(capacity()));
    rows_ = rows;
    cols_ = cols;
  }

  void set_zero() { std::fill(data_.begin(), data_.begin() + size(), S(0)); }

  MatView<S> view() { return {data_.data(), rows_, cols_}; }
  CMatView<S> view() const { return {data_.data(), rows_, cols_}; }
  operator MatView<S>() { return view(); }
  operator CMatView<S>() const { return view(); }

  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  index_t rows_ = 0;
  index_t cols_ = 0;
  std::vector<S> data_;
};

namespace detail {

inline std::string shape_str(index_t r, index_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <class S>
inline bool overlaps(CMatView<S> a, CMatView<S> b) {
  const S* a_end = a.data + a.size();
  const S* b_end = b.data + b.size();
  return a.data < b_end && b.data < a_end;
}

}  // namespace detail

/// out = (accumulate ? out : 0) + op(a) * op(b). op transposes when the flag
/// is set. Writes only to out and never allocates; out must not alias either
/// input. The reduction over the inner dimension runs low-to-high for every
/// output element, so results do not depend on how rows are partitioned
/// across workers.
template <class S>
void gemm(CMatView<S> a, CMatView<S> b, bool transpose_a, bool transpose_b, bool accumulate,
          MatView<S> out) {
  const index_t m = transpose_a ? a.cols : a.rows;
  const index_t k = transpose_a ? a.rows : a.cols;
  const index_t kb = transpose_b ? b.cols : b.rows;
  const index_t n = transpose_b ? b.rows : b.cols;
  if (k != kb)
    throw ShapeError("gemm: inner dimensions disagree: op(a)=" + detail::shape_str(m, k) +
                     " op(b)=" + detail::shape_str(kb, n));
  if (out.rows != m || out.cols != n)
    throw ShapeError("gemm: out is " + detail::shape_str(out.rows, out.cols) + ", expected " +
                     detail::shape_str(m, n));
  if (detail::overlaps<S>(a, out) || detail::overlaps<S>(b, out))
    throw ValueError("gemm: out must not alias an input");

  if (!accumulate) out.set_zero();

  if (!transpose_a && !transpose_b) {
    // i-k-j: streams b rows, accumulates into out rows in k order.
    for (index_t i = 0; i < m; ++i) {
      S* out_row = out.data + i * n;
      const S* a_row = a.data + i * k;
      for (index_t p = 0; p < k; ++p) {
        const S aik = a_row[p];
        if (aik == S(0)) continue;
        const S* b_row = b.data + p * n;
        for (index_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
      }
    }
  } else if (transpose_a && !transpose_b) {
    // out(i,j) += a(p,i) * b(p,j): stream both by rows of the shared p axis.
    for (index_t p = 0; p < k; ++p) {
      const S* a_row = a.data + p * m;
      const S* b_row = b.data + p * n;
      for (index_t i = 0; i < m; ++i) {
        const S api = a_row[i];
        if (api == S(0)) continue;
        S* out_row = out.data + i * n;
        for (index_t j = 0; j < n; ++j) out_row[j] += api * b_row[j];
      }
    }
  } else if (!transpose_a && transpose_b) {
    // Dot products of contiguous rows.
    for (index_t i = 0; i < m; ++i) {
      const S* a_row = a.data + i * k;
      S* out_row = out.data + i * n;
      for (index_t j = 0; j < n; ++j) {
        const S* b_row = b.data + j * k;
        S acc = 0;
        for (index_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
        out_row[j] += acc;
      }
    }
  } else {
    for (index_t i = 0; i < m; ++i) {
      S* out_row = out.data + i * n;
      for (index_t j = 0; j < n; ++j) {
        S acc = 0;
        for (index_t p = 0; p < k; ++p) acc += a.data[p * m + i] * b.data[j * k + p];
        out_row[j] += acc;
      }
    }
  }
}

/// out(i,j) = max(0, x(i,j)). out may alias x; the buffer plan applies the
/// activation in place over the layer output buffer.
template <class S>
void relu_forward(CMatView<S> x, MatView<S> out) {
  if (x.rows != out.rows || x.cols != out.cols)
    throw ShapeError("relu_forward: x is " + detail::shape_str(x.rows, x.cols) + ", out is " +
                     detail::shape_str(out.rows, out.cols));
  const index_t sz = x.size();
  for (index_t i = 0; i < sz; ++i) out.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
}

/// out(i,j) = upstream(i,j) if activated(i,j) > 0 else 0. `activated` is the
/// forward output (post-ReLU); for ReLU the masks of pre- and post-activation
/// agree, which is what lets the buffer plan overwrite AHW in place. out may
/// alias either input (purely elementwise).
template <class S>
void relu_backward(CMatView<S> upstream, CMatView<S> activated, MatView<S> out) {
  if (upstream.rows != activated.rows || upstream.cols != activated.cols ||
      upstream.rows != out.rows || upstream.cols != out.cols)
    throw ShapeError("relu_backward: shapes " + detail::shape_str(upstream.rows, upstream.cols) +
                     " / " + detail::shape_str(activated.rows, activated.cols) + " / " +
                     detail::shape_str(out.rows, out.cols) + " disagree");
  const index_t sz = upstream.size();
  for (index_t i = 0; i < sz; ++i)
    out.data[i] = activated.data[i] > S(0) ? upstream.data[i] : S(0);
}

/// Masked softmax cross entropy over rows of `logits`.
///
/// Writes grad rows (softmax(z_v) - onehot(label_v)) / denom for masked v and
/// zero rows otherwise, and returns the SUM of -log softmax(z_v)[label_v]
/// over masked rows. Row-max subtraction keeps the exponentials stable.
/// grad may alias logits. `denom` is the divisor for gradient rows; the
/// single-worker wrapper below passes |mask| to produce the mean-loss
/// gradient, distributed callers pass the global masked count.
template <class S>
S softmax_xent_sum(CMatView<S> logits, std::span<const std::int32_t> labels,
                   std::span<const std::uint8_t> mask, MatView<S> grad, index_t denom) {
  if (grad.rows != logits.rows || grad.cols != logits.cols)
    throw ShapeError("softmax_xent: grad is " + detail::shape_str(grad.rows, grad.cols) +
                     ", logits are " + detail::shape_str(logits.rows, logits.cols));
  if (static_cast<index_t>(labels.size()) != logits.rows ||
      static_cast<index_t>(mask.size()) != logits.rows)
    throw ShapeError("softmax_xent: labels/mask length " + std::to_string(labels.size()) + "/" +
                     std::to_string(mask.size()) + " != rows " + std::to_string(logits.rows));
  if (denom <= 0) throw ValueError("softmax_xent: empty mask");

  const index_t c = logits.cols;
  const S inv_denom = S(1) / static_cast<S>(denom);
  S loss_sum = 0;
  for (index_t v = 0; v < logits.rows; ++v) {
    S* grad_row = grad.data + v * c;
    if (!mask[static_cast<std::size_t>(v)]) {
      for (index_t j = 0; j < c; ++j) grad_row[j] = S(0);
      continue;
    }
    const std::int32_t label = labels[static_cast<std::size_t>(v)];
    if (label < 0 || label >= c)
      throw ValueError("softmax_xent: label " + std::to_string(label) + " out of range [0, " +
                       std::to_string(c) + ") at row " + std::to_string(v));
    const S* row = logits.data + v * c;
    S row_max = row[0];
    for (index_t j = 1; j < c; ++j) row_max = std::max(row_max, row[j]);
    S sum_exp = 0;
    for (index_t j = 0; j < c; ++j) sum_exp += std::exp(row[j] - row_max);
    loss_sum += std::log(sum_exp) - (row[label] - row_max);
    // Each grad element depends only on its own logit, so aliasing is safe.
    for (index_t j = 0; j < c; ++j) grad_row[j] = std::exp(row[j] - row_max) / sum_exp * inv_denom;
    grad_row[label] -= inv_denom;
  }
  return loss_sum;
}

/// Mean masked loss + gradient, the single-worker form.
template <class S>
S softmax_xent(CMatView<S> logits, std::span<const std::int32_t> labels,
               std::span<const std::uint8_t> mask, MatView<S> grad) {
  index_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw ValueError("softmax_xent: empty mask");
  return softmax_xent_sum(logits, labels, mask, grad, count) / static_cast<S>(count);
}

// ---------------------------------------------------------------------------
// Dense binary format: "MGDM", u64 rows, u64 cols, u8 dtype (4|8), then the
// row-major payload, all little-endian.

template <class S>
void write_dense(const std::string& path, CMatView<S> m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("MGDM", 4);
  const std::uint64_t r = static_cast<std::uint64_t>(m.rows);
  const std::uint64_t c = static_cast<std::uint64_t>(m.cols);
  const std::uint8_t w = sizeof(S);
  f.write(reinterpret_cast<const char*>(&r), 8);
  f.write(reinterpret_cast<const char*>(&c), 8);
  f.write(reinterpret_cast<const char*>(&w), 1);
  f.write(reinterpret_cast<const char*>(m.data), static_cast<std::streamsize>(sizeof(S) * m.size()));
  if (!f) throw IoError("short write to " + path);
}

template <class S>
DenseMatrix<S> read_dense(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "MGDM", 4) != 0) throw ParseError(path + ": bad magic, not a dense binary file");
  std::uint64_t r = 0, c = 0;
  std::uint8_t w = 0;
  f.read(reinterpret_cast<char*>(&r), 8);
  f.read(reinterpret_cast<char*>(&c), 8);
  f.read(reinterpret_cast<char*>(&w), 1);
  if (!f || (w != 4 && w != 8)) throw ParseError(path + ": bad dtype width " + std::to_string(w));
  DenseMatrix<S> m(static_cast<index_t>(r), static_cast<index_t>(c));
  if (w == sizeof(S)) {
    f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(S) * m.size()));
  } else if (w == 4) {
    std::vector<float> tmp(static_cast<std::size_t>(m.size()));
    f.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(4 * tmp.size()));
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(tmp[static_cast<std::size_t>(i)]);
  } else {
    std::vector<double> tmp(static_cast<std::size_t>(m.size()));
    f.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(8 * tmp.size()));
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(tmp[static_cast<std::size_t>(i)]);
  }
  if (!f) throw ParseError(path + ": truncated payload for " + detail::shape_str(m.rows(), m.cols()));
  return m;
}

}  // namespace rowgcn
