// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rowgcn/dist_spmm.hpp"

namespace rowgcn {

struct GcnConfig {
  std::vector<index_t> layer_dims;  // [d0, d1, ..., dL]
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 100;
  std::uint64_t seed = 1;
  bool permute = false;
  bool overlap = false;
  bool skip_first_backward_spmm = false;
  bool order_swap = false;

  int layers() const { return static_cast<int>(layer_dims.size()) - 1; }

  void validate() const {
    if (layers() < 1) throw ConfigError("config: need at least one layer (layer_dims has " +
                                        std::to_string(layer_dims.size()) + " entries)");
    for (index_t d : layer_dims)
      if (d < 1) throw ConfigError("config: layer dimension " + std::to_string(d) + " < 1");
    if (epochs < 0) throw ConfigError("config: negative epochs");
  }
};

/// Per-layer weight plus optimizer state, replicated on every worker.
template <class S>
struct LayerParams {
  DenseMatrix<S> w;       // d_l x d_{l+1}
  DenseMatrix<S> w_grad;  // same shape
  DenseMatrix<S> adam_m;
  DenseMatrix<S> adam_v;
};

/// The L+3 shared training buffers: one output buffer per layer (ahw), one
/// temporary shared by every layer in both passes (hw), and the two
/// broadcast buffers. hw/bc are allocated at the widest layer and addressed
/// through views with the per-use geometry.
template <class S>
struct BufferPool {
  std::vector<DenseMatrix<S>> ahw;
  DenseMatrix<S> hw;
  DenseMatrix<S> bc1, bc2;

  int large_buffer_count() const { return static_cast<int>(ahw.size()) + 3; }
};

/// Standard Adam with bias correction; grads are zeroed after the step.
template <class S>
void adam_step(std::vector<LayerParams<S>>& params, int t, const GcnConfig& cfg) {
  if (t < 1) throw ValueError("adam_step: step index must be >= 1, got " + std::to_string(t));
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S lr = static_cast<S>(cfg.lr);
  const S eps = static_cast<S>(cfg.epsilon);
  const S corr1 = S(1) - static_cast<S>(std::pow(cfg.beta1, t));
  const S corr2 = S(1) - static_cast<S>(std::pow(cfg.beta2, t));
  for (auto& p : params) {
    S* w = p.w.data();
    S* g = p.w_grad.data();
    S* m = p.adam_m.data();
    S* v = p.adam_v.data();
    const index_t sz = p.w.size();
    for (index_t i = 0; i < sz; ++i) {
      m[i] = b1 * m[i] + (S(1) - b1) * g[i];
      v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
      const S mhat = m[i] / corr1;
      const S vhat = v[i] / corr2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p.w_grad.set_zero();
  }
}

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

/// One worker's slice of the training state plus the step pipeline.
///
/// Everything cross-worker goes through collectives on the comm lane; the
/// layer pipeline is submitted as compute-lane tasks so the staged SpMM can
/// overlap its broadcasts with the multiplies.
template <class S>
class GcnWorker {
 public:
  /// Read-only state shared by all workers (built once by the driver).
  struct Shared {
    const GcnConfig* cfg = nullptr;
    const TilePlan<S>* fwd_tiles = nullptr;  // tiles of A_hat^T (forward)
    const TilePlan<S>* bwd_tiles = nullptr;  // tiles of A_hat   (backward)
    const DenseMatrix<S>* features = nullptr;
    const std::vector<std::int32_t>* labels = nullptr;
    const std::vector<std::uint8_t>* mask = nullptr;
    index_t global_mask_count = 0;
    PartitionVector wgrad_blocks;  // canonical blocks for the W-grad reduction
  };

  GcnWorker(WorkerCtx& ctx, const Shared& sh)
      : ctx_(ctx), sh_(sh), cfg_(*sh.cfg), dims_(sh.cfg->layer_dims) {
    const PartitionVector& p = sh.fwd_tiles->p;
    r0_ = p.begin(ctx.rank());
    r1_ = p.end(ctx.rank());
    local_rows_ = r1_ - r0_;
    const int layers = cfg_.layers();

    index_t w_max = 1;
    for (int l = 1; l <= layers; ++l) w_max = std::max(w_max, dims_[static_cast<std::size_t>(l)]);

    // device-local copies of this worker's rows
    x_local_ = DenseMatrix<S>(local_rows_, dims_[0]);
    for (index_t i = 0; i < local_rows_; ++i)
      for (index_t j = 0; j < dims_[0]; ++j) x_local_(i, j) = (*sh.features)(r0_ + i, j);
    labels_local_.assign(sh.labels->begin() + r0_, sh.labels->begin() + r1_);
    mask_local_.assign(sh.mask->begin() + r0_, sh.mask->begin() + r1_);

    // the L + 3 buffer plan
    pool_.ahw.reserve(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l)
      pool_.ahw.emplace_back(local_rows_, dims_[static_cast<std::size_t>(l) + 1]);
    pool_.hw = DenseMatrix<S>(local_rows_, w_max);
    pool_.bc1 = DenseMatrix<S>(p.max_part(), w_max);
    pool_.bc2 = DenseMatrix<S>(p.max_part(), w_max);

    fwd_spmm_ = DistSpmm<S>{sh.fwd_tiles, ctx.rank(), &pool_.bc1, &pool_.bc2, cfg_.overlap, 0.0};
    bwd_spmm_ = DistSpmm<S>{sh.bwd_tiles, ctx.rank(), &pool_.bc1, &pool_.bc2, cfg_.overlap, 0.0};

    swap_order_.resize(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l)
      swap_order_[static_cast<std::size_t>(l)] =
          cfg_.order_swap && dims_[static_cast<std::size_t>(l)] < dims_[static_cast<std::size_t>(l) + 1];

    params_.reserve(static_cast<std::size_t>(layers));
    wgrad_stage_.reserve(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
      const index_t dl = dims_[static_cast<std::size_t>(l)];
      const index_t dl1 = dims_[static_cast<std::size_t>(l) + 1];
      params_.push_back(LayerParams<S>{DenseMatrix<S>(dl, dl1), DenseMatrix<S>(dl, dl1),
                                       DenseMatrix<S>(dl, dl1), DenseMatrix<S>(dl, dl1)});
      wgrad_stage_.emplace_back(sh.wgrad_blocks.parts() * dl, dl1);
    }
    wgrad_reduced_.assign(static_cast<std::size_t>(layers), TaskId(0));
  }

  /// Glorot-uniform init on rank 0, replicated by broadcast.
  void init_params() {
    Rng rng(cfg_.seed);
    for (auto& p : params_) {
      if (ctx_.rank() == 0) {
        const double limit = std::sqrt(6.0 / static_cast<double>(p.w.rows() + p.w.cols()));
        for (index_t i = 0; i < p.w.size(); ++i)
          p.w.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
      }
      ctx_.broadcast(0, p.w.view().bytes());
    }
  }

  S train_step(int t) {
    submit_forward();
    const TaskId stats_done = submit_loss_grad();
    submit_backward();
    const TaskId opt = submit_finalize(/*run_adam=*/true, t);
    ctx_.wait(opt);
    ctx_.wait(stats_done);
    last_acc_ = static_cast<double>(stats_[1]) / static_cast<double>(sh_.global_mask_count);
    return stats_[0] / static_cast<S>(sh_.global_mask_count);
  }

  /// Forward + masked loss without touching gradients; leaves the logits in
  /// the last layer's buffer. Used by the finite-difference oracle and the
  /// equivariance checks.
  S loss_only() {
    const TaskId fwd = submit_forward();
    ctx_.wait(fwd);
    const MatView<S> logits = logits_view();
    std::array<S, 1> sum{S(0)};
    for (index_t i = 0; i < local_rows_; ++i) {
      if (!mask_local_[static_cast<std::size_t>(i)]) continue;
      const S* row = logits.data + i * logits.cols;
      S row_max = row[0];
      for (index_t j = 1; j < logits.cols; ++j) row_max = std::max(row_max, row[j]);
      S se = 0;
      for (index_t j = 0; j < logits.cols; ++j) se += std::exp(row[j] - row_max);
      sum[0] += std::log(se) - (row[labels_local_[static_cast<std::size_t>(i)]] - row_max);
    }
    ctx_.all_reduce_sum(std::span<S>(sum));
    return sum[0] / static_cast<S>(sh_.global_mask_count);
  }

  /// Forward + loss + backward, materializing W_grad without updating W.
  S compute_gradients() {
    submit_forward();
    const TaskId stats_done = submit_loss_grad();
    submit_backward();
    const TaskId fin = submit_finalize(/*run_adam=*/false, 1);
    ctx_.wait(fin);
    ctx_.wait(stats_done);
    last_acc_ = static_cast<double>(stats_[1]) / static_cast<double>(sh_.global_mask_count);
    return stats_[0] / static_cast<S>(sh_.global_mask_count);
  }

  double last_accuracy() const { return last_acc_; }

  std::uint64_t w_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params_)
      h = fnv1a(p.w.data(), sizeof(S) * static_cast<std::size_t>(p.w.size()), h);
    return h;
  }

  std::vector<LayerParams<S>>& params() { return params_; }
  BufferPool<S>& pool() { return pool_; }
  index_t row_begin() const { return r0_; }
  index_t local_rows() const { return local_rows_; }
  MatView<S> logits_view() {
    return {pool_.ahw.back().data(), local_rows_, dims_.back()};
  }

  // -- step pieces (public so tests can drive them separately) --------------

  TaskId submit_forward() {
    const int layers = cfg_.layers();
    TaskId last = 0;
    for (int l = 0; l < layers; ++l) {
      const index_t dl = dims_[static_cast<std::size_t>(l)];
      const index_t dl1 = dims_[static_cast<std::size_t>(l) + 1];
      const CMatView<S> h_in = l == 0 ? CMatView<S>(x_local_.data(), local_rows_, dl)
                                      : CMatView<S>(pool_.ahw[static_cast<std::size_t>(l) - 1].data(),
                                                    local_rows_, dl);
      const MatView<S> out{pool_.ahw[static_cast<std::size_t>(l)].data(), local_rows_, dl1};
      const CMatView<S> w{params_[static_cast<std::size_t>(l)].w.data(), dl, dl1};
      if (!swap_order_[static_cast<std::size_t>(l)]) {
        const MatView<S> hw{pool_.hw.data(), local_rows_, dl1};
        ctx_.submit(kLaneCompute, "gemm", "hw", l, {ctx_.last(kLaneCompute)},
                    [h_in, w, hw] { gemm<S>(h_in, w, false, false, false, hw); });
        last = staged_spmm_submit(ctx_, fwd_spmm_, CMatView<S>(hw), out);
      } else {
        // d_l < d_{l+1}: propagate the narrow matrix through the SpMM first
        const MatView<S> ah{pool_.hw.data(), local_rows_, dl};
        staged_spmm_submit(ctx_, fwd_spmm_, h_in, ah);
        last = ctx_.submit(kLaneCompute, "gemm", "hw", l, {ctx_.last(kLaneCompute)},
                           [ah, w, out] { gemm<S>(CMatView<S>(ah), w, false, false, false, out); });
      }
      if (l < layers - 1) {
        last = ctx_.submit(kLaneCompute, "other", "relu", l, {ctx_.last(kLaneCompute)},
                           [out] { relu_forward<S>(CMatView<S>(out), out); });
      }
    }
    return last;
  }

  /// Loss value/accuracy into the stats slots and the loss gradient written
  /// over the logits in place. Returns the stats all-reduce handle.
  TaskId submit_loss_grad() {
    const MatView<S> logits = logits_view();
    const TaskId loss_task = ctx_.submit(
        kLaneCompute, "other", "loss", -1, {ctx_.last(kLaneCompute)}, [this, logits] {
          stats_[0] = stats_[1] = S(0);
          for (index_t i = 0; i < local_rows_; ++i) {
            if (!mask_local_[static_cast<std::size_t>(i)]) continue;
            const S* row = logits.data + i * logits.cols;
            index_t arg = 0;
            for (index_t j = 1; j < logits.cols; ++j)
              if (row[j] > row[arg]) arg = j;
            if (arg == labels_local_[static_cast<std::size_t>(i)]) stats_[1] += S(1);
          }
          stats_[0] = softmax_xent_sum<S>(CMatView<S>(logits), labels_local_, mask_local_, logits,
                                          sh_.global_mask_count);
        });
    return ctx_.submit(kLaneComm, "reduce", "loss", -1, {loss_task}, [this] {
      ctx_.all_reduce_sum(std::span<S>(stats_.data(), stats_.size()));
    });
  }

  void submit_backward() {
    const int layers = cfg_.layers();
    for (int l = layers - 1; l >= 0; --l) {
      const index_t dl = dims_[static_cast<std::size_t>(l)];
      const index_t dl1 = dims_[static_cast<std::size_t>(l) + 1];
      const CMatView<S> upstream{pool_.ahw[static_cast<std::size_t>(l)].data(), local_rows_, dl1};
      const bool skip = l == 0 && cfg_.skip_first_backward_spmm;

      // HW_G = A_hat * AHW_G into the shared hw buffer. With the
      // first-layer skip, the upstream gradient stands in directly.
      CMatView<S> grad_rows = upstream;
      if (!skip) {
        const MatView<S> s{pool_.hw.data(), local_rows_, dl1};
        staged_spmm_submit(ctx_, bwd_spmm_, upstream, s);
        grad_rows = s;
      }

      // W_G = H_in^T * HW_G over the canonical row blocks (see
      // wgrad_stage_): partials land in the staging buffer, one all-reduce
      // gathers every block, and the final block sum happens identically on
      // all workers at finalize.
      const CMatView<S> h_in = l == 0 ? CMatView<S>(x_local_.data(), local_rows_, dl)
                                      : CMatView<S>(pool_.ahw[static_cast<std::size_t>(l) - 1].data(),
                                                    local_rows_, dl);
      DenseMatrix<S>* stage = &wgrad_stage_[static_cast<std::size_t>(l)];
      const PartitionVector* blocks = &sh_.wgrad_blocks;
      const index_t r0 = r0_, r1 = r1_;
      const TaskId wg = ctx_.submit(
          kLaneCompute, "gemm", "wgrad", l, {ctx_.last(kLaneCompute)},
          [stage, blocks, h_in, grad_rows, r0, r1, dl, dl1] {
            stage->set_zero();
            const MatView<S> sv{stage->data(), stage->rows(), stage->cols()};
            for (int g = 0; g < blocks->parts(); ++g) {
              const index_t a = std::max(blocks->begin(g), r0);
              const index_t b = std::min(blocks->end(g), r1);
              if (a >= b) continue;
              gemm<S>(h_in.row_block(a - r0, b - r0), grad_rows.row_block(a - r0, b - r0), true,
                      false, false, sv.row_block(g * dl, (g + 1) * dl));
            }
          });
      wgrad_reduced_[static_cast<std::size_t>(l)] =
          ctx_.submit(kLaneComm, "reduce", "wgrad", l, {wg}, [this, stage] {
            ctx_.all_reduce_sum(std::span<S>(stage->data(), static_cast<std::size_t>(stage->size())));
          });

      if (l > 0) {
        // H_G = HW_G * W^T staged through bc1 (idle between staged
        // multiplies); the ReLU mask for the layer below then writes the
        // masked gradient into that layer's activation buffer.
        const MatView<S> hg{pool_.bc1.data(), local_rows_, dl};
        const CMatView<S> w{params_[static_cast<std::size_t>(l)].w.data(), dl, dl1};
        ctx_.submit(kLaneCompute, "gemm", "hgrad", l, {ctx_.last(kLaneCompute)},
                    [grad_rows, w, hg] { gemm<S>(grad_rows, w, false, true, false, hg); });
        const MatView<S> below{pool_.ahw[static_cast<std::size_t>(l) - 1].data(), local_rows_, dl};
        ctx_.submit(kLaneCompute, "other", "relu_bwd", l, {ctx_.last(kLaneCompute)},
                    [hg, below] { relu_backward<S>(CMatView<S>(hg), CMatView<S>(below), below); });
      }
    }
  }

  /// Sums the gathered W-grad blocks (identically on every worker) and
  /// optionally applies Adam.
  TaskId submit_finalize(bool run_adam, int t) {
    std::vector<TaskId> deps = wgrad_reduced_;
    deps.push_back(ctx_.last(kLaneCompute));
    return ctx_.submit(kLaneCompute, "other", run_adam ? "adam" : "wgrad_final", -1, std::move(deps),
                       [this, run_adam, t] {
                         finalize_wgrad();
                         if (run_adam) adam_step(params_, t, cfg_);
                       });
  }

 private:
  void finalize_wgrad() {
    const int blocks = sh_.wgrad_blocks.parts();
    for (int l = 0; l < cfg_.layers(); ++l) {
      auto& p = params_[static_cast<std::size_t>(l)];
      const auto& stage = wgrad_stage_[static_cast<std::size_t>(l)];
      const index_t dl = p.w.rows();
      const index_t dl1 = p.w.cols();
      p.w_grad.set_zero();
      for (int g = 0; g < blocks; ++g)
        for (index_t a = 0; a < dl; ++a)
          for (index_t b = 0; b < dl1; ++b) p.w_grad(a, b) += stage(g * dl + a, b);
    }
  }

  WorkerCtx& ctx_;
  const Shared& sh_;
  const GcnConfig& cfg_;
  std::vector<index_t> dims_;
  index_t r0_ = 0, r1_ = 0, local_rows_ = 0;

  DenseMatrix<S> x_local_;
  std::vector<std::int32_t> labels_local_;
  std::vector<std::uint8_t> mask_local_;

  BufferPool<S> pool_;
  std::vector<LayerParams<S>> params_;
  std::vector<DenseMatrix<S>> wgrad_stage_;  // per layer: blocks*d_l x d_{l+1}
  std::vector<TaskId> wgrad_reduced_;
  std::vector<char> swap_order_;
  DistSpmm<S> fwd_spmm_, bwd_spmm_;

  std::array<S, 2> stats_{};  // [loss sum, correct count]
  double last_acc_ = 0.0;
};

}  // namespace rowgcn
