// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <thread>
#include <type_traits>

#include "rowgcn/collectives.hpp"
#include "rowgcn/partition.hpp"

namespace rowgcn {

/// Per-worker plan for the staged 1D row-broadcast SpMM. bc1/bc2 are the two
/// broadcast buffers (bc2 only used when overlap is on); their capacity must
/// cover the largest part times the widest payload ever staged.
template <class S>
struct DistSpmm {
  const TilePlan<S>* plan = nullptr;  // symmetric row tiling of the operand
  int my_rank = 0;
  DenseMatrix<S>* bc1 = nullptr;
  DenseMatrix<S>* bc2 = nullptr;
  bool overlap = false;
  double compute_delay_us = 0.0;  // injected per-stage stall, experiments only

  void check(index_t width, index_t h_rows, index_t out_rows, index_t out_cols) const {
    const auto& p = plan->p;
    if (my_rank < 0 || my_rank >= p.parts())
      throw ValueError("staged_spmm: rank " + std::to_string(my_rank) + " not in plan with P=" +
                       std::to_string(p.parts()));
    if (h_rows != p.size(my_rank))
      throw ShapeError("staged_spmm: h_local has " + std::to_string(h_rows) + " rows, part owns " +
                       std::to_string(p.size(my_rank)));
    if (out_rows != p.size(my_rank) || out_cols != width)
      throw ShapeError("staged_spmm: out_local is " + detail::shape_str(out_rows, out_cols) +
                       ", expected " + detail::shape_str(p.size(my_rank), width));
    const index_t need = p.max_part() * width;
    if (!bc1 || bc1->capacity() < need)
      throw ValueError("staged_spmm: bc1 capacity " +
                       std::to_string(bc1 ? bc1->capacity() : 0) + " < required " +
                       std::to_string(need));
    if (overlap && (!bc2 || bc2->capacity() < need))
      throw ValueError("staged_spmm: overlap needs bc2 with capacity >= " + std::to_string(need));
  }
};

/// Submits the staged SpMM as lane tasks and returns the handle of the final
/// stage multiply (its completion implies the whole operation finished).
///
/// Stage j: worker j's rows of H go out on the comm lane, every worker then
/// multiplies its (me, j) tile on the compute lane. Owners multiply straight
/// from h_local; the broadcast still runs for uniformity. Dependency rules:
///   spmm(j)      waits for broadcast(j);
///   broadcast(j) waits for spmm(j-1)      when not overlapped (same buffer),
///   broadcast(j) waits for spmm(j-2)      when overlapped (bc1/bc2 alternate).
/// Stages accumulate in rank order, which walks each CSR row's columns in
/// exactly the monolithic kernel's order — results match spmm() bitwise.
template <class S>
TaskId staged_spmm_submit(WorkerCtx& ctx, const DistSpmm<S>& ds,
                          std::type_identity_t<CMatView<S>> h_local,
                          std::type_identity_t<MatView<S>> out_local) {
  const PartitionVector& p = ds.plan->p;
  const int parts = p.parts();
  const int me = ctx.rank();
  if (me != ds.my_rank)
    throw ValueError("staged_spmm: plan built for rank " + std::to_string(ds.my_rank) +
                     ", submitted by rank " + std::to_string(me));
  const index_t width = h_local.cols;
  ds.check(width, h_local.rows, out_local.rows, out_local.cols);

  const TaskId prior = ctx.last(kLaneCompute);
  std::vector<TaskId> mult(static_cast<std::size_t>(parts), 0);
  const double stall_us = ds.compute_delay_us;
  for (int j = 0; j < parts; ++j) {
    const index_t stage_rows = p.size(j);
    S* bc_data = (!ds.overlap || j % 2 == 0) ? ds.bc1->data() : ds.bc2->data();

    std::vector<TaskId> bdeps;
    if (ds.overlap)
      bdeps.push_back(j >= 2 ? mult[static_cast<std::size_t>(j) - 2] : prior);
    else
      bdeps.push_back(j >= 1 ? mult[static_cast<std::size_t>(j) - 1] : prior);

    std::byte* payload = (j == me)
                             ? reinterpret_cast<std::byte*>(const_cast<S*>(h_local.data))
                             : reinterpret_cast<std::byte*>(bc_data);
    const std::size_t len = static_cast<std::size_t>(stage_rows * width) * sizeof(S);
    const TaskId bc = ctx.submit(kLaneComm, "broadcast", "h_stage", j, std::move(bdeps),
                                 [&ctx, j, payload, len] { ctx.broadcast(j, {payload, len}); });

    const CsrMatrix<S>* tile =
        &ds.plan->tiles[static_cast<std::size_t>(me)][static_cast<std::size_t>(j)];
    const CMatView<S> src = (j == me) ? h_local : CMatView<S>(bc_data, stage_rows, width);
    const bool accumulate = j > 0;
    mult[static_cast<std::size_t>(j)] =
        ctx.submit(kLaneCompute, "spmm", "stage", j, {bc}, [tile, src, accumulate, out_local, stall_us] {
          spmm(*tile, src, accumulate, out_local);
          if (stall_us > 0.0)
            std::this_thread::sleep_for(
                std::chrono::nanoseconds(static_cast<std::int64_t>(stall_us * 1e3)));
        });
  }
  return mult[static_cast<std::size_t>(parts) - 1];
}

/// Blocking form.
template <class S>
void staged_spmm(WorkerCtx& ctx, const DistSpmm<S>& ds, std::type_identity_t<CMatView<S>> h_local,
                 std::type_identity_t<MatView<S>> out_local) {
  ctx.wait(staged_spmm_submit(ctx, ds, h_local, out_local));
}

/// 1D column (reduce) variant — reference implementation used by oracle
/// tests. Stage i: every worker multiplies its column tile A^{i,me} with its
/// local H rows and the partials are reduced at worker i in rank order.
template <class S>
void reduce_spmm_reference(WorkerCtx& ctx, const TilePlan<S>& plan,
                           std::type_identity_t<CMatView<S>> h_local,
                           std::type_identity_t<MatView<S>> out_local) {
  const PartitionVector& p = plan.p;
  const int parts = p.parts();
  const int me = ctx.rank();
  const index_t width = h_local.cols;
  if (h_local.rows != p.size(me))
    throw ShapeError("reduce_spmm: h_local has " + std::to_string(h_local.rows) +
                     " rows, part owns " + std::to_string(p.size(me)));
  if (out_local.rows != p.size(me) || out_local.cols != width)
    throw ShapeError("reduce_spmm: out_local is " + detail::shape_str(out_local.rows, out_local.cols) +
                     ", expected " + detail::shape_str(p.size(me), width));

  for (int i = 0; i < parts; ++i) {
    const index_t stage_rows = p.size(i);
    DenseMatrix<S> partial(stage_rows, width);
    const CsrMatrix<S>& tile =
        plan.tiles[static_cast<std::size_t>(i)][static_cast<std::size_t>(me)];
    spmm(tile, h_local, false, partial.view());
    ctx.reduce_sum(i, std::span<S>(partial.data(), static_cast<std::size_t>(partial.size())));
    if (i == me)
      std::copy(partial.data(), partial.data() + partial.size(), out_local.data);
  }
}

}  // namespace rowgcn
