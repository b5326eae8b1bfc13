// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "rowgcn/errors.hpp"

namespace rowgcn {

/// One executed task on a worker's lane. Times are microseconds from run
/// start. Events on one lane of one worker never overlap (lanes are serial).
struct TimelineEvent {
  int worker = 0;
  int lane = 0;
  int stage = -1;
  std::string kind;  // broadcast | spmm | gemm | reduce | other
  std::string op;    // finer label: relu, loss, adam, wgrad, ...
  double t_start_us = 0.0;
  double t_end_us = 0.0;
  std::uint64_t task = 0;
  std::vector<std::uint64_t> deps;
};

using TaskId = std::uint64_t;  // 0 == no task

constexpr int kLaneCompute = 0;
constexpr int kLaneComm = 1;

struct GroupOptions {
  /// Simulated transfer cost: every collective sleeps payload_bytes * this.
  double link_delay_ns_per_byte = 0.0;
};

class WorkerCtx;

/// P simulated workers in one process. Worker state lives in per-worker
/// closures ("device memory"); the only cross-worker data path is the
/// collectives below, which are blocking rendezvous points. Overlap comes
/// from running them inside lane-1 scheduler tasks: the returned TaskId is
/// the completion handle.
///
/// All P workers must issue the same sequence of collectives with identical
/// op/root/length; a divergent call raises ProtocolError on every
/// participant. A worker that never arrives leaves the others blocked until
/// abort() turns the wait into ShutdownError.
class DeviceGroup {
 public:
  explicit DeviceGroup(int world, GroupOptions opts = {});
  ~DeviceGroup();

  int world() const { return world_; }

  /// Spawns P worker threads plus two lane threads each, runs fn(ctx) on
  /// every worker, drains the lanes, joins. Rethrows the first worker error.
  void run(const std::function<void(WorkerCtx&)>& fn);

  /// Wakes everything blocked in a collective or task wait with
  /// ShutdownError. Safe to call from any thread.
  void abort();

  // -- collectives (called via WorkerCtx) ----------------------------------
  void broadcast_bytes(int rank, int root, std::byte* buf, std::size_t len, double* delay_us = nullptr);

  template <class S>
  void all_reduce_sum(int rank, S* data, std::size_t count) {
    if (world_ == 1 || count == 0) return;
    const std::size_t len = count * sizeof(S);
    collective(rank, OpTag{2, -1, len}, data, [&](const std::vector<void*>& bufs) {
      // Canonical rank-ordered sum computed identically on every worker, so
      // the result is bitwise reproducible and replica-identical.
      std::vector<S> acc(count, S(0));
      for (int r = 0; r < world_; ++r) {
        const S* p = static_cast<const S*>(bufs[static_cast<std::size_t>(r)]);
        for (std::size_t i = 0; i < count; ++i) acc[i] += p[i];
      }
      sleep_link_delay(len);
      sent_bytes_[static_cast<std::size_t>(rank)] += len;
      recv_bytes_[static_cast<std::size_t>(rank)] += len;
      phase_barrier();  // everyone done reading before buffers are written
      std::memcpy(data, acc.data(), len);
    });
  }

  template <class S>
  void reduce_sum(int rank, int root, S* data, std::size_t count) {
    if (world_ == 1 || count == 0) return;
    const std::size_t len = count * sizeof(S);
    collective(rank, OpTag{3, root, len}, data, [&](const std::vector<void*>& bufs) {
      std::vector<S> acc;
      if (rank == root) {
        acc.assign(count, S(0));
        for (int r = 0; r < world_; ++r) {
          const S* p = static_cast<const S*>(bufs[static_cast<std::size_t>(r)]);
          for (std::size_t i = 0; i < count; ++i) acc[i] += p[i];
        }
        recv_bytes_[static_cast<std::size_t>(rank)] += len * static_cast<std::size_t>(world_ - 1);
      } else {
        sent_bytes_[static_cast<std::size_t>(rank)] += len;
      }
      sleep_link_delay(len);
      phase_barrier();
      if (rank == root) std::memcpy(data, acc.data(), len);
    });
  }

  // -- scheduler ------------------------------------------------------------
  TaskId submit(int worker, int lane, std::string kind, std::string op, int stage,
                std::vector<TaskId> deps, std::function<void()> fn);
  void wait_task(TaskId id);

  // -- post-run artifacts ---------------------------------------------------
  const std::vector<TimelineEvent>& timeline() const { return events_; }
  std::uint64_t bytes_sent(int rank) const { return sent_bytes_[static_cast<std::size_t>(rank)]; }
  std::uint64_t bytes_received(int rank) const { return recv_bytes_[static_cast<std::size_t>(rank)]; }
  std::uint64_t total_bytes_sent() const {
    std::uint64_t s = 0;
    for (auto b : sent_bytes_) s += b;
    return s;
  }
  void reset_byte_counters() {
    std::fill(sent_bytes_.begin(), sent_bytes_.end(), 0);
    std::fill(recv_bytes_.begin(), recv_bytes_.end(), 0);
  }

  /// Per-worker scratch log for tests (replica hashes etc.). Each worker
  /// appends only to its own slot.
  std::vector<std::uint64_t>& worker_log(int rank) { return worker_log_[static_cast<std::size_t>(rank)]; }

  double now_us() const;

 private:
  friend class WorkerCtx;

  struct OpTag {
    int kind = 0;
    int root = -1;
    std::size_t len = 0;
    bool operator==(const OpTag&) const = default;
  };

  struct Task {
    TaskId id = 0;
    int worker = 0;
    int lane = 0;
    int stage = -1;
    std::string kind, op;
    std::vector<TaskId> deps;
    std::function<void()> fn;
    bool done = false;
  };

  void collective(int rank, OpTag tag, void* buf,
                  const std::function<void(const std::vector<void*>&)>& middle);
  void phase_barrier();
  void barrier_wait(std::unique_lock<std::mutex>& lk);
  void sleep_link_delay(std::size_t bytes) const;
  void lane_main(int worker, int lane);
  void check_abort_locked() const;

  const int world_;
  const GroupOptions opts_;

  // rendezvous state (guarded by coll_mutex_)
  std::mutex coll_mutex_;
  std::condition_variable coll_cv_;
  int arrived_ = 0;
  std::uint64_t barrier_gen_ = 0;
  std::vector<void*> coll_bufs_;
  std::vector<OpTag> coll_tags_;
  bool tag_mismatch_ = false;
  std::string mismatch_msg_;

  // scheduler state (guarded by sched_mutex_)
  std::mutex sched_mutex_;
  std::condition_variable sched_cv_;
  std::vector<std::unique_ptr<Task>> tasks_;
  std::vector<std::deque<TaskId>> queues_;  // world * 2, index = worker*2+lane
  std::vector<std::uint64_t> submitted_, completed_;
  bool stopping_ = false;

  std::atomic<bool> aborted_{false};
  std::mutex error_mutex_;
  std::exception_ptr first_error_;
  void record_error(std::exception_ptr e);

  std::vector<std::uint64_t> sent_bytes_, recv_bytes_;
  std::vector<std::vector<std::uint64_t>> worker_log_;
  std::vector<std::vector<TimelineEvent>> lane_events_;  // per lane thread
  std::vector<TimelineEvent> events_;
  std::chrono::steady_clock::time_point start_;
};

/// Per-rank handle passed to worker functions.
class WorkerCtx {
 public:
  WorkerCtx(DeviceGroup& g, int rank) : group_(&g), rank_(rank) {}

  int rank() const { return rank_; }
  int world() const { return group_->world(); }
  DeviceGroup& group() { return *group_; }

  void broadcast(int root, std::span<std::byte> buf) {
    group_->broadcast_bytes(rank_, root, buf.data(), buf.size());
  }
  template <class S>
  void all_reduce_sum(std::span<S> data) {
    group_->all_reduce_sum(rank_, data.data(), data.size());
  }
  template <class S>
  void reduce_sum(int root, std::span<S> data) {
    group_->reduce_sum(rank_, root, data.data(), data.size());
  }

  TaskId submit(int lane, std::string kind, std::string op, int stage, std::vector<TaskId> deps,
                std::function<void()> fn) {
    const TaskId id =
        group_->submit(rank_, lane, std::move(kind), std::move(op), stage, std::move(deps), std::move(fn));
    last_[lane] = id;
    return id;
  }
  void wait(TaskId id) { group_->wait_task(id); }

  /// Most recent task submitted by this worker on a lane (0 if none); used
  /// to chain operations without tracking ids by hand.
  TaskId last(int lane) const { return last_[lane]; }

  void log_u64(std::uint64_t v) { group_->worker_log(rank_).push_back(v); }

 private:
  DeviceGroup* group_;
  int rank_;
  TaskId last_[2] = {0, 0};
};

}  // namespace rowgcn
