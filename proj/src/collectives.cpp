// SPDX-License-Identifier: Apache-2.0
#include "rowgcn/collectives.hpp"

#include <algorithm>

namespace rowgcn {

DeviceGroup::DeviceGroup(int world, GroupOptions opts) : world_(world), opts_(opts) {
  if (world < 1) throw ValueError("DeviceGroup: world must be >= 1, got " + std::to_string(world));
  coll_bufs_.resize(static_cast<std::size_t>(world), nullptr);
  coll_tags_.resize(static_cast<std::size_t>(world));
  sent_bytes_.assign(static_cast<std::size_t>(world), 0);
  recv_bytes_.assign(static_cast<std::size_t>(world), 0);
  worker_log_.resize(static_cast<std::size_t>(world));
  queues_.resize(static_cast<std::size_t>(world) * 2);
  lane_events_.resize(static_cast<std::size_t>(world) * 2);
  submitted_.assign(static_cast<std::size_t>(world), 0);
  completed_.assign(static_cast<std::size_t>(world), 0);
}

DeviceGroup::~DeviceGroup() = default;

double DeviceGroup::now_us() const {
  return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start_).count();
}

void DeviceGroup::sleep_link_delay(std::size_t bytes) const {
  if (opts_.link_delay_ns_per_byte <= 0.0 || bytes == 0) return;
  const auto ns = static_cast<std::int64_t>(opts_.link_delay_ns_per_byte * static_cast<double>(bytes));
  std::this_thread::sleep_for(std::chrono::nanoseconds(ns));
}

void DeviceGroup::check_abort_locked() const {
  if (aborted_.load()) throw ShutdownError("device group aborted");
}

void DeviceGroup::record_error(std::exception_ptr e) {
  std::lock_guard lk(error_mutex_);
  if (!first_error_) first_error_ = e;
}

void DeviceGroup::abort() {
  aborted_.store(true);
  {
    std::lock_guard lk(coll_mutex_);
  }
  coll_cv_.notify_all();
  {
    std::lock_guard lk(sched_mutex_);
  }
  sched_cv_.notify_all();
}

void DeviceGroup::barrier_wait(std::unique_lock<std::mutex>& lk) {
  check_abort_locked();
  const std::uint64_t gen = barrier_gen_;
  if (++arrived_ == world_) {
    arrived_ = 0;
    ++barrier_gen_;
    coll_cv_.notify_all();
    return;
  }
  coll_cv_.wait(lk, [&] { return barrier_gen_ != gen || aborted_.load(); });
  check_abort_locked();
}

void DeviceGroup::phase_barrier() {
  std::unique_lock lk(coll_mutex_);
  barrier_wait(lk);
}

void DeviceGroup::collective(int rank, OpTag tag, void* buf,
                             const std::function<void(const std::vector<void*>&)>& middle) {
  {
    std::unique_lock lk(coll_mutex_);
    check_abort_locked();
    coll_bufs_[static_cast<std::size_t>(rank)] = buf;
    coll_tags_[static_cast<std::size_t>(rank)] = tag;
    const std::uint64_t gen = barrier_gen_;
    if (++arrived_ == world_) {
      // Last arriver validates the match before releasing anyone.
      for (int r = 1; r < world_; ++r) {
        if (!(coll_tags_[static_cast<std::size_t>(r)] == coll_tags_[0])) {
          tag_mismatch_ = true;
          mismatch_msg_ = "mismatched collective: rank 0 op=" + std::to_string(coll_tags_[0].kind) +
                          " root=" + std::to_string(coll_tags_[0].root) +
                          " len=" + std::to_string(coll_tags_[0].len) + ", rank " + std::to_string(r) +
                          " op=" + std::to_string(coll_tags_[static_cast<std::size_t>(r)].kind) +
                          " root=" + std::to_string(coll_tags_[static_cast<std::size_t>(r)].root) +
                          " len=" + std::to_string(coll_tags_[static_cast<std::size_t>(r)].len);
          break;
        }
      }
      arrived_ = 0;
      ++barrier_gen_;
      coll_cv_.notify_all();
    } else {
      coll_cv_.wait(lk, [&] { return barrier_gen_ != gen || aborted_.load(); });
      // a mismatch verdict outranks a concurrent abort: every participant of
      // the divergent rendezvous reports the protocol error
      if (tag_mismatch_) throw ProtocolError(mismatch_msg_);
      check_abort_locked();
    }
    if (tag_mismatch_) throw ProtocolError(mismatch_msg_);
  }
  middle(coll_bufs_);
  phase_barrier();  // nobody reuses the slots until everyone is done
}

void DeviceGroup::broadcast_bytes(int rank, int root, std::byte* buf, std::size_t len, double* delay_us) {
  if (root < 0 || root >= world_)
    throw ValueError("broadcast: root " + std::to_string(root) + " out of range");
  if (world_ == 1) return;  // immediate no-op completion
  const double t0 = delay_us ? now_us() : 0.0;
  collective(rank, OpTag{1, root, len}, buf, [&](const std::vector<void*>& bufs) {
    if (rank != root) {
      if (len > 0) std::memcpy(buf, bufs[static_cast<std::size_t>(root)], len);
      recv_bytes_[static_cast<std::size_t>(rank)] += len;
    } else {
      sent_bytes_[static_cast<std::size_t>(rank)] += len;
    }
    sleep_link_delay(len);
  });
  if (delay_us) *delay_us = now_us() - t0;
}

TaskId DeviceGroup::submit(int worker, int lane, std::string kind, std::string op, int stage,
                           std::vector<TaskId> deps, std::function<void()> fn) {
  if (lane != kLaneCompute && lane != kLaneComm)
    throw ValueError("submit: lane must be 0 or 1, got " + std::to_string(lane));
  std::erase(deps, TaskId(0));
  std::unique_lock lk(sched_mutex_);
  check_abort_locked();
  for (TaskId d : deps) {
    if (d > tasks_.size())
      throw ValueError("submit: unknown dependency id " + std::to_string(d));
    if (tasks_[d - 1]->worker != worker)
      throw ValueError("submit: dependency " + std::to_string(d) +
                       " belongs to another worker; cross-worker ordering flows through collectives");
  }
  auto t = std::make_unique<Task>();
  t->id = tasks_.size() + 1;
  t->worker = worker;
  t->lane = lane;
  t->stage = stage;
  t->kind = std::move(kind);
  t->op = std::move(op);
  t->deps = std::move(deps);
  t->fn = std::move(fn);
  const TaskId id = t->id;
  tasks_.push_back(std::move(t));
  queues_[static_cast<std::size_t>(worker) * 2 + static_cast<std::size_t>(lane)].push_back(id);
  submitted_[static_cast<std::size_t>(worker)]++;
  lk.unlock();
  sched_cv_.notify_all();
  return id;
}

void DeviceGroup::wait_task(TaskId id) {
  if (id == 0) return;
  std::unique_lock lk(sched_mutex_);
  sched_cv_.wait(lk, [&] { return aborted_.load() || (id <= tasks_.size() && tasks_[id - 1]->done); });
  check_abort_locked();
}

void DeviceGroup::lane_main(int worker, int lane) {
  const std::size_t qi = static_cast<std::size_t>(worker) * 2 + static_cast<std::size_t>(lane);
  auto& events = lane_events_[qi];
  for (;;) {
    Task* task = nullptr;
    {
      std::unique_lock lk(sched_mutex_);
      sched_cv_.wait(lk, [&] { return aborted_.load() || stopping_ || !queues_[qi].empty(); });
      if (aborted_.load()) return;
      if (queues_[qi].empty()) {
        if (stopping_) return;
        continue;
      }
      const TaskId id = queues_[qi].front();
      queues_[qi].pop_front();
      task = tasks_[id - 1].get();
      // Lane order is submission order; the head task gates the lane until
      // its dependencies (possibly on the other lane) complete.
      sched_cv_.wait(lk, [&] {
        if (aborted_.load()) return true;
        for (TaskId d : task->deps)
          if (!tasks_[d - 1]->done) return false;
        return true;
      });
      if (aborted_.load()) return;
    }
    const double t0 = now_us();
    try {
      task->fn();
    } catch (...) {
      record_error(std::current_exception());
      abort();
      return;
    }
    const double t1 = now_us();
    events.push_back(TimelineEvent{worker, lane, task->stage, task->kind, task->op, t0, t1, task->id,
                                   task->deps});
    {
      std::lock_guard lk(sched_mutex_);
      task->done = true;
      completed_[static_cast<std::size_t>(worker)]++;
    }
    sched_cv_.notify_all();
  }
}

void DeviceGroup::run(const std::function<void(WorkerCtx&)>& fn) {
  // fresh run state
  {
    std::lock_guard lk(sched_mutex_);
    tasks_.clear();
    for (auto& q : queues_) q.clear();
    std::fill(submitted_.begin(), submitted_.end(), 0);
    std::fill(completed_.begin(), completed_.end(), 0);
    stopping_ = false;
  }
  for (auto& ev : lane_events_) ev.clear();
  events_.clear();
  for (auto& log : worker_log_) log.clear();
  reset_byte_counters();
  aborted_.store(false);
  first_error_ = nullptr;
  start_ = std::chrono::steady_clock::now();

  std::vector<std::thread> lanes;
  lanes.reserve(static_cast<std::size_t>(world_) * 2);
  for (int w = 0; w < world_; ++w)
    for (int lane = 0; lane < 2; ++lane) lanes.emplace_back([this, w, lane] { lane_main(w, lane); });

  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(world_));
  for (int w = 0; w < world_; ++w) {
    workers.emplace_back([this, w, &fn] {
      WorkerCtx ctx(*this, w);
      try {
        fn(ctx);
        // drain this worker's lanes before leaving
        std::unique_lock lk(sched_mutex_);
        sched_cv_.wait(lk, [&] {
          return aborted_.load() ||
                 submitted_[static_cast<std::size_t>(w)] == completed_[static_cast<std::size_t>(w)];
        });
        check_abort_locked();
      } catch (...) {
        record_error(std::current_exception());
        abort();
      }
    });
  }
  for (auto& t : workers) t.join();
  {
    std::lock_guard lk(sched_mutex_);
    stopping_ = true;
  }
  sched_cv_.notify_all();
  for (auto& t : lanes) t.join();

  for (auto& ev : lane_events_) events_.insert(events_.end(), ev.begin(), ev.end());
  std::sort(events_.begin(), events_.end(), [](const TimelineEvent& a, const TimelineEvent& b) {
    if (a.worker != b.worker) return a.worker < b.worker;
    if (a.lane != b.lane) return a.lane < b.lane;
    return a.t_start_us < b.t_start_us;
  });

  if (first_error_) std::rethrow_exception(first_error_);
}

}  // namespace rowgcn
