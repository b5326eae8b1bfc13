// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rowgcn/collectives.hpp"

namespace rowgcn {

inline nlohmann::json timeline_to_json(const std::vector<TimelineEvent>& events) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : events)
    arr.push_back({{"worker", e.worker},
                   {"lane", e.lane},
                   {"stage", e.stage},
                   {"kind", e.kind},
                   {"op", e.op},
                   {"t_start_us", e.t_start_us},
                   {"t_end_us", e.t_end_us},
                   {"task", e.task},
                   {"deps", e.deps}});
  return arr;
}

/// JSON array of events sorted by (worker, lane, t_start).
inline void export_timeline(const std::string& path, const std::vector<TimelineEvent>& events) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << timeline_to_json(events).dump(1) << "\n";
  if (!f) throw IoError("short write to " + path);
}

inline std::vector<TimelineEvent> parse_timeline(const nlohmann::json& arr) {
  std::vector<TimelineEvent> out;
  for (const auto& j : arr) {
    TimelineEvent e;
    e.worker = j.at("worker").get<int>();
    e.lane = j.at("lane").get<int>();
    e.stage = j.at("stage").get<int>();
    e.kind = j.at("kind").get<std::string>();
    e.op = j.value("op", std::string());
    e.t_start_us = j.at("t_start_us").get<double>();
    e.t_end_us = j.at("t_end_us").get<double>();
    e.task = j.value("task", std::uint64_t(0));
    if (j.contains("deps")) e.deps = j.at("deps").get<std::vector<std::uint64_t>>();
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<TimelineEvent> load_timeline(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  nlohmann::json j;
  f >> j;
  return parse_timeline(j);
}

/// Structural audit usable on an exported file alone: every event well
/// formed, per-(worker, lane) events non-overlapping, and every recorded
/// dependency finished before its dependent started. Throws on violation.
inline void audit_timeline(const std::vector<TimelineEvent>& events) {
  std::map<std::pair<int, int>, std::vector<const TimelineEvent*>> lanes;
  std::map<std::uint64_t, const TimelineEvent*> by_task;
  for (const auto& e : events) {
    if (e.t_start_us > e.t_end_us)
      throw ValueError("timeline: event on worker " + std::to_string(e.worker) + " has t_start > t_end");
    lanes[{e.worker, e.lane}].push_back(&e);
    if (e.task) by_task[e.task] = &e;
  }
  for (auto& [key, vec] : lanes) {
    std::sort(vec.begin(), vec.end(),
              [](const TimelineEvent* a, const TimelineEvent* b) { return a->t_start_us < b->t_start_us; });
    for (std::size_t i = 1; i < vec.size(); ++i)
      if (vec[i]->t_start_us < vec[i - 1]->t_end_us)
        throw ValueError("timeline: overlapping events on worker " + std::to_string(key.first) +
                         " lane " + std::to_string(key.second));
  }
  for (const auto& e : events)
    for (std::uint64_t d : e.deps) {
      auto it = by_task.find(d);
      if (it == by_task.end())
        throw ValueError("timeline: task " + std::to_string(e.task) + " depends on missing task " +
                         std::to_string(d));
      if (it->second->t_end_us > e.t_start_us)
        throw ValueError("timeline: dependency " + std::to_string(d) + " of task " +
                         std::to_string(e.task) + " finished after the dependent started");
    }
}

/// Checks the staged-SpMM stream rules on a single staged run: spmm(j)
/// starts at/after broadcast(j) ends, and broadcast(j) starts at/after
/// spmm(j-1) ends (non-overlapped, shared buffer) or spmm(j-2) ends
/// (overlapped, alternating buffers).
inline void audit_staged_run(const std::vector<TimelineEvent>& events, int world, bool overlapped) {
  for (int w = 0; w < world; ++w) {
    std::map<int, const TimelineEvent*> bcast, mult;
    for (const auto& e : events) {
      if (e.worker != w || e.stage < 0) continue;
      if (e.kind == "broadcast") bcast[e.stage] = &e;
      if (e.kind == "spmm") mult[e.stage] = &e;
    }
    if (bcast.size() != mult.size())
      throw ValueError("staged audit: worker " + std::to_string(w) + " has " +
                       std::to_string(bcast.size()) + " broadcasts but " + std::to_string(mult.size()) +
                       " multiplies");
    const int stages = static_cast<int>(bcast.size());
    for (int j = 0; j < stages; ++j) {
      if (!bcast.count(j) || !mult.count(j))
        throw ValueError("staged audit: worker " + std::to_string(w) + " missing stage " +
                         std::to_string(j));
      if (mult[j]->t_start_us < bcast[j]->t_end_us)
        throw ValueError("staged audit: spmm(" + std::to_string(j) + ") started before broadcast(" +
                         std::to_string(j) + ") finished on worker " + std::to_string(w));
      const int guard = overlapped ? j - 2 : j - 1;
      if (guard >= 0 && bcast[j]->t_start_us < mult[guard]->t_end_us)
        throw ValueError("staged audit: broadcast(" + std::to_string(j) + ") started before spmm(" +
                         std::to_string(guard) + ") finished on worker " + std::to_string(w));
    }
  }
}

/// Wall span of a run: max t_end - min t_start over all events.
inline double timeline_span_us(const std::vector<TimelineEvent>& events) {
  if (events.empty()) return 0.0;
  double lo = events.front().t_start_us, hi = events.front().t_end_us;
  for (const auto& e : events) {
    lo = std::min(lo, e.t_start_us);
    hi = std::max(hi, e.t_end_us);
  }
  return hi - lo;
}

}  // namespace rowgcn
