// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "rowgcn/collectives.hpp"

namespace rowgcn {

/// Per-kernel runtime totals over a run, summed across workers. comm holds
/// every comm-lane collective including its rendezvous wait. Fractions are
/// of the bucketed total, so they sum to 1 by construction.
struct BreakdownReport {
  double spmm_us = 0, gemm_us = 0, activation_us = 0, loss_us = 0, adam_us = 0, comm_us = 0;

  double total_us() const { return spmm_us + gemm_us + activation_us + loss_us + adam_us + comm_us; }

  double frac(double v) const {
    const double t = total_us();
    return t > 0 ? v / t : 0.0;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"totals_us",
         {{"spmm", spmm_us},
          {"gemm", gemm_us},
          {"activation", activation_us},
          {"loss", loss_us},
          {"adam", adam_us},
          {"comm", comm_us}}},
        {"fractions",
         {{"spmm", frac(spmm_us)},
          {"gemm", frac(gemm_us)},
          {"activation", frac(activation_us)},
          {"loss", frac(loss_us)},
          {"adam", frac(adam_us)},
          {"comm", frac(comm_us)}}}};
  }

  std::string text_table() const {
    auto line = [&](const char* name, double v) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%-12s %14.1f %8.3f\n", name, v, frac(v));
      return std::string(buf);
    };
    std::string s = "kernel               time_us fraction\n";
    s += line("spmm", spmm_us);
    s += line("gemm", gemm_us);
    s += line("activation", activation_us);
    s += line("loss", loss_us);
    s += line("adam", adam_us);
    s += line("comm", comm_us);
    s += line("total", total_us());
    return s;
  }
};

inline BreakdownReport runtime_breakdown(const std::vector<TimelineEvent>& events) {
  if (events.empty()) throw ValueError("runtime_breakdown: no events recorded");
  BreakdownReport rep;
  for (const auto& e : events) {
    const double d = e.t_end_us - e.t_start_us;
    if (e.kind == "broadcast" || e.kind == "reduce")
      rep.comm_us += d;
    else if (e.kind == "spmm")
      rep.spmm_us += d;
    else if (e.kind == "gemm")
      rep.gemm_us += d;
    else if (e.op == "relu" || e.op == "relu_bwd")
      rep.activation_us += d;
    else if (e.op == "loss")
      rep.loss_us += d;
    else if (e.op == "adam" || e.op == "wgrad_final")
      rep.adam_us += d;
  }
  return rep;
}

}  // namespace rowgcn
