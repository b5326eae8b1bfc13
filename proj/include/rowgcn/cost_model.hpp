// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>

#include <json.hpp>

#include "rowgcn/errors.hpp"

namespace rowgcn {

/// Exact rational; the cost-model ratios are compared exactly.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den == 0) throw ValueError("rational: zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  Rational operator+(const Rational& o) const { return {num * o.den + o.num * den, den * o.den}; }
  Rational operator/(const Rational& o) const {
    if (o.num == 0) throw ValueError("rational: division by zero");
    return {num * o.den, den * o.num};
  }
  bool operator==(const Rational& o) const { return num == o.num && den == o.den; }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

enum class Strategy { OneD, OneHalfD };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "1d" || s == "1D") return Strategy::OneD;
  if (s == "1.5d" || s == "1.5D") return Strategy::OneHalfD;
  throw ValueError("unknown strategy '" + s + "' (expected 1d or 1.5d)");
}

/// Node communication topology. The 1.5D analysis (replication c=2 over 8
/// devices) needs the per-group link split: how many links each 4-device
/// group's broadcast can use, and how many the final inter-group reduction
/// can use.
struct Topology {
  std::string kind;
  int links_per_device = 1;
  int group_bcast_links = 0;   // 0 = 1.5D not analyzable on this topology
  int group_reduce_links = 0;
  double link_bandwidth = 0.0;  // bytes/s; optional, 0 = report nd/l units only

  static Topology asymmetric6() { return {"asymmetric-6-link", 6, 4, 2, 0.0}; }
  static Topology switched12() { return {"switched-12-link", 12, 12, 12, 0.0}; }
  static Topology custom(int links) { return {"custom", links, 0, 0, 0.0}; }

  static Topology parse(const std::string& s) {
    if (s == "asymmetric-6-link") return asymmetric6();
    if (s == "switched-12-link") return switched12();
    throw ValueError("unknown topology '" + s + "'");
  }
};

/// Communication-time coefficient q such that time = q * n*d / l, where l is
/// a single link's bandwidth.
///
/// 1D: P stages each moving n*d/P elements over links_per_device links:
///     P * nd/(P*links*l) = nd/(links*l).
/// 1.5D (P=8, c=2): two broadcast rounds of nd/4 over the group links plus
/// one inter-group reduction of nd/4: 2*nd/(4*b*l) + nd/(4*r*l).
inline Rational cost_model_coeff(Strategy strategy, const Topology& topo, int workers) {
  if (topo.links_per_device < 1)
    throw ValueError("cost model: topology needs links_per_device >= 1");
  if (strategy == Strategy::OneD) {
    if (workers < 1) throw ValueError("cost model: P must be >= 1");
    return Rational(1, topo.links_per_device);
  }
  if (workers != 8 || topo.group_bcast_links < 1 || topo.group_reduce_links < 1)
    throw ValueError("cost model: 1.5D is analyzed for P=8, c=2 on a topology with a known group "
                     "link split; unsupported combination");
  return Rational(2, 4 * topo.group_bcast_links) + Rational(1, 4 * topo.group_reduce_links);
}

/// Concrete estimate when a link bandwidth is known.
inline double cost_model_seconds(const Rational& coeff, double n, double d, int element_bytes,
                                 double link_bandwidth_bytes_per_s) {
  if (link_bandwidth_bytes_per_s <= 0) throw ValueError("cost model: bandwidth must be positive");
  return coeff.value() * n * d * element_bytes / link_bandwidth_bytes_per_s;
}

inline nlohmann::json cost_model_json(Strategy strategy, const Topology& topo, int workers,
                                      double n, double d, int element_bytes) {
  const Rational q = cost_model_coeff(strategy, topo, workers);
  nlohmann::json j{{"strategy", strategy == Strategy::OneD ? "1D" : "1.5D"},
                   {"topology", topo.kind},
                   {"P", workers},
                   {"coeff_num", q.num},
                   {"coeff_den", q.den},
                   {"time_expr", q.str() + " * nd/l"}};
  if (topo.link_bandwidth > 0)
    j["seconds"] = cost_model_seconds(q, n, d, element_bytes, topo.link_bandwidth);
  return j;
}

}  // namespace rowgcn
