// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: full-batch GCN training on P simulated workers
// with 1D row-partitioned staged-broadcast SpMM, plus the benchmarking,
// partition-statistics, cost-model and synthetic-dataset utilities.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rowgcn/breakdown.hpp"
#include "rowgcn/cost_model.hpp"
#include "rowgcn/dataset.hpp"
#include "rowgcn/dist_spmm.hpp"
#include "rowgcn/driver.hpp"
#include "rowgcn/timeline.hpp"

using namespace rowgcn;

namespace {

struct CommonFlags {
  int workers = 1;
  std::string dtype = "f64";
  std::uint64_t seed = 1;
  bool seed_set = false;
  bool permute = false;
  bool overlap = false;
  bool skip_first_spmm = false;
  bool order_swap = false;
  bool self_loops = false;
  double link_delay_ns_per_byte = 0.0;
  std::string timeline_path, breakdown_path;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--workers", f.workers, "simulated worker count P")->check(CLI::PositiveNumber);
  cmd->add_option("--dtype", f.dtype, "scalar width: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--seed", f.seed, "PRNG seed")->each([&](const std::string&) { f.seed_set = true; });
  cmd->add_flag("--permute", f.permute, "randomly permute vertices before partitioning");
  cmd->add_flag("--overlap", f.overlap, "overlap broadcasts with multiplies (double buffering)");
  cmd->add_flag("--skip-first-spmm", f.skip_first_spmm, "skip the first layer's backward SpMM");
  cmd->add_flag("--order-swap", f.order_swap, "SpMM before GeMM on widening layers");
  cmd->add_flag("--add-self-loops", f.self_loops, "insert unit self loops where missing");
  cmd->add_option("--link-delay-ns-per-byte", f.link_delay_ns_per_byte,
                  "injected transfer cost per byte (simulated link)");
  cmd->add_option("--timeline", f.timeline_path, "write the execution timeline JSON here");
  cmd->add_option("--breakdown", f.breakdown_path, "write the runtime-breakdown JSON here");
}

template <class S>
int run_train(const CommonFlags& flags, const std::string& graph, const std::string& features,
              const std::string& labels, const std::string& masks, const std::string& config_path,
              const std::string& checkpoint) {
  Dataset<S> ds = load_dataset<S>(graph, features, labels, masks);
  if (flags.self_loops) ds.graph = add_self_loops(ds.graph);

  nlohmann::json cfg_json = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw IoError("cannot open config " + config_path);
    f >> cfg_json;
  }
  ConfigFile cf = parse_config(cfg_json);
  GcnConfig cfg = materialize_config(cf, ds.features.cols(), ds.num_classes());
  if (flags.seed_set) cfg.seed = flags.seed;
  cfg.permute = cfg.permute || flags.permute;
  cfg.overlap = cfg.overlap || flags.overlap;
  cfg.skip_first_backward_spmm = cfg.skip_first_backward_spmm || flags.skip_first_spmm;
  cfg.order_swap = cfg.order_swap || flags.order_swap;

  TrainOptions opts;
  opts.workers = flags.workers;
  opts.group.link_delay_ns_per_byte = flags.link_delay_ns_per_byte;
  opts.on_epoch = [](int epoch, double loss, double acc, double wall_us) {
    nlohmann::json line{{"epoch", epoch}, {"loss", loss}, {"acc", acc}, {"wall_us", wall_us}};
    std::cout << line.dump() << "\n" << std::flush;
  };
  auto art = train_run(ds, cfg, opts);

  if (!flags.timeline_path.empty()) export_timeline(flags.timeline_path, art.timeline);
  if (!flags.breakdown_path.empty()) {
    const auto rep = runtime_breakdown(art.timeline);
    std::ofstream f(flags.breakdown_path);
    f << rep.to_json().dump(1) << "\n";
    std::cerr << rep.text_table();
  }
  if (!checkpoint.empty()) write_checkpoint(checkpoint, art.final_w, cfg);

  nlohmann::json summary{{"final_loss", art.final_loss()},
                         {"final_acc", art.final_acc()},
                         {"epochs", cfg.epochs},
                         {"workers", flags.workers}};
  std::cout << summary.dump() << "\n";
  return 0;
}

template <class S>
Dataset<S> bench_dataset(const CommonFlags& flags, const std::string& graph, index_t synth_n,
                         double synth_degree, double synth_exponent, index_t width) {
  if (!graph.empty()) {
    Dataset<S> ds;
    ds.name = graph;
    ds.graph = load_graph<S>(graph);
    Rng rng(flags.seed);
    ds.features = DenseMatrix<S>(ds.graph.rows, width);
    for (index_t i = 0; i < ds.features.size(); ++i)
      ds.features.data()[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
    ds.labels.assign(static_cast<std::size_t>(ds.graph.rows), 0);
    return ds;
  }
  return synth_graph<S>(synth_n, synth_degree, synth_exponent, flags.seed, width, 2);
}

template <class S>
int run_bench_spmm(const CommonFlags& flags, const std::string& graph, index_t synth_n,
                   double synth_degree, double synth_exponent, index_t width,
                   double compute_delay_us, const std::string& stage_csv) {
  Dataset<S> ds = bench_dataset<S>(flags, graph, synth_n, synth_degree, synth_exponent, width);
  if (flags.self_loops) ds.graph = add_self_loops(ds.graph);
  const index_t n = ds.n();

  Permutation perm = flags.permute ? random_permutation(n, flags.seed) : Permutation::identity(n);
  CsrMatrix<S> a = flags.permute ? permute_graph(ds.graph, perm) : ds.graph;
  CsrMatrix<S> ahat_t = transpose(normalize_in_degree(a));
  const PartitionVector p = uniform_partition(n, flags.workers);
  const TilePlan<S> plan = tile_rows(ahat_t, p);
  DenseMatrix<S> h = flags.permute ? permute_rows(ds.features, perm) : std::move(ds.features);

  GroupOptions gopts;
  gopts.link_delay_ns_per_byte = flags.link_delay_ns_per_byte;
  DeviceGroup group(flags.workers, gopts);
  group.run([&](WorkerCtx& ctx) {
    const int me = ctx.rank();
    const index_t r0 = p.begin(me), rows = p.size(me);
    DenseMatrix<S> h_local(rows, width), out_local(rows, width);
    for (index_t i = 0; i < rows; ++i)
      for (index_t j = 0; j < width; ++j) h_local(i, j) = h(r0 + i, j);
    DenseMatrix<S> bc1(p.max_part(), width), bc2(p.max_part(), width);
    DistSpmm<S> dsp{&plan, me, &bc1, &bc2, flags.overlap, compute_delay_us};
    staged_spmm(ctx, dsp, h_local, out_local.view());
  });

  const auto& events = group.timeline();
  audit_staged_run(events, flags.workers, flags.overlap);
  if (!flags.timeline_path.empty()) export_timeline(flags.timeline_path, events);
  if (!stage_csv.empty()) {
    std::ofstream f(stage_csv);
    if (!f) throw IoError("cannot open " + stage_csv);
    f << "stage,worker,comm_us,comp_us\n";
    for (int stage = 0; stage < flags.workers; ++stage)
      for (int w = 0; w < flags.workers; ++w) {
        double comm = 0, comp = 0;
        for (const auto& e : events) {
          if (e.worker != w || e.stage != stage) continue;
          if (e.kind == "broadcast") comm += e.t_end_us - e.t_start_us;
          if (e.kind == "spmm") comp += e.t_end_us - e.t_start_us;
        }
        f << stage << "," << w << "," << comm << "," << comp << "\n";
      }
  }

  nlohmann::json summary{{"n", n},
                         {"nnz", plan.total_nnz()},
                         {"width", width},
                         {"workers", flags.workers},
                         {"overlap", flags.overlap},
                         {"permute", flags.permute},
                         {"wall_us", timeline_span_us(events)},
                         {"bytes_broadcast", group.total_bytes_sent()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

template <class S>
int run_partition_stats(const CommonFlags& flags, const std::string& graph, const std::string& order,
                        const std::string& out_path) {
  CsrMatrix<S> a = load_graph<S>(graph);
  if (flags.self_loops) a = add_self_loops(a);
  if (order == "random")
    a = permute_graph(a, random_permutation(a.rows, flags.seed));
  else if (order == "degsort")
    a = permute_graph(a, degree_sorted_permutation(a));
  const auto rep = balance_stats(tile_rows(a, uniform_partition(a.rows, flags.workers)));
  auto j = rep.to_json();
  j["order"] = order;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    f << j.dump(1) << "\n";
  }
  std::cout << j.dump() << "\n";
  return 0;
}

template <class S>
int run_synth(const CommonFlags& flags, index_t n, double avg_degree, double exponent,
              index_t feature_dim, int classes, const std::string& prefix) {
  Dataset<S> ds = synth_graph<S>(n, avg_degree, exponent, flags.seed, feature_dim, classes);
  {
    std::ofstream f(prefix + ".edges");
    if (!f) throw IoError("cannot open " + prefix + ".edges");
    for (index_t u = 0; u < ds.graph.rows; ++u)
      for (index_t e = ds.graph.row_ptr[u]; e < ds.graph.row_ptr[u + 1]; ++e)
        f << u << " " << ds.graph.col_idx[e] << "\n";
  }
  write_dense<S>(prefix + ".features.bin", ds.features);
  {
    std::ofstream f(prefix + ".labels.txt");
    for (auto l : ds.labels) f << l << "\n";
  }
  nlohmann::json summary{{"n", n},
                         {"nnz", ds.graph.nnz()},
                         {"avg_degree", static_cast<double>(ds.graph.nnz()) / static_cast<double>(n)},
                         {"features", feature_dim},
                         {"classes", classes},
                         {"prefix", prefix}};
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"full-batch GCN training engine on simulated multi-GPU workers"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* train = app.add_subcommand("train", "train a GCN on a dataset");
  std::string graph, features, labels, masks, config_path, checkpoint;
  train->add_option("--graph", graph, "adjacency: Matrix Market or edge list")->required();
  train->add_option("--features", features, "features: dense binary or CSV")->required();
  train->add_option("--labels", labels, "labels: one class index per line")->required();
  train->add_option("--masks", masks, "optional masks JSON {train:[],val:[],test:[]}");
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--checkpoint", checkpoint, "write final weights here");
  add_common(train, flags);

  auto* bench = app.add_subcommand("bench-spmm", "run one staged distributed SpMM");
  std::string bench_graph, stage_csv;
  index_t synth_n = 4096, width = 32;
  double synth_degree = 16.0, synth_exponent = 0.5, compute_delay_us = 0.0;
  bench->add_option("--graph", bench_graph, "adjacency file (otherwise synthetic)");
  bench->add_option("--synth-n", synth_n, "synthetic vertex count");
  bench->add_option("--synth-degree", synth_degree, "synthetic average degree");
  bench->add_option("--synth-exponent", synth_exponent, "synthetic power-law exponent");
  bench->add_option("--width", width, "dense feature width");
  bench->add_option("--compute-delay-us", compute_delay_us, "injected per-stage compute stall");
  bench->add_option("--stage-csv", stage_csv, "per-stage comm/comp CSV output");
  add_common(bench, flags);

  auto* pstats = app.add_subcommand("partition-stats", "tile nonzero balance report");
  std::string pstats_graph, order = "natural", pstats_out;
  pstats->add_option("--graph", pstats_graph, "adjacency file")->required();
  pstats->add_option("--order", order, "vertex ordering")
      ->check(CLI::IsMember({"natural", "random", "degsort"}));
  pstats->add_option("--out", pstats_out, "write the report JSON here");
  add_common(pstats, flags);

  auto* cost = app.add_subcommand("cost-model", "analytical communication-time model");
  double cm_n = 1e6, cm_d = 512, cm_bandwidth = 0;
  int cm_elem_bytes = 4;
  std::string cm_topology = "asymmetric-6-link", cm_strategy = "1d";
  cost->add_option("--n", cm_n, "vertex count");
  cost->add_option("--d", cm_d, "feature width");
  cost->add_option("--topology", cm_topology, "asymmetric-6-link | switched-12-link");
  cost->add_option("--strategy", cm_strategy, "1d | 1.5d");
  cost->add_option("--link-bandwidth", cm_bandwidth, "bytes/s per link (adds a seconds estimate)");
  cost->add_option("--element-bytes", cm_elem_bytes, "bytes per matrix element");
  add_common(cost, flags);

  auto* synth = app.add_subcommand("synth", "generate a synthetic power-law dataset");
  index_t sy_n = 10000, sy_features = 32;
  double sy_degree = 8.0, sy_exponent = 0.7;
  int sy_classes = 4;
  std::string sy_prefix = "synth";
  synth->add_option("--n", sy_n, "vertex count");
  synth->add_option("--avg-degree", sy_degree, "target average degree");
  synth->add_option("--exponent", sy_exponent, "power-law exponent (0 = near-uniform)");
  synth->add_option("--features", sy_features, "feature width");
  synth->add_option("--classes", sy_classes, "label classes");
  synth->add_option("--out-prefix", sy_prefix, "output file prefix");
  add_common(synth, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    const bool f64 = flags.dtype == "f64";
    if (train->parsed())
      return f64 ? run_train<double>(flags, graph, features, labels, masks, config_path, checkpoint)
                 : run_train<float>(flags, graph, features, labels, masks, config_path, checkpoint);
    if (bench->parsed())
      return f64 ? run_bench_spmm<double>(flags, bench_graph, synth_n, synth_degree, synth_exponent,
                                          width, compute_delay_us, stage_csv)
                 : run_bench_spmm<float>(flags, bench_graph, synth_n, synth_degree, synth_exponent,
                                         width, compute_delay_us, stage_csv);
    if (pstats->parsed())
      return f64 ? run_partition_stats<double>(flags, pstats_graph, order, pstats_out)
                 : run_partition_stats<float>(flags, pstats_graph, order, pstats_out);
    if (cost->parsed()) {
      auto topo = Topology::parse(cm_topology);
      topo.link_bandwidth = cm_bandwidth;
      auto j = cost_model_json(parse_strategy(cm_strategy), topo, flags.workers, cm_n, cm_d,
                               cm_elem_bytes);
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (synth->parsed())
      return f64 ? run_synth<double>(flags, sy_n, sy_degree, sy_exponent, sy_features, sy_classes,
                                     sy_prefix)
                 : run_synth<float>(flags, sy_n, sy_degree, sy_exponent, sy_features, sy_classes,
                                    sy_prefix);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
