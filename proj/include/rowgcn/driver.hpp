// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <json.hpp>

#include "rowgcn/breakdown.hpp"
#include "rowgcn/dataset.hpp"
#include "rowgcn/gcn.hpp"
#include "rowgcn/timeline.hpp"

namespace rowgcn {

/// Parsed experiment config (single JSON document, unknown keys rejected).
/// layer_dims are bound later from the dataset: [d0, hidden..., #classes].
struct ConfigFile {
  std::vector<index_t> hidden_dims{16};
  GcnConfig cfg;
};

inline ConfigFile parse_config(const nlohmann::json& j) {
  static const char* known[] = {"hidden_dims", "lr",      "beta1",   "beta2",
                                "epsilon",     "epochs",  "seed",    "permute",
                                "overlap",     "skip_first_backward_spmm", "order_swap"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "'");
  }
  ConfigFile cf;
  if (j.contains("hidden_dims")) cf.hidden_dims = j.at("hidden_dims").get<std::vector<index_t>>();
  auto& c = cf.cfg;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.permute = j.value("permute", c.permute);
  c.overlap = j.value("overlap", c.overlap);
  c.skip_first_backward_spmm = j.value("skip_first_backward_spmm", c.skip_first_backward_spmm);
  c.order_swap = j.value("order_swap", c.order_swap);
  return cf;
}

inline GcnConfig materialize_config(const ConfigFile& cf, index_t d0, int classes) {
  GcnConfig cfg = cf.cfg;
  cfg.layer_dims.clear();
  cfg.layer_dims.push_back(d0);
  for (index_t h : cf.hidden_dims) cfg.layer_dims.push_back(h);
  cfg.layer_dims.push_back(classes);
  cfg.validate();
  return cfg;
}

inline nlohmann::json config_to_json(const GcnConfig& cfg) {
  return nlohmann::json{{"layer_dims", cfg.layer_dims},
                        {"lr", cfg.lr},
                        {"beta1", cfg.beta1},
                        {"beta2", cfg.beta2},
                        {"epsilon", cfg.epsilon},
                        {"epochs", cfg.epochs},
                        {"seed", cfg.seed},
                        {"permute", cfg.permute},
                        {"overlap", cfg.overlap},
                        {"skip_first_backward_spmm", cfg.skip_first_backward_spmm},
                        {"order_swap", cfg.order_swap}};
}

/// Everything the normalization/partition stage produces, shared read-only
/// by the workers.
template <class S>
struct PreparedData {
  DenseMatrix<S> features;
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> mask;
  index_t mask_count = 0;
  PartitionVector partition;
  TilePlan<S> fwd_tiles;  // A_hat^T
  TilePlan<S> bwd_tiles;  // A_hat
  Permutation perm;       // identity if not permuted
};

template <class S>
PreparedData<S> prepare_data(const Dataset<S>& ds, const GcnConfig& cfg, int workers) {
  ds.validate();
  PreparedData<S> prep;
  prep.perm = cfg.permute ? random_permutation(ds.n(), cfg.seed) : Permutation::identity(ds.n());
  std::vector<std::uint8_t> mask = ds.effective_mask();
  if (cfg.permute) {
    prep.features = permute_rows(ds.features, prep.perm);
    prep.labels = permute_values(ds.labels, prep.perm);
    prep.mask = permute_values(mask, prep.perm);
  } else {
    prep.features = DenseMatrix<S>(ds.features.rows(), ds.features.cols());
    std::copy(ds.features.data(), ds.features.data() + ds.features.size(), prep.features.data());
    prep.labels = ds.labels;
    prep.mask = std::move(mask);
  }
  for (auto m : prep.mask) prep.mask_count += m ? 1 : 0;
  if (prep.mask_count == 0) throw ValueError("training mask is empty");

  prep.partition = uniform_partition(ds.n(), workers);
  {
    CsrMatrix<S> a = cfg.permute ? permute_graph(ds.graph, prep.perm) : ds.graph;
    CsrMatrix<S> ahat = normalize_in_degree(a);
    a = CsrMatrix<S>{};
    CsrMatrix<S> ahat_t = transpose(ahat);
    prep.fwd_tiles = tile_rows(ahat_t, prep.partition);
    ahat_t = CsrMatrix<S>{};
    prep.bwd_tiles = tile_rows(ahat, prep.partition);
  }
  return prep;
}

template <class S>
struct TrainArtifacts {
  std::vector<double> epoch_loss, epoch_acc, epoch_wall_us;
  std::vector<TimelineEvent> timeline;
  std::vector<std::vector<std::uint64_t>> w_hashes;  // [epoch][rank]
  std::vector<DenseMatrix<S>> final_w;               // rank 0's replicas
  DenseMatrix<S> logits;                             // gathered post-training logits
  int workers = 1;

  double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
  double final_acc() const { return epoch_acc.empty() ? 0.0 : epoch_acc.back(); }
};

struct TrainOptions {
  int workers = 1;
  GroupOptions group;
  bool collect_logits = false;
  /// Called on rank 0 after each epoch with (epoch, loss, acc, wall_us).
  std::function<void(int, double, double, double)> on_epoch;
};

template <class S>
TrainArtifacts<S> train_run(const Dataset<S>& ds, const GcnConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.layer_dims.front() != ds.features.cols())
    throw ConfigError("config: layer_dims[0]=" + std::to_string(cfg.layer_dims.front()) +
                      " but dataset features have width " + std::to_string(ds.features.cols()));
  const PreparedData<S> prep = prepare_data(ds, cfg, opts.workers);

  typename GcnWorker<S>::Shared shared;
  shared.cfg = &cfg;
  shared.fwd_tiles = &prep.fwd_tiles;
  shared.bwd_tiles = &prep.bwd_tiles;
  shared.features = &prep.features;
  shared.labels = &prep.labels;
  shared.mask = &prep.mask;
  shared.global_mask_count = prep.mask_count;
  shared.wgrad_blocks = uniform_partition(ds.n(), 8);

  TrainArtifacts<S> art;
  art.workers = opts.workers;
  art.epoch_loss.assign(static_cast<std::size_t>(cfg.epochs), 0.0);
  art.epoch_acc.assign(static_cast<std::size_t>(cfg.epochs), 0.0);
  art.epoch_wall_us.assign(static_cast<std::size_t>(cfg.epochs), 0.0);
  if (opts.collect_logits) art.logits = DenseMatrix<S>(ds.n(), cfg.layer_dims.back());

  DeviceGroup group(opts.workers, opts.group);
  group.run([&](WorkerCtx& ctx) {
    GcnWorker<S> worker(ctx, shared);
    worker.init_params();
    for (int e = 1; e <= cfg.epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      const S loss = worker.train_step(e);
      const double wall =
          std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
      ctx.log_u64(worker.w_hash());
      if (ctx.rank() == 0) {
        art.epoch_loss[static_cast<std::size_t>(e) - 1] = static_cast<double>(loss);
        art.epoch_acc[static_cast<std::size_t>(e) - 1] = worker.last_accuracy();
        art.epoch_wall_us[static_cast<std::size_t>(e) - 1] = wall;
        if (opts.on_epoch) opts.on_epoch(e, static_cast<double>(loss), worker.last_accuracy(), wall);
      }
    }
    if (opts.collect_logits) {
      worker.loss_only();
      const MatView<S> lg = worker.logits_view();
      for (index_t i = 0; i < worker.local_rows(); ++i)
        for (index_t j = 0; j < lg.cols; ++j) art.logits(worker.row_begin() + i, j) = lg(i, j);
    }
    if (ctx.rank() == 0) {
      for (auto& p : worker.params()) {
        DenseMatrix<S> w(p.w.rows(), p.w.cols());
        std::copy(p.w.data(), p.w.data() + p.w.size(), w.data());
        art.final_w.push_back(std::move(w));
      }
    }
  });

  art.timeline = group.timeline();
  art.w_hashes.resize(static_cast<std::size_t>(cfg.epochs));
  for (int e = 0; e < cfg.epochs; ++e) {
    auto& row = art.w_hashes[static_cast<std::size_t>(e)];
    row.resize(static_cast<std::size_t>(opts.workers));
    for (int r = 0; r < opts.workers; ++r)
      row[static_cast<std::size_t>(r)] = group.worker_log(r)[static_cast<std::size_t>(e)];
  }
  return art;
}

/// One forward/backward with materialized W gradients (no update).
template <class S>
struct GradArtifacts {
  std::vector<DenseMatrix<S>> w_grad;  // rank 0's copy
  std::vector<std::uint64_t> grad_hash_per_rank;
  double loss = 0.0;
};

template <class S>
GradArtifacts<S> grad_run(const Dataset<S>& ds, const GcnConfig& cfg, int workers) {
  cfg.validate();
  const PreparedData<S> prep = prepare_data(ds, cfg, workers);
  typename GcnWorker<S>::Shared shared;
  shared.cfg = &cfg;
  shared.fwd_tiles = &prep.fwd_tiles;
  shared.bwd_tiles = &prep.bwd_tiles;
  shared.features = &prep.features;
  shared.labels = &prep.labels;
  shared.mask = &prep.mask;
  shared.global_mask_count = prep.mask_count;
  shared.wgrad_blocks = uniform_partition(ds.n(), 8);

  GradArtifacts<S> art;
  DeviceGroup group(workers);
  group.run([&](WorkerCtx& ctx) {
    GcnWorker<S> worker(ctx, shared);
    worker.init_params();
    const S loss = worker.compute_gradients();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto& p : worker.params())
      h = fnv1a(p.w_grad.data(), sizeof(S) * static_cast<std::size_t>(p.w_grad.size()), h);
    ctx.log_u64(h);
    if (ctx.rank() == 0) {
      art.loss = static_cast<double>(loss);
      for (auto& p : worker.params()) {
        DenseMatrix<S> g(p.w_grad.rows(), p.w_grad.cols());
        std::copy(p.w_grad.data(), p.w_grad.data() + p.w_grad.size(), g.data());
        art.w_grad.push_back(std::move(g));
      }
    }
  });
  for (int r = 0; r < workers; ++r) art.grad_hash_per_rank.push_back(group.worker_log(r)[0]);
  return art;
}

/// Checkpoint: every W in the dense binary format back to back in one file,
/// plus a JSON sidecar with the config at <path>.json.
template <class S>
void write_checkpoint(const std::string& path, const std::vector<DenseMatrix<S>>& ws,
                      const GcnConfig& cfg) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (const auto& w : ws) {
    f.write("MGDM", 4);
    const std::uint64_t r = static_cast<std::uint64_t>(w.rows());
    const std::uint64_t c = static_cast<std::uint64_t>(w.cols());
    const std::uint8_t width = sizeof(S);
    f.write(reinterpret_cast<const char*>(&r), 8);
    f.write(reinterpret_cast<const char*>(&c), 8);
    f.write(reinterpret_cast<const char*>(&width), 1);
    f.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(sizeof(S) * w.size()));
  }
  if (!f) throw IoError("short write to " + path);
  std::ofstream side(path + ".json");
  side << config_to_json(cfg).dump(1) << "\n";
}

template <class S>
std::vector<DenseMatrix<S>> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<DenseMatrix<S>> ws;
  while (true) {
    char magic[4];
    f.read(magic, 4);
    if (!f) break;
    if (std::memcmp(magic, "MGDM", 4) != 0) throw ParseError(path + ": bad checkpoint block magic");
    std::uint64_t r = 0, c = 0;
    std::uint8_t width = 0;
    f.read(reinterpret_cast<char*>(&r), 8);
    f.read(reinterpret_cast<char*>(&c), 8);
    f.read(reinterpret_cast<char*>(&width), 1);
    if (!f || width != sizeof(S))
      throw ParseError(path + ": checkpoint dtype width " + std::to_string(width) +
                       " does not match run dtype " + std::to_string(sizeof(S)));
    DenseMatrix<S> w(static_cast<index_t>(r), static_cast<index_t>(c));
    f.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(sizeof(S) * w.size()));
    if (!f) throw ParseError(path + ": truncated checkpoint block");
    ws.push_back(std::move(w));
  }
  return ws;
}

}  // namespace rowgcn
