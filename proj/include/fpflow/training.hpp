#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/dynamics.hpp"
#include "fpflow/params.hpp"
#include "fpflow/sde.hpp"
#include "fpflow/tape.hpp"
#include "fpflow/transport_map.hpp"

namespace fpflow {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class PdeSampler { DataImportance, UniformBox };

struct LossConfig {
  double lambda = 0.1;
  PdeSampler pde_sampler = PdeSampler::DataImportance;
  double box_inflation = 1.5;
  int n_pde_points = 512;          // per snapshot (capped at snapshot size)
  int minibatch = 256;             // per snapshot when above the full-batch threshold
  int full_batch_threshold = 1000;

  int epochs = 3000;
  int warmup_epochs = 0;  // density-only epochs (lambda held at 0) before joint training
  double learning_rate = 1e-3;
  double beta1 = 0.8;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;

  void validate() const {
    if (lambda < 0.0) throw InvalidConfig("lambda must be >= 0");
    if (epochs <= 0) throw InvalidConfig("epochs must be positive");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning rate must be positive");
    if (n_pde_points <= 0) throw InvalidConfig("n_pde_points must be positive");
    if (minibatch <= 0) throw InvalidConfig("minibatch must be positive");
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m1;
  std::vector<double> m2;
  long step = 0;

  void reset(size_t n) {
    m1.assign(n, 0.0);
    m2.assign(n, 0.0);
    step = 0;
  }
};

inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                      double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size() || state.m1.size() != params.size())
    throw DimensionMismatch("adam_step: array lengths differ");
  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m1[i] = beta1 * state.m1[i] + (1.0 - beta1) * g;
    state.m2[i] = beta2 * state.m2[i] + (1.0 - beta2) * g * g;
    params[i] -= lr * (state.m1[i] / c1) / (std::sqrt(state.m2[i] / c2) + eps);
  }
}

// ---------------------------------------------------------------------------
// Batch and PDE point selection (all deterministic in the given seed)
// ---------------------------------------------------------------------------

struct BatchIndex {
  int snapshot = 0;
  int row = 0;
};

inline std::vector<BatchIndex> select_batch(const SnapshotDataset& ds, const LossConfig& cfg,
                                            uint64_t epoch_seed) {
  std::vector<BatchIndex> out;
  for (int s = 0; s < static_cast<int>(ds.snapshots.size()); ++s) {
    const int n = ds.snapshots[static_cast<size_t>(s)].samples.rows();
    if (n <= cfg.full_batch_threshold) {
      for (int r = 0; r < n; ++r) out.push_back({s, r});
    } else {
      // partial Fisher-Yates: first `take` entries of a seeded shuffle
      RandomEngine rng(RandomEngine::derive_seed(epoch_seed, 0x1000 + static_cast<uint64_t>(s)));
      std::vector<int> idx(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
      const int take = std::min(cfg.minibatch, n);
      for (int i = 0; i < take; ++i) {
        const int j = i + static_cast<int>(rng.next_u64() % static_cast<uint64_t>(n - i));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        out.push_back({s, idx[static_cast<size_t>(i)]});
      }
    }
  }
  return out;
}

struct PdePoints {
  Mat points;                   // n x d
  std::vector<double> weights;  // Monte Carlo weights; sum approximates the measure
};

/// Deterministic subsample of a snapshot's rows (without replacement).
inline Mat pde_sample_points(const SnapshotDataset& ds, int snapshot, int n_points,
                             uint64_t seed) {
  const auto& snap = ds.snapshots[static_cast<size_t>(snapshot)];
  const int n_avail = snap.samples.rows();
  const int d = ds.dim;
  const int n = std::min(n_points, n_avail);
  std::vector<int> idx(static_cast<size_t>(n_avail));
  for (int i = 0; i < n_avail; ++i) idx[static_cast<size_t>(i)] = i;
  if (n < n_avail) {
    RandomEngine rng(seed);
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(rng.next_u64() % static_cast<uint64_t>(n_avail - i));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
  }
  Mat points(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) points(i, c) = snap.samples(idx[static_cast<size_t>(i)], c);
  return points;
}

/// Monte Carlo points and weights for the flux-residual integral at one
/// snapshot. DataImportance treats the snapshot samples as draws from the
/// current pullback density and weighs by 1/rho (detached from the tape);
/// UniformBox draws from the inflated data bounding box with volume weights.
inline PdePoints pde_points(const TriangularMapModel& map_model, const SnapshotDataset& ds,
                            int snapshot, const LossConfig& cfg, const ParamVector& params,
                            uint64_t seed) {
  const auto& snap = ds.snapshots[static_cast<size_t>(snapshot)];
  const int n_avail = snap.samples.rows();
  const int d = ds.dim;
  PdePoints out;
  if (cfg.pde_sampler == PdeSampler::DataImportance) {
    out.points = pde_sample_points(ds, snapshot, cfg.n_pde_points, seed);
    const int n = out.points.rows();
    out.weights.resize(static_cast<size_t>(n));
    parallel_chunks(n, kShardChunks, [&](int, int lo, int hi) {
      std::vector<double> x(static_cast<size_t>(d));
      for (int i = lo; i < hi; ++i) {
        for (int c = 0; c < d; ++c) x[static_cast<size_t>(c)] = out.points(i, c);
        const double log_rho = log_pullback_density(map_model, x, snap.time, params);
        out.weights[static_cast<size_t>(i)] = std::exp(-log_rho) / n;
      }
    });
    return out;
  }
  // UniformBox
  std::vector<double> lo(static_cast<size_t>(d), 0.0), hi(static_cast<size_t>(d), 0.0);
  for (int c = 0; c < d; ++c) {
    double mn = snap.samples(0, c), mx = snap.samples(0, c);
    for (int r = 1; r < n_avail; ++r) {
      mn = std::min(mn, snap.samples(r, c));
      mx = std::max(mx, snap.samples(r, c));
    }
    const double center = 0.5 * (mn + mx), half = 0.5 * (mx - mn) * cfg.box_inflation;
    lo[static_cast<size_t>(c)] = center - half;
    hi[static_cast<size_t>(c)] = center + half;
  }
  double volume = 1.0;
  for (int c = 0; c < d; ++c) volume *= (hi[static_cast<size_t>(c)] - lo[static_cast<size_t>(c)]);
  const int n = cfg.n_pde_points;
  RandomEngine rng(seed);
  out.points = Mat(n, d);
  out.weights.assign(static_cast<size_t>(n), volume / n);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      out.points(i, c) = rng.uniform(lo[static_cast<size_t>(c)], hi[static_cast<size_t>(c)]);
  return out;
}

// ---------------------------------------------------------------------------
// Loss terms. Each walks its points with a reusable per-point tape; gradient
// accumulation order is fixed, so values and gradients are reproducible.
// ---------------------------------------------------------------------------

/// Mean of -log pullback density over the batch. grad_accum (when non-null)
/// receives the parameter gradient. Points run in deterministic shards.
inline double nll_term(const TriangularMapModel& map_model, const SnapshotDataset& ds,
                       const ParamVector& params, const std::vector<BatchIndex>& batch,
                       std::vector<double>* grad_accum = nullptr) {
  if (batch.empty()) throw std::invalid_argument("nll_term: empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  const int n = static_cast<int>(batch.size());
  std::vector<double> chunk_value(kShardChunks, 0.0);
  std::vector<std::vector<double>> chunk_grad(
      grad_accum ? static_cast<size_t>(kShardChunks) : 0);
  parallel_chunks(n, kShardChunks, [&](int ci, int lo, int hi) {
    Tape t(&params);
    std::vector<double> x(static_cast<size_t>(ds.dim));
    auto* cg = grad_accum ? &chunk_grad[static_cast<size_t>(ci)] : nullptr;
    if (cg) cg->assign(static_cast<size_t>(params.size()), 0.0);
    for (int bi = lo; bi < hi; ++bi) {
      const auto& b = batch[static_cast<size_t>(bi)];
      const auto& snap = ds.snapshots[static_cast<size_t>(b.snapshot)];
      for (int c = 0; c < ds.dim; ++c) x[static_cast<size_t>(c)] = snap.samples(b.row, c);
      t.clear();
      const Var log_rho = record_log_pullback(t, map_model, x, snap.time);
      const double v = t.val(log_rho);
      if (!std::isfinite(v)) throw NonFiniteValue("nll_term: non-finite log density");
      chunk_value[static_cast<size_t>(ci)] -= scale * v;
      if (cg) {
        t.backward(log_rho);
        const auto g = t.param_gradient();
        for (size_t i = 0; i < g.size(); ++i) (*cg)[i] -= scale * g[i];
      }
    }
  });
  double value = 0.0;
  for (int c = 0; c < kShardChunks; ++c) {
    value += chunk_value[static_cast<size_t>(c)];
    if (grad_accum && !chunk_grad[static_cast<size_t>(c)].empty())
      for (size_t i = 0; i < grad_accum->size(); ++i)
        (*grad_accum)[i] += chunk_grad[static_cast<size_t>(c)][i];
  }
  return value;
}

/// Weighted Monte Carlo estimate of the flux-matching residual
///   int | rho v + rho grad Psi + D grad rho |^2 dx
/// at one time stamp, in adjugate form. Never reads lambda; grad_scale lets
/// the caller fold the loss weight into the accumulated gradient.
/// An empty weights vector selects in-loop importance weights
/// w_j = exp(-log rho(x_j)) / n, detached from the tape; these equal the
/// DataImportance weights of pde_points but reuse the recorded density.
inline double pde_residual_term(const TriangularMapModel& map_model, const PotentialModel& pot,
                                const DiffusionModel& diff, const ParamVector& params, double time,
                                const Mat& points, const std::vector<double>& weights,
                                std::vector<double>* grad_accum = nullptr,
                                double grad_scale = 1.0) {
  const bool inline_weights = weights.empty();
  if (!inline_weights && points.rows() != static_cast<int>(weights.size()))
    throw DimensionMismatch("pde_residual_term: points/weights mismatch");
  for (double w : weights)
    if (!(w >= 0.0)) throw std::invalid_argument("pde_residual_term: negative weight");
  const int d = map_model.dim;
  const int n = points.rows();
  if (n == 0) return 0.0;
  std::vector<double> chunk_value(kShardChunks, 0.0);
  std::vector<std::vector<double>> chunk_grad(
      grad_accum ? static_cast<size_t>(kShardChunks) : 0);
  parallel_chunks(n, kShardChunks, [&](int ci, int lo, int hi) {
    Tape t(&params);
    std::vector<double> x(static_cast<size_t>(d));
    auto* cg = grad_accum ? &chunk_grad[static_cast<size_t>(ci)] : nullptr;
    if (cg) cg->assign(static_cast<size_t>(params.size()), 0.0);
    for (int i = lo; i < hi; ++i) {
      for (int c = 0; c < d; ++c) x[static_cast<size_t>(c)] = points(i, c);
      t.clear();
      const auto bundle = record_flux_bundle(t, map_model, x, time);
      const auto grad_psi = record_potential_gradient(t, pot, x);
      const auto d_mat = record_diffusion(t, diff);
      const Var rho = t.exp_(bundle.log_rho);
      std::vector<Var> grad_rho(static_cast<size_t>(d));
      for (int j = 0; j < d; ++j)
        grad_rho[static_cast<size_t>(j)] = t.mul(rho, bundle.grad_log_rho[static_cast<size_t>(j)]);
      Var res;
      for (int j = 0; j < d; ++j) {
        Var f = t.add(bundle.flux[static_cast<size_t>(j)],
                      t.mul(rho, grad_psi[static_cast<size_t>(j)]));
        for (int c = 0; c < d; ++c)
          f = t.add(f, t.mul(d_mat.at(j, c), grad_rho[static_cast<size_t>(c)]));
        Var f2 = t.square(f);
        res = res.valid() ? t.add(res, f2) : f2;
      }
      const double w = inline_weights ? std::exp(-t.val(bundle.log_rho)) / n
                                      : weights[static_cast<size_t>(i)];
      const Var weighted = t.mul_c(res, w);
      const double v = t.val(weighted);
      if (!std::isfinite(v)) throw NonFiniteValue("pde_residual_term: non-finite residual");
      chunk_value[static_cast<size_t>(ci)] += v;
      if (cg) {
        t.backward(weighted);
        const auto g = t.param_gradient();
        for (size_t s = 0; s < g.size(); ++s) (*cg)[s] += grad_scale * g[s];
      }
    }
  });
  double value = 0.0;
  for (int c = 0; c < kShardChunks; ++c) {
    value += chunk_value[static_cast<size_t>(c)];
    if (grad_accum && !chunk_grad[static_cast<size_t>(c)].empty())
      for (size_t i = 0; i < grad_accum->size(); ++i)
        (*grad_accum)[i] += chunk_grad[static_cast<size_t>(c)][i];
  }
  return value;
}

/// Deterministic objective: NLL + lambda * sum over snapshots of the flux
/// residual. Batch and PDE points are functions of epoch_seed only.
inline double total_loss(const TriangularMapModel& map_model, const PotentialModel& pot,
                         const DiffusionModel& diff, const SnapshotDataset& ds,
                         const ParamVector& params, const LossConfig& cfg, uint64_t epoch_seed,
                         std::vector<double>* grad_accum = nullptr) {
  cfg.validate();
  if (grad_accum) grad_accum->assign(static_cast<size_t>(params.size()), 0.0);
  const auto batch = select_batch(ds, cfg, epoch_seed);
  double loss = nll_term(map_model, ds, params, batch, grad_accum);
  if (cfg.lambda > 0.0) {
    static const std::vector<double> kInlineWeights;  // DataImportance fast path
    for (int s = 0; s < static_cast<int>(ds.snapshots.size()); ++s) {
      const uint64_t pde_seed = RandomEngine::derive_seed(epoch_seed, 0x2000 + static_cast<uint64_t>(s));
      double term;
      if (cfg.pde_sampler == PdeSampler::DataImportance) {
        const Mat pts = pde_sample_points(ds, s, cfg.n_pde_points, pde_seed);
        term = pde_residual_term(map_model, pot, diff, params,
                                 ds.snapshots[static_cast<size_t>(s)].time, pts, kInlineWeights,
                                 grad_accum, cfg.lambda);
      } else {
        const auto pts = pde_points(map_model, ds, s, cfg, params, pde_seed);
        term = pde_residual_term(map_model, pot, diff, params,
                                 ds.snapshots[static_cast<size_t>(s)].time, pts.points,
                                 pts.weights, grad_accum, cfg.lambda);
      }
      loss += cfg.lambda * term;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainReport {
  int start_epoch = 0;  // first epoch index covered by the curves (resume)
  std::vector<double> loss_curve;
  std::vector<std::string> theta2_names;
  std::vector<std::vector<double>> theta2_trajectory;  // one row per epoch
  std::vector<double> min_diffusion_eig;
  int epochs_run = 0;
  bool aborted = false;
  std::string abort_reason;
  double wall_clock_seconds = 0.0;
  LossConfig config;
  ParamVector final_params;
};

/// Optimizer state carried across checkpoint/resume boundaries.
struct FitState {
  AdamState adam;
  int next_epoch = 0;
};

inline TrainReport fit(const SnapshotDataset& ds, const TriangularMapModel& map_model,
                       const PotentialModel& pot, const DiffusionModel& diff, ParamVector& params,
                       const LossConfig& cfg, FitState* state = nullptr,
                       std::ostream* log = nullptr) {
  cfg.validate();
  ds.validate();
  if (ds.dim != map_model.dim) throw DimensionMismatch("fit: dataset dim != map dim");
  const auto t_start = std::chrono::steady_clock::now();

  FitState local;
  FitState& st = state ? *state : local;
  if (st.adam.m1.size() != static_cast<size_t>(params.size()))
    st.adam.reset(static_cast<size_t>(params.size()));

  TrainReport report;
  report.config = cfg;
  report.start_epoch = st.next_epoch;
  const auto named = theta2_slots(pot, diff);
  for (const auto& ns : named) report.theta2_names.push_back(ns.name);

  std::vector<double> grad;
  ParamVector last_good = params;
  AdamState last_good_adam = st.adam;

  for (int epoch = st.next_epoch; epoch < cfg.epochs; ++epoch) {
    const uint64_t epoch_seed = RandomEngine::derive_seed(cfg.seed, static_cast<uint64_t>(epoch));
    LossConfig epoch_cfg = cfg;
    if (epoch < cfg.warmup_epochs) epoch_cfg.lambda = 0.0;  // density-only warm-up
    double loss;
    try {
      loss = total_loss(map_model, pot, diff, ds, params, epoch_cfg, epoch_seed, &grad);
    } catch (const NumericError& e) {
      params = last_good;
      st.adam = last_good_adam;
      report.aborted = true;
      report.abort_reason = e.what();
      break;
    }
    last_good = params;
    last_good_adam = st.adam;

    report.loss_curve.push_back(loss);
    report.theta2_trajectory.push_back(theta2_values(pot, diff, params));
    const double min_eig = min_eigenvalue(diffusion_matrix(diff, params));
    report.min_diffusion_eig.push_back(min_eig);
    if (min_eig < 0.0 && log)
      (*log) << "[fit] warning: diffusion tensor not PSD at epoch " << epoch
             << " (min eig " << min_eig << ")\n";

    adam_step(st.adam, std::span<double>(params.data(), static_cast<size_t>(params.size())), grad,
              cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    st.next_epoch = epoch + 1;

    if (log && (epoch % 100 == 0 || epoch == cfg.epochs - 1)) {
      (*log) << "[fit] epoch " << epoch << " loss " << loss;
      if (!named.empty()) {
        (*log) << " theta2";
        for (size_t i = 0; i < named.size() && i < 8; ++i) (*log) << ' ' << params[named[i].slot];
      }
      (*log) << '\n';
    }
  }
  report.epochs_run = st.next_epoch;
  report.final_params = params;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace fpflow
