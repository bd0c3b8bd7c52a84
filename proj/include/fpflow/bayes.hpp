#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/dynamics.hpp"
#include "fpflow/params.hpp"
#include "fpflow/training.hpp"
#include "fpflow/transport_map.hpp"

namespace fpflow {

// ---------------------------------------------------------------------------
// Mean-field Gaussian posterior surrogate
// ---------------------------------------------------------------------------

struct MeanFieldPosterior {
  std::vector<double> mu;
  std::vector<double> log_sigma;

  size_t size() const { return mu.size(); }

  void check() const {
    if (mu.size() != log_sigma.size())
      throw DimensionMismatch("MeanFieldPosterior: mu/log_sigma length mismatch");
  }
};

/// Closed-form KL between diagonal Gaussians, summed over coordinates.
inline double kl_diag_gaussians(const MeanFieldPosterior& q, std::span<const double> prior_mu,
                                std::span<const double> prior_sigma) {
  q.check();
  if (prior_mu.size() != q.size() || prior_sigma.size() != q.size())
    throw DimensionMismatch("kl_diag_gaussians: prior shape mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < q.size(); ++i) {
    const double sq = std::exp(q.log_sigma[i]);
    const double sp = prior_sigma[i];
    const double dm = q.mu[i] - prior_mu[i];
    kl += std::log(sp / sq) + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
  }
  return kl;
}

/// mu + exp(log_sigma) * eps with eps ~ N(0, I); deterministic per seed.
/// eps_out (optional) receives the draw so gradients can flow to (mu, sigma).
inline std::vector<double> reparam_sample(const MeanFieldPosterior& q, uint64_t seed,
                                          std::vector<double>* eps_out = nullptr) {
  q.check();
  RandomEngine rng(seed);
  std::vector<double> out(q.size());
  if (eps_out) eps_out->resize(q.size());
  for (size_t i = 0; i < q.size(); ++i) {
    const double eps = rng.normal();
    out[i] = q.mu[i] + std::exp(q.log_sigma[i]) * eps;
    if (eps_out) (*eps_out)[i] = eps;
  }
  return out;
}

/// Trainable scales of the two Gaussian pseudo-likelihoods.
struct LikelihoodScales {
  double log_sigma1 = 0.0;
  double log_sigma2 = 0.0;
};

// ---------------------------------------------------------------------------
// ELBO-style probabilistic loss
// ---------------------------------------------------------------------------

struct BayesConfig {
  int steps = 1500;
  double learning_rate = 1e-3;
  double beta1 = 0.8;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda = 0.1;
  double prior_sigma = 1.0;  // standard normal priors
  int nll_batch = 256;       // per snapshot
  int n_pde_points = 256;    // per snapshot
  uint64_t seed = 0;

  void validate() const {
    if (steps <= 0) throw InvalidConfig("bayes: steps must be positive");
    if (!(prior_sigma > 0.0)) throw InvalidConfig("bayes: prior sigma must be positive");
  }
};

/// Slot bookkeeping: which ParamVector slots form Theta_1 and Theta_2.
struct ThetaSlots {
  std::vector<int> theta1;
  std::vector<int> theta2;

  static ThetaSlots from_models(const TriangularMapModel& map_model, const PotentialModel& pot,
                                const DiffusionModel& diff, const ParamVector& params) {
    ThetaSlots s;
    for (int k = 1; k <= map_model.dim; ++k) {
      const auto& comp = map_model.components[static_cast<size_t>(k) - 1];
      const bool is_mlp = comp.kind == TriangularMapModel::ComponentKind::Mlp;
      const int off = is_mlp ? comp.mlp.offset : comp.lin_offset;
      const int len = is_mlp ? comp.mlp.spec.param_count() : k + 2;
      for (int i = 0; i < len; ++i) s.theta1.push_back(off + i);
    }
    for (int i = 0; i < pot.param_count(); ++i) s.theta2.push_back(pot.offset + i);
    for (int i = 0; i < diff.param_count(); ++i) s.theta2.push_back(diff.offset + i);
    (void)params;
    return s;
  }
};

struct ElboTerms {
  double loss = 0.0;
  double nll_stat = 0.0;  // shifted data statistic fed into N(.|0, sigma1)
  double pde_stat = 0.0;  // shifted PDE statistic fed into N(.|L*, sigma2)
  double raw_nll = 0.0;   // unshifted statistics, for the running minima
  double raw_pde = 0.0;
  double kl1 = 0.0;
  double kl2 = 0.0;
};

struct ElboGradients {
  std::vector<double> mu1, log_sigma1;
  std::vector<double> mu2, log_sigma2;
  double scale1 = 0.0, scale2 = 0.0;
};

namespace detail {

inline constexpr double kHalfLog2Pi = 0.9189385332046727;  // log(2*pi)/2

/// -log N(s | 0, sigma) with sigma = exp(log_sigma).
inline double gauss_penalty(double s, double log_sigma) {
  const double inv_var = std::exp(-2.0 * log_sigma);
  return kHalfLog2Pi + log_sigma + 0.5 * s * s * inv_var;
}

}  // namespace detail

/// One single-sample reparameterized evaluation of the probabilistic loss
///   {KL(Q1||P1) - log N(data stat | 0, s1)} + lambda {KL(Q2||P2) - log N(PDE stat | L*, s2)}
/// The PDE statistic freezes the deterministic Theta_1 (det_params) and only
/// samples Theta_2 through Q2. Gradients (optional) are assembled from the
/// tape gradients of the two statistics via the reparameterization chain.
inline ElboTerms elbo_loss(const TriangularMapModel& map_model, const PotentialModel& pot,
                           const DiffusionModel& diff, const SnapshotDataset& ds,
                           const MeanFieldPosterior& q1, const MeanFieldPosterior& q2,
                           const LikelihoodScales& scales, const ParamVector& det_params,
                           const ThetaSlots& slots, const BayesConfig& cfg, double nll_floor,
                           double pde_floor, uint64_t seed, ElboGradients* grads = nullptr) {
  cfg.validate();
  if (q1.size() != slots.theta1.size() || q2.size() != slots.theta2.size())
    throw DimensionMismatch("elbo_loss: posterior size does not match slot count");

  const std::vector<double> prior_mu1(q1.size(), 0.0), prior_s1(q1.size(), cfg.prior_sigma);
  const std::vector<double> prior_mu2(q2.size(), 0.0), prior_s2(q2.size(), cfg.prior_sigma);

  ElboTerms out;
  out.kl1 = kl_diag_gaussians(q1, prior_mu1, prior_s1);
  out.kl2 = kl_diag_gaussians(q2, prior_mu2, prior_s2);

  LossConfig batch_cfg;
  batch_cfg.minibatch = cfg.nll_batch;
  batch_cfg.full_batch_threshold = cfg.nll_batch;  // always subsample to nll_batch
  batch_cfg.n_pde_points = cfg.n_pde_points;
  batch_cfg.seed = cfg.seed;

  // ---- data branch: Theta_1 ~ Q1 ----
  std::vector<double> eps1;
  const auto theta1 = reparam_sample(q1, RandomEngine::derive_seed(seed, 11), &eps1);
  ParamVector work = det_params;
  for (size_t i = 0; i < slots.theta1.size(); ++i) work[slots.theta1[i]] = theta1[i];
  const auto batch = select_batch(ds, batch_cfg, RandomEngine::derive_seed(seed, 12));
  std::vector<double> g_work;
  std::vector<double>* g_nll = grads ? &g_work : nullptr;
  if (g_nll) g_nll->assign(static_cast<size_t>(work.size()), 0.0);
  const double nll = nll_term(map_model, ds, work, batch, g_nll);
  out.raw_nll = nll;
  out.nll_stat = std::max(nll - nll_floor, 0.0);
  const double pen1 = detail::gauss_penalty(out.nll_stat, scales.log_sigma1);

  if (grads) {
    grads->mu1.assign(q1.size(), 0.0);
    grads->log_sigma1.assign(q1.size(), 0.0);
    const double inv_var1 = std::exp(-2.0 * scales.log_sigma1);
    const double ds_dnll = out.nll_stat > 0.0 ? out.nll_stat * inv_var1 : 0.0;
    for (size_t i = 0; i < q1.size(); ++i) {
      const double g_theta = ds_dnll * (*g_nll)[slots.theta1[i]];
      const double sq = std::exp(q1.log_sigma[i]);
      grads->mu1[i] = g_theta + (q1.mu[i] - prior_mu1[i]) / (cfg.prior_sigma * cfg.prior_sigma);
      grads->log_sigma1[i] = g_theta * eps1[i] * sq +
                             (sq * sq / (cfg.prior_sigma * cfg.prior_sigma) - 1.0);
    }
    grads->scale1 = 1.0 - out.nll_stat * out.nll_stat * inv_var1;
  }

  // ---- PDE branch: Theta_2 ~ Q2, Theta_1 frozen at det_params ----
  std::vector<double> eps2;
  const auto theta2 = reparam_sample(q2, RandomEngine::derive_seed(seed, 21), &eps2);
  ParamVector work2 = det_params;
  for (size_t i = 0; i < slots.theta2.size(); ++i) work2[slots.theta2[i]] = theta2[i];
  std::vector<double>* g_pde = grads ? &g_work : nullptr;
  if (g_pde) g_pde->assign(static_cast<size_t>(work2.size()), 0.0);
  double pde_sum = 0.0;
  for (int s = 0; s < static_cast<int>(ds.snapshots.size()); ++s) {
    const auto pts = pde_points(map_model, ds, s, batch_cfg, work2,
                                RandomEngine::derive_seed(seed, 0x300 + static_cast<uint64_t>(s)));
    pde_sum += pde_residual_term(map_model, pot, diff, work2,
                                 ds.snapshots[static_cast<size_t>(s)].time, pts.points,
                                 pts.weights, g_pde, 1.0);
  }
  out.raw_pde = pde_sum;
  out.pde_stat = pde_sum - pde_floor;
  const double pen2 = detail::gauss_penalty(out.pde_stat, scales.log_sigma2);

  if (grads) {
    grads->mu2.assign(q2.size(), 0.0);
    grads->log_sigma2.assign(q2.size(), 0.0);
    const double inv_var2 = std::exp(-2.0 * scales.log_sigma2);
    const double ds_dpde = out.pde_stat * inv_var2;
    for (size_t i = 0; i < q2.size(); ++i) {
      const double g_theta = cfg.lambda * ds_dpde * (*g_pde)[slots.theta2[i]];
      const double sq = std::exp(q2.log_sigma[i]);
      grads->mu2[i] = g_theta + cfg.lambda * (q2.mu[i] - prior_mu2[i]) /
                                    (cfg.prior_sigma * cfg.prior_sigma);
      grads->log_sigma2[i] = g_theta * eps2[i] * sq +
                             cfg.lambda * (sq * sq / (cfg.prior_sigma * cfg.prior_sigma) - 1.0);
    }
    grads->scale2 = cfg.lambda * (1.0 - out.pde_stat * out.pde_stat * inv_var2);
  }

  out.loss = out.kl1 + pen1 + cfg.lambda * (out.kl2 + pen2);
  return out;
}

// ---------------------------------------------------------------------------
// Bayesian training
// ---------------------------------------------------------------------------

struct BayesReport {
  std::vector<std::string> theta2_names;
  std::vector<double> posterior_mean;
  std::vector<double> posterior_std;
  std::vector<double> loss_curve;  // probabilistic loss (negative-ELBO surrogate)
  MeanFieldPosterior q1, q2;
  LikelihoodScales scales;
  double nll_floor = 0.0;
  double pde_floor = 0.0;
  int steps_run = 0;
  double wall_clock_seconds = 0.0;
  BayesConfig config;
};

/// Variational fit initialized from a deterministic training run. The
/// posterior means start at the deterministic parameters; sigmas start small
/// and the running minima of both statistics serve as the likelihood centers.
inline BayesReport bayes_fit(const SnapshotDataset& ds, const TriangularMapModel& map_model,
                             const PotentialModel& pot, const DiffusionModel& diff,
                             const ParamVector& det_params, const BayesConfig& cfg,
                             std::ostream* log = nullptr) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const auto slots = ThetaSlots::from_models(map_model, pot, diff, det_params);

  auto init_posterior = [&](const std::vector<int>& which) {
    MeanFieldPosterior q;
    q.mu.reserve(which.size());
    q.log_sigma.reserve(which.size());
    for (int s : which) {
      q.mu.push_back(det_params[s]);
      q.log_sigma.push_back(std::log(0.01 * (std::abs(det_params[s]) + 0.1)));
    }
    return q;
  };
  MeanFieldPosterior q1 = init_posterior(slots.theta1);
  MeanFieldPosterior q2 = init_posterior(slots.theta2);
  LikelihoodScales scales;

  // floors: deterministic values of both statistics at the initialization
  LossConfig stat_cfg;
  stat_cfg.minibatch = cfg.nll_batch;
  stat_cfg.full_batch_threshold = cfg.nll_batch;
  stat_cfg.n_pde_points = cfg.n_pde_points;
  double nll_floor;
  double pde_floor = 0.0;
  {
    const auto batch = select_batch(ds, stat_cfg, RandomEngine::derive_seed(cfg.seed, 991));
    nll_floor = nll_term(map_model, ds, det_params, batch);
    for (int s = 0; s < static_cast<int>(ds.snapshots.size()); ++s) {
      const auto pts = pde_points(map_model, ds, s, stat_cfg, det_params,
                                  RandomEngine::derive_seed(cfg.seed, 0x400 + static_cast<uint64_t>(s)));
      pde_floor += pde_residual_term(map_model, pot, diff, det_params,
                                     ds.snapshots[static_cast<size_t>(s)].time, pts.points,
                                     pts.weights);
    }
  }

  // flat optimization vector: [mu1 | logsig1 | mu2 | logsig2 | s1 | s2]
  const size_t n1 = q1.size(), n2 = q2.size();
  std::vector<double> flat(2 * n1 + 2 * n2 + 2, 0.0);
  auto pack = [&] {
    std::copy(q1.mu.begin(), q1.mu.end(), flat.begin());
    std::copy(q1.log_sigma.begin(), q1.log_sigma.end(), flat.begin() + static_cast<long>(n1));
    std::copy(q2.mu.begin(), q2.mu.end(), flat.begin() + static_cast<long>(2 * n1));
    std::copy(q2.log_sigma.begin(), q2.log_sigma.end(),
              flat.begin() + static_cast<long>(2 * n1 + n2));
    flat[2 * n1 + 2 * n2] = scales.log_sigma1;
    flat[2 * n1 + 2 * n2 + 1] = scales.log_sigma2;
  };
  auto unpack = [&] {
    std::copy(flat.begin(), flat.begin() + static_cast<long>(n1), q1.mu.begin());
    std::copy(flat.begin() + static_cast<long>(n1), flat.begin() + static_cast<long>(2 * n1),
              q1.log_sigma.begin());
    std::copy(flat.begin() + static_cast<long>(2 * n1),
              flat.begin() + static_cast<long>(2 * n1 + n2), q2.mu.begin());
    std::copy(flat.begin() + static_cast<long>(2 * n1 + n2),
              flat.begin() + static_cast<long>(2 * n1 + 2 * n2), q2.log_sigma.begin());
    scales.log_sigma1 = flat[2 * n1 + 2 * n2];
    scales.log_sigma2 = flat[2 * n1 + 2 * n2 + 1];
  };
  pack();

  AdamState adam;
  adam.reset(flat.size());
  BayesReport report;
  report.config = cfg;
  std::vector<double> grad(flat.size(), 0.0);
  ElboGradients eg;

  for (int step = 0; step < cfg.steps; ++step) {
    unpack();
    const uint64_t step_seed = RandomEngine::derive_seed(cfg.seed, 0x9000 + static_cast<uint64_t>(step));
    const auto terms = elbo_loss(map_model, pot, diff, ds, q1, q2, scales, det_params, slots, cfg,
                                 nll_floor, pde_floor, step_seed, &eg);
    report.loss_curve.push_back(terms.loss);
    // running minima tighten the likelihood centers
    nll_floor = std::min(nll_floor, terms.raw_nll);
    pde_floor = std::min(pde_floor, terms.raw_pde);

    std::copy(eg.mu1.begin(), eg.mu1.end(), grad.begin());
    std::copy(eg.log_sigma1.begin(), eg.log_sigma1.end(), grad.begin() + static_cast<long>(n1));
    std::copy(eg.mu2.begin(), eg.mu2.end(), grad.begin() + static_cast<long>(2 * n1));
    std::copy(eg.log_sigma2.begin(), eg.log_sigma2.end(),
              grad.begin() + static_cast<long>(2 * n1 + n2));
    grad[2 * n1 + 2 * n2] = eg.scale1;
    grad[2 * n1 + 2 * n2 + 1] = eg.scale2;
    adam_step(adam, flat, grad, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    report.steps_run = step + 1;
    if (log && step % 100 == 0)
      (*log) << "[bayes] step " << step << " loss " << terms.loss << " nll_stat "
             << terms.nll_stat << " pde_stat " << terms.pde_stat << "\n";
  }
  unpack();

  report.q1 = q1;
  report.q2 = q2;
  report.scales = scales;
  report.nll_floor = nll_floor;
  report.pde_floor = pde_floor;
  const auto named = theta2_slots(pot, diff);
  auto q2_index = [&](int slot) {
    const auto it = std::find(slots.theta2.begin(), slots.theta2.end(), slot);
    return static_cast<size_t>(it - slots.theta2.begin());
  };
  for (size_t i = 0; i < named.size(); ++i) {
    report.theta2_names.push_back(named[i].name);
    if (diff.kind == DiffusionModel::Kind::FullSymmetric && named[i].slot >= diff.offset &&
        named[i].slot < diff.offset + diff.dim * diff.dim) {
      // posterior of the exposed tensor entry (D_rc + D_cr)/2
      const int local = named[i].slot - diff.offset;
      const int r = local / diff.dim, c = local % diff.dim;
      const size_t a = q2_index(diff.offset + r * diff.dim + c);
      const size_t b = q2_index(diff.offset + c * diff.dim + r);
      report.posterior_mean.push_back(0.5 * (q2.mu[a] + q2.mu[b]));
      const double va = std::exp(2.0 * q2.log_sigma[a]), vb = std::exp(2.0 * q2.log_sigma[b]);
      report.posterior_std.push_back(a == b ? std::exp(q2.log_sigma[a])
                                            : 0.5 * std::sqrt(va + vb));
    } else {
      const size_t idx = q2_index(named[i].slot);
      report.posterior_mean.push_back(q2.mu[idx]);
      report.posterior_std.push_back(std::exp(q2.log_sigma[idx]));
    }
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace fpflow
