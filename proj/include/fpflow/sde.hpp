#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/dynamics.hpp"
#include "fpflow/params.hpp"

namespace fpflow {

// ---------------------------------------------------------------------------
// Gaussian mixture initial conditions
// ---------------------------------------------------------------------------

struct GaussianMixture {
  struct Component {
    double weight = 1.0;
    std::vector<double> mean;
    Mat cov;
  };

  std::vector<Component> components;

  int dim() const { return components.empty() ? 0 : static_cast<int>(components[0].mean.size()); }

  void validate() const {
    if (components.empty()) throw InvalidConfig("mixture: no components");
    double sum = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0)) throw InvalidConfig("mixture: weights must be positive");
      if (static_cast<int>(c.mean.size()) != dim() || c.cov.rows() != dim() ||
          c.cov.cols() != dim())
        throw DimensionMismatch("mixture: inconsistent component dims");
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidConfig("mixture: weights must sum to 1");
  }

  static GaussianMixture standard_normal(int d) {
    GaussianMixture gm;
    gm.components.push_back({1.0, std::vector<double>(static_cast<size_t>(d), 0.0),
                             Mat::identity(d)});
    return gm;
  }

  /// Four equally weighted components with means (+-2, +-2) and the four
  /// covariance matrices used by the 2D experiments.
  static GaussianMixture four_wells_2d() {
    auto cov = [](double a, double b) {
      Mat m(2, 2);
      m(0, 0) = a;
      m(1, 1) = b;
      return m;
    };
    GaussianMixture gm;
    gm.components.push_back({0.25, {2.0, 2.0}, cov(1.0, 1.0)});
    gm.components.push_back({0.25, {-2.0, 2.0}, cov(2.0, 0.5)});
    gm.components.push_back({0.25, {-2.0, -2.0}, cov(0.5, 1.0)});
    gm.components.push_back({0.25, {2.0, -2.0}, cov(1.0, 2.0)});
    return gm;
  }
};

/// N x d i.i.d. draws: categorical over weights, then Cholesky transform.
inline Mat sample_mixture(const GaussianMixture& gm, int n, uint64_t seed) {
  gm.validate();
  if (n <= 0) throw InvalidConfig("sample_mixture: n must be positive");
  const int d = gm.dim();
  std::vector<double> weights;
  std::vector<Mat> chol;
  for (const auto& c : gm.components) {
    weights.push_back(c.weight);
    chol.push_back(cholesky(c.cov));  // throws CholeskyFailure if not SPD
  }
  RandomEngine rng(seed);
  Mat out(n, d);
  std::vector<double> z(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    const int c = rng.categorical(weights);
    for (int j = 0; j < d; ++j) z[static_cast<size_t>(j)] = rng.normal();
    const auto& L = chol[static_cast<size_t>(c)];
    const auto& mu = gm.components[static_cast<size_t>(c)].mean;
    for (int r = 0; r < d; ++r) {
      double v = mu[static_cast<size_t>(r)];
      for (int k = 0; k <= r; ++k) v += L(r, k) * z[static_cast<size_t>(k)];
      out(i, r) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SDE problem and Euler-Maruyama integration
// ---------------------------------------------------------------------------

/// dX = -grad Psi(X) dt + sigma dB, with D_true = sigma sigma^T / 2.
struct SdeProblem {
  int dim = 1;
  PotentialModel potential;
  ParamVector truth;  // ground-truth potential parameters
  Mat sigma;

  /// sigma for a target diffusion tensor: symmetric PSD root of 2 D.
  static Mat sigma_for_diffusion(const Mat& d_true) {
    Mat twice = d_true;
    for (int r = 0; r < twice.rows(); ++r)
      for (int c = 0; c < twice.cols(); ++c) twice(r, c) *= 2.0;
    return symmetric_sqrt(twice);
  }
};

namespace detail {

inline int step_count(double t_span, double dt) {
  if (!(dt > 0.0)) throw InvalidConfig("euler_maruyama: dt must be positive");
  const double steps = t_span / dt;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps))
    throw InvalidConfig("euler_maruyama: time span is not a multiple of dt");
  return static_cast<int>(rounded);
}

inline void em_steps(const SdeProblem& prob, Mat& x, int n_steps, double dt, RandomEngine& rng) {
  const int d = prob.dim;
  const double sq_dt = std::sqrt(dt);
  std::vector<double> xi(static_cast<size_t>(d)), noise(static_cast<size_t>(d));
  std::vector<double> point(static_cast<size_t>(d));
  const bool has_noise = [&] {
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        if (prob.sigma(r, c) != 0.0) return true;
    return false;
  }();
  for (int s = 0; s < n_steps; ++s) {
    for (int i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < d; ++j) point[static_cast<size_t>(j)] = x(i, j);
      const auto g = potential_gradient(prob.potential, point, prob.truth);
      if (has_noise) {
        for (int j = 0; j < d; ++j) xi[static_cast<size_t>(j)] = rng.normal();
        for (int r = 0; r < d; ++r) {
          double v = 0.0;
          for (int c = 0; c < d; ++c) v += prob.sigma(r, c) * xi[static_cast<size_t>(c)];
          noise[static_cast<size_t>(r)] = v;
        }
      }
      for (int j = 0; j < d; ++j) {
        double v = x(i, j) - g[static_cast<size_t>(j)] * dt;
        if (has_noise) v += sq_dt * noise[static_cast<size_t>(j)];
        if (!(std::abs(v) < 1e6))
          throw BlowUp("euler_maruyama: particle left [-1e6, 1e6]; dt too large?");
        x(i, j) = v;
      }
    }
  }
}

}  // namespace detail

/// Integrates all particles from t=0 to t_end and returns the final state.
inline Mat euler_maruyama(const SdeProblem& prob, const Mat& x0, double t_end, double dt,
                          uint64_t seed) {
  if (x0.cols() != prob.dim) throw DimensionMismatch("euler_maruyama: state dim");
  Mat x = x0;
  RandomEngine rng(seed);
  detail::em_steps(prob, x, detail::step_count(t_end, dt), dt, rng);
  return x;
}

// ---------------------------------------------------------------------------
// Snapshot dataset
// ---------------------------------------------------------------------------

struct SnapshotDataset {
  struct Snapshot {
    double time = 0.0;
    Mat samples;  // N x d
  };

  int dim = 0;
  std::vector<Snapshot> snapshots;

  void validate() const {
    double prev = -1.0;
    for (const auto& s : snapshots) {
      if (s.time <= prev) throw InvalidConfig("dataset: snapshot times must be increasing");
      if (s.samples.cols() != dim) throw DimensionMismatch("dataset: snapshot dim mismatch");
      if (!s.samples.finite()) throw NonFiniteValue("dataset: non-finite sample");
      prev = s.time;
    }
  }

  int total_samples() const {
    int n = 0;
    for (const auto& s : snapshots) n += s.samples.rows();
    return n;
  }
};

/// One integration pass recording the particle matrix at every requested
/// time. The snapshot at t=0 is the raw mixture draw.
inline SnapshotDataset generate_dataset(const SdeProblem& prob, const GaussianMixture& gm,
                                        int n_samples, const std::vector<double>& times,
                                        double dt, uint64_t seed) {
  if (times.empty() || times[0] != 0.0)
    throw InvalidConfig("generate_dataset: times must start at 0");
  for (size_t i = 1; i < times.size(); ++i)
    if (times[i] <= times[i - 1]) throw InvalidConfig("generate_dataset: times must be ascending");
  if (gm.dim() != prob.dim) throw DimensionMismatch("generate_dataset: mixture dim");

  SnapshotDataset ds;
  ds.dim = prob.dim;
  Mat x = sample_mixture(gm, n_samples, RandomEngine::derive_seed(seed, 1));
  ds.snapshots.push_back({0.0, x});
  RandomEngine rng(RandomEngine::derive_seed(seed, 2));
  for (size_t i = 1; i < times.size(); ++i) {
    const int steps = detail::step_count(times[i] - times[i - 1], dt);
    detail::em_steps(prob, x, steps, dt, rng);
    ds.snapshots.push_back({times[i], x});
  }
  ds.validate();
  return ds;
}

}  // namespace fpflow
