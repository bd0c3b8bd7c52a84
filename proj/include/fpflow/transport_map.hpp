#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/map_jet.hpp"
#include "fpflow/mlp.hpp"
#include "fpflow/params.hpp"
#include "fpflow/tape.hpp"

namespace fpflow {

// ---------------------------------------------------------------------------
// Reference density: standard Gaussian.
// ---------------------------------------------------------------------------

struct ReferenceDensity {
  int dim = 1;

  double log_density(std::span<const double> y) const {
    double q = 0.0;
    for (double v : y) q += v * v;
    return -0.5 * dim * std::log(2.0 * M_PI) - 0.5 * q;
  }

  Var log_density(Tape& t, std::span<const Var> y) const {
    Var q = t.square(y[0]);
    for (size_t i = 1; i < y.size(); ++i) q = t.add(q, t.square(y[i]));
    return t.add_c(t.mul_c(q, -0.5), -0.5 * dim * std::log(2.0 * M_PI));
  }
};

// ---------------------------------------------------------------------------
// Composite Simpson quadrature of int_0^x f, signed for x < 0.
// ---------------------------------------------------------------------------

inline void check_partitions(int n) {
  if (n < 2 || n % 2 != 0)
    throw OddPartitionCount("simpson: partition count must be even and >= 2");
}

template <class F>
double simpson_0_to_x(F&& f, double x, int n) {
  check_partitions(n);
  const double h = x / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) acc += jet::simpson_weight(i, n) * f(i * h);
  return h / 3.0 * acc;
}

/// Tape-recorded variant; f maps (Tape&, Var y) -> Var.
template <class F>
Var simpson_0_to_x(Tape& t, F&& f, Var x, int n) {
  check_partitions(n);
  Var h3 = t.mul_c(x, 1.0 / (3.0 * n));
  Var acc;
  for (int i = 0; i <= n; ++i) {
    Var y = t.mul_c(x, static_cast<double>(i) / n);
    Var term = f(t, y);
    const double w = jet::simpson_weight(i, n);
    if (w != 1.0) term = t.mul_c(term, w);
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return t.mul(h3, acc);
}

// ---------------------------------------------------------------------------
// Triangular map model
// ---------------------------------------------------------------------------

/// Monotone triangular map trajectory S(x,t). Component k is either a
/// feed-forward network f_k (production) or an affine function (closed-form
/// constructions in tests and oracles). Linear component parameters are laid
/// out as [a_1..a_k, a_t, b].
struct TriangularMapModel {
  enum class ComponentKind { Mlp, Linear };

  struct Component {
    ComponentKind kind = ComponentKind::Mlp;
    MlpHandle mlp;
    int lin_offset = -1;
  };

  int dim = 1;
  int n_quad = 20;
  std::vector<Component> components;  // index k-1

  static TriangularMapModel mlp(ParamVector& params, int dim, uint64_t seed,
                                const std::string& prefix = "map", int hidden_layers = 5,
                                int hidden_width = 5, int n_quad = 20) {
    TriangularMapModel m;
    m.dim = dim;
    m.n_quad = n_quad;
    for (int k = 1; k <= dim; ++k) {
      MlpSpec spec;
      spec.input_dim = k + 1;
      spec.hidden_layers = hidden_layers;
      spec.hidden_width = hidden_width;
      Component c;
      c.kind = ComponentKind::Mlp;
      c.mlp = register_mlp(params, prefix + ".f" + std::to_string(k), spec,
                           RandomEngine::derive_seed(seed, static_cast<uint64_t>(k)));
      m.components.push_back(c);
    }
    return m;
  }

  /// Affine components: S_k = b + sum_j a_j x_j + a_t t + softplus(a_k) x_k.
  static TriangularMapModel linear(ParamVector& params, int dim,
                                   const std::string& prefix = "linmap", int n_quad = 20) {
    TriangularMapModel m;
    m.dim = dim;
    m.n_quad = n_quad;
    for (int k = 1; k <= dim; ++k) {
      Component c;
      c.kind = ComponentKind::Linear;
      c.lin_offset = params.add_segment(prefix + ".f" + std::to_string(k), k + 2);
      m.components.push_back(c);
    }
    return m;
  }
};

/// Tape-level jet of one component at one point.
struct ComponentJet {
  Var value;               // S_k
  std::vector<Var> dx;     // dS_k/dx_j, j = 1..k
  Var dt;                  // Flux mode
  std::vector<Var> ddiag;  // d(dS_k/dx_k)/dx_j, Flux mode
};

inline ComponentJet record_component_jet(Tape& t, const TriangularMapModel& model, int k,
                                         std::span<const double> x, double time,
                                         jet::JetMode mode) {
  if (static_cast<int>(x.size()) < k) throw DimensionMismatch("component jet: |x| < k");
  const auto& comp = model.components[static_cast<size_t>(k) - 1];
  ComponentJet out;
  const bool full = mode == jet::JetMode::Flux;
  if (comp.kind == TriangularMapModel::ComponentKind::Mlp) {
    std::vector<double> xk(x.begin(), x.begin() + k);
    Var host = t.custom(std::make_unique<MapComponentJetOp>(comp.mlp.spec, comp.mlp.offset, k, xk,
                                                            time, model.n_quad, mode));
    out.value = t.custom_out(host, 0);
    out.dx.assign(static_cast<size_t>(k), Var{});
    if (mode == jet::JetMode::Density) {
      out.dx[static_cast<size_t>(k) - 1] = t.custom_out(host, 1);
    } else {
      for (int j = 0; j < k; ++j) out.dx[static_cast<size_t>(j)] = t.custom_out(host, 1 + j);
      out.dt = t.custom_out(host, 1 + k);
      out.ddiag.assign(static_cast<size_t>(k), Var{});
      for (int j = 0; j < k; ++j) out.ddiag[static_cast<size_t>(j)] = t.custom_out(host, 2 + k + j);
    }
    return out;
  }
  // affine component, scalar ops; params stay differentiable
  const int off = comp.lin_offset;
  Var acc = t.param(off + k + 1);  // bias
  for (int j = 0; j < k - 1; ++j)
    acc = t.add(acc, t.mul_c(t.param(off + j), x[static_cast<size_t>(j)]));
  acc = t.add(acc, t.mul_c(t.param(off + k), time));  // a_t * t
  Var diag = t.softplus_(t.param(off + k - 1));
  out.value = t.add(acc, t.mul_c(diag, x[static_cast<size_t>(k) - 1]));
  out.dx.assign(static_cast<size_t>(k), Var{});
  out.dx[static_cast<size_t>(k) - 1] = diag;
  if (full) {
    for (int j = 0; j < k - 1; ++j) out.dx[static_cast<size_t>(j)] = t.param(off + j);
    out.dt = t.param(off + k);
    out.ddiag.assign(static_cast<size_t>(k), Var{});
    for (int j = 0; j < k; ++j) out.ddiag[static_cast<size_t>(j)] = t.constant(0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape-level map quantities
// ---------------------------------------------------------------------------

/// Everything the losses need at one (x, t); records d Flux-mode jets.
struct FluxBundle {
  std::vector<Var> map_value;      // S
  MatVar jacobian;                 // lower triangular
  std::vector<Var> dmap_dt;        // dS/dt
  Var log_eta;                     // log eta(S)
  Var log_rho;                     // log pullback density
  std::vector<Var> grad_log_rho;   // d log rho / d x_j
  std::vector<Var> flux;           // rho v = -eta(S) adj(grad S) dS/dt
};

inline std::vector<ComponentJet> record_map_jets(Tape& t, const TriangularMapModel& model,
                                                 std::span<const double> x, double time,
                                                 jet::JetMode mode) {
  if (static_cast<int>(x.size()) != model.dim)
    throw DimensionMismatch("map jets: |x| != dim");
  std::vector<ComponentJet> jets;
  jets.reserve(static_cast<size_t>(model.dim));
  for (int k = 1; k <= model.dim; ++k)
    jets.push_back(record_component_jet(t, model, k, x, time, mode));
  return jets;
}

/// log rho(x,t) = log eta(S) + sum_k log dS_k/dx_k. Density-mode jets.
inline Var record_log_pullback(Tape& t, const TriangularMapModel& model,
                               std::span<const double> x, double time) {
  const auto jets = record_map_jets(t, model, x, time, jet::JetMode::Density);
  std::vector<Var> s(jets.size());
  for (size_t k = 0; k < jets.size(); ++k) s[k] = jets[k].value;
  ReferenceDensity eta{model.dim};
  Var acc = eta.log_density(t, s);
  for (size_t k = 0; k < jets.size(); ++k) {
    const Var diag = jets[k].dx[k];
    if (!(t.val(diag) > 0.0))
      throw NonPositiveDiagonal("pullback: non-positive map diagonal");
    acc = t.add(acc, t.log_(diag));
  }
  return acc;
}

inline FluxBundle record_flux_bundle(Tape& t, const TriangularMapModel& model,
                                     std::span<const double> x, double time) {
  const int d = model.dim;
  const auto jets = record_map_jets(t, model, x, time, jet::JetMode::Flux);
  FluxBundle b;
  b.map_value.resize(static_cast<size_t>(d));
  b.dmap_dt.resize(static_cast<size_t>(d));
  b.jacobian = MatVar(d, d);
  for (int k = 0; k < d; ++k) {
    b.map_value[static_cast<size_t>(k)] = jets[static_cast<size_t>(k)].value;
    b.dmap_dt[static_cast<size_t>(k)] = jets[static_cast<size_t>(k)].dt;
    for (int j = 0; j < d; ++j)
      b.jacobian.at(k, j) =
          j <= k ? jets[static_cast<size_t>(k)].dx[static_cast<size_t>(j)] : t.constant(0.0);
  }
  ReferenceDensity eta{d};
  b.log_eta = eta.log_density(t, b.map_value);
  Var logdet;
  for (int k = 0; k < d; ++k) {
    const Var diag = b.jacobian.at(k, k);
    if (!(t.val(diag) > 0.0))
      throw NonPositiveDiagonal("flux bundle: non-positive map diagonal");
    Var lg = t.log_(diag);
    logdet = logdet.valid() ? t.add(logdet, lg) : lg;
  }
  b.log_rho = t.add(b.log_eta, logdet);

  // d log rho / d x_j = -sum_{k>=j} S_k J_kj + sum_{k>=j} H_kj / J_kk
  b.grad_log_rho.resize(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) {
    Var acc;
    for (int k = j; k < d; ++k) {
      Var term = t.neg(t.mul(b.map_value[static_cast<size_t>(k)], b.jacobian.at(k, j)));
      term = t.add(term, t.div(jets[static_cast<size_t>(k)].ddiag[static_cast<size_t>(j)],
                               b.jacobian.at(k, k)));
      acc = acc.valid() ? t.add(acc, term) : term;
    }
    b.grad_log_rho[static_cast<size_t>(j)] = acc;
  }

  // rho v in adjugate form
  Var eta_val = t.exp_(b.log_eta);
  MatVar adj = adjugate(t, b.jacobian);
  auto adj_dt = matvec(t, adj, b.dmap_dt);
  b.flux.resize(static_cast<size_t>(d));
  for (int k = 0; k < d; ++k)
    b.flux[static_cast<size_t>(k)] = t.neg(t.mul(eta_val, adj_dt[static_cast<size_t>(k)]));
  return b;
}

/// v = -(grad S)^{-1} dS/dt by forward substitution (no explicit inverse).
inline std::vector<Var> record_velocity(Tape& t, const FluxBundle& b) {
  const int d = static_cast<int>(b.dmap_dt.size());
  std::vector<Var> v(static_cast<size_t>(d));
  for (int k = 0; k < d; ++k) {
    Var rhs = t.neg(b.dmap_dt[static_cast<size_t>(k)]);
    for (int j = 0; j < k; ++j)
      rhs = t.sub(rhs, t.mul(b.jacobian.at(k, j), v[static_cast<size_t>(j)]));
    v[static_cast<size_t>(k)] = t.div(rhs, b.jacobian.at(k, k));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Plain-value wrappers (evaluation, reporting, tests). Each builds a scratch
// tape; the recorded path is the single source of the map semantics.
// ---------------------------------------------------------------------------

inline double eval_component(const TriangularMapModel& model, int k, std::span<const double> x,
                             double time, const ParamVector& params) {
  Tape t(&params);
  return t.val(record_component_jet(t, model, k, x, time, jet::JetMode::Density).value);
}

inline std::vector<double> eval_map(const TriangularMapModel& model, std::span<const double> x,
                                    double time, const ParamVector& params) {
  Tape t(&params);
  const auto jets = record_map_jets(t, model, x, time, jet::JetMode::Density);
  std::vector<double> out(jets.size());
  for (size_t k = 0; k < jets.size(); ++k) out[k] = t.val(jets[k].value);
  return out;
}

inline Mat spatial_jacobian(const TriangularMapModel& model, std::span<const double> x,
                            double time, const ParamVector& params) {
  Tape t(&params);
  const auto b = record_flux_bundle(t, model, x, time);
  Mat j(model.dim, model.dim);
  for (int r = 0; r < model.dim; ++r)
    for (int c = 0; c < model.dim; ++c) j(r, c) = t.val(b.jacobian.at(r, c));
  return j;
}

inline double log_pullback_density(const TriangularMapModel& model, std::span<const double> x,
                                   double time, const ParamVector& params) {
  Tape t(&params);
  return t.val(record_log_pullback(t, model, x, time));
}

inline std::vector<double> time_derivative(const TriangularMapModel& model,
                                           std::span<const double> x, double time,
                                           const ParamVector& params) {
  Tape t(&params);
  const auto b = record_flux_bundle(t, model, x, time);
  std::vector<double> out(b.dmap_dt.size());
  for (size_t k = 0; k < out.size(); ++k) out[k] = t.val(b.dmap_dt[k]);
  return out;
}

inline std::vector<double> velocity(const TriangularMapModel& model, std::span<const double> x,
                                    double time, const ParamVector& params) {
  Tape t(&params);
  const auto b = record_flux_bundle(t, model, x, time);
  const auto v = record_velocity(t, b);
  std::vector<double> out(v.size());
  for (size_t k = 0; k < out.size(); ++k) out[k] = t.val(v[k]);
  return out;
}

inline std::vector<double> mass_flux(const TriangularMapModel& model, std::span<const double> x,
                                     double time, const ParamVector& params) {
  Tape t(&params);
  const auto b = record_flux_bundle(t, model, x, time);
  std::vector<double> out(b.flux.size());
  for (size_t k = 0; k < out.size(); ++k) out[k] = t.val(b.flux[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Map inversion (sampling and diagnostics only): component-wise bisection.
// ---------------------------------------------------------------------------

inline std::vector<double> invert_map(const TriangularMapModel& model, std::span<const double> y,
                                      double time, const ParamVector& params,
                                      double tol = 1e-10) {
  if (static_cast<int>(y.size()) != model.dim) throw DimensionMismatch("invert_map: |y| != dim");
  std::vector<double> x(static_cast<size_t>(model.dim), 0.0);
  for (int k = 1; k <= model.dim; ++k) {
    auto sk = [&](double xi) {
      x[static_cast<size_t>(k) - 1] = xi;
      return eval_component(model, k, std::span<const double>(x.data(), static_cast<size_t>(k)),
                            time, params);
    };
    const double target = y[static_cast<size_t>(k) - 1];
    double lo = -1.0, hi = 1.0;
    int guard = 0;
    while (sk(lo) > target) {
      lo *= 2.0;
      if (++guard > 60) throw BracketFailure("invert_map: lower bracket not found");
    }
    guard = 0;
    while (sk(hi) < target) {
      hi *= 2.0;
      if (++guard > 60) throw BracketFailure("invert_map: upper bracket not found");
    }
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      if (sk(mid) < target)
        lo = mid;
      else
        hi = mid;
    }
    x[static_cast<size_t>(k) - 1] = 0.5 * (lo + hi);
  }
  return x;
}

// ---------------------------------------------------------------------------
// 1D monotone rearrangement oracle: S(x) = F^{-1}(G(x)).
// ---------------------------------------------------------------------------

inline double monotone_rearrangement_1d(const std::function<double(double)>& source_cdf,
                                        const std::function<double(double)>& reference_cdf,
                                        double x) {
  const double u = source_cdf(x);
  double lo = -50.0, hi = 50.0;
  if (reference_cdf(lo) > u || reference_cdf(hi) < u)
    throw BracketFailure("monotone_rearrangement_1d: quantile outside [-50, 50]");
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (reference_cdf(mid) < u)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace fpflow
