#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/mlp.hpp"
#include "fpflow/params.hpp"
#include "fpflow/tape.hpp"

namespace fpflow {

// ---------------------------------------------------------------------------
// Potential families
// ---------------------------------------------------------------------------

/// Parametric potential Psi(x; Theta_2).
///   Quadratic:       1/2 sum a_i x_i^2 + sum b_i x_i          [a_1..a_d, b_1..b_d]
///   DoubleWell:      1/4 (sum A_i x_i^2)^2 + 1/2 sum B_i x_i^2 [A..., B...]
///   LogSumExpWells:  -log(e^{-sum (x_i+u_i)^2} + e^{-sum (x_i+v_i)^2}) [u..., v...]
///   Neural:          scalar feed-forward network of x
struct PotentialModel {
  enum class Kind { Quadratic, DoubleWell, LogSumExpWells, Neural };

  Kind kind = Kind::Quadratic;
  int dim = 1;
  int offset = -1;  // structured families
  MlpHandle net;    // Neural

  int param_count() const {
    switch (kind) {
      case Kind::Quadratic:
      case Kind::DoubleWell:
      case Kind::LogSumExpWells: return 2 * dim;
      case Kind::Neural: return net.spec.param_count();
    }
    return 0;
  }

  static PotentialModel quadratic(ParamVector& p, int dim, const std::string& name = "psi") {
    PotentialModel m;
    m.kind = Kind::Quadratic;
    m.dim = dim;
    m.offset = p.add_segment(name, 2 * dim, 0.0);
    return m;
  }

  static PotentialModel double_well(ParamVector& p, int dim, const std::string& name = "psi") {
    PotentialModel m;
    m.kind = Kind::DoubleWell;
    m.dim = dim;
    m.offset = p.add_segment(name, 2 * dim, 0.0);
    return m;
  }

  static PotentialModel lse_wells(ParamVector& p, int dim, const std::string& name = "psi",
                                  double center_init = 0.5) {
    PotentialModel m;
    m.kind = Kind::LogSumExpWells;
    m.dim = dim;
    m.offset = p.add_segment(name, 2 * dim, 0.0);
    auto seg = p.segment_values(name);
    for (int i = 0; i < dim; ++i) {
      seg[static_cast<size_t>(i)] = center_init;
      seg[static_cast<size_t>(dim + i)] = -center_init;
    }
    return m;
  }

  static PotentialModel neural(ParamVector& p, int dim, uint64_t seed,
                               const std::string& name = "psi", int hidden_layers = 5,
                               int hidden_width = 5) {
    PotentialModel m;
    m.kind = Kind::Neural;
    m.dim = dim;
    MlpSpec spec;
    spec.input_dim = dim;
    spec.hidden_layers = hidden_layers;
    spec.hidden_width = hidden_width;
    m.net = register_mlp(p, name, spec, seed);
    m.offset = m.net.offset;
    return m;
  }
};

namespace detail {

inline void check_potential_dim(const PotentialModel& m, size_t n) {
  if (static_cast<int>(n) != m.dim)
    throw DimensionMismatch("potential: point dim " + std::to_string(n) + " != model dim " +
                            std::to_string(m.dim));
}

}  // namespace detail

inline Var record_potential(Tape& t, const PotentialModel& m, std::span<const double> x) {
  detail::check_potential_dim(m, x.size());
  const int d = m.dim;
  switch (m.kind) {
    case PotentialModel::Kind::Quadratic: {
      Var acc;
      for (int i = 0; i < d; ++i) {
        const double xi = x[static_cast<size_t>(i)];
        Var term = t.add(t.mul_c(t.param(m.offset + i), 0.5 * xi * xi),
                         t.mul_c(t.param(m.offset + d + i), xi));
        acc = acc.valid() ? t.add(acc, term) : term;
      }
      return acc;
    }
    case PotentialModel::Kind::DoubleWell: {
      Var qa, qb;
      for (int i = 0; i < d; ++i) {
        const double x2 = x[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
        Var ta = t.mul_c(t.param(m.offset + i), x2);
        Var tb = t.mul_c(t.param(m.offset + d + i), 0.5 * x2);
        qa = qa.valid() ? t.add(qa, ta) : ta;
        qb = qb.valid() ? t.add(qb, tb) : tb;
      }
      return t.add(t.mul_c(t.square(qa), 0.25), qb);
    }
    case PotentialModel::Kind::LogSumExpWells: {
      // -log(e^{-A} + e^{-B}) with max subtraction
      Var a, b;
      for (int i = 0; i < d; ++i) {
        Var da = t.square(t.add_c(t.param(m.offset + i), x[static_cast<size_t>(i)]));
        Var db = t.square(t.add_c(t.param(m.offset + d + i), x[static_cast<size_t>(i)]));
        a = a.valid() ? t.add(a, da) : da;
        b = b.valid() ? t.add(b, db) : db;
      }
      Var u = t.neg(a), v = t.neg(b);
      Var mx = t.max2(u, v);
      Var s = t.add(t.exp_(t.sub(u, mx)), t.exp_(t.sub(v, mx)));
      return t.neg(t.add(mx, t.log_(s)));
    }
    case PotentialModel::Kind::Neural: {
      std::vector<Var> in(x.size());
      for (size_t i = 0; i < x.size(); ++i) in[i] = t.constant(x[i]);
      return mlp_eval(t, m.net, in);
    }
  }
  throw std::logic_error("record_potential: unreachable");
}

inline std::vector<Var> record_potential_gradient(Tape& t, const PotentialModel& m,
                                                  std::span<const double> x) {
  detail::check_potential_dim(m, x.size());
  const int d = m.dim;
  std::vector<Var> g(static_cast<size_t>(d));
  switch (m.kind) {
    case PotentialModel::Kind::Quadratic: {
      for (int i = 0; i < d; ++i)
        g[static_cast<size_t>(i)] = t.add(t.mul_c(t.param(m.offset + i), x[static_cast<size_t>(i)]),
                                          t.param(m.offset + d + i));
      return g;
    }
    case PotentialModel::Kind::DoubleWell: {
      Var qa;
      for (int i = 0; i < d; ++i) {
        const double x2 = x[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
        Var ta = t.mul_c(t.param(m.offset + i), x2);
        qa = qa.valid() ? t.add(qa, ta) : ta;
      }
      for (int i = 0; i < d; ++i) {
        const double xi = x[static_cast<size_t>(i)];
        g[static_cast<size_t>(i)] = t.add(t.mul_c(t.mul(qa, t.param(m.offset + i)), xi),
                                          t.mul_c(t.param(m.offset + d + i), xi));
      }
      return g;
    }
    case PotentialModel::Kind::LogSumExpWells: {
      Var a, b;
      std::vector<Var> ra(static_cast<size_t>(d)), rb(static_cast<size_t>(d));
      for (int i = 0; i < d; ++i) {
        ra[static_cast<size_t>(i)] = t.add_c(t.param(m.offset + i), x[static_cast<size_t>(i)]);
        rb[static_cast<size_t>(i)] = t.add_c(t.param(m.offset + d + i), x[static_cast<size_t>(i)]);
        Var da = t.square(ra[static_cast<size_t>(i)]);
        Var db = t.square(rb[static_cast<size_t>(i)]);
        a = a.valid() ? t.add(a, da) : da;
        b = b.valid() ? t.add(b, db) : db;
      }
      // softmax weight of the first well: e^{-A}/(e^{-A}+e^{-B}) = sigmoid(B-A)
      Var w1 = t.sigmoid_(t.sub(b, a));
      Var w2 = t.add_c(t.neg(w1), 1.0);
      for (int i = 0; i < d; ++i)
        g[static_cast<size_t>(i)] = t.mul_c(t.add(t.mul(w1, ra[static_cast<size_t>(i)]),
                                                  t.mul(w2, rb[static_cast<size_t>(i)])),
                                            2.0);
      return g;
    }
    case PotentialModel::Kind::Neural: {
      std::vector<Var> in(x.size());
      for (size_t i = 0; i < x.size(); ++i) in[i] = t.constant(x[i]);
      return mlp_eval_with_full_grad(t, m.net, in).grad;
    }
  }
  throw std::logic_error("record_potential_gradient: unreachable");
}

inline double potential_value(const PotentialModel& m, std::span<const double> x,
                              const ParamVector& params) {
  detail::check_potential_dim(m, x.size());
  const int d = m.dim;
  const double* p = params.data() + m.offset;
  switch (m.kind) {
    case PotentialModel::Kind::Quadratic: {
      double acc = 0.0;
      for (int i = 0; i < d; ++i)
        acc += 0.5 * p[i] * x[static_cast<size_t>(i)] * x[static_cast<size_t>(i)] +
               p[d + i] * x[static_cast<size_t>(i)];
      return acc;
    }
    case PotentialModel::Kind::DoubleWell: {
      double qa = 0.0, qb = 0.0;
      for (int i = 0; i < d; ++i) {
        const double x2 = x[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
        qa += p[i] * x2;
        qb += 0.5 * p[d + i] * x2;
      }
      return 0.25 * qa * qa + qb;
    }
    case PotentialModel::Kind::LogSumExpWells: {
      double a = 0.0, b = 0.0;
      for (int i = 0; i < d; ++i) {
        const double da = x[static_cast<size_t>(i)] + p[i];
        const double db = x[static_cast<size_t>(i)] + p[d + i];
        a += da * da;
        b += db * db;
      }
      const double mx = std::max(-a, -b);
      return -(mx + std::log(std::exp(-a - mx) + std::exp(-b - mx)));
    }
    case PotentialModel::Kind::Neural: {
      Tape t(&params);
      return t.val(record_potential(t, m, x));
    }
  }
  throw std::logic_error("potential_value: unreachable");
}

inline std::vector<double> potential_gradient(const PotentialModel& m, std::span<const double> x,
                                              const ParamVector& params) {
  detail::check_potential_dim(m, x.size());
  const int d = m.dim;
  const double* p = params.data() + m.offset;
  std::vector<double> g(static_cast<size_t>(d));
  switch (m.kind) {
    case PotentialModel::Kind::Quadratic: {
      for (int i = 0; i < d; ++i) g[static_cast<size_t>(i)] = p[i] * x[static_cast<size_t>(i)] + p[d + i];
      return g;
    }
    case PotentialModel::Kind::DoubleWell: {
      double qa = 0.0;
      for (int i = 0; i < d; ++i) qa += p[i] * x[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
      for (int i = 0; i < d; ++i)
        g[static_cast<size_t>(i)] = qa * p[i] * x[static_cast<size_t>(i)] + p[d + i] * x[static_cast<size_t>(i)];
      return g;
    }
    case PotentialModel::Kind::LogSumExpWells: {
      double a = 0.0, b = 0.0;
      for (int i = 0; i < d; ++i) {
        const double da = x[static_cast<size_t>(i)] + p[i];
        const double db = x[static_cast<size_t>(i)] + p[d + i];
        a += da * da;
        b += db * db;
      }
      const double w1 = sigmoid(b - a);
      for (int i = 0; i < d; ++i)
        g[static_cast<size_t>(i)] = 2.0 * (w1 * (x[static_cast<size_t>(i)] + p[i]) +
                                           (1.0 - w1) * (x[static_cast<size_t>(i)] + p[d + i]));
      return g;
    }
    case PotentialModel::Kind::Neural: {
      Tape t(&params);
      auto gv = record_potential_gradient(t, m, x);
      for (int i = 0; i < d; ++i) g[static_cast<size_t>(i)] = t.val(gv[static_cast<size_t>(i)]);
      return g;
    }
  }
  throw std::logic_error("potential_gradient: unreachable");
}

// ---------------------------------------------------------------------------
// Diffusion families
// ---------------------------------------------------------------------------

/// Symmetric diffusion tensor D(Theta_2). Symmetry is exact by construction;
/// positive definiteness is monitored during training, not enforced.
struct DiffusionModel {
  enum class Kind { IsotropicScalar, FullSymmetric };

  Kind kind = Kind::IsotropicScalar;
  int dim = 1;
  int offset = -1;

  int param_count() const { return kind == Kind::IsotropicScalar ? 1 : dim * dim; }

  static DiffusionModel isotropic(ParamVector& p, int dim, const std::string& name = "diff",
                                  double init = 0.5) {
    DiffusionModel m;
    m.kind = Kind::IsotropicScalar;
    m.dim = dim;
    m.offset = p.add_segment(name, 1, init);
    return m;
  }

  static DiffusionModel full_symmetric(ParamVector& p, int dim, const std::string& name = "diff",
                                       double diag_init = 0.5) {
    DiffusionModel m;
    m.kind = Kind::FullSymmetric;
    m.dim = dim;
    m.offset = p.add_segment(name, dim * dim, 0.0);
    auto seg = p.segment_values(name);
    for (int i = 0; i < dim; ++i) seg[static_cast<size_t>(i * dim + i)] = diag_init;
    return m;
  }
};

inline MatVar record_diffusion(Tape& t, const DiffusionModel& m) {
  MatVar d(m.dim, m.dim);
  if (m.kind == DiffusionModel::Kind::IsotropicScalar) {
    Var th = t.param(m.offset);
    for (int r = 0; r < m.dim; ++r)
      for (int c = 0; c < m.dim; ++c) d.at(r, c) = (r == c) ? th : t.constant(0.0);
    return d;
  }
  for (int r = 0; r < m.dim; ++r)
    for (int c = 0; c < m.dim; ++c)
      d.at(r, c) = t.mul_c(
          t.add(t.param(m.offset + r * m.dim + c), t.param(m.offset + c * m.dim + r)), 0.5);
  return d;
}

inline Mat diffusion_matrix(const DiffusionModel& m, const ParamVector& params) {
  Mat d(m.dim, m.dim);
  const double* p = params.data() + m.offset;
  if (m.kind == DiffusionModel::Kind::IsotropicScalar) {
    for (int i = 0; i < m.dim; ++i) d(i, i) = p[0];
    return d;
  }
  for (int r = 0; r < m.dim; ++r)
    for (int c = 0; c < m.dim; ++c) d(r, c) = 0.5 * (p[r * m.dim + c] + p[c * m.dim + r]);
  return d;
}

// ---------------------------------------------------------------------------
// Theta_2 naming for reports and convergence plots (diffusion first, then
// potential, matching the recovered-parameter tables).
// ---------------------------------------------------------------------------

struct NamedSlot {
  std::string name;
  int slot;
};

/// Reported Theta_2 values: the exposed (symmetrized) diffusion entries
/// followed by the raw potential parameters.
inline std::vector<double> theta2_values(const PotentialModel& pot, const DiffusionModel& diff,
                                         const ParamVector& params) {
  std::vector<double> out;
  const Mat d = diffusion_matrix(diff, params);
  if (diff.kind == DiffusionModel::Kind::IsotropicScalar) {
    out.push_back(d(0, 0));
  } else {
    for (int r = 0; r < diff.dim; ++r)
      for (int c = 0; c < diff.dim; ++c) out.push_back(d(r, c));
  }
  if (pot.kind != PotentialModel::Kind::Neural)
    for (int i = 0; i < pot.param_count(); ++i) out.push_back(params[pot.offset + i]);
  return out;
}

inline std::vector<NamedSlot> theta2_slots(const PotentialModel& pot, const DiffusionModel& diff) {
  std::vector<NamedSlot> out;
  if (diff.kind == DiffusionModel::Kind::IsotropicScalar) {
    out.push_back({"theta_D", diff.offset});
  } else {
    for (int r = 0; r < diff.dim; ++r)
      for (int c = 0; c < diff.dim; ++c)
        out.push_back({"theta_D_" + std::to_string(r + 1) + std::to_string(c + 1),
                       diff.offset + r * diff.dim + c});
  }
  switch (pot.kind) {
    case PotentialModel::Kind::Quadratic:
    case PotentialModel::Kind::DoubleWell:
      for (int i = 0; i < 2 * pot.dim; ++i)
        out.push_back({"theta_Psi_" + std::to_string(i + 1), pot.offset + i});
      break;
    case PotentialModel::Kind::LogSumExpWells:
      for (int i = 0; i < pot.dim; ++i)
        out.push_back({"theta_Psi_1_" + std::to_string(i + 1), pot.offset + i});
      for (int i = 0; i < pot.dim; ++i)
        out.push_back({"theta_Psi_2_" + std::to_string(i + 1), pot.offset + pot.dim + i});
      break;
    case PotentialModel::Kind::Neural: break;  // reported via RMS error, not per-parameter
  }
  return out;
}

}  // namespace fpflow
