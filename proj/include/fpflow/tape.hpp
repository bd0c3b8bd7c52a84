#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/params.hpp"

namespace fpflow {

/// Handle to a node on a Tape.
struct Var {
  int32_t i = -1;
  bool valid() const { return i >= 0; }
};

/// Multi-output operation recorded as a single tape node. Inputs are plain
/// numbers captured by the op itself (sample coordinates, times); the only
/// differentiable dependency is on the parameter vector, addressed by slot.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual int num_outputs() const = 0;
  /// Writes num_outputs() values into out.
  virtual void eval(const double* params, double* out) const = 0;
  /// Accumulates d(sum_j out_bar[j] * out_j)/d(params) into param_grad.
  virtual void vjp(const double* params, const double* out_bar, double* param_grad) const = 0;
};

/// Reverse-mode tape over scalars. Define-by-run: recording an operation
/// computes its value immediately against the bound ParamVector. A tape is
/// single-writer; independent tapes may run concurrently.
class Tape {
  enum class Op : uint8_t {
    Const,
    Leaf,  // differentiable; slot >= 0 binds to a ParamVector entry
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddC,
    MulC,
    Tanh,
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Max2,
    CustomHost,
    CustomOut,
  };

  struct Node {
    Op op;
    int32_t a = -1;
    int32_t b = -1;
    double c = 0.0;  // constant payload / param slot for Leaf
  };

 public:
  explicit Tape(const ParamVector* params = nullptr) : params_(params) {
    if (params_) slot_node_.assign(static_cast<size_t>(params_->size()), -1);
  }

  const ParamVector* bound_params() const { return params_; }

  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    vals_.clear();
    adj_.clear();
    customs_.clear();
    std::fill(slot_node_.begin(), slot_node_.end(), -1);
  }

  // -- recording ------------------------------------------------------------

  Var constant(double v) { return push(Node{Op::Const, -1, -1, v}, v); }

  /// Free differentiable leaf (not a parameter). Its adjoint is readable via
  /// adjoint() after backward().
  Var leaf(double v) { return push(Node{Op::Leaf, -1, -1, -1.0}, v); }

  /// Parameter leaf; one node per slot, memoized, so adjoints accumulate.
  Var param(int slot) {
    assert(params_ && slot >= 0 && slot < params_->size());
    if (slot_node_[slot] >= 0) return Var{slot_node_[slot]};
    Var v = push(Node{Op::Leaf, -1, -1, static_cast<double>(slot)}, (*params_)[slot]);
    slot_node_[slot] = v.i;
    return v;
  }

  Var add(Var a, Var b) { return push(Node{Op::Add, a.i, b.i}, val(a) + val(b)); }
  Var sub(Var a, Var b) { return push(Node{Op::Sub, a.i, b.i}, val(a) - val(b)); }
  Var mul(Var a, Var b) { return push(Node{Op::Mul, a.i, b.i}, val(a) * val(b)); }
  Var div(Var a, Var b) { return push(Node{Op::Div, a.i, b.i}, val(a) / val(b)); }
  Var neg(Var a) { return push(Node{Op::Neg, a.i, -1}, -val(a)); }
  Var add_c(Var a, double c) { return push(Node{Op::AddC, a.i, -1, c}, val(a) + c); }
  Var mul_c(Var a, double c) { return push(Node{Op::MulC, a.i, -1, c}, val(a) * c); }
  Var tanh_(Var a) { return push(Node{Op::Tanh, a.i, -1}, std::tanh(val(a))); }
  Var softplus_(Var a) { return push(Node{Op::Softplus, a.i, -1}, softplus(val(a))); }
  Var sigmoid_(Var a) { return push(Node{Op::Sigmoid, a.i, -1}, sigmoid(val(a))); }
  Var exp_(Var a) { return push(Node{Op::Exp, a.i, -1}, std::exp(val(a))); }
  Var log_(Var a) { return push(Node{Op::Log, a.i, -1}, std::log(val(a))); }
  Var sqrt_(Var a) { return push(Node{Op::Sqrt, a.i, -1}, std::sqrt(val(a))); }
  Var square(Var a) { return push(Node{Op::Square, a.i, -1}, val(a) * val(a)); }
  Var max2(Var a, Var b) { return push(Node{Op::Max2, a.i, b.i}, std::max(val(a), val(b))); }

  Var dot(std::span<const Var> a, std::span<const Var> b) {
    if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
    if (a.empty()) return constant(0.0);
    Var acc = mul(a[0], b[0]);
    for (size_t i = 1; i < a.size(); ++i) acc = add(acc, mul(a[i], b[i]));
    return acc;
  }

  /// Records a multi-output custom op; returns the host node. Output j is
  /// custom_out(host, j).
  Var custom(std::unique_ptr<CustomOp> op) {
    const int nout = op->num_outputs();
    std::vector<double> out(static_cast<size_t>(nout), 0.0);
    op->eval(params_ ? params_->data() : nullptr, out.data());
    const int32_t host_c = static_cast<int32_t>(customs_.size());
    customs_.push_back(std::move(op));
    Var host = push(Node{Op::CustomHost, host_c, nout}, 0.0);
    for (int j = 0; j < nout; ++j) push(Node{Op::CustomOut, host.i, j}, out[j]);
    return host;
  }

  Var custom_out(Var host, int j) const {
    assert(nodes_[host.i].op == Op::CustomHost && j < nodes_[host.i].b);
    return Var{host.i + 1 + j};
  }

  // -- evaluation -----------------------------------------------------------

  double val(Var v) const { return vals_[static_cast<size_t>(v.i)]; }

  /// Replays all primal values against the given parameter vector. Layout and
  /// recorded structure are reused; only values change.
  void replay_forward(const ParamVector& params) {
    params_ = &params;
    std::vector<double> custom_buf;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      double v = 0.0;
      switch (n.op) {
        case Op::Const: v = n.c; break;
        case Op::Leaf: v = n.c >= 0.0 ? params[static_cast<int>(n.c)] : vals_[i]; break;
        case Op::Add: v = vals_[n.a] + vals_[n.b]; break;
        case Op::Sub: v = vals_[n.a] - vals_[n.b]; break;
        case Op::Mul: v = vals_[n.a] * vals_[n.b]; break;
        case Op::Div: v = vals_[n.a] / vals_[n.b]; break;
        case Op::Neg: v = -vals_[n.a]; break;
        case Op::AddC: v = vals_[n.a] + n.c; break;
        case Op::MulC: v = vals_[n.a] * n.c; break;
        case Op::Tanh: v = std::tanh(vals_[n.a]); break;
        case Op::Softplus: v = softplus(vals_[n.a]); break;
        case Op::Sigmoid: v = sigmoid(vals_[n.a]); break;
        case Op::Exp: v = std::exp(vals_[n.a]); break;
        case Op::Log: v = std::log(vals_[n.a]); break;
        case Op::Sqrt: v = std::sqrt(vals_[n.a]); break;
        case Op::Square: v = vals_[n.a] * vals_[n.a]; break;
        case Op::Max2: v = std::max(vals_[n.a], vals_[n.b]); break;
        case Op::CustomHost: {
          const auto& op = customs_[n.a];
          custom_buf.resize(static_cast<size_t>(n.b));
          op->eval(params.data(), custom_buf.data());
          for (int j = 0; j < n.b; ++j) vals_[i + 1 + j] = custom_buf[j];
          v = 0.0;
          break;
        }
        case Op::CustomOut: v = vals_[i]; break;  // written by its host above
      }
      vals_[i] = v;
    }
  }

  void check_finite() const {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::CustomHost) continue;
      if (!std::isfinite(vals_[i]))
        throw NonFiniteValue("tape: non-finite intermediate at node " + std::to_string(i));
    }
  }

  /// Reverse sweep from root using cached primal values. Fills per-node
  /// adjoints and the per-slot parameter gradient.
  void backward(Var root) {
    adj_.assign(nodes_.size(), 0.0);
    param_grad_.assign(params_ ? static_cast<size_t>(params_->size()) : 0, 0.0);
    adj_[static_cast<size_t>(root.i)] = 1.0;
    for (int32_t i = root.i; i >= 0; --i) {
      const double g = adj_[static_cast<size_t>(i)];
      const Node& n = nodes_[static_cast<size_t>(i)];
      if (n.op == Op::CustomHost) {
        // projections sit right after the host; adjoints already accumulated
        const auto& op = customs_[n.a];
        op->vjp(params_ ? params_->data() : nullptr, &adj_[static_cast<size_t>(i) + 1],
                param_grad_.data());
        continue;
      }
      if (g == 0.0) continue;
      switch (n.op) {
        case Op::Const: break;
        case Op::Leaf:
          if (n.c >= 0.0) param_grad_[static_cast<size_t>(n.c)] += g;
          break;
        case Op::Add:
          adj_[n.a] += g;
          adj_[n.b] += g;
          break;
        case Op::Sub:
          adj_[n.a] += g;
          adj_[n.b] -= g;
          break;
        case Op::Mul:
          adj_[n.a] += g * vals_[n.b];
          adj_[n.b] += g * vals_[n.a];
          break;
        case Op::Div: {
          const double vb = vals_[n.b];
          adj_[n.a] += g / vb;
          adj_[n.b] -= g * vals_[static_cast<size_t>(i)] / vb;
          break;
        }
        case Op::Neg: adj_[n.a] -= g; break;
        case Op::AddC: adj_[n.a] += g; break;
        case Op::MulC: adj_[n.a] += g * n.c; break;
        case Op::Tanh: {
          const double t = vals_[static_cast<size_t>(i)];
          adj_[n.a] += g * (1.0 - t * t);
          break;
        }
        case Op::Softplus: adj_[n.a] += g * sigmoid(vals_[n.a]); break;
        case Op::Sigmoid: {
          const double s = vals_[static_cast<size_t>(i)];
          adj_[n.a] += g * s * (1.0 - s);
          break;
        }
        case Op::Exp: adj_[n.a] += g * vals_[static_cast<size_t>(i)]; break;
        case Op::Log: adj_[n.a] += g / vals_[n.a]; break;
        case Op::Sqrt: adj_[n.a] += g * 0.5 / vals_[static_cast<size_t>(i)]; break;
        case Op::Square: adj_[n.a] += g * 2.0 * vals_[n.a]; break;
        case Op::Max2:
          if (vals_[n.a] >= vals_[n.b])
            adj_[n.a] += g;
          else
            adj_[n.b] += g;
          break;
        case Op::CustomHost: break;  // handled above
        case Op::CustomOut: break;   // routed by host
      }
    }
  }

  double adjoint(Var v) const { return adj_[static_cast<size_t>(v.i)]; }

  /// d(root)/d(slot) for every parameter slot; valid after backward().
  std::span<const double> param_gradient() const { return param_grad_; }

 private:
  Var push(Node n, double v) {
    nodes_.push_back(n);
    vals_.push_back(v);
    return Var{static_cast<int32_t>(nodes_.size()) - 1};
  }

  const ParamVector* params_;
  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> adj_;
  std::vector<double> param_grad_;
  std::vector<int32_t> slot_node_;
  std::vector<std::unique_ptr<CustomOp>> customs_;
};

/// Replays the graph against params and returns the root value. Throws
/// NonFiniteValue if any intermediate diverged.
inline double forward_eval(Tape& graph, Var root, const ParamVector& params) {
  graph.replay_forward(params);
  graph.check_finite();
  return graph.val(root);
}

/// Gradient of root w.r.t. every parameter slot.
inline std::vector<double> reverse_gradient(Tape& graph, Var root, const ParamVector& params) {
  graph.replay_forward(params);
  graph.check_finite();
  graph.backward(root);
  auto g = graph.param_gradient();
  return {g.begin(), g.end()};
}

// ---------------------------------------------------------------------------
// MatVar: small dense matrix of tape variables.
// ---------------------------------------------------------------------------

struct MatVar {
  int rows = 0;
  int cols = 0;
  std::vector<Var> v;

  MatVar() = default;
  MatVar(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c) {}

  Var& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  Var at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  static MatVar identity(Tape& t, int n) {
    MatVar m(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) m.at(r, c) = t.constant(r == c ? 1.0 : 0.0);
    return m;
  }
};

inline MatVar matmul(Tape& t, const MatVar& a, const MatVar& b) {
  if (a.cols != b.rows) throw DimensionMismatch("matmul: inner dims differ");
  MatVar out(a.rows, b.cols);
  for (int r = 0; r < a.rows; ++r)
    for (int c = 0; c < b.cols; ++c) {
      Var acc = t.mul(a.at(r, 0), b.at(0, c));
      for (int k = 1; k < a.cols; ++k) acc = t.add(acc, t.mul(a.at(r, k), b.at(k, c)));
      out.at(r, c) = acc;
    }
  return out;
}

inline std::vector<Var> matvec(Tape& t, const MatVar& a, std::span<const Var> x) {
  if (a.cols != static_cast<int>(x.size())) throw DimensionMismatch("matvec: size");
  std::vector<Var> y(static_cast<size_t>(a.rows));
  for (int r = 0; r < a.rows; ++r) {
    Var acc = t.mul(a.at(r, 0), x[0]);
    for (int c = 1; c < a.cols; ++c) acc = t.add(acc, t.mul(a.at(r, c), x[c]));
    y[static_cast<size_t>(r)] = acc;
  }
  return y;
}

namespace detail {

/// Determinant by recursive first-row expansion over the listed rows/cols.
inline Var det_expand(Tape& t, const MatVar& m, const std::vector<int>& rows,
                      const std::vector<int>& cols) {
  const size_t n = rows.size();
  if (n == 1) return m.at(rows[0], cols[0]);
  if (n == 2)
    return t.sub(t.mul(m.at(rows[0], cols[0]), m.at(rows[1], cols[1])),
                 t.mul(m.at(rows[0], cols[1]), m.at(rows[1], cols[0])));
  Var acc;
  std::vector<int> sub_rows(rows.begin() + 1, rows.end());
  std::vector<int> sub_cols(n - 1);
  for (size_t j = 0; j < n; ++j) {
    size_t w = 0;
    for (size_t c = 0; c < n; ++c)
      if (c != j) sub_cols[w++] = cols[c];
    Var term = t.mul(m.at(rows[0], cols[j]), det_expand(t, m, sub_rows, sub_cols));
    if (j % 2 == 1) term = t.neg(term);
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return acc;
}

}  // namespace detail

inline Var determinant(Tape& t, const MatVar& m) {
  if (m.rows != m.cols) throw DimensionMismatch("determinant: square required");
  std::vector<int> idx(static_cast<size_t>(m.rows));
  for (int i = 0; i < m.rows; ++i) idx[static_cast<size_t>(i)] = i;
  return detail::det_expand(t, m, idx, idx);
}

/// Adjugate (transpose of the cofactor matrix); adj(m) * m = det(m) * I holds
/// for singular m as well on the cofactor path. Cofactor expansion is used up
/// to 5x5; larger matrices fall back to det * inverse via pivoted elimination,
/// which requires m to be nonsingular.
inline MatVar adjugate(Tape& t, const MatVar& m) {
  if (m.rows != m.cols) throw DimensionMismatch("adjugate: square required");
  const int n = m.rows;
  if (n == 1) {
    MatVar out(1, 1);
    out.at(0, 0) = t.constant(1.0);
    return out;
  }
  MatVar out(n, n);
  if (n <= 5) {
    std::vector<int> rows, cols;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        rows.clear();
        cols.clear();
        for (int r = 0; r < n; ++r)
          if (r != i) rows.push_back(r);
        for (int c = 0; c < n; ++c)
          if (c != j) cols.push_back(c);
        Var minor = detail::det_expand(t, m, rows, cols);
        out.at(j, i) = ((i + j) % 2 == 0) ? minor : t.neg(minor);
      }
    return out;
  }
  // det * inverse through Gaussian elimination; pivots chosen on primal values
  MatVar a = m;
  MatVar inv = MatVar::identity(t, n);
  Var det = t.constant(1.0);
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(t.val(a.at(r, col))) > std::abs(t.val(a.at(piv, col)))) piv = r;
    if (piv != col) {
      for (int c = 0; c < n; ++c) {
        std::swap(a.at(piv, c), a.at(col, c));
        std::swap(inv.at(piv, c), inv.at(col, c));
      }
      det = t.neg(det);
    }
    Var p = a.at(col, col);
    det = t.mul(det, p);
    for (int c = 0; c < n; ++c) {
      a.at(col, c) = t.div(a.at(col, c), p);
      inv.at(col, c) = t.div(inv.at(col, c), p);
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      Var f = a.at(r, col);
      if (t.val(f) == 0.0) continue;
      for (int c = 0; c < n; ++c) {
        a.at(r, c) = t.sub(a.at(r, c), t.mul(f, a.at(col, c)));
        inv.at(r, c) = t.sub(inv.at(r, c), t.mul(f, inv.at(col, c)));
      }
    }
  }
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) = t.mul(det, inv.at(r, c));
  return out;
}

/// Sum of log diagonal entries of a lower-triangular matrix with positive
/// diagonal. Throws NonPositiveDiagonal otherwise (monotonicity violation
/// upstream).
inline Var logdet_triangular(Tape& t, const MatVar& m) {
  if (m.rows != m.cols) throw DimensionMismatch("logdet_triangular: square required");
  Var acc;
  for (int i = 0; i < m.rows; ++i) {
    if (!(t.val(m.at(i, i)) > 0.0))
      throw NonPositiveDiagonal("logdet_triangular: diagonal entry " + std::to_string(i) +
                                " is not positive");
    Var term = t.log_(m.at(i, i));
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return acc.valid() ? acc : t.constant(0.0);
}

}  // namespace fpflow
