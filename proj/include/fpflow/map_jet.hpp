#pragma once

// Fused evaluation of one triangular-map component
//
//   S_k(x, t) = f_k(x_1..x_{k-1}, 0, t) + int_0^{x_k} g(d_k f_k(x_1.., y, t)) dy
//
// with g = softplus and the integral approximated by composite Simpson on
// [0, x_k]. One tape op per (point, component) computes the component value
// together with its spatial/time derivatives; the hand-written VJP routes
// output adjoints to the network parameters. Recording these quantities as
// individual scalar tape nodes would dominate the training cost, so this
// kernel works on flat double buffers and recomputes its forward state inside
// the VJP instead of storing it on the tape.

#include <cmath>
#include <cstring>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/mlp.hpp"
#include "fpflow/tape.hpp"

namespace fpflow {
namespace jet {

/// Simpson weight of node i among n+1 nodes (n even): 1,4,2,...,2,4,1.
inline double simpson_weight(int i, int n) {
  if (i == 0 || i == n) return 1.0;
  return (i % 2 == 1) ? 4.0 : 2.0;
}

enum class JetMode {
  Density,  // S_k and the diagonal g(d_k f_k); enough for log-densities
  Flux,     // + all spatial partials, time partial, and diagonal partials
};

/// Buffer geometry for one MLP jet evaluation: value chain, first-order
/// tangent channels, and (optionally) mixed second-order channels against a
/// distinguished input. Layers l = 0..L-1 are tanh, layer L is linear with a
/// single output.
struct JetGeom {
  static constexpr int kMaxInputs = 24;  // cap on k+1 and tangent channels

  int L = 0;     // hidden layer count
  int m = 0;     // input count
  int w = 0;     // hidden width
  int nch = 0;   // tangent channels
  bool mixed = false;

  // per-layer input sizes and offsets into the state buffer
  std::vector<int> in_l;   // l = 0..L (input of layer l)
  std::vector<int> x_off;  // X[l] block
  std::vector<int> t_off;  // TX[l] block (nch * in_l)
  std::vector<int> m_off;  // MX[l] block
  std::vector<int> a_off;  // TAU[l] block (nch * w), hidden layers only
  std::vector<int> n_off;  // NU[l] block
  int state_size = 0;

  void init(const MlpSpec& spec, int channels, bool with_mixed) {
    if (spec.input_dim > kMaxInputs || channels > kMaxInputs)
      throw DimensionMismatch("jet: component dimension exceeds kMaxInputs");
    L = spec.hidden_layers;
    m = spec.input_dim;
    w = spec.hidden_width;
    nch = channels;
    mixed = with_mixed;
    in_l.assign(static_cast<size_t>(L) + 1, w);
    in_l[0] = m;
    x_off.resize(static_cast<size_t>(L) + 1);
    t_off.resize(static_cast<size_t>(L) + 1);
    m_off.resize(static_cast<size_t>(L) + 1);
    a_off.resize(static_cast<size_t>(L));
    n_off.resize(static_cast<size_t>(L));
    int off = 0;
    for (int l = 0; l <= L; ++l) {
      x_off[static_cast<size_t>(l)] = off;
      off += in_l[static_cast<size_t>(l)];
      t_off[static_cast<size_t>(l)] = off;
      off += nch * in_l[static_cast<size_t>(l)];
      m_off[static_cast<size_t>(l)] = off;
      off += mixed ? nch * in_l[static_cast<size_t>(l)] : 0;
    }
    for (int l = 0; l < L; ++l) {
      a_off[static_cast<size_t>(l)] = off;
      off += nch * w;
      n_off[static_cast<size_t>(l)] = off;
      off += mixed ? nch * w : 0;
    }
    state_size = off;
  }

  // block bases; channel blocks are indexed (unit * nch + ch)
  double* x(double* s, int l) const { return s + x_off[static_cast<size_t>(l)]; }
  double* tx(double* s, int l, int = 0) const { return s + t_off[static_cast<size_t>(l)]; }
  double* mx(double* s, int l, int = 0) const { return s + m_off[static_cast<size_t>(l)]; }
  double* tau(double* s, int l, int = 0) const { return s + a_off[static_cast<size_t>(l)]; }
  double* nu(double* s, int l, int = 0) const { return s + n_off[static_cast<size_t>(l)]; }
};

/// Forward pass of one MLP jet. chans lists the input indices carrying
/// tangent channels; q_pos is the position within chans of the distinguished
/// input driving the mixed channels. Fills the state buffer and the outputs
/// (f, grad[nch], mixed[nch]). Channel blocks are channels-minor, i.e.
/// tx[l] is indexed (c * nch + ch), so the innermost loops run contiguously.
inline void mlp_jet_forward(const MlpSpec& spec, const double* seg, const double* u,
                            const int* chans, int q_pos, const JetGeom& g, double* st,
                            double* out_f, double* out_grad, double* out_mixed) {
  const int L = g.L, w = g.w, nch = g.nch;
  const bool mixed = g.mixed;

  {  // seed layer-0 inputs
    double* x0 = g.x(st, 0);
    std::memcpy(x0, u, sizeof(double) * static_cast<size_t>(g.m));
    double* t0 = g.tx(st, 0, 0);
    std::memset(t0, 0, sizeof(double) * static_cast<size_t>(g.m * nch));
    for (int ch = 0; ch < nch; ++ch) t0[chans[ch] * nch + ch] = 1.0;
    if (mixed) std::memset(g.mx(st, 0, 0), 0, sizeof(double) * static_cast<size_t>(g.m * nch));
  }

  double acc_t[32], acc_n[32];
  for (int l = 0; l < L; ++l) {
    const int in = g.in_l[static_cast<size_t>(l)];
    const double* W = seg + spec.layer_offset(l);
    const double* b = W + in * w;
    const double* xin = g.x(st, l);
    const double* txin = g.tx(st, l, 0);
    const double* mxin = mixed ? g.mx(st, l, 0) : nullptr;
    double* xout = g.x(st, l + 1);
    double* txout = g.tx(st, l + 1, 0);
    double* mxout = mixed ? g.mx(st, l + 1, 0) : nullptr;
    double* tau = g.tau(st, l, 0);
    double* nu = mixed ? g.nu(st, l, 0) : nullptr;

    for (int r = 0; r < w; ++r) {
      const double* Wr = W + r * in;
      double p = b[r];
      for (int ch = 0; ch < nch; ++ch) acc_t[ch] = 0.0;
      if (mixed)
        for (int ch = 0; ch < nch; ++ch) acc_n[ch] = 0.0;
      for (int c = 0; c < in; ++c) {
        const double wc = Wr[c];
        p += wc * xin[c];
        const double* tc = txin + c * nch;
        for (int ch = 0; ch < nch; ++ch) acc_t[ch] += wc * tc[ch];
        if (mixed) {
          const double* mc = mxin + c * nch;
          for (int ch = 0; ch < nch; ++ch) acc_n[ch] += wc * mc[ch];
        }
      }
      const double h = std::tanh(p);
      const double s = 1.0 - h * h;
      xout[r] = h;
      double* tau_r = tau + r * nch;
      double* txo = txout + r * nch;
      for (int ch = 0; ch < nch; ++ch) {
        tau_r[ch] = acc_t[ch];
        txo[ch] = s * acc_t[ch];
      }
      if (mixed) {
        const double cc = -2.0 * h * s;
        const double tq = acc_t[q_pos];
        double* nu_r = nu + r * nch;
        double* mxo = mxout + r * nch;
        for (int ch = 0; ch < nch; ++ch) {
          nu_r[ch] = acc_n[ch];
          mxo[ch] = s * acc_n[ch] + cc * acc_t[ch] * tq;
        }
      }
    }
  }

  {  // linear output layer
    const double* W = seg + spec.layer_offset(L);
    const double* b = W + w;
    const double* xin = g.x(st, L);
    const double* txin = g.tx(st, L, 0);
    const double* mxin = mixed ? g.mx(st, L, 0) : nullptr;
    double f = b[0];
    for (int ch = 0; ch < nch; ++ch) acc_t[ch] = 0.0;
    if (mixed)
      for (int ch = 0; ch < nch; ++ch) acc_n[ch] = 0.0;
    for (int c = 0; c < w; ++c) {
      const double wc = W[c];
      f += wc * xin[c];
      const double* tc = txin + c * nch;
      for (int ch = 0; ch < nch; ++ch) acc_t[ch] += wc * tc[ch];
      if (mixed) {
        const double* mc = mxin + c * nch;
        for (int ch = 0; ch < nch; ++ch) acc_n[ch] += wc * mc[ch];
      }
    }
    *out_f = f;
    for (int ch = 0; ch < nch; ++ch) out_grad[ch] = acc_t[ch];
    if (mixed)
      for (int ch = 0; ch < nch; ++ch) out_mixed[ch] = acc_n[ch];
  }
}

/// Reverse sweep over a state filled by mlp_jet_forward. Accumulates
/// parameter adjoints into grad_seg (segment-relative); input adjoints are
/// not needed because sample coordinates are constants of the graph.
/// Channel bars mirror the channels-minor layout of the forward state.
inline void mlp_jet_backward(const MlpSpec& spec, const double* seg, const JetGeom& g,
                             const double* st, double fbar, const double* gradbar,
                             const double* mixedbar, int q_pos, double* grad_seg,
                             std::vector<double>& bars) {
  const int L = g.L, w = g.w, nch = g.nch;
  const bool mixed = g.mixed;
  const int cap = std::max(g.m, w);
  const int cb = cap * nch;  // channel-bar block size
  bars.assign(static_cast<size_t>(2 * (cap + 2 * cb) + (2 * nch + 1) * w), 0.0);
  double* xbar = bars.data();
  double* txbar = xbar + cap;
  double* mxbar = txbar + cb;
  double* xbar_p = mxbar + cb;
  double* txbar_p = xbar_p + cap;
  double* mxbar_p = txbar_p + cb;
  double* taubar = mxbar_p + cb;
  double* nubar = taubar + nch * w;
  double* pbar = nubar + nch * w;
  double* s_mut = const_cast<double*>(st);

  {  // output layer
    const double* W = seg + spec.layer_offset(L);
    double* Wbar = grad_seg + spec.layer_offset(L);
    double* bbar = Wbar + w;
    const double* xin = g.x(s_mut, L);
    const double* txin = g.tx(s_mut, L);
    const double* mxin = mixed ? g.mx(s_mut, L) : nullptr;
    bbar[0] += fbar;
    for (int c = 0; c < w; ++c) {
      const double wc = W[c];
      double wb = fbar * xin[c];
      xbar[c] = fbar * wc;
      const double* tc = txin + c * nch;
      double* tbc = txbar + c * nch;
      for (int ch = 0; ch < nch; ++ch) {
        tbc[ch] = gradbar[ch] * wc;
        wb += gradbar[ch] * tc[ch];
      }
      if (mixed) {
        const double* mc = mxin + c * nch;
        double* mbc = mxbar + c * nch;
        for (int ch = 0; ch < nch; ++ch) {
          mbc[ch] = mixedbar[ch] * wc;
          wb += mixedbar[ch] * mc[ch];
        }
      }
      Wbar[c] += wb;
    }
  }

  for (int l = L - 1; l >= 0; --l) {
    const int in = g.in_l[static_cast<size_t>(l)];
    const double* W = seg + spec.layer_offset(l);
    double* Wbar = grad_seg + spec.layer_offset(l);
    double* bbar = Wbar + in * w;
    const double* xin = g.x(s_mut, l);
    const double* h = g.x(s_mut, l + 1);
    const double* tau = g.tau(s_mut, l);
    const double* nu = mixed ? g.nu(s_mut, l) : nullptr;

    for (int r = 0; r < w; ++r) {
      const double hr = h[r];
      const double s = 1.0 - hr * hr;
      const double cc = -2.0 * hr * s;
      const double* tau_r = tau + r * nch;
      double* taubar_r = taubar + r * nch;
      double hbar = xbar[r];
      double sbar = 0.0, cbar = 0.0;
      for (int ch = 0; ch < nch; ++ch) taubar_r[ch] = 0.0;
      if (mixed) {
        const double tq = tau_r[q_pos];
        const double* nu_r = nu + r * nch;
        const double* mxbar_r = mxbar + r * nch;
        double* nubar_r = nubar + r * nch;
        double tqbar_extra = 0.0;
        for (int ch = 0; ch < nch; ++ch) {
          const double mb = mxbar_r[ch];
          nubar_r[ch] = s * mb;
          sbar += nu_r[ch] * mb;
          cbar += tau_r[ch] * tq * mb;
          taubar_r[ch] += cc * tq * mb;
          tqbar_extra += cc * tau_r[ch] * mb;
        }
        taubar_r[q_pos] += tqbar_extra;
      }
      const double* txbar_r = txbar + r * nch;
      for (int ch = 0; ch < nch; ++ch) {
        const double tb = txbar_r[ch];
        taubar_r[ch] += s * tb;
        sbar += tau_r[ch] * tb;
      }
      hbar += -2.0 * s * cbar;
      sbar += -2.0 * hr * cbar;
      hbar += -2.0 * hr * sbar;
      pbar[r] = s * hbar;
    }

    std::memset(xbar_p, 0, sizeof(double) * static_cast<size_t>(in));
    std::memset(txbar_p, 0, sizeof(double) * static_cast<size_t>(in * nch));
    if (mixed) std::memset(mxbar_p, 0, sizeof(double) * static_cast<size_t>(in * nch));
    const double* txin = g.tx(s_mut, l);
    const double* mxin = mixed ? g.mx(s_mut, l) : nullptr;
    for (int r = 0; r < w; ++r) {
      const double* Wr = W + r * in;
      double* Wbar_r = Wbar + r * in;
      const double pb = pbar[r];
      bbar[r] += pb;
      const double* taubar_r = taubar + r * nch;
      const double* nubar_r = mixed ? nubar + r * nch : nullptr;
      for (int c = 0; c < in; ++c) {
        const double wc = Wr[c];
        double wb = pb * xin[c];
        xbar_p[c] += wc * pb;
        const double* tc = txin + c * nch;
        double* tbc = txbar_p + c * nch;
        for (int ch = 0; ch < nch; ++ch) {
          tbc[ch] += wc * taubar_r[ch];
          wb += taubar_r[ch] * tc[ch];
        }
        if (mixed) {
          const double* mc = mxin + c * nch;
          double* mbc = mxbar_p + c * nch;
          for (int ch = 0; ch < nch; ++ch) {
            mbc[ch] += wc * nubar_r[ch];
            wb += nubar_r[ch] * mc[ch];
          }
        }
        Wbar_r[c] += wb;
      }
    }
    std::swap_ranges(xbar, xbar + cap, xbar_p);
    std::swap_ranges(txbar, txbar + cb, txbar_p);
    if (mixed) std::swap_ranges(mxbar, mxbar + cb, mxbar_p);
  }
}

/// Plain-value jet outputs of one component at one (x, t).
struct ComponentJetValues {
  double value = 0.0;         // S_k
  std::vector<double> dx;     // dS_k/dx_j, j = 1..k (dx[k-1] = g(d_k f_k) > 0)
  double dt = 0.0;            // dS_k/dt (Flux mode)
  std::vector<double> ddiag;  // d(diagonal)/dx_j, j = 1..k (Flux mode)
};

/// Node cache of one component evaluation: full per-node jet states plus the
/// per-node outputs (f, grad[nch], mixed[nch]). The VJP reuses it, so the
/// tanh-heavy forward runs exactly once per evaluation.
struct ComponentJetCache {
  JetGeom geom;
  std::vector<int> chans;
  std::vector<double> states;  // (n+1) * geom.state_size
  std::vector<double> outs;    // (n+1) * (1 + 2*nch)
  int q_pos = 0;

  void setup(const MlpSpec& spec, int k, JetMode mode, int n_nodes) {
    const int m = k + 1;
    const bool full = (mode == JetMode::Flux);
    const int nch = full ? m : 1;
    chans.resize(static_cast<size_t>(nch));
    if (full)
      for (int i = 0; i < m; ++i) chans[static_cast<size_t>(i)] = i;
    else
      chans[0] = k - 1;
    q_pos = full ? k - 1 : 0;
    geom.init(spec, nch, full);
    states.resize(static_cast<size_t>(n_nodes) * static_cast<size_t>(geom.state_size));
    outs.resize(static_cast<size_t>(n_nodes) * (1 + 2 * static_cast<size_t>(nch)));
  }
};

/// Forward pass over all Simpson nodes, filling the cache.
inline ComponentJetValues component_jet_forward(const MlpSpec& spec, const double* seg, int k,
                                                const double* x, double t, int n_partitions,
                                                JetMode mode, ComponentJetCache& cache) {
  const int m = k + 1;
  const int q = k - 1;
  if (spec.input_dim != m) throw DimensionMismatch("component_jet: spec input_dim != k+1");
  const bool full = (mode == JetMode::Flux);
  const int n = n_partitions;
  cache.setup(spec, k, mode, n + 1);
  const int nch = cache.geom.nch;
  const int ostride = 1 + 2 * nch;

  const double h = x[q] / n;
  const double c3 = h / 3.0;
  double u[JetGeom::kMaxInputs];
  for (int j = 0; j < k - 1; ++j) u[j] = x[j];
  u[m - 1] = t;

  ComponentJetValues out;
  out.dx.assign(static_cast<size_t>(k), 0.0);
  if (full) out.ddiag.assign(static_cast<size_t>(k), 0.0);

  double integral = 0.0;
  double dint[JetGeom::kMaxInputs] = {0};
  for (int i = 0; i <= n; ++i) {
    u[q] = i * h;
    double* o = cache.outs.data() + static_cast<size_t>(i) * ostride;
    double* st = cache.states.data() + static_cast<size_t>(i) * cache.geom.state_size;
    mlp_jet_forward(spec, seg, u, cache.chans.data(), cache.q_pos, cache.geom, st, o, o + 1,
                    o + 1 + nch);
    const double wgt = simpson_weight(i, n);
    const double phi = o[1 + cache.q_pos];
    integral += wgt * softplus(phi);
    if (full) {
      const double gp = sigmoid(phi);
      const double* mx = o + 1 + nch;
      for (int ch = 0; ch < m; ++ch)
        if (ch != q) dint[ch] += wgt * gp * mx[ch];
    }
  }

  const double* o0 = cache.outs.data();
  const double* on = cache.outs.data() + static_cast<size_t>(n) * ostride;
  out.value = o0[0] + c3 * integral;
  const double phi_end = on[1 + cache.q_pos];
  out.dx[static_cast<size_t>(q)] = softplus(phi_end);
  if (full) {
    for (int j = 0; j < k - 1; ++j) out.dx[static_cast<size_t>(j)] = o0[1 + j] + c3 * dint[j];
    out.dt = o0[1 + m - 1] + c3 * dint[m - 1];
    const double gp_end = sigmoid(phi_end);
    const double* mxn = on + 1 + nch;
    for (int j = 0; j < k; ++j) out.ddiag[static_cast<size_t>(j)] = gp_end * mxn[j];
  }
  return out;
}

/// Convenience overload using thread-local cache storage.
inline ComponentJetValues component_jet_forward(const MlpSpec& spec, const double* seg, int k,
                                                const double* x, double t, int n_partitions,
                                                JetMode mode) {
  thread_local ComponentJetCache cache;
  return component_jet_forward(spec, seg, k, x, t, n_partitions, mode, cache);
}

/// VJP of component_jet_forward w.r.t. the parameter segment, consuming the
/// cache produced by the matching forward call. bars mirror the output
/// layout of ComponentJetValues.
inline void component_jet_vjp(const MlpSpec& spec, const double* seg, int k, const double* x,
                              double /*t*/, int n_partitions, JetMode mode, double value_bar,
                              const double* dx_bar, double dt_bar, const double* ddiag_bar,
                              const ComponentJetCache& cache, double* grad_seg) {
  const int m = k + 1;
  const int q = k - 1;
  const bool full = (mode == JetMode::Flux);
  const int n = n_partitions;
  const double h = x[q] / n;
  const double c3 = h / 3.0;
  const int nch = cache.geom.nch;
  const int q_pos = cache.q_pos;
  const int ostride = 1 + 2 * nch;

  // combine-level bars per node
  thread_local std::vector<double> fbar, gradbar, mixedbar, bars;
  fbar.assign(static_cast<size_t>(n) + 1, 0.0);
  gradbar.assign(static_cast<size_t>((n + 1) * nch), 0.0);
  mixedbar.assign(full ? static_cast<size_t>((n + 1) * nch) : 1, 0.0);

  fbar[0] += value_bar;
  for (int i = 0; i <= n; ++i) {
    const double* o = cache.outs.data() + static_cast<size_t>(i) * ostride;
    const double wgt = simpson_weight(i, n);
    const double phi = o[1 + q_pos];
    const double gp = sigmoid(phi);
    double phibar = value_bar * c3 * wgt * gp;
    if (full) {
      const double gpp = gp * (1.0 - gp);
      const double* mx = o + 1 + nch;
      for (int ch = 0; ch < m; ++ch) {
        if (ch == q) continue;
        const double obar = (ch == m - 1) ? dt_bar : dx_bar[ch];
        if (obar == 0.0) continue;
        phibar += obar * c3 * wgt * gpp * mx[ch];
        mixedbar[static_cast<size_t>(i * nch + ch)] += obar * c3 * wgt * gp;
      }
    }
    gradbar[static_cast<size_t>(i * nch + q_pos)] += phibar;
  }
  if (full) {
    for (int j = 0; j < k - 1; ++j) gradbar[static_cast<size_t>(j)] += dx_bar[j];
    gradbar[static_cast<size_t>(m) - 1] += dt_bar;
  }
  {  // endpoint: diagonal g(phi_n) and its spatial partials
    const double* o = cache.outs.data() + static_cast<size_t>(n) * ostride;
    const double phi = o[1 + q_pos];
    const double gp = sigmoid(phi);
    double phibar = dx_bar[q] * gp;
    if (full && ddiag_bar) {
      const double gpp = gp * (1.0 - gp);
      const double* mx = o + 1 + nch;
      for (int j = 0; j < k; ++j) {
        const double obar = ddiag_bar[j];
        if (obar == 0.0) continue;
        phibar += obar * gpp * mx[j];
        mixedbar[static_cast<size_t>(n * nch + j)] += obar * gp;
      }
    }
    gradbar[static_cast<size_t>(n * nch + q_pos)] += phibar;
  }

  for (int i = 0; i <= n; ++i) {
    bool any = fbar[static_cast<size_t>(i)] != 0.0;
    for (int ch = 0; ch < nch && !any; ++ch)
      any = gradbar[static_cast<size_t>(i * nch + ch)] != 0.0 ||
            (full && mixedbar[static_cast<size_t>(i * nch + ch)] != 0.0);
    if (!any) continue;
    const double* st = cache.states.data() + static_cast<size_t>(i) * cache.geom.state_size;
    mlp_jet_backward(spec, seg, cache.geom, st, fbar[static_cast<size_t>(i)],
                     gradbar.data() + static_cast<size_t>(i * nch),
                     full ? mixedbar.data() + static_cast<size_t>(i * nch) : nullptr, q_pos,
                     grad_seg, bars);
  }
}

}  // namespace jet

/// Tape op wrapping the fused component-jet kernel. Output layout:
///   Density: [S, dS/dx_k]
///   Flux:    [S, dS/dx_1..dS/dx_k, dS/dt, dDiag/dx_1..dDiag/dx_k]
class MapComponentJetOp final : public CustomOp {
 public:
  MapComponentJetOp(MlpSpec spec, int seg_offset, int k, std::vector<double> x, double t,
                    int n_partitions, jet::JetMode mode)
      : spec_(spec), seg_offset_(seg_offset), k_(k), x_(std::move(x)), t_(t),
        n_(n_partitions), mode_(mode) {}

  int num_outputs() const override {
    return mode_ == jet::JetMode::Density ? 2 : 2 * k_ + 2;
  }

  void eval(const double* params, double* out) const override {
    const auto v = jet::component_jet_forward(spec_, params + seg_offset_, k_, x_.data(), t_, n_,
                                              mode_, cache_);
    if (mode_ == jet::JetMode::Density) {
      out[0] = v.value;
      out[1] = v.dx[static_cast<size_t>(k_) - 1];
    } else {
      out[0] = v.value;
      for (int j = 0; j < k_; ++j) out[1 + j] = v.dx[static_cast<size_t>(j)];
      out[1 + k_] = v.dt;
      for (int j = 0; j < k_; ++j) out[2 + k_ + j] = v.ddiag[static_cast<size_t>(j)];
    }
  }

  void vjp(const double* params, const double* out_bar, double* param_grad) const override {
    bool any = false;
    for (int j = 0; j < num_outputs(); ++j) any = any || out_bar[j] != 0.0;
    if (!any) return;
    std::vector<double> dx_bar(static_cast<size_t>(k_), 0.0);
    std::vector<double> dd_bar(static_cast<size_t>(k_), 0.0);
    double value_bar = out_bar[0];
    double dt_bar = 0.0;
    if (mode_ == jet::JetMode::Density) {
      dx_bar[static_cast<size_t>(k_) - 1] = out_bar[1];
    } else {
      for (int j = 0; j < k_; ++j) dx_bar[static_cast<size_t>(j)] = out_bar[1 + j];
      dt_bar = out_bar[1 + k_];
      for (int j = 0; j < k_; ++j) dd_bar[static_cast<size_t>(j)] = out_bar[2 + k_ + j];
    }
    jet::component_jet_vjp(spec_, params + seg_offset_, k_, x_.data(), t_, n_, mode_, value_bar,
                           dx_bar.data(), dt_bar, dd_bar.data(), cache_, param_grad + seg_offset_);
  }

 private:
  MlpSpec spec_;
  int seg_offset_;
  int k_;
  std::vector<double> x_;
  double t_;
  int n_;
  jet::JetMode mode_;
  mutable jet::ComponentJetCache cache_;  // filled by eval, consumed by vjp
};

}  // namespace fpflow
