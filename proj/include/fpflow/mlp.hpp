#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fpflow/core.hpp"
#include "fpflow/params.hpp"
#include "fpflow/tape.hpp"

namespace fpflow {

/// Feed-forward architecture: input_dim -> width (tanh) x hidden_layers -> 1.
struct MlpSpec {
  int input_dim = 2;
  int hidden_layers = 5;
  int hidden_width = 5;
  int output_dim = 1;

  int param_count() const {
    int n = (input_dim + 1) * hidden_width;
    for (int l = 1; l < hidden_layers; ++l) n += (hidden_width + 1) * hidden_width;
    n += (hidden_width + 1) * output_dim;
    return n;
  }

  int layer_count() const { return hidden_layers + 1; }

  /// Fan-in/fan-out of layer l (0-based; layer hidden_layers is the linear
  /// output layer).
  void layer_dims(int l, int& in, int& out) const {
    in = (l == 0) ? input_dim : hidden_width;
    out = (l == hidden_layers) ? output_dim : hidden_width;
  }

  /// Offset of layer l's weights within the segment; biases follow the
  /// weights of the same layer. Weights are row-major (out x in).
  int layer_offset(int l) const {
    int off = 0;
    for (int k = 0; k < l; ++k) {
      int in, out;
      layer_dims(k, in, out);
      off += (in + 1) * out;
    }
    return off;
  }
};

/// Binding of an MlpSpec to a named ParamVector segment.
struct MlpHandle {
  MlpSpec spec;
  std::string segment;
  int offset = -1;
};

/// Xavier-uniform weights, zero biases; deterministic per seed.
inline std::vector<double> init_params(const MlpSpec& spec, uint64_t seed) {
  RandomEngine rng(seed);
  std::vector<double> p(static_cast<size_t>(spec.param_count()), 0.0);
  for (int l = 0; l < spec.layer_count(); ++l) {
    int in, out;
    spec.layer_dims(l, in, out);
    const double limit = std::sqrt(6.0 / (in + out));
    const int w_off = spec.layer_offset(l);
    for (int i = 0; i < in * out; ++i) p[static_cast<size_t>(w_off + i)] = rng.uniform(-limit, limit);
    // biases (after the weights) stay zero
  }
  return p;
}

/// Adds a segment holding one MLP's parameters and initializes it.
inline MlpHandle register_mlp(ParamVector& params, const std::string& name, const MlpSpec& spec,
                              uint64_t seed) {
  const int offset = params.add_segment(name, spec.param_count());
  const auto init = init_params(spec, seed);
  auto dst = params.segment_values(name);
  std::copy(init.begin(), init.end(), dst.begin());
  return MlpHandle{spec, name, offset};
}

namespace detail {

inline void check_mlp_inputs(const MlpHandle& h, size_t n_inputs) {
  if (static_cast<int>(n_inputs) != h.spec.input_dim)
    throw DimensionMismatch("mlp: expected " + std::to_string(h.spec.input_dim) +
                            " inputs, got " + std::to_string(n_inputs));
}

}  // namespace detail

/// Tape-recorded forward pass. Differentiable w.r.t. inputs (if they are
/// leaves) and parameters.
inline Var mlp_eval(Tape& t, const MlpHandle& h, std::span<const Var> inputs) {
  detail::check_mlp_inputs(h, inputs.size());
  const MlpSpec& s = h.spec;
  std::vector<Var> x(inputs.begin(), inputs.end());
  std::vector<Var> next;
  for (int l = 0; l < s.layer_count(); ++l) {
    int in, out;
    s.layer_dims(l, in, out);
    const int w_off = h.offset + s.layer_offset(l);
    const int b_off = w_off + in * out;
    next.assign(static_cast<size_t>(out), Var{});
    for (int r = 0; r < out; ++r) {
      Var acc = t.param(b_off + r);
      for (int c = 0; c < in; ++c)
        acc = t.add(acc, t.mul(t.param(w_off + r * in + c), x[static_cast<size_t>(c)]));
      next[static_cast<size_t>(r)] = (l < s.hidden_layers) ? t.tanh_(acc) : acc;
    }
    x = next;
  }
  return x[0];
}

struct MlpValueGrad {
  Var value;
  std::vector<Var> grad;  // d value / d input_j, tape-recorded
};

/// Forward pass with forward-mode tangent channels for selected inputs; the
/// partials stay on the tape so losses can differentiate through them.
inline MlpValueGrad mlp_eval_with_grad(Tape& t, const MlpHandle& h, std::span<const Var> inputs,
                                       std::span<const int> wrt) {
  detail::check_mlp_inputs(h, inputs.size());
  const MlpSpec& s = h.spec;
  const size_t nch = wrt.size();
  std::vector<Var> x(inputs.begin(), inputs.end());
  std::vector<std::vector<Var>> tan(nch);
  for (size_t j = 0; j < nch; ++j) {
    tan[j].assign(inputs.size(), Var{});
    for (size_t c = 0; c < inputs.size(); ++c)
      tan[j][c] = t.constant(static_cast<int>(c) == wrt[j] ? 1.0 : 0.0);
  }
  std::vector<Var> next, tnext;
  for (int l = 0; l < s.layer_count(); ++l) {
    int in, out;
    s.layer_dims(l, in, out);
    const int w_off = h.offset + s.layer_offset(l);
    const int b_off = w_off + in * out;
    next.assign(static_cast<size_t>(out), Var{});
    std::vector<std::vector<Var>> tpre(nch, std::vector<Var>(static_cast<size_t>(out)));
    for (int r = 0; r < out; ++r) {
      Var acc = t.param(b_off + r);
      std::vector<Var> tacc(nch);
      for (int c = 0; c < in; ++c) {
        Var w = t.param(w_off + r * in + c);
        acc = t.add(acc, t.mul(w, x[static_cast<size_t>(c)]));
        for (size_t j = 0; j < nch; ++j) {
          Var term = t.mul(w, tan[j][static_cast<size_t>(c)]);
          tacc[j] = (c == 0) ? term : t.add(tacc[j], term);
        }
      }
      if (l < s.hidden_layers) {
        Var hval = t.tanh_(acc);
        Var sech2 = t.add_c(t.neg(t.square(hval)), 1.0);
        next[static_cast<size_t>(r)] = hval;
        for (size_t j = 0; j < nch; ++j) tpre[j][static_cast<size_t>(r)] = t.mul(sech2, tacc[j]);
      } else {
        next[static_cast<size_t>(r)] = acc;
        for (size_t j = 0; j < nch; ++j) tpre[j][static_cast<size_t>(r)] = tacc[j];
      }
    }
    x = next;
    for (size_t j = 0; j < nch; ++j) tan[j] = tpre[j];
  }
  MlpValueGrad out;
  out.value = x[0];
  out.grad.resize(nch);
  for (size_t j = 0; j < nch; ++j) out.grad[j] = tan[j][0];
  return out;
}

/// All input partials.
inline MlpValueGrad mlp_eval_with_full_grad(Tape& t, const MlpHandle& h,
                                            std::span<const Var> inputs) {
  std::vector<int> wrt(inputs.size());
  for (size_t i = 0; i < wrt.size(); ++i) wrt[i] = static_cast<int>(i);
  return mlp_eval_with_grad(t, h, inputs, wrt);
}

/// Exact partial derivative w.r.t. the last spatial input (inputs are
/// (x_1..x_k, t), so index k-1), itself tape-recorded.
inline Var mlp_partial_last(Tape& t, const MlpHandle& h, std::span<const Var> inputs) {
  detail::check_mlp_inputs(h, inputs.size());
  if (inputs.size() < 2) throw DimensionMismatch("mlp_partial_last: needs (x..., t) inputs");
  const int which = static_cast<int>(inputs.size()) - 2;
  return mlp_eval_with_grad(t, h, inputs, std::span<const int>(&which, 1)).grad[0];
}

}  // namespace fpflow
