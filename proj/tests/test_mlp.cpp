#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpflow/mlp.hpp"
#include "oracles.hpp"

using namespace fpflow;

namespace {

// straightforward layer-by-layer re-implementation used as the oracle
double naive_mlp(const MlpSpec& s, const double* seg, const std::vector<double>& in0) {
  std::vector<double> x = in0, next;
  for (int l = 0; l <= s.hidden_layers; ++l) {
    int in, out;
    s.layer_dims(l, in, out);
    const double* W = seg + s.layer_offset(l);
    const double* b = W + in * out;
    next.assign(static_cast<size_t>(out), 0.0);
    for (int r = 0; r < out; ++r) {
      double acc = b[r];
      for (int c = 0; c < in; ++c) acc += W[r * in + c] * x[static_cast<size_t>(c)];
      next[static_cast<size_t>(r)] = (l < s.hidden_layers) ? std::tanh(acc) : acc;
    }
    x = next;
  }
  return x[0];
}

}  // namespace

TEST_CASE("parameter count matches sum over layers of (in+1)*out") {
  MlpSpec s;
  s.input_dim = 3;
  s.hidden_layers = 5;
  s.hidden_width = 5;
  // (3+1)*5 + 4*(5+1)*5 + (5+1)*1
  CHECK(s.param_count() == 20 + 120 + 6);
  ParamVector p;
  const auto h = register_mlp(p, "n", s, 1);
  CHECK(p.segment("n").length == s.param_count());
  CHECK(h.offset == 0);
}

TEST_CASE("zero network evaluates to zero; bias-only network to its bias") {
  MlpSpec s;
  s.input_dim = 2;
  ParamVector p;
  const auto h = register_mlp(p, "n", s, 1);
  for (int i = 0; i < p.size(); ++i) p[i] = 0.0;
  Tape t(&p);
  std::vector<Var> in{t.constant(1.3), t.constant(-2.1)};
  CHECK(t.val(mlp_eval(t, h, in)) == doctest::Approx(0.0));

  // output bias only
  const int out_bias_slot = h.offset + s.layer_offset(s.hidden_layers) + s.hidden_width;
  p[out_bias_slot] = 0.77;
  Tape t2(&p);
  std::vector<Var> in2{t2.constant(0.2), t2.constant(4.0)};
  CHECK(t2.val(mlp_eval(t2, h, in2)) == doctest::Approx(0.77));
}

TEST_CASE("random network matches the naive layer-by-layer oracle") {
  MlpSpec s;
  s.input_dim = 4;
  ParamVector p;
  const auto h = register_mlp(p, "n", s, 17);
  RandomEngine rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(4);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    Tape t(&p);
    std::vector<Var> in;
    for (double v : x) in.push_back(t.constant(v));
    const double got = t.val(mlp_eval(t, h, in));
    const double want = naive_mlp(s, p.data() + h.offset, x);
    CHECK(got == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("mlp_partial_last") {
  SUBCASE("zero network has zero partial") {
    MlpSpec s;
    s.input_dim = 3;
    ParamVector p;
    const auto h = register_mlp(p, "n", s, 1);
    for (int i = 0; i < p.size(); ++i) p[i] = 0.0;
    Tape t(&p);
    std::vector<Var> in{t.constant(0.1), t.constant(0.2), t.constant(0.3)};
    CHECK(t.val(mlp_partial_last(t, h, in)) == doctest::Approx(0.0));
  }
  SUBCASE("pure linear layer f = w . x recovers w") {
    MlpSpec s;
    s.input_dim = 3;
    s.hidden_layers = 0;  // single linear layer
    ParamVector p;
    const auto h = register_mlp(p, "n", s, 1);
    auto seg = p.segment_values("n");
    seg[0] = 0.5;
    seg[1] = -1.25;  // weight of the last spatial input (index 1)
    seg[2] = 2.0;    // weight of t
    seg[3] = 0.1;    // bias
    Tape t(&p);
    std::vector<Var> in{t.constant(0.7), t.constant(0.4), t.constant(0.9)};
    CHECK(t.val(mlp_partial_last(t, h, in)) == doctest::Approx(-1.25));
  }
  SUBCASE("random network matches a central finite difference") {
    MlpSpec s;
    s.input_dim = 3;
    ParamVector p;
    const auto h = register_mlp(p, "n", s, 23);
    RandomEngine rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(0.0, 1.0)};
      Tape t(&p);
      std::vector<Var> in;
      for (double v : x) in.push_back(t.constant(v));
      const double got = t.val(mlp_partial_last(t, h, in));
      auto f = [&](double v) {
        std::vector<double> xx = x;
        xx[1] = v;
        return naive_mlp(s, p.data() + h.offset, xx);
      };
      const double fd = oracles::central_fd(f, x[1], 1e-5);
      worst = std::max(worst, oracles::rel_err(got, fd, 1e-8));
    }
    CHECK(worst < 1e-6);
  }
  SUBCASE("equals the x_k entry of the reverse-mode input gradient") {
    MlpSpec s;
    s.input_dim = 3;
    ParamVector p;
    const auto h = register_mlp(p, "n", s, 29);
    RandomEngine rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      Tape t(&p);
      std::vector<Var> in{t.leaf(rng.uniform(-1.0, 1.0)), t.leaf(rng.uniform(-1.0, 1.0)),
                          t.leaf(rng.uniform(0.0, 1.0))};
      Var fwd = mlp_partial_last(t, h, in);
      Var val = mlp_eval(t, h, in);
      t.backward(val);
      CHECK(t.val(fwd) == doctest::Approx(t.adjoint(in[1])).epsilon(1e-13));
    }
  }
}

TEST_CASE("second derivatives stay bounded on compacta (smoke)") {
  MlpSpec s;
  s.input_dim = 2;
  ParamVector p;
  const auto h = register_mlp(p, "n", s, 31);
  auto f = [&](double x0, double x1) {
    return naive_mlp(s, p.data() + h.offset, {x0, x1});
  };
  for (double x = -2.0; x <= 2.0; x += 0.5) {
    const double hh = 1e-4;
    const double second = (f(x + hh, 0.3) - 2.0 * f(x, 0.3) + f(x - hh, 0.3)) / (hh * hh);
    CHECK(std::isfinite(second));
    CHECK(std::abs(second) < 1e3);
  }
}

TEST_CASE("init_params: determinism, bounds, and mean statistics") {
  MlpSpec s;
  s.input_dim = 3;
  CHECK(init_params(s, 7) == init_params(s, 7));
  CHECK(init_params(s, 7) != init_params(s, 8));

  // every weight bounded by the layer's Xavier limit and biases at zero
  const auto v = init_params(s, 7);
  for (int l = 0; l <= s.hidden_layers; ++l) {
    int in, out;
    s.layer_dims(l, in, out);
    const double limit = std::sqrt(6.0 / (in + out));
    const int off = s.layer_offset(l);
    for (int i = 0; i < in * out; ++i) CHECK(std::abs(v[static_cast<size_t>(off + i)]) <= limit);
    for (int i = 0; i < out; ++i) CHECK(v[static_cast<size_t>(off + in * out + i)] == 0.0);
  }

  // empirical mean of many draws is near zero (3 sigma of the uniform law)
  MlpSpec wide;
  wide.input_dim = 9;
  wide.hidden_layers = 5;
  wide.hidden_width = 40;  // ~10k weights
  double sum = 0.0;
  int count = 0;
  const auto big = init_params(wide, 12345);
  for (int l = 0; l <= wide.hidden_layers; ++l) {
    int in, out;
    wide.layer_dims(l, in, out);
    const double limit = std::sqrt(6.0 / (in + out));
    const int off = wide.layer_offset(l);
    for (int i = 0; i < in * out; ++i) {
      sum += big[static_cast<size_t>(off + i)] / limit;  // normalize to U(-1,1)
      ++count;
    }
  }
  const double mean = sum / count;
  const double sigma = 1.0 / std::sqrt(3.0 * count);  // std of the mean of U(-1,1)
  CHECK(std::abs(mean) < 3.0 * sigma);
}

TEST_CASE("dimension mismatches are rejected") {
  MlpSpec s;
  s.input_dim = 3;
  ParamVector p;
  const auto h = register_mlp(p, "n", s, 1);
  Tape t(&p);
  std::vector<Var> in{t.constant(1.0), t.constant(2.0)};
  CHECK_THROWS_AS(mlp_eval(t, h, in), DimensionMismatch);
}
