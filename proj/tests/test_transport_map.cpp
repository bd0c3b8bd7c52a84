#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpflow/sde.hpp"
#include "fpflow/transport_map.hpp"
#include "oracles.hpp"

using namespace fpflow;

namespace {

/// Linear map component setup: S_k = b + sum_{j<k} a_j x_j + a_t t + softplus(a_k) x_k.
void set_linear(ParamVector& p, const TriangularMapModel& m, int k, std::vector<double> a,
                double a_t = 0.0, double b = 0.0) {
  const int off = m.components[static_cast<size_t>(k) - 1].lin_offset;
  REQUIRE(static_cast<int>(a.size()) == k);
  for (int j = 0; j < k; ++j) p[off + j] = a[static_cast<size_t>(j)];
  p[off + k] = a_t;
  p[off + k + 1] = b;
}

/// 2D linear KR map pulling the standard normal back to N(0, [[a,b],[b,c]]):
/// rows (1/sqrt(a), 0) and (-b/sqrt(a(ac-b^2)), sqrt(a/(ac-b^2))).
struct Eq15Map {
  double j11, j21, j22;
  Eq15Map(double a, double b, double c)
      : j11(1.0 / std::sqrt(a)),
        j21(-b / std::sqrt(a * (a * c - b * b))),
        j22(std::sqrt(a / (a * c - b * b))) {}
};

TriangularMapModel make_eq15_model(ParamVector& p, const Eq15Map& e) {
  auto m = TriangularMapModel::linear(p, 2);
  set_linear(p, m, 1, {softplus_inverse(e.j11)});
  set_linear(p, m, 2, {e.j21, softplus_inverse(e.j22)});
  return m;
}

}  // namespace

TEST_CASE("simpson_0_to_x") {
  SUBCASE("exact on quadratics") {
    CHECK(simpson_0_to_x([](double y) { return y * y; }, 1.0, 20) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("zero upper limit") {
    CHECK(simpson_0_to_x([](double y) { return std::exp(y); }, 0.0, 20) == doctest::Approx(0.0));
  }
  SUBCASE("signed orientation for negative x") {
    const double fwd = simpson_0_to_x([](double y) { return std::exp(y); }, -1.0, 20);
    CHECK(fwd == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-6));
  }
  SUBCASE("softplus integrand vs adaptive quadrature") {
    const double got = simpson_0_to_x([](double y) { return fpflow::softplus(y); }, 2.0, 20);
    const double want = oracles::adaptive_simpson([](double y) { return fpflow::softplus(y); },
                                                  0.0, 2.0, 1e-12);
    CHECK(std::abs(got - want) < 1e-6);
  }
  SUBCASE("odd partition counts are rejected") {
    CHECK_THROWS_AS(simpson_0_to_x([](double y) { return y; }, 1.0, 7), OddPartitionCount);
    ParamVector p;
    Tape t(&p);
    CHECK_THROWS_AS(simpson_0_to_x(t, [](Tape& tt, Var y) { return y; }, t.constant(1.0), 0),
                    OddPartitionCount);
  }
  SUBCASE("tape-recorded variant matches the plain one") {
    ParamVector p;
    Tape t(&p);
    Var x = t.constant(1.4);
    Var got = simpson_0_to_x(t, [](Tape& tt, Var y) { return tt.softplus_(y); }, x, 20);
    CHECK(t.val(got) == doctest::Approx(simpson_0_to_x([](double y) { return fpflow::softplus(y); }, 1.4, 20)).epsilon(1e-14));
  }
}

TEST_CASE("eval_component closed forms (affine components)") {
  SUBCASE("f_k = c x_k gives S_k = softplus(c) x_k") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 1);
    set_linear(p, m, 1, {0.8});
    const double x = 1.7;
    CHECK(eval_component(m, 1, std::vector<double>{x}, 0.3, p) ==
          doctest::Approx(softplus(0.8) * x).epsilon(1e-12));
  }
  SUBCASE("f_k independent of x_k gives S_k = f_k + log(2) x_k") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 2);
    set_linear(p, m, 2, {0.5, 0.0}, 0.7, 0.2);  // a_1=0.5, a_2=0, a_t=0.7, b=0.2
    const std::vector<double> x{1.1, -0.6};
    const double t = 0.4;
    const double want = 0.2 + 0.5 * 1.1 + 0.7 * t + std::log(2.0) * (-0.6);
    CHECK(eval_component(m, 2, x, t, p) == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("network component integral matches adaptive quadrature of its integrand") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 2, 77);
    RandomEngine rng(4);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal();
    const std::vector<double> x{0.6, 1.3};
    const double time = 0.5;
    const auto& comp = m.components[1];

    // integrand softplus(d_2 f_2(x_1, y, t)) via the scalar tape path
    auto integrand = [&](double y) {
      Tape t(&p);
      std::vector<Var> in{t.constant(x[0]), t.constant(y), t.constant(time)};
      return fpflow::softplus(t.val(mlp_partial_last(t, comp.mlp, in)));
    };
    auto f0 = [&] {
      Tape t(&p);
      std::vector<Var> in{t.constant(x[0]), t.constant(0.0), t.constant(time)};
      return t.val(mlp_eval(t, comp.mlp, in));
    }();
    const double want = f0 + oracles::adaptive_simpson(integrand, 0.0, x[1], 1e-12);
    CHECK(std::abs(eval_component(m, 2, x, time, p) - want) < 1e-6);
  }
}

TEST_CASE("eval_map structure") {
  SUBCASE("1D linear model is scalar softplus(c) x") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 1);
    set_linear(p, m, 1, {-0.3});
    const auto y = eval_map(m, std::vector<double>{2.0}, 0.0, p);
    CHECK(y.size() == 1);
    CHECK(y[0] == doctest::Approx(softplus(-0.3) * 2.0));
  }
  SUBCASE("triangularity: S_k ignores coordinates beyond k") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 3, 5);
    RandomEngine rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
      auto y1 = eval_map(m, x, 0.3, p);
      x[2] = rng.normal();  // perturb x_3: S_1, S_2 must not move
      auto y2 = eval_map(m, x, 0.3, p);
      CHECK(y1[0] == y2[0]);
      CHECK(y1[1] == y2[1]);
      x[1] = rng.normal();  // perturb x_2: S_1 must not move
      auto y3 = eval_map(m, x, 0.3, p);
      CHECK(y1[0] == y3[0]);
    }
  }
  SUBCASE("2D Gaussian closed-form map pushes N(0,Sigma) to the standard normal") {
    const double a = 2.0, b = 1.0, c = 1.0;
    Eq15Map e(a, b, c);
    ParamVector p;
    auto m = make_eq15_model(p, e);

    Mat sigma_cov(2, 2);
    sigma_cov(0, 0) = a;
    sigma_cov(0, 1) = sigma_cov(1, 0) = b;
    sigma_cov(1, 1) = c;
    GaussianMixture gm;
    gm.components.push_back({1.0, {0.0, 0.0}, sigma_cov});
    const int n = 100000;
    const Mat samples = sample_mixture(gm, n, 99);
    Mat mapped(n, 2);
    std::vector<double> x(2);
    for (int i = 0; i < n; ++i) {
      x[0] = samples(i, 0);
      x[1] = samples(i, 1);
      const auto y = eval_map(m, x, 0.0, p);
      mapped(i, 0) = y[0];
      mapped(i, 1) = y[1];
    }
    const auto mu = oracles::col_means(mapped);
    const auto cov = oracles::col_cov(mapped);
    const double mc = 3.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mu[0]) < mc);
    CHECK(std::abs(mu[1]) < mc);
    CHECK(std::abs(cov(0, 0) - 1.0) < 3.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(cov(1, 1) - 1.0) < 3.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(cov(0, 1)) < mc);
  }
}

TEST_CASE("spatial_jacobian") {
  SUBCASE("1D linear case") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 1);
    set_linear(p, m, 1, {1.1});
    const Mat j = spatial_jacobian(m, std::vector<double>{0.4}, 0.1, p);
    CHECK(j(0, 0) == doctest::Approx(softplus(1.1)));
  }
  SUBCASE("strictly upper entries vanish for random networks, d = 4") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 4, 15);
    const std::vector<double> x{0.2, -0.5, 0.9, 0.1};
    const Mat j = spatial_jacobian(m, x, 0.6, p);
    for (int r = 0; r < 4; ++r)
      for (int c = r + 1; c < 4; ++c) CHECK(j(r, c) == 0.0);
  }
  SUBCASE("matches central finite differences of eval_map") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 3, 21);
    RandomEngine rng(8);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal();
    const std::vector<double> x{0.4, -0.8, 0.6};
    const double time = 0.5;
    const Mat j = spatial_jacobian(m, x, time, p);
    double worst = 0.0;
    for (int col = 0; col < 3; ++col) {
      std::vector<double> xp = x, xm = x;
      xp[static_cast<size_t>(col)] += 1e-5;
      xm[static_cast<size_t>(col)] -= 1e-5;
      const auto yp = eval_map(m, xp, time, p);
      const auto ym = eval_map(m, xm, time, p);
      for (int row = 0; row < 3; ++row) {
        const double fd = (yp[static_cast<size_t>(row)] - ym[static_cast<size_t>(row)]) / 2e-5;
        if (std::abs(fd) < 1e-9 && std::abs(j(row, col)) < 1e-9) continue;
        worst = std::max(worst, oracles::rel_err(j(row, col), fd, 1e-7));
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("log_pullback_density") {
  SUBCASE("identity-calibrated map reproduces the reference density") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 2);
    set_linear(p, m, 1, {softplus_inverse(1.0)});
    set_linear(p, m, 2, {0.0, softplus_inverse(1.0)});
    ReferenceDensity eta{2};
    for (double xv : {-1.5, 0.0, 0.7}) {
      const std::vector<double> x{xv, 0.5 * xv};
      CHECK(log_pullback_density(m, x, 0.2, p) ==
            doctest::Approx(eta.log_density(x)).epsilon(1e-12));
    }
  }
  SUBCASE("2D closed-form map reproduces the N(0,Sigma) density on a grid") {
    const double a = 2.0, b = 1.0, c = 1.0;
    Eq15Map e(a, b, c);
    ParamVector p;
    auto m = make_eq15_model(p, e);
    const double det_sigma = a * c - b * b;
    Mat inv(2, 2);
    inv(0, 0) = c / det_sigma;
    inv(0, 1) = inv(1, 0) = -b / det_sigma;
    inv(1, 1) = a / det_sigma;
    for (int gx = 0; gx < 5; ++gx) {
      for (int gy = 0; gy < 4; ++gy) {
        const std::vector<double> x{-2.0 + gx, -1.5 + gy};
        const double q = inv(0, 0) * x[0] * x[0] + 2.0 * inv(0, 1) * x[0] * x[1] +
                         inv(1, 1) * x[1] * x[1];
        const double want = std::exp(-0.5 * q) / (2.0 * M_PI * std::sqrt(det_sigma));
        const double got = std::exp(log_pullback_density(m, x, 0.0, p));
        CHECK(oracles::rel_err(got, want) < 1e-10);
      }
    }
  }
  SUBCASE("pullback of a random network map integrates to one") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 2, 41);
    RandomEngine rng(12);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal();
    const int res = 200;
    const double lo = -8.0, hi = 8.0, cell = (hi - lo) / (res - 1);
    double mass = 0.0;
    std::vector<double> x(2);
    for (int i = 0; i < res; ++i) {
      for (int j = 0; j < res; ++j) {
        x[0] = lo + cell * i;
        x[1] = lo + cell * j;
        double w = 1.0;
        if (i == 0 || i == res - 1) w *= 0.5;
        if (j == 0 || j == res - 1) w *= 0.5;
        mass += w * std::exp(log_pullback_density(m, x, 0.3, p)) * cell * cell;
      }
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("time_derivative") {
  SUBCASE("time-independent map has zero derivative") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 2);
    set_linear(p, m, 1, {0.4}, 0.0, 0.1);
    set_linear(p, m, 2, {0.2, -0.1}, 0.0, 0.0);
    const auto dt = time_derivative(m, std::vector<double>{0.3, 0.6}, 0.5, p);
    CHECK(dt[0] == 0.0);
    CHECK(dt[1] == 0.0);
  }
  SUBCASE("additive c t term shows up directly") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 1);
    set_linear(p, m, 1, {0.4}, 2.5, 0.0);
    const auto dt = time_derivative(m, std::vector<double>{0.3}, 0.1, p);
    CHECK(dt[0] == doctest::Approx(2.5));
  }
  SUBCASE("random network map matches a central difference in t") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 2, 51);
    const std::vector<double> x{0.5, -0.4};
    const double time = 0.45;
    const auto dt = time_derivative(m, x, time, p);
    const auto yp = eval_map(m, x, time + 1e-5, p);
    const auto ym = eval_map(m, x, time - 1e-5, p);
    for (int k = 0; k < 2; ++k) {
      const double fd = (yp[static_cast<size_t>(k)] - ym[static_cast<size_t>(k)]) / 2e-5;
      CHECK(oracles::rel_err(dt[static_cast<size_t>(k)], fd, 1e-8) < 1e-5);
    }
  }
}

TEST_CASE("velocity") {
  SUBCASE("static map has zero velocity") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 2);
    set_linear(p, m, 1, {0.4});
    set_linear(p, m, 2, {0.1, 0.3});
    const auto v = velocity(m, std::vector<double>{1.0, -1.0}, 0.2, p);
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
  }
  SUBCASE("scalar case: S = e^t x gives v = -x") {
    // assembled by hand: jacobian [[e^t]], dS/dt = e^t x
    ParamVector p;
    Tape t(&p);
    FluxBundle b;
    const double time = 0.3, x = 1.7;
    b.jacobian = MatVar(1, 1);
    b.jacobian.at(0, 0) = t.constant(std::exp(time));
    b.dmap_dt = {t.constant(std::exp(time) * x)};
    const auto v = record_velocity(t, b);
    CHECK(t.val(v[0]) == doctest::Approx(-x).epsilon(1e-14));
  }
  SUBCASE("solve residual: grad S v = -dS/dt to machine precision, d = 3") {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, 3, 61);
    const std::vector<double> x{0.2, 0.8, -0.5};
    Tape t(&p);
    const auto b = record_flux_bundle(t, m, x, 0.7);
    const auto v = record_velocity(t, b);
    for (int r = 0; r < 3; ++r) {
      double lhs = 0.0;
      for (int c = 0; c <= r; ++c) lhs += t.val(b.jacobian.at(r, c)) * t.val(v[static_cast<size_t>(c)]);
      CHECK(std::abs(lhs + t.val(b.dmap_dt[static_cast<size_t>(r)])) < 1e-12);
    }
  }
}

TEST_CASE("mass_flux") {
  SUBCASE("static map has zero flux") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 2);
    set_linear(p, m, 1, {0.4});
    set_linear(p, m, 2, {0.1, 0.3});
    const auto f = mass_flux(m, std::vector<double>{1.0, -1.0}, 0.2, p);
    CHECK(f[0] == 0.0);
    CHECK(f[1] == 0.0);
  }
  SUBCASE("1D flux is -eta(S) dS/dt") {
    ParamVector p;
    auto m = TriangularMapModel::linear(p, 1);
    set_linear(p, m, 1, {0.4}, 1.2, 0.1);
    const std::vector<double> x{0.9};
    const double time = 0.25;
    const auto f = mass_flux(m, x, time, p);
    const auto s = eval_map(m, x, time, p);
    ReferenceDensity eta{1};
    const double want = -std::exp(eta.log_density(s)) * 1.2;
    CHECK(f[0] == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("flux equals density times velocity, d in {2,3}") {
    for (int d : {2, 3}) {
      ParamVector p;
      auto m = TriangularMapModel::mlp(p, d, 71 + d);
      RandomEngine rng(14 + d);
      std::vector<double> x(static_cast<size_t>(d));
      for (int trial = 0; trial < 5; ++trial) {
        for (auto& v : x) v = rng.uniform(-1.5, 1.5);
        const double time = rng.uniform(0.0, 1.0);
        const auto f = mass_flux(m, x, time, p);
        const auto v = velocity(m, x, time, p);
        const double rho = std::exp(log_pullback_density(m, x, time, p));
        for (int k = 0; k < d; ++k)
          CHECK(oracles::rel_err(f[static_cast<size_t>(k)], rho * v[static_cast<size_t>(k)], 1e-12) < 1e-9);
      }
    }
  }
}

TEST_CASE("monotonicity of the map diagonal at random configurations") {
  RandomEngine rng(16);
  for (int d : {1, 2, 3}) {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, d, 100 + d);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.1 * rng.normal();
    std::vector<double> x(static_cast<size_t>(d));
    for (int trial = 0; trial < 100; ++trial) {
      for (auto& v : x) v = rng.uniform(-3.0, 3.0);
      const Mat j = spatial_jacobian(m, x, rng.uniform(0.0, 1.0), p);
      for (int k = 0; k < d; ++k) CHECK(j(k, k) > 0.0);
    }
    // spot check: S_k strictly increases along x_k
    for (int trial = 0; trial < 10; ++trial) {
      for (auto& v : x) v = rng.uniform(-2.0, 2.0);
      auto lo = x, hi = x;
      lo[static_cast<size_t>(d - 1)] -= 0.1;
      hi[static_cast<size_t>(d - 1)] += 0.1;
      CHECK(eval_component(m, d, hi, 0.5, p) > eval_component(m, d, lo, 0.5, p));
    }
  }
}

TEST_CASE("continuity equation self-consistency of the construction") {
  // finite-difference d/dt of the pullback density vs minus the divergence of
  // the adjugate-form flux; an identity of the map, not a training outcome
  RandomEngine rng(19);
  for (int d : {1, 2, 3}) {
    ParamVector p;
    auto m = TriangularMapModel::mlp(p, d, 200 + d);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal();
    std::vector<double> x(static_cast<size_t>(d));
    for (int trial = 0; trial < 5; ++trial) {
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
      const double time = rng.uniform(0.2, 0.8);
      const double ht = 1e-5, hx = 1e-5;
      const double rho_p = std::exp(log_pullback_density(m, x, time + ht, p));
      const double rho_m = std::exp(log_pullback_density(m, x, time - ht, p));
      const double drho_dt = (rho_p - rho_m) / (2.0 * ht);
      double div = 0.0;
      for (int j = 0; j < d; ++j) {
        auto xp = x, xm = x;
        xp[static_cast<size_t>(j)] += hx;
        xm[static_cast<size_t>(j)] -= hx;
        div += (mass_flux(m, xp, time, p)[static_cast<size_t>(j)] -
                mass_flux(m, xm, time, p)[static_cast<size_t>(j)]) /
               (2.0 * hx);
      }
      const double rho = std::exp(log_pullback_density(m, x, time, p));
      const double scale = std::max({std::abs(drho_dt), std::abs(div), 0.01 * rho});
      CHECK(std::abs(drho_dt + div) / scale < 1e-3);
    }
  }
}

TEST_CASE("map inversion and change-of-variables consistency") {
  ParamVector p;
  auto m = TriangularMapModel::mlp(p, 2, 301);
  RandomEngine rng(21);
  for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal();

  SUBCASE("S(S^{-1}(y)) = y") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::vector<double> y{rng.normal(), rng.normal()};
      const auto x = invert_map(m, y, 0.4, p);
      const auto back = eval_map(m, x, 0.4, p);
      CHECK(std::abs(back[0] - y[0]) < 1e-8);
      CHECK(std::abs(back[1] - y[1]) < 1e-8);
    }
  }
  SUBCASE("samples drawn through the inverse push forward to the reference") {
    const int n = 2000;
    RandomEngine zrng(23);
    Mat pushed(n, 2);
    std::vector<double> z(2);
    for (int i = 0; i < n; ++i) {
      z[0] = zrng.normal();
      z[1] = zrng.normal();
      const auto x = invert_map(m, z, 0.4, p);  // x ~ pullback density
      const auto y = eval_map(m, x, 0.4, p);    // back through S: y ~ eta
      pushed(i, 0) = y[0];
      pushed(i, 1) = y[1];
    }
    const auto mu = oracles::col_means(pushed);
    const auto cov = oracles::col_cov(pushed);
    const double se = 4.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mu[0]) < se);
    CHECK(std::abs(mu[1]) < se);
    CHECK(std::abs(cov(0, 0) - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(cov(1, 1) - 1.0) < 4.0 * std::sqrt(2.0 / n));
  }
}

TEST_CASE("monotone_rearrangement_1d") {
  SUBCASE("identical distributions give the identity map") {
    auto cdf = [](double x) { return oracles::normal_cdf(x); };
    for (double x : {-1.2, 0.0, 0.8})
      CHECK(monotone_rearrangement_1d(cdf, cdf, x) == doctest::Approx(x).epsilon(1e-9));
  }
  SUBCASE("Gaussian source reduces to the affine standardization") {
    const double mu = 1.5, sigma = 0.7;
    auto g = [&](double x) { return oracles::normal_cdf(x, mu, sigma); };
    auto f = [](double x) { return oracles::normal_cdf(x); };
    for (double x : {0.2, 1.5, 2.9})
      CHECK(monotone_rearrangement_1d(g, f, x) == doctest::Approx((x - mu) / sigma).epsilon(1e-8));
  }
  SUBCASE("exponential to normal sends the median to zero") {
    auto g = [](double x) { return x <= 0.0 ? 0.0 : 1.0 - std::exp(-x); };
    auto f = [](double x) { return oracles::normal_cdf(x); };
    CHECK(std::abs(monotone_rearrangement_1d(g, f, std::log(2.0))) < 1e-9);
  }
  SUBCASE("quantiles outside the bracket fail loudly") {
    auto g = [](double x) { return oracles::normal_cdf(x); };
    auto f = [](double x) { return oracles::normal_cdf(x, 200.0); };  // quantile near 200
    CHECK_THROWS_AS(monotone_rearrangement_1d(g, f, 0.0), BracketFailure);
  }
}
