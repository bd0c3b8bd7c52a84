#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpflow/dynamics.hpp"
#include "oracles.hpp"

using namespace fpflow;

TEST_CASE("quadratic potential values and gradients") {
  ParamVector p;
  auto m = PotentialModel::quadratic(p, 2);
  auto seg = p.segment_values("psi");
  seg[0] = 2.0;
  seg[1] = 3.0;
  seg[2] = -1.0;
  seg[3] = -1.0;

  CHECK(potential_value(m, std::vector<double>{0.0, 0.0}, p) == doctest::Approx(0.0));
  CHECK(potential_value(m, std::vector<double>{1.0, 1.0}, p) == doctest::Approx(0.5));
  const auto g = potential_gradient(m, std::vector<double>{1.0, 1.0}, p);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(2.0));
}

TEST_CASE("double-well potential critical point at the origin") {
  ParamVector p;
  auto m = PotentialModel::double_well(p, 2);
  auto seg = p.segment_values("psi");
  seg[0] = seg[1] = 1.0;
  seg[2] = seg[3] = -1.5;
  const auto g = potential_gradient(m, std::vector<double>{0.0, 0.0}, p);
  CHECK(g[0] == doctest::Approx(0.0));
  CHECK(g[1] == doctest::Approx(0.0));
  // minimum ring at |x|^2 = 1.5 for this parameterization
  const auto gr = potential_gradient(m, std::vector<double>{std::sqrt(1.5), 0.0}, p);
  CHECK(gr[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("log-sum-exp wells") {
  ParamVector p;
  auto m = PotentialModel::lse_wells(p, 5);
  auto seg = p.segment_values("psi");
  for (int i = 0; i < 5; ++i) {
    seg[static_cast<size_t>(i)] = 1.0;
    seg[static_cast<size_t>(5 + i)] = -1.0;
  }
  SUBCASE("value at the origin is d - log 2") {
    const std::vector<double> x(5, 0.0);
    CHECK(potential_value(m, x, p) == doctest::Approx(5.0 - std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("gradient vanishes at the symmetric origin") {
    const std::vector<double> x(5, 0.0);
    const auto g = potential_gradient(m, x, p);
    for (double v : g) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("max subtraction keeps far-field values finite") {
    const std::vector<double> x(5, 40.0);  // exponents near -8000
    const double v = potential_value(m, x, p);
    CHECK(std::isfinite(v));
    ParamVector pc = p;
    Tape t(&pc);
    CHECK(std::isfinite(t.val(record_potential(t, m, x))));
  }
  SUBCASE("soft-min bound") {
    RandomEngine rng(3);
    std::vector<double> x(5);
    for (int trial = 0; trial < 100; ++trial) {
      double a = 0.0, b = 0.0;
      for (int i = 0; i < 5; ++i) {
        x[static_cast<size_t>(i)] = rng.uniform(-3.0, 3.0);
        a += (x[static_cast<size_t>(i)] + 1.0) * (x[static_cast<size_t>(i)] + 1.0);
        b += (x[static_cast<size_t>(i)] - 1.0) * (x[static_cast<size_t>(i)] - 1.0);
      }
      CHECK(potential_value(m, x, p) >= std::min(a, b) - std::log(2.0) - 1e-12);
      CHECK(potential_value(m, x, p) <= std::min(a, b) + 1e-12);
    }
  }
}

TEST_CASE("potential gradients match finite differences for every family") {
  RandomEngine rng(7);
  const int d = 2;
  std::vector<double> x{0.7, -0.4};

  auto check_family = [&](PotentialModel& m, ParamVector& p) {
    // plain path
    const auto g = potential_gradient(m, x, p);
    for (int i = 0; i < d; ++i) {
      auto f = [&](double v) {
        auto xx = x;
        xx[static_cast<size_t>(i)] = v;
        return potential_value(m, xx, p);
      };
      const double fd = oracles::central_fd(f, x[static_cast<size_t>(i)], 1e-6);
      CHECK(oracles::rel_err(g[static_cast<size_t>(i)], fd, 1e-9) < 1e-5);
    }
    // recorded path agrees with the plain path
    Tape t(&p);
    const auto gv = record_potential_gradient(t, m, x);
    const Var val = record_potential(t, m, x);
    CHECK(t.val(val) == doctest::Approx(potential_value(m, x, p)).epsilon(1e-12));
    for (int i = 0; i < d; ++i)
      CHECK(t.val(gv[static_cast<size_t>(i)]) ==
            doctest::Approx(g[static_cast<size_t>(i)]).epsilon(1e-12));
  };

  SUBCASE("quadratic") {
    ParamVector p;
    auto m = PotentialModel::quadratic(p, d);
    for (int i = 0; i < p.size(); ++i) p[i] = rng.normal();
    check_family(m, p);
  }
  SUBCASE("double well") {
    ParamVector p;
    auto m = PotentialModel::double_well(p, d);
    for (int i = 0; i < p.size(); ++i) p[i] = rng.normal();
    check_family(m, p);
  }
  SUBCASE("lse wells") {
    ParamVector p;
    auto m = PotentialModel::lse_wells(p, d);
    for (int i = 0; i < p.size(); ++i) p[i] = rng.normal();
    check_family(m, p);
  }
  SUBCASE("neural") {
    ParamVector p;
    auto m = PotentialModel::neural(p, d, 42);
    check_family(m, p);
  }
}

TEST_CASE("diffusion models") {
  SUBCASE("isotropic scalar") {
    ParamVector p;
    auto m = DiffusionModel::isotropic(p, 2, "diff", 0.2);
    const Mat d = diffusion_matrix(m, p);
    CHECK(d(0, 0) == doctest::Approx(0.2));
    CHECK(d(1, 1) == doctest::Approx(0.2));
    CHECK(d(0, 1) == 0.0);
  }
  SUBCASE("symmetric input is a fixed point of the symmetrization") {
    ParamVector p;
    auto m = DiffusionModel::full_symmetric(p, 2);
    auto seg = p.segment_values("diff");
    seg[0] = 0.3;
    seg[1] = seg[2] = 0.1;
    seg[3] = 0.7;
    const Mat d = diffusion_matrix(m, p);
    CHECK(d(0, 0) == doctest::Approx(0.3));
    CHECK(d(0, 1) == doctest::Approx(0.1));
    CHECK(d(1, 0) == doctest::Approx(0.1));
    CHECK(d(1, 1) == doctest::Approx(0.7));
  }
  SUBCASE("asymmetric input is symmetrized") {
    ParamVector p;
    auto m = DiffusionModel::full_symmetric(p, 2);
    auto seg = p.segment_values("diff");
    seg[0] = 0.0;
    seg[1] = 1.0;
    seg[2] = 0.0;
    seg[3] = 0.0;
    const Mat d = diffusion_matrix(m, p);
    CHECK(d(0, 1) == doctest::Approx(0.5));
    CHECK(d(1, 0) == doctest::Approx(0.5));
  }
  SUBCASE("exact symmetry for random parameters, recorded and plain") {
    RandomEngine rng(9);
    ParamVector p;
    auto m = DiffusionModel::full_symmetric(p, 4);
    for (int i = 0; i < p.size(); ++i) p[i] = rng.normal();
    const Mat d = diffusion_matrix(m, p);
    Tape t(&p);
    const MatVar dv = record_diffusion(t, m);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        CHECK(d(r, c) == d(c, r));
        CHECK(t.val(dv.at(r, c)) == d(r, c));
      }
  }
}

TEST_CASE("theta2 naming covers diffusion then potential") {
  ParamVector p;
  auto pot = PotentialModel::quadratic(p, 2);
  auto diff = DiffusionModel::isotropic(p, 2);
  const auto named = theta2_slots(pot, diff);
  REQUIRE(named.size() == 5);
  CHECK(named[0].name == "theta_D");
  CHECK(named[1].name == "theta_Psi_1");
  CHECK(named[4].name == "theta_Psi_4");
}
