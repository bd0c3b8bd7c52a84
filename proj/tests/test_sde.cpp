#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpflow/sde.hpp"
#include "oracles.hpp"

using namespace fpflow;

namespace {

SdeProblem ou_problem(double k, double d_target) {
  SdeProblem prob;
  prob.dim = 1;
  prob.potential = PotentialModel::quadratic(prob.truth, 1, "truth");
  auto seg = prob.truth.segment_values("truth");
  seg[0] = k;   // quadratic coefficient
  seg[1] = 0.0; // no linear term
  Mat d(1, 1);
  d(0, 0) = d_target;
  prob.sigma = SdeProblem::sigma_for_diffusion(d);
  return prob;
}

}  // namespace

TEST_CASE("sample_mixture") {
  SUBCASE("single standard normal component") {
    const auto gm = GaussianMixture::standard_normal(2);
    const int n = 20000;
    const Mat s = sample_mixture(gm, n, 7);
    const auto mu = oracles::col_means(s);
    const double bound = 4.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mu[0]) < bound);
    CHECK(std::abs(mu[1]) < bound);
    const auto cov = oracles::col_cov(s);
    CHECK(cov(0, 0) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(cov(1, 1) == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("four-component mixture puts mass near the four means") {
    const auto gm = GaussianMixture::four_wells_2d();
    const Mat s = sample_mixture(gm, 40000, 11);
    // quadrant-conditional means approximate the component means
    double qmean[4][2] = {};
    int qn[4] = {};
    for (int i = 0; i < s.rows(); ++i) {
      const int q = (s(i, 0) >= 0 ? 0 : 1) + (s(i, 1) >= 0 ? 0 : 2);
      qmean[q][0] += s(i, 0);
      qmean[q][1] += s(i, 1);
      qn[q] += 1;
    }
    for (int q = 0; q < 4; ++q) {
      REQUIRE(qn[q] > 5000);
      const double mx = qmean[q][0] / qn[q], my = qmean[q][1] / qn[q];
      CHECK(std::abs(std::abs(mx) - 2.0) < 0.25);
      CHECK(std::abs(std::abs(my) - 2.0) < 0.25);
    }
  }
  SUBCASE("fixed seed reproduces bit-identical samples") {
    const auto gm = GaussianMixture::four_wells_2d();
    const Mat a = sample_mixture(gm, 500, 3);
    const Mat b = sample_mixture(gm, 500, 3);
    for (int i = 0; i < a.rows(); ++i)
      for (int c = 0; c < 2; ++c) CHECK(a(i, c) == b(i, c));
  }
  SUBCASE("non-SPD covariance fails as CholeskyFailure") {
    GaussianMixture gm;
    Mat bad(2, 2);
    bad(0, 0) = 1.0;
    bad(1, 1) = -1.0;
    gm.components.push_back({1.0, {0.0, 0.0}, bad});
    CHECK_THROWS_AS(sample_mixture(gm, 10, 1), CholeskyFailure);
  }
}

TEST_CASE("euler_maruyama") {
  SUBCASE("zero drift, zero noise leaves particles fixed") {
    SdeProblem prob;
    prob.dim = 2;
    prob.potential = PotentialModel::quadratic(prob.truth, 2, "truth");  // zeros
    prob.sigma = Mat(2, 2);
    Mat x0(3, 2);
    x0(0, 0) = 1.0;
    x0(1, 1) = -2.0;
    x0(2, 0) = 0.5;
    const Mat x1 = euler_maruyama(prob, x0, 1.0, 1e-2, 5);
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 2; ++c) CHECK(x1(i, c) == x0(i, c));
  }
  SUBCASE("deterministic gradient flow matches the exponential decay") {
    auto prob = ou_problem(2.0, 0.0);
    prob.sigma = Mat(1, 1);
    Mat x0(1, 1);
    x0(0, 0) = 1.3;
    const Mat x1 = euler_maruyama(prob, x0, 1.0, 1e-4, 5);
    CHECK(x1(0, 0) / x0(0, 0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-3));
  }
  SUBCASE("OU stationary variance matches sigma^2 / (2k)") {
    auto prob = ou_problem(1.0, 0.2);  // sigma = sqrt(0.4), D = 0.2
    const int n = 20000;
    Mat x0(n, 1);  // start at zero
    const Mat xT = euler_maruyama(prob, x0, 2.0, 1e-3, 17);
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += xT(i, 0) * xT(i, 0) / n;
    // var(2) = 0.2 (1 - e^{-4}); MC se of variance ~ var sqrt(2/n)
    const double want = 0.2 * (1.0 - std::exp(-4.0));
    CHECK(std::abs(var - want) < 3.0 * want * std::sqrt(2.0 / n) + 1e-3);
  }
  SUBCASE("blow-up is detected") {
    auto prob = ou_problem(-60.0, 0.0);  // repulsive potential, coarse step
    prob.sigma = Mat(1, 1);
    Mat x0(1, 1);
    x0(0, 0) = 1.0;
    CHECK_THROWS_AS(euler_maruyama(prob, x0, 50.0, 0.5, 1), BlowUp);
  }
  SUBCASE("time span must be a step multiple") {
    auto prob = ou_problem(1.0, 0.1);
    Mat x0(1, 1);
    CHECK_THROWS_AS(euler_maruyama(prob, x0, 0.35, 0.1, 1), InvalidConfig);
  }
}

TEST_CASE("generate_dataset") {
  SUBCASE("times = {0} returns the raw initial draw") {
    auto prob = ou_problem(1.0, 0.2);
    const auto gm = GaussianMixture::standard_normal(1);
    const auto ds = generate_dataset(prob, gm, 100, {0.0}, 1e-3, 9);
    CHECK(ds.snapshots.size() == 1);
    const Mat direct = sample_mixture(gm, 100, RandomEngine::derive_seed(9, 1));
    for (int i = 0; i < 100; ++i) CHECK(ds.snapshots[0].samples(i, 0) == direct(i, 0));
  }
  SUBCASE("eleven snapshots at 0.1 spacing") {
    auto prob = ou_problem(1.0, 0.2);
    const auto gm = GaussianMixture::standard_normal(1);
    std::vector<double> times;
    for (int i = 0; i <= 10; ++i) times.push_back(0.1 * i);
    const auto ds = generate_dataset(prob, gm, 200, times, 1e-3, 13);
    CHECK(ds.snapshots.size() == 11);
    for (size_t i = 0; i < 11; ++i) CHECK(ds.snapshots[i].time == doctest::Approx(0.1 * i));
    CHECK(ds.snapshots[3].samples.rows() == 200);
  }
  SUBCASE("OU empirical mean follows e^{-kt} mean_0") {
    auto prob = ou_problem(1.0, 0.05);
    GaussianMixture gm;
    Mat cov(1, 1);
    cov(0, 0) = 0.04;
    gm.components.push_back({1.0, {2.0}, cov});
    const int n = 20000;
    const auto ds = generate_dataset(prob, gm, n, {0.0, 0.5, 1.0}, 1e-3, 23);
    for (const auto& snap : ds.snapshots) {
      const double mean = oracles::col_means(snap.samples)[0];
      const double want = 2.0 * std::exp(-snap.time);
      CHECK(std::abs(mean - want) < 0.02);
    }
  }
  SUBCASE("identical seeds reproduce, distinct seeds decorrelate") {
    auto prob = ou_problem(1.0, 0.2);
    const auto gm = GaussianMixture::standard_normal(1);
    const auto a = generate_dataset(prob, gm, 300, {0.0, 0.2}, 1e-2, 31);
    const auto b = generate_dataset(prob, gm, 300, {0.0, 0.2}, 1e-2, 31);
    const auto c = generate_dataset(prob, gm, 300, {0.0, 0.2}, 1e-2, 32);
    double corr = 0.0, va = 0.0, vc = 0.0;
    for (int i = 0; i < 300; ++i) {
      CHECK(a.snapshots[1].samples(i, 0) == b.snapshots[1].samples(i, 0));
      corr += a.snapshots[1].samples(i, 0) * c.snapshots[1].samples(i, 0);
      va += a.snapshots[1].samples(i, 0) * a.snapshots[1].samples(i, 0);
      vc += c.snapshots[1].samples(i, 0) * c.snapshots[1].samples(i, 0);
    }
    CHECK(std::abs(corr / std::sqrt(va * vc)) < 0.1);
  }
}

TEST_CASE("2D quadratic drift: covariance matches the Lyapunov solution") {
  SdeProblem prob;
  prob.dim = 2;
  prob.potential = PotentialModel::quadratic(prob.truth, 2, "truth");
  auto seg = prob.truth.segment_values("truth");
  seg[0] = 2.0;
  seg[1] = 3.0;
  Mat d(2, 2);
  d(0, 0) = 0.2;
  d(1, 1) = 0.2;
  prob.sigma = SdeProblem::sigma_for_diffusion(d);
  const auto gm = GaussianMixture::standard_normal(2);
  const int n = 20000;
  const auto ds = generate_dataset(prob, gm, n, {0.0, 0.3, 0.6}, 1e-3, 41);
  // decoupled OU per axis: var_i(t) = D/k_i + (1 - D/k_i) e^{-2 k_i t}
  for (const auto& snap : ds.snapshots) {
    const auto cov = oracles::col_cov(snap.samples);
    const double k1 = 2.0, k2 = 3.0, D = 0.2;
    const double w1 = D / k1 + (1.0 - D / k1) * std::exp(-2.0 * k1 * snap.time);
    const double w2 = D / k2 + (1.0 - D / k2) * std::exp(-2.0 * k2 * snap.time);
    CHECK(std::abs(cov(0, 0) - w1) < 4.0 * w1 * std::sqrt(2.0 / n) + 2e-3);
    CHECK(std::abs(cov(1, 1) - w2) < 4.0 * w2 * std::sqrt(2.0 / n) + 2e-3);
    CHECK(std::abs(cov(0, 1)) < 4.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("weak order one: snapshot means move O(dt) under halving") {
  auto prob = ou_problem(1.0, 0.005);  // small noise keeps the MC floor low
  GaussianMixture gm;
  Mat cov(1, 1);
  cov(0, 0) = 1e-12;
  gm.components.push_back({1.0, {2.0}, cov});
  const int n = 200000;
  std::vector<double> errs;
  const double want = 2.0 * std::exp(-1.0);
  for (double dt : {1e-2, 5e-3, 2.5e-3}) {
    const auto ds = generate_dataset(prob, gm, n, {0.0, 1.0}, dt, 57);
    errs.push_back(std::abs(oracles::col_means(ds.snapshots[1].samples)[0] - want));
  }
  const double slope = std::log(errs[0] / errs[2]) / std::log(4.0);
  CHECK(slope > 0.7);
  CHECK(slope < 1.3);
}
