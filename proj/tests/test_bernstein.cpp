#include <doctest.h>

#include <cmath>

#include "crowdfm/bernstein.hpp"
#include "helpers.hpp"

using namespace crowdfm;
using namespace crowdfm::bernstein;

namespace {

// de Casteljau evaluation, independent of the closed-form basis.
double de_casteljau(const Eigen::VectorXd& c, double s) {
  std::vector<double> b(c.data(), c.data() + c.size());
  for (size_t r = 1; r < b.size(); ++r)
    for (size_t i = 0; i + r < b.size(); ++i) b[i] = (1.0 - s) * b[i] + s * b[i + 1];
  return b[0];
}

}  // namespace

TEST_CASE("basis values match de Casteljau") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(1, 12);
    const double s = rng.uniform();
    for (int j = 0; j <= n; ++j) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n + 1);
      e[j] = 1.0;
      CHECK(basis_value(n, j, s) == doctest::Approx(de_casteljau(e, s)).epsilon(1e-12));
    }
  }
  CHECK(binomial(10, 3) == 120.0);
  CHECK(binomial(10, 0) == 1.0);
}

TEST_CASE("partition of unity, endpoints and convex hull on 100 seeds") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int n = rng.uniform_int(1, 14);
    const int w = rng.uniform_int(2, 80);
    const auto basis = canonical_basis(n, rng.uniform(0.5, 10.0), w);
    for (int i = 0; i < w; ++i) CHECK(std::abs(basis.P.row(i).sum() - 1.0) < 1e-12);

    const auto c = testing::random_coeffs(rng, n);
    const auto traj = eval_trajectory(c, basis);
    CHECK(traj.xy(0, 0) == doctest::Approx(c.cx[0]).epsilon(1e-12));
    CHECK(traj.xy(0, 1) == doctest::Approx(c.cy[0]).epsilon(1e-12));
    CHECK(traj.xy(w - 1, 0) == doctest::Approx(c.cx[n]).epsilon(1e-12));
    CHECK(traj.xy(w - 1, 1) == doctest::Approx(c.cy[n]).epsilon(1e-12));

    // Every waypoint lies in the control polygon's hull: its projection onto
    // any direction is bounded by the projections of the control points.
    for (int d = 0; d < 16; ++d) {
      const double a = 2.0 * M_PI * d / 16.0;
      const Eigen::Vector2d u(std::cos(a), std::sin(a));
      const Eigen::VectorXd proj = u.x() * c.cx + u.y() * c.cy;
      const Eigen::VectorXd wp = traj.xy * u;
      CHECK(wp.maxCoeff() <= proj.maxCoeff() + 1e-12);
      CHECK(wp.minCoeff() >= proj.minCoeff() - 1e-12);
    }
  }
}

TEST_CASE("derivatives agree with central differences") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 1000);
    const int n = rng.uniform_int(2, 12);
    const double T = rng.uniform(1.0, 8.0);
    const auto c = testing::random_coeffs(rng, n);
    Eigen::VectorXd times(7);
    for (int i = 0; i < 7; ++i) times[i] = T * (0.05 + 0.9 * i / 6.0);
    // The basis maps [times.front(), times.back()] onto [0, 1]; anchor the
    // grid at 0 and T so the difference stencil shares the parametrization.
    Eigen::VectorXd grid(9);
    grid << 0.0, times, T;
    const auto basis = build_basis(n, grid);
    const auto traj = eval_trajectory(c, basis, true);
    const double h = 1e-5 * T;
    for (int i = 1; i <= 7; ++i) {
      Eigen::VectorXd around(5);
      around << 0.0, grid[i] - h, grid[i], grid[i] + h, T;
      const auto b2 = build_basis(n, around);
      const auto t2 = eval_trajectory(c, b2, true);
      for (int ax = 0; ax < 2; ++ax) {
        const double fd_v = (t2.xy(3, ax) - t2.xy(1, ax)) / (2 * h);
        const double fd_a = ((*t2.vel)(3, ax) - (*t2.vel)(1, ax)) / (2 * h);
        const double v = (*traj.vel)(i, ax);
        const double acc = (*traj.acc)(i, ax);
        CHECK(std::abs(fd_v - v) <= 1e-3 * std::max(1.0, std::abs(v)));
        CHECK(std::abs(fd_a - acc) <= 1e-3 * std::max(1.0, std::abs(acc)));
      }
    }
  }
}

TEST_CASE("fit recovers coefficients of an exact Bernstein curve") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 2000);
    const int n = rng.uniform_int(1, 10);
    const auto basis = canonical_basis(n, 5.0, 50);
    const auto c = testing::random_coeffs(rng, n);
    const auto fit = fit_coeffs(eval_trajectory(c, basis).xy, basis);
    CHECK((fit.coeffs.cx - c.cx).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((fit.coeffs.cy - c.cy).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.residual_norm < 1e-8);
  }
}

TEST_CASE("flat layout round trip") {
  Rng rng(5);
  const auto c = testing::random_coeffs(rng, 10);
  const auto back = TrajectoryCoeffs::from_flat(c.flat());
  CHECK(back.cx == c.cx);
  CHECK(back.cy == c.cy);
  CHECK(c.flat().size() == 22);
  CHECK(c.flat()[11] == c.cy[0]);
}

TEST_CASE("invalid bases and coefficients are rejected") {
  CHECK_THROWS_AS(canonical_basis(0, 5.0, 50), Error);
  CHECK_THROWS_AS(canonical_basis(10, 5.0, 1), Error);
  CHECK_THROWS_AS(canonical_basis(10, 0.0, 50), Error);
  Eigen::VectorXd decreasing(3);
  decreasing << 0.0, 2.0, 1.0;
  CHECK_THROWS_AS(build_basis(3, decreasing), Error);

  const auto basis = canonical_basis(10, 5.0, 50);
  auto c = TrajectoryCoeffs::constant(9, 0, 0);
  CHECK_THROWS_AS(eval_trajectory(c, basis), Error);
  c = TrajectoryCoeffs::constant(10, 0, 0);
  c.cx[3] = std::nan("");
  CHECK_THROWS_AS(c.validate(), Error);
  // Fewer waypoints than control points cannot determine the fit.
  CHECK_THROWS_AS(fit_coeffs(Eigen::MatrixX2d::Zero(5, 2), canonical_basis(10, 5.0, 5)), Error);
}

TEST_CASE("canonical grid spacing") {
  const auto basis = canonical_basis(10, 5.0, 50);
  CHECK(basis.waypoints() == 50);
  CHECK(basis.horizon() == doctest::Approx(5.0));
  CHECK(basis.times[1] - basis.times[0] == doctest::Approx(5.0 / 49.0));
}
