#include "crowdfm/bernstein.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crowdfm/common.hpp"

namespace crowdfm::bernstein {

namespace {

constexpr double kNormalRegularization = 1e-10;

}  // namespace

Eigen::VectorXd TrajectoryCoeffs::flat() const {
  Eigen::VectorXd xi(cx.size() + cy.size());
  xi << cx, cy;
  return xi;
}

TrajectoryCoeffs TrajectoryCoeffs::from_flat(const Eigen::VectorXd& xi) {
  if (xi.size() < 4 || xi.size() % 2 != 0) {
    throw Error(ErrorKind::kInvalidInput,
                "flat coefficient vector must have even length >= 4, got " +
                    std::to_string(xi.size()));
  }
  const Eigen::Index half = xi.size() / 2;
  return {xi.head(half), xi.tail(half)};
}

TrajectoryCoeffs TrajectoryCoeffs::constant(int order, double x, double y) {
  return {Eigen::VectorXd::Constant(order + 1, x), Eigen::VectorXd::Constant(order + 1, y)};
}

void TrajectoryCoeffs::validate() const {
  if (cx.size() != cy.size() || cx.size() < 2) {
    throw Error(ErrorKind::kInvalidInput, "cx/cy length mismatch (" + std::to_string(cx.size()) +
                                              " vs " + std::to_string(cy.size()) + ")");
  }
  if (!cx.allFinite() || !cy.allFinite()) {
    throw Error(ErrorKind::kInvalidInput, "non-finite control point");
  }
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return std::round(c);
}

double basis_value(int n, int j, double s) {
  if (j < 0 || j > n) return 0.0;
  return binomial(n, j) * std::pow(s, j) * std::pow(1.0 - s, n - j);
}

BasisMatrix build_basis(int order, const Eigen::VectorXd& times) {
  if (order < 1) {
    throw Error(ErrorKind::kInvalidInput, "basis order must be >= 1, got " + std::to_string(order));
  }
  const Eigen::Index count = times.size();
  if (count < 2) {
    throw Error(ErrorKind::kInvalidInput, "need at least 2 sample times");
  }
  for (Eigen::Index i = 1; i < count; ++i) {
    if (!(times[i] > times[i - 1])) {
      std::ostringstream msg;
      msg << "sample times must be strictly increasing (t[" << i - 1 << "]=" << times[i - 1]
          << ", t[" << i << "]=" << times[i] << ")";
      throw Error(ErrorKind::kInvalidInput, msg.str());
    }
  }

  BasisMatrix basis;
  basis.order = order;
  basis.times = times;
  basis.P.resize(count, order + 1);
  basis.dP.setZero(count, order + 1);
  basis.ddP.setZero(count, order + 1);

  const int n = order;
  const double span = times[count - 1] - times[0];
  for (Eigen::Index i = 0; i < count; ++i) {
    // Clamp guards the last sample against rounding above 1.
    const double s = std::clamp((times[i] - times[0]) / span, 0.0, 1.0);
    for (int j = 0; j <= n; ++j) {
      basis.P(i, j) = basis_value(n, j, s);
      basis.dP(i, j) = n * (basis_value(n - 1, j - 1, s) - basis_value(n - 1, j, s)) / span;
      if (n >= 2) {
        basis.ddP(i, j) = n * (n - 1) *
                          (basis_value(n - 2, j - 2, s) - 2.0 * basis_value(n - 2, j - 1, s) +
                           basis_value(n - 2, j, s)) /
                          (span * span);
      }
    }
  }
  return basis;
}

BasisMatrix canonical_basis(int order, double horizon, int waypoints) {
  if (waypoints < 2 || !(horizon > 0.0)) {
    throw Error(ErrorKind::kInvalidInput, "canonical grid needs >= 2 waypoints and horizon > 0");
  }
  return build_basis(order, Eigen::VectorXd::LinSpaced(waypoints, 0.0, horizon));
}

Trajectory eval_trajectory(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                           bool with_derivatives) {
  coeffs.validate();
  if (coeffs.order() != basis.order) {
    throw Error(ErrorKind::kInvalidInput, "coefficient order " + std::to_string(coeffs.order()) +
                                              " does not match basis order " +
                                              std::to_string(basis.order));
  }
  Trajectory traj;
  traj.times = basis.times;
  traj.xy.resize(basis.waypoints(), 2);
  traj.xy.col(0) = basis.P * coeffs.cx;
  traj.xy.col(1) = basis.P * coeffs.cy;
  if (with_derivatives) {
    Eigen::MatrixX2d vel(basis.waypoints(), 2);
    vel.col(0) = basis.dP * coeffs.cx;
    vel.col(1) = basis.dP * coeffs.cy;
    Eigen::MatrixX2d acc(basis.waypoints(), 2);
    acc.col(0) = basis.ddP * coeffs.cx;
    acc.col(1) = basis.ddP * coeffs.cy;
    traj.vel = std::move(vel);
    traj.acc = std::move(acc);
  }
  return traj;
}

FitResult fit_coeffs(const Eigen::MatrixX2d& waypoints, const BasisMatrix& basis) {
  const int dim = basis.order + 1;
  if (waypoints.rows() != basis.waypoints()) {
    throw Error(ErrorKind::kInvalidInput, "waypoint count " + std::to_string(waypoints.rows()) +
                                              " does not match basis rows " +
                                              std::to_string(basis.waypoints()));
  }
  if (basis.waypoints() < dim) {
    throw Error(ErrorKind::kNumerical, "rank-deficient basis: " +
                                           std::to_string(basis.waypoints()) +
                                           " samples for " + std::to_string(dim) + " unknowns");
  }
  const Eigen::MatrixXd gram = basis.P.transpose() * basis.P;
  Eigen::MatrixXd regularized = gram;
  regularized.diagonal().array() += kNormalRegularization;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(regularized);
  const double pivot_min = ldlt.vectorD().minCoeff();
  const double pivot_max = ldlt.vectorD().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(pivot_min > 1e-8 * pivot_max)) {
    std::ostringstream msg;
    msg << "rank-deficient basis (pivot range " << pivot_min << " .. " << pivot_max
        << "); check the time grid";
    throw Error(ErrorKind::kNumerical, msg.str());
  }

  const Eigen::MatrixX2d rhs = basis.P.transpose() * waypoints;
  Eigen::MatrixX2d c = ldlt.solve(rhs);
  // One step of iterative refinement removes the regularization bias.
  c += ldlt.solve(rhs - gram * c);

  FitResult result;
  result.coeffs.cx = c.col(0);
  result.coeffs.cy = c.col(1);
  result.residual_norm = (basis.P * c - waypoints).norm();
  return result;
}

}  // namespace crowdfm::bernstein
