#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace crowdfm::bernstein {

/// Bernstein basis sampled on a time grid. Row i holds the n+1 basis values
/// (and their time derivatives) at times[i]; waypoints = P * c per axis.
struct BasisMatrix {
  int order = 0;
  Eigen::VectorXd times;
  Eigen::MatrixXd P;
  Eigen::MatrixXd dP;   // 1/s
  Eigen::MatrixXd ddP;  // 1/s^2

  int waypoints() const { return static_cast<int>(times.size()); }
  double horizon() const { return times[times.size() - 1] - times[0]; }
};

/// Control points per axis. The flattened layout is [cx; cy].
struct TrajectoryCoeffs {
  Eigen::VectorXd cx;
  Eigen::VectorXd cy;

  int order() const { return static_cast<int>(cx.size()) - 1; }
  int dim() const { return static_cast<int>(cx.size() + cy.size()); }

  Eigen::VectorXd flat() const;
  static TrajectoryCoeffs from_flat(const Eigen::VectorXd& xi);
  static TrajectoryCoeffs constant(int order, double x, double y);

  /// Throws kInvalidInput on length mismatch or non-finite entries.
  void validate() const;
};

struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixX2d xy;
  std::optional<Eigen::MatrixX2d> vel;
  std::optional<Eigen::MatrixX2d> acc;
};

double binomial(int n, int k);

/// Value of the j-th Bernstein polynomial of order n at s in [0, 1].
double basis_value(int n, int j, double s);

BasisMatrix build_basis(int order, const Eigen::VectorXd& times);

/// Uniform grid of `waypoints` samples over [0, horizon].
BasisMatrix canonical_basis(int order, double horizon, int waypoints);

Trajectory eval_trajectory(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                           bool with_derivatives = false);

struct FitResult {
  TrajectoryCoeffs coeffs;
  double residual_norm = 0.0;
};

/// Per-axis least squares via regularized normal equations.
FitResult fit_coeffs(const Eigen::MatrixX2d& waypoints, const BasisMatrix& basis);

}  // namespace crowdfm::bernstein
