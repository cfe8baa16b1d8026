#pragma once

#include <vector>

#include <Eigen/Dense>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/scenario.hpp"

namespace crowdfm::refine {

using bernstein::BasisMatrix;
using bernstein::TrajectoryCoeffs;

/// Obstacles extracted from a Scenario after masking. Static points come
/// first, then dynamic obstacles; a dynamic obstacle at time t sits at
/// pos + t * vel and carries an extra body radius.
struct ObstacleSet {
  std::vector<Eigen::Vector2d> points;
  std::vector<Eigen::Vector4d> dynamic;  // x, y, vx, vy
  double dynamic_radius = 0.3;

  size_t size() const { return points.size() + dynamic.size(); }
  bool empty() const { return size() == 0; }
};

/// With include_dynamic false only the static point cloud is used.
ObstacleSet make_obstacles(const Scenario& scenario, bool include_dynamic = true,
                           double dynamic_radius = 0.3);

/// Mean over waypoints of max(0, max_m(rho_m^2 - |p_k - o_m(t_k)|^2)) where
/// rho_m = d_safe for static points and d_safe + dynamic_radius for agents.
/// Ties in the inner max go to the lowest obstacle index; a hinge at exactly
/// zero is treated as inactive (zero subgradient).
double collision_cost(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                      const ObstacleSet& obstacles, double d_safe);
double collision_cost(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                      const ObstacleSet& obstacles, double d_safe);
double collision_cost(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                      const Scenario& scenario, double d_safe, bool include_dynamic = true);

/// d cost / d waypoint, rows match xy.
Eigen::MatrixX2d collision_cost_grad_xy(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                                        const ObstacleSet& obstacles, double d_safe);
/// Gradient in the flat [cx; cy] layout, chained through P.
Eigen::VectorXd collision_cost_grad(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                                    const ObstacleSet& obstacles, double d_safe);

/// Minimum over waypoints of surface clearance min_m(|p_k - o_m(t_k)| - r_m),
/// r_m = 0 for points, dynamic_radius for agents. +inf with no obstacles.
double min_clearance(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                     const ObstacleSet& obstacles);

namespace reference {
// Straightforward single-threaded versions kept for cross-checking.
double collision_cost(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                      const ObstacleSet& obstacles, double d_safe);
Eigen::MatrixX2d collision_cost_grad_xy(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                                        const ObstacleSet& obstacles, double d_safe);
}  // namespace reference

struct RefineConfig {
  double d_safe = 0.5;
  double v_max = 1.0;
  double a_max = 1.5;
  int max_iters = 50;
  double step_size = 1.0;  // initial trial step of the line search
  double proximity_weight = 1.0;
  double convergence_tol = 1e-4;  // on max |delta xi|
  double collision_weight = 2000.0;
  double velocity_weight = 500.0;
  double accel_weight = 100.0;
  // Penalties activate slightly inside the limits so that the converged
  // point passes the exact audit.
  double clearance_margin = 0.05;
  double velocity_margin = 0.02;
  double accel_margin = 0.05;
  bool include_dynamic = true;
  double dynamic_radius = 0.3;
  double audit_tol = 1e-3;
  int lbfgs_memory = 8;

  void validate() const;
};

struct Audit {
  double min_clearance = 0.0;
  double max_speed = 0.0;
  double max_accel = 0.0;
  bool feasible = false;
};

struct RefineResult {
  TrajectoryCoeffs coeffs;
  double cost = 0.0;  // J at the returned coefficients
  bool feasible = false;
  int iters_used = 0;
  std::vector<double> objective_log;  // J after each accepted iteration, starting with J(xi_in)
  Audit audit;
};

/// Exact check of clearance and limits on the basis grid.
Audit audit(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis, const ObstacleSet& obstacles,
            const RefineConfig& cfg);

/// Refinement objective and gradient (flat [cx; cy] layout).
double refine_objective(const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_in,
                        const BasisMatrix& basis, const ObstacleSet& obstacles,
                        const RefineConfig& cfg, Eigen::VectorXd* grad);

/// Finds coefficients close to coeffs_in that clear obstacles and respect the
/// speed/acceleration limits. The first control point is pinned to `start`.
RefineResult project_refine(const TrajectoryCoeffs& coeffs_in, const ObstacleSet& obstacles,
                            const BasisMatrix& basis, const RefineConfig& cfg,
                            const Eigen::Vector2d& start = Eigen::Vector2d::Zero());
RefineResult project_refine(const TrajectoryCoeffs& coeffs_in, const Scenario& scenario,
                            const BasisMatrix& basis, const RefineConfig& cfg);

/// Refines every candidate; OpenMP-parallel over candidates.
std::vector<RefineResult> refine_all(const std::vector<TrajectoryCoeffs>& candidates,
                                     const ObstacleSet& obstacles, const BasisMatrix& basis,
                                     const RefineConfig& cfg);

}  // namespace crowdfm::refine
