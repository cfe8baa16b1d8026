#include "crowdfm/guidance_refine.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "crowdfm/common.hpp"

namespace crowdfm::refine {

namespace {

// Waypoint count times obstacle count above which the per-waypoint loop is
// split across threads.
constexpr long kParallelPairs = 1L << 14;

struct Hit {
  double value = 0.0;  // rho^2 - d^2 of the winning obstacle, 0 if inactive
  Eigen::Vector2d obstacle = Eigen::Vector2d::Zero();
};

inline Hit waypoint_hinge(const Eigen::Vector2d& p, double t, const ObstacleSet& obs, double d_safe) {
  Hit hit;
  const double rho_s = d_safe;
  const double rho_s2 = rho_s * rho_s;
  for (const auto& o : obs.points) {
    const double dx = p.x() - o.x();
    if (std::abs(dx) >= rho_s) continue;
    const double dy = p.y() - o.y();
    if (std::abs(dy) >= rho_s) continue;
    const double v = rho_s2 - (dx * dx + dy * dy);
    if (v > hit.value) {
      hit.value = v;
      hit.obstacle = o;
    }
  }
  const double rho_d = d_safe + obs.dynamic_radius;
  const double rho_d2 = rho_d * rho_d;
  for (const auto& o : obs.dynamic) {
    const Eigen::Vector2d c(o[0] + t * o[2], o[1] + t * o[3]);
    const double v = rho_d2 - (p - c).squaredNorm();
    if (v > hit.value) {
      hit.value = v;
      hit.obstacle = c;
    }
  }
  return hit;
}

void check_rows(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times) {
  if (xy.rows() != times.size()) {
    throw Error(ErrorKind::kInvalidInput, "waypoint count " + std::to_string(xy.rows()) +
                                              " does not match time grid " +
                                              std::to_string(times.size()));
  }
}

inline double sq_hinge(double z) { return z > 0.0 ? z * z : 0.0; }

}  // namespace

ObstacleSet make_obstacles(const Scenario& scenario, bool include_dynamic, double dynamic_radius) {
  ObstacleSet obs;
  obs.dynamic_radius = dynamic_radius;
  obs.points.reserve(static_cast<size_t>(scenario.pointcloud_len));
  for (int i = 0; i < scenario.pointcloud_len; ++i) {
    const auto& p = scenario.pointcloud[static_cast<size_t>(i)];
    obs.points.emplace_back(p[0], p[1]);
  }
  if (include_dynamic) {
    for (int i = 0; i < scenario.dyn_len; ++i) {
      const auto& d = scenario.dyn_obstacles[static_cast<size_t>(i)];
      obs.dynamic.emplace_back(d[0], d[1], d[2], d[3]);
    }
  }
  return obs;
}

double collision_cost(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                      const ObstacleSet& obstacles, double d_safe) {
  check_rows(xy, times);
  const long n = xy.rows();
  if (n == 0 || obstacles.empty()) return 0.0;
  std::vector<double> hinge(static_cast<size_t>(n));
  const long pairs = n * static_cast<long>(obstacles.size());
#pragma omp parallel for schedule(static) if (pairs > kParallelPairs)
  for (long k = 0; k < n; ++k) {
    hinge[static_cast<size_t>(k)] =
        waypoint_hinge(xy.row(k).transpose(), times[k] - times[0], obstacles, d_safe).value;
  }
  double total = 0.0;
  for (double h : hinge) total += h;
  return total / static_cast<double>(n);
}

double collision_cost(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                      const ObstacleSet& obstacles, double d_safe) {
  const auto traj = bernstein::eval_trajectory(coeffs, basis, false);
  return collision_cost(traj.xy, basis.times, obstacles, d_safe);
}

double collision_cost(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                      const Scenario& scenario, double d_safe, bool include_dynamic) {
  return collision_cost(coeffs, basis, make_obstacles(scenario, include_dynamic), d_safe);
}

Eigen::MatrixX2d collision_cost_grad_xy(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                                        const ObstacleSet& obstacles, double d_safe) {
  check_rows(xy, times);
  const long n = xy.rows();
  Eigen::MatrixX2d grad = Eigen::MatrixX2d::Zero(n, 2);
  if (n == 0 || obstacles.empty()) return grad;
  const long pairs = n * static_cast<long>(obstacles.size());
  const double scale = -2.0 / static_cast<double>(n);
#pragma omp parallel for schedule(static) if (pairs > kParallelPairs)
  for (long k = 0; k < n; ++k) {
    const Eigen::Vector2d p = xy.row(k).transpose();
    const Hit hit = waypoint_hinge(p, times[k] - times[0], obstacles, d_safe);
    if (hit.value > 0.0) grad.row(k) = scale * (p - hit.obstacle).transpose();
  }
  return grad;
}

Eigen::VectorXd collision_cost_grad(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis,
                                    const ObstacleSet& obstacles, double d_safe) {
  const auto traj = bernstein::eval_trajectory(coeffs, basis, false);
  const Eigen::MatrixX2d gxy = collision_cost_grad_xy(traj.xy, basis.times, obstacles, d_safe);
  const long n1 = basis.order + 1;
  Eigen::VectorXd g(2 * n1);
  g.head(n1) = basis.P.transpose() * gxy.col(0);
  g.tail(n1) = basis.P.transpose() * gxy.col(1);
  return g;
}

double min_clearance(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                     const ObstacleSet& obstacles) {
  check_rows(xy, times);
  double best = std::numeric_limits<double>::infinity();
  for (long k = 0; k < xy.rows(); ++k) {
    const Eigen::Vector2d p = xy.row(k).transpose();
    const double t = times[k] - times[0];
    for (const auto& o : obstacles.points) best = std::min(best, (p - o).norm());
    for (const auto& o : obstacles.dynamic) {
      const Eigen::Vector2d c(o[0] + t * o[2], o[1] + t * o[3]);
      best = std::min(best, (p - c).norm() - obstacles.dynamic_radius);
    }
  }
  return best;
}

namespace reference {

double collision_cost(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                      const ObstacleSet& obstacles, double d_safe) {
  check_rows(xy, times);
  const long n = xy.rows();
  if (n == 0 || obstacles.empty()) return 0.0;
  double total = 0.0;
  for (long k = 0; k < n; ++k) {
    const Eigen::Vector2d p = xy.row(k).transpose();
    const double t = times[k] - times[0];
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& o : obstacles.points) best = std::max(best, d_safe * d_safe - (p - o).squaredNorm());
    const double rho = d_safe + obstacles.dynamic_radius;
    for (const auto& o : obstacles.dynamic) {
      const Eigen::Vector2d c(o[0] + t * o[2], o[1] + t * o[3]);
      best = std::max(best, rho * rho - (p - c).squaredNorm());
    }
    total += std::max(0.0, best);
  }
  return total / static_cast<double>(n);
}

Eigen::MatrixX2d collision_cost_grad_xy(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& times,
                                        const ObstacleSet& obstacles, double d_safe) {
  check_rows(xy, times);
  const long n = xy.rows();
  Eigen::MatrixX2d grad = Eigen::MatrixX2d::Zero(n, 2);
  for (long k = 0; k < n; ++k) {
    const Eigen::Vector2d p = xy.row(k).transpose();
    const double t = times[k] - times[0];
    double best = 0.0;
    Eigen::Vector2d arg = Eigen::Vector2d::Zero();
    bool active = false;
    std::vector<std::pair<Eigen::Vector2d, double>> all;
    for (const auto& o : obstacles.points) all.emplace_back(o, d_safe);
    for (const auto& o : obstacles.dynamic) {
      all.emplace_back(Eigen::Vector2d(o[0] + t * o[2], o[1] + t * o[3]), d_safe + obstacles.dynamic_radius);
    }
    for (const auto& [o, rho] : all) {
      const double v = rho * rho - (p - o).squaredNorm();
      if (v > best) {
        best = v;
        arg = o;
        active = true;
      }
    }
    if (active) grad.row(k) = (-2.0 / static_cast<double>(n)) * (p - arg).transpose();
  }
  return grad;
}

}  // namespace reference

void RefineConfig::validate() const {
  if (!(d_safe > 0.0)) throw Error(ErrorKind::kConfig, "refine.d_safe must be > 0");
  if (max_iters < 1) throw Error(ErrorKind::kConfig, "refine.max_iters must be >= 1");
  if (!(v_max > 0.0) || !(a_max > 0.0)) throw Error(ErrorKind::kConfig, "refine limits must be > 0");
  if (!(step_size > 0.0) || !(convergence_tol > 0.0)) {
    throw Error(ErrorKind::kConfig, "refine.step_size and refine.convergence_tol must be > 0");
  }
  if (proximity_weight < 0.0 || collision_weight < 0.0 || velocity_weight < 0.0 || accel_weight < 0.0) {
    throw Error(ErrorKind::kConfig, "refine weights must be >= 0");
  }
  if (lbfgs_memory < 1) throw Error(ErrorKind::kConfig, "refine.lbfgs_memory must be >= 1");
}

Audit audit(const TrajectoryCoeffs& coeffs, const BasisMatrix& basis, const ObstacleSet& obstacles,
            const RefineConfig& cfg) {
  const auto traj = bernstein::eval_trajectory(coeffs, basis, true);
  Audit a;
  a.min_clearance = min_clearance(traj.xy, basis.times, obstacles);
  a.max_speed = traj.vel->rowwise().norm().maxCoeff();
  a.max_accel = traj.acc->rowwise().norm().maxCoeff();
  a.feasible = a.min_clearance >= cfg.d_safe - cfg.audit_tol && a.max_speed <= cfg.v_max + cfg.audit_tol &&
               a.max_accel <= cfg.a_max + cfg.audit_tol;
  return a;
}

double refine_objective(const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_in, const BasisMatrix& basis,
                        const ObstacleSet& obstacles, const RefineConfig& cfg, Eigen::VectorXd* grad) {
  const long n1 = basis.order + 1;
  const long n = basis.waypoints();
  const auto cx = xi.head(n1);
  const auto cy = xi.tail(n1);
  Eigen::MatrixX2d pos(n, 2), vel(n, 2), acc(n, 2);
  pos.col(0) = basis.P * cx;
  pos.col(1) = basis.P * cy;
  vel.col(0) = basis.dP * cx;
  vel.col(1) = basis.dP * cy;
  acc.col(0) = basis.ddP * cx;
  acc.col(1) = basis.ddP * cy;

  const Eigen::VectorXd diff = xi - xi_in;
  double j = cfg.proximity_weight * diff.squaredNorm();

  Eigen::MatrixX2d gpos = Eigen::MatrixX2d::Zero(n, 2);
  Eigen::MatrixX2d gvel = Eigen::MatrixX2d::Zero(n, 2);
  Eigen::MatrixX2d gacc = Eigen::MatrixX2d::Zero(n, 2);
  const double inv_n = 1.0 / static_cast<double>(n);

  const double reach_s = cfg.d_safe + cfg.clearance_margin;
  const double reach_d = reach_s + obstacles.dynamic_radius;
  double col = 0.0;
  for (long k = 0; k < n; ++k) {
    const Eigen::Vector2d p = pos.row(k).transpose();
    const double t = basis.times[k] - basis.times[0];
    auto accumulate = [&](const Eigen::Vector2d& o, double reach) {
      const Eigen::Vector2d delta = p - o;
      const double d = delta.norm();
      const double z = reach - d;
      if (z <= 0.0) return;
      col += z * z;
      const Eigen::Vector2d dir = d > 1e-12 ? Eigen::Vector2d(delta / d) : Eigen::Vector2d(1.0, 0.0);
      gpos.row(k) += (-2.0 * z * cfg.collision_weight * inv_n) * dir.transpose();
    };
    for (const auto& o : obstacles.points) {
      if (std::abs(p.x() - o.x()) >= reach_s || std::abs(p.y() - o.y()) >= reach_s) continue;
      accumulate(o, reach_s);
    }
    for (const auto& o : obstacles.dynamic) accumulate(Eigen::Vector2d(o[0] + t * o[2], o[1] + t * o[3]), reach_d);
  }
  j += cfg.collision_weight * inv_n * col;

  auto limit_penalty = [&](const Eigen::MatrixX2d& m, double limit, double weight, Eigen::MatrixX2d& g) {
    double total = 0.0;
    for (long k = 0; k < n; ++k) {
      const double s = m.row(k).norm();
      const double z = s - limit;
      if (z <= 0.0) continue;
      total += sq_hinge(z);
      g.row(k) += (2.0 * z * weight * inv_n / s) * m.row(k);
    }
    return weight * inv_n * total;
  };
  j += limit_penalty(vel, cfg.v_max - cfg.velocity_margin, cfg.velocity_weight, gvel);
  j += limit_penalty(acc, cfg.a_max - cfg.accel_margin, cfg.accel_weight, gacc);

  if (grad) {
    grad->resize(2 * n1);
    grad->head(n1) = basis.P.transpose() * gpos.col(0) + basis.dP.transpose() * gvel.col(0) +
                     basis.ddP.transpose() * gacc.col(0);
    grad->tail(n1) = basis.P.transpose() * gpos.col(1) + basis.dP.transpose() * gvel.col(1) +
                     basis.ddP.transpose() * gacc.col(1);
    *grad += 2.0 * cfg.proximity_weight * diff;
  }
  return j;
}

RefineResult project_refine(const TrajectoryCoeffs& coeffs_in, const ObstacleSet& obstacles,
                            const BasisMatrix& basis, const RefineConfig& cfg, const Eigen::Vector2d& start) {
  coeffs_in.validate();
  cfg.validate();
  if (coeffs_in.order() != basis.order) {
    throw Error(ErrorKind::kInvalidInput, "coefficient order " + std::to_string(coeffs_in.order()) +
                                              " does not match basis order " + std::to_string(basis.order));
  }
  const long n1 = basis.order + 1;
  const Eigen::VectorXd xi_in = coeffs_in.flat();
  Eigen::VectorXd x = xi_in;
  x[0] = start.x();
  x[n1] = start.y();
  auto pin = [n1](Eigen::VectorXd& v) {
    v[0] = 0.0;
    v[n1] = 0.0;
  };

  Eigen::VectorXd g;
  double fx = refine_objective(x, xi_in, basis, obstacles, cfg, &g);
  if (!std::isfinite(fx)) throw Error(ErrorKind::kNumerical, "refinement objective is not finite at the input");
  pin(g);

  RefineResult result;
  result.objective_log.push_back(fx);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;  // (s, y)
  constexpr double kArmijo = 1e-4;
  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;

    // Two-loop recursion.
    Eigen::VectorXd d = -g;
    std::vector<double> alpha(history.size());
    for (long i = static_cast<long>(history.size()) - 1; i >= 0; --i) {
      const auto& [s, y] = history[static_cast<size_t>(i)];
      alpha[static_cast<size_t>(i)] = s.dot(d) / y.dot(s);
      d -= alpha[static_cast<size_t>(i)] * y;
    }
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      d *= s.dot(y) / y.squaredNorm();
    }
    for (size_t i = 0; i < history.size(); ++i) {
      const auto& [s, y] = history[i];
      const double beta = y.dot(d) / y.dot(s);
      d += (alpha[i] - beta) * s;
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      history.clear();
      d = -g;
      slope = g.dot(d);
    }

    double step = std::min(1.0, cfg.step_size / d.lpNorm<Eigen::Infinity>());
    Eigen::VectorXd x_new, g_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = x + step * d;
      f_new = refine_objective(x_new, xi_in, basis, obstacles, cfg, &g_new);
      if (std::isfinite(f_new) && f_new <= fx + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further decrease available at this resolution
    pin(g_new);

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double max_move = s.lpNorm<Eigen::Infinity>();
    if (s.dot(y) > 1e-12) {
      history.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(history.size()) > cfg.lbfgs_memory) history.pop_front();
    }
    x = std::move(x_new);
    g = std::move(g_new);
    fx = f_new;
    result.objective_log.push_back(fx);
    if (max_move < cfg.convergence_tol) {
      ++iter;
      break;
    }
  }

  if (!std::isfinite(fx)) throw Error(ErrorKind::kNumerical, "refinement diverged");
  result.coeffs = TrajectoryCoeffs::from_flat(x);
  result.cost = fx;
  result.iters_used = iter;
  result.audit = audit(result.coeffs, basis, obstacles, cfg);
  result.feasible = result.audit.feasible;
  return result;
}

RefineResult project_refine(const TrajectoryCoeffs& coeffs_in, const Scenario& scenario,
                            const BasisMatrix& basis, const RefineConfig& cfg) {
  return project_refine(coeffs_in, make_obstacles(scenario, cfg.include_dynamic, cfg.dynamic_radius), basis,
                        cfg);
}

std::vector<RefineResult> refine_all(const std::vector<TrajectoryCoeffs>& candidates,
                                     const ObstacleSet& obstacles, const BasisMatrix& basis,
                                     const RefineConfig& cfg) {
  std::vector<RefineResult> out(candidates.size());
  std::vector<std::string> errors(candidates.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(candidates.size()); ++i) {
    try {
      out[static_cast<size_t>(i)] = project_refine(candidates[static_cast<size_t>(i)], obstacles, basis, cfg);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(ErrorKind::kNumerical, e);
  }
  return out;
}

}  // namespace crowdfm::refine
