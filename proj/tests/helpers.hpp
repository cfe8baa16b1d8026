#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/common.hpp"
#include "crowdfm/scenario.hpp"

namespace testing {

inline crowdfm::bernstein::TrajectoryCoeffs random_coeffs(crowdfm::Rng& rng, int order, double spread = 3.0) {
  crowdfm::bernstein::TrajectoryCoeffs c;
  c.cx.resize(order + 1);
  c.cy.resize(order + 1);
  for (int j = 0; j <= order; ++j) {
    c.cx[j] = rng.uniform(-spread, spread);
    c.cy[j] = rng.uniform(-spread, spread);
  }
  return c;
}

/// A mostly straight forward path with a lateral wiggle, starting at the origin.
inline crowdfm::bernstein::TrajectoryCoeffs forward_coeffs(crowdfm::Rng& rng, int order, double length = 4.0) {
  crowdfm::bernstein::TrajectoryCoeffs c;
  c.cx.resize(order + 1);
  c.cy.resize(order + 1);
  for (int j = 0; j <= order; ++j) {
    c.cx[j] = length * j / order;
    c.cy[j] = j == 0 ? 0.0 : rng.uniform(-0.5, 0.5);
  }
  return c;
}

inline crowdfm::Scenario random_scenario(crowdfm::Rng& rng, int n_pts, int n_obs, int pts_len, int dyn_len) {
  auto s = crowdfm::Scenario::empty(n_pts, n_obs);
  s.pointcloud_len = pts_len;
  s.dyn_len = dyn_len;
  for (int i = 0; i < pts_len; ++i)
    s.pointcloud[i] = {static_cast<float>(rng.uniform(-6, 6)), static_cast<float>(rng.uniform(-6, 6))};
  for (int i = 0; i < dyn_len; ++i)
    s.dyn_obstacles[i] = {static_cast<float>(rng.uniform(-6, 6)), static_cast<float>(rng.uniform(-6, 6)),
                          static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1))};
  const double a = rng.uniform(-0.5, 0.5);
  s.goal_heading = {static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a))};
  s.pad();
  return s;
}

}  // namespace testing
