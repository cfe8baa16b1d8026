#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/planner.hpp"
#include "crowdfm/scene.hpp"

namespace crowdfm::render {

struct Frame {
  const scene::WorldSpec* world = nullptr;
  scene::Pose robot;
  double robot_radius = 0.3;
  const Scenario* scenario = nullptr;  // ego-frame observation that was planned on
  std::vector<Eigen::MatrixX2d> candidates;  // ego frame
  int selected = -1;
  int step = 0;
  double time = 0.0;
};

/// Ego-frame points mapped into the world frame of `pose`.
Eigen::MatrixX2d to_world(const Eigen::MatrixX2d& ego, const scene::Pose& pose);

/// World-frame SVG: static shapes, observed agents with velocity ticks,
/// candidates in gray, the selected one highlighted, the goal and the robot.
std::string frame_svg(const Frame& frame);

}  // namespace crowdfm::render
