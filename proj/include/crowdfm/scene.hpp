#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/guidance_refine.hpp"
#include "crowdfm/scenario.hpp"

namespace crowdfm::scene {

struct Rect {
  Eigen::Vector2d lo;
  Eigen::Vector2d hi;
};

struct Circle {
  Eigen::Vector2d center;
  double radius = 0.0;
};

using StaticShape = std::variant<Rect, Circle>;

/// Signed distance from p to the shape boundary (negative inside).
double signed_distance(const StaticShape& shape, const Eigen::Vector2d& p);
/// Closest point on the shape boundary.
Eigen::Vector2d closest_point(const StaticShape& shape, const Eigen::Vector2d& p);
/// Smallest t >= 0 with origin + t*dir on the shape boundary; dir is unit.
std::optional<double> ray_hit(const StaticShape& shape, const Eigen::Vector2d& origin,
                              const Eigen::Vector2d& dir);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Eigen::Vector2d position() const { return {x, y}; }
};

struct AgentSpec {
  Eigen::Vector2d start;
  Eigen::Vector2d goal;
  double pref_speed = 1.0;
  double radius = 0.3;
};

struct AgentState {
  Eigen::Vector2d pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  double pref_speed = 1.0;
  double radius = 0.3;
};

enum class Difficulty { kSparse, kDense, kCorridor };

const char* to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& name);

struct WorldSpec {
  std::array<double, 4> bounds{-10.0, -10.0, 10.0, 10.0};  // xmin, ymin, xmax, ymax
  std::vector<StaticShape> static_shapes;
  std::vector<AgentSpec> agents;
  Pose robot_start;
  Eigen::Vector2d robot_goal = Eigen::Vector2d::Zero();
  double robot_radius = 0.3;
  std::string tag;
  uint64_t seed = 0;

  /// Throws kInvalidInput when the robot endpoints or speeds are invalid.
  void validate() const;
  std::vector<AgentState> initial_agents() const;
};

/// Deterministic in (seed, difficulty).
WorldSpec sample_world(uint64_t seed, Difficulty difficulty);

struct SceneConfig {
  int n_pts = 128;
  int n_obs = 10;
  int num_rays = 128;
  double sensing_radius = 8.0;
};

/// Ego-frame snapshot: ray hits on static shapes (dynamic agents are not in
/// the point cloud), the nearest agents by range, and the goal direction.
Scenario make_scenario(const std::vector<StaticShape>& shapes, const std::vector<AgentState>& agents,
                       const Pose& robot, const Eigen::Vector2d& goal, const SceneConfig& cfg);

/// Parameters of the synthetic demonstrator.
struct ExpertConfig {
  refine::RefineConfig refine;
  double nominal_speed = 0.9;
  std::vector<double> speed_factors{1.0, 0.6, 0.3};
  std::vector<double> lateral_offsets{0.0, 0.75, -0.75, 1.5, -1.5, 2.5, -2.5};
  /// Added to the deviation score of seeds that pass on the left (offset > 0).
  double left_penalty = 0.0;
  /// Minimum mean waypoint distance between two emitted modes.
  double min_mode_separation = 0.3;
};

/// Default demonstrator used for flow training data.
ExpertConfig default_expert();
/// A demonstrator with a different style (wider berth, slower, keeps right)
/// used as the reference for scorer labels.
ExpertConfig human_like_expert();

struct ExpertCandidate {
  bernstein::TrajectoryCoeffs coeffs;
  bernstein::Trajectory traj;
  double score = 0.0;  // deviation from the nominal straight line (+ style terms)
  bool collision_free = false;
  double lateral_offset = 0.0;
  double speed = 0.0;
  int family = 0;  // 0 center, 1 left, 2 right
};

struct ExpertResult {
  bernstein::TrajectoryCoeffs coeffs;
  bernstein::Trajectory traj;
  bool collision_free = false;
};

/// All refined seeds, in seed order. Seeds whose refinement fails
/// numerically are dropped; throws kGeneration if every seed fails.
std::vector<ExpertCandidate> expert_candidates(const Scenario& scenario, const bernstein::BasisMatrix& basis,
                                               const ExpertConfig& cfg);

/// Lowest-score collision-free refined seed, or the lowest-score seed
/// overall with collision_free = false.
ExpertResult expert_oracle(const Scenario& scenario, const bernstein::BasisMatrix& basis,
                           const ExpertConfig& cfg);

/// Up to `max_modes` collision-free results from distinct families.
std::vector<ExpertCandidate> expert_modes(const Scenario& scenario, const bernstein::BasisMatrix& basis,
                                          const ExpertConfig& cfg, int max_modes = 3);

}  // namespace crowdfm::scene
