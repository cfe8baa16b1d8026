#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/scene.hpp"

namespace crowdfm::sim {

using scene::AgentState;
using scene::Pose;
using scene::StaticShape;
using scene::WorldSpec;

struct RobotState {
  Pose pose;
  double v = 0.0;
  double omega = 0.0;
  double radius = 0.3;
  double v_max = 1.0;
  double a_max = 1.5;
  double omega_max = 4.0;
};

struct AgentParams {
  double repulsion_strength = 2.0;  // A in A*exp((r_ij - d_ij)/B)
  double repulsion_range = 0.3;     // B
  double wall_strength = 3.0;
  double wall_range = 0.2;
  double tangential = 0.3;  // fraction of repulsion turned to the agent's right
  double arrival_radius = 0.5;
  double interaction_range = 3.0;
};

/// Social-force step: goal attraction plus exponential repulsion from other
/// agents, the robot (if given) and static shapes; speeds are clipped to
/// each agent's preferred speed. dt in (0, 0.2].
std::vector<AgentState> step_agents(const std::vector<AgentState>& agents,
                                    const std::vector<StaticShape>& shapes, double dt,
                                    const AgentParams& params = {},
                                    const RobotState* robot = nullptr);

/// Unicycle with clamps on |v|, |omega| and |dv/dt|; exact-arc pose update.
RobotState step_robot(const RobotState& robot, double v_cmd, double omega_cmd, double dt);

struct CollisionCheck {
  bool collided = false;
  double min_clearance = 0.0;  // signed surface distance, +inf with nothing around
};

CollisionCheck check_collision(const RobotState& robot, const std::vector<AgentState>& agents,
                               const std::vector<StaticShape>& shapes);

enum class Outcome { kSuccess, kCollision, kTimeout, kPlannerError };
const char* to_string(Outcome outcome);

struct StepLog {
  int step = 0;
  double time = 0.0;
  Pose pose;
  double v = 0.0;
  double omega = 0.0;
  int cand_idx = -1;
  double min_clearance = 0.0;
};

struct EpisodeResult {
  Outcome outcome = Outcome::kTimeout;
  double path_length = 0.0;
  double duration = 0.0;
  double mean_speed = 0.0;
  std::vector<StepLog> step_log;
  std::string diagnostic;
};

/// What a planner returns each replan: a trajectory in the ego frame whose
/// first sample is at the robot, plus bookkeeping for the logs.
struct PlanOutput {
  bernstein::Trajectory traj;
  int cand_idx = -1;
};

struct PlanRequest {
  const Scenario& scenario;
  const RobotState& robot;
  int step;
  double time;
};

using Planner = std::function<PlanOutput(const PlanRequest&)>;

struct SimConfig {
  double dt = 0.1;  // control and replan period
  double goal_tolerance = 0.5;
  double timeout = 120.0;
  double lookahead = 0.6;
  double speed_window = 0.5;  // s of the plan used to set the commanded speed
  double v_max = 1.0;
  double a_max = 1.5;
  double omega_max = 4.0;
  double agent_turnaround = 0.3;  // agents swap start and goal within this distance
  AgentParams agents;
  scene::SceneConfig scene;
};

/// Speed and turn-rate command that follows `traj` (ego frame) from the
/// robot's current pose.
std::pair<double, double> pure_pursuit(const bernstein::Trajectory& traj, const SimConfig& cfg);

/// Closed loop at 1/dt Hz. All state is owned by the episode, so episodes
/// for different worlds may run concurrently.
EpisodeResult run_episode(const WorldSpec& world, const Planner& planner, const SimConfig& cfg);

void write_episode_csv(const EpisodeResult& result, const std::string& path);

/// Random snapshot from a world for training data: the crowd is advanced a
/// random number of steps and the robot is placed somewhere along its route.
struct Snapshot {
  std::vector<AgentState> agents;
  Pose robot;
};
Snapshot sample_snapshot(const WorldSpec& world, uint64_t seed, const SimConfig& cfg);

}  // namespace crowdfm::sim
