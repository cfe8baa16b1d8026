#include "crowdfm/crowd_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "crowdfm/common.hpp"

namespace crowdfm::sim {

namespace {

Eigen::Vector2d clip_norm(const Eigen::Vector2d& v, double limit) {
  const double n = v.norm();
  return n > limit ? Eigen::Vector2d(v * (limit / n)) : v;
}

// Pushes away from `other` along n with a share rotated to the agent's right.
Eigen::Vector2d repulsion(const Eigen::Vector2d& delta, double overlap, double strength, double range,
                          double tangential) {
  const double d = delta.norm();
  const Eigen::Vector2d n = d > 1e-9 ? Eigen::Vector2d(delta / d) : Eigen::Vector2d(1.0, 0.0);
  const double mag = strength * std::exp(overlap / range);
  const Eigen::Vector2d right(-n.y(), n.x());
  return mag * (n + tangential * right);
}

void turn_around(std::vector<AgentState>& agents, std::vector<Eigen::Vector2d>& homes, double radius) {
  for (size_t i = 0; i < agents.size(); ++i) {
    if ((agents[i].pos - agents[i].goal).norm() < radius) std::swap(agents[i].goal, homes[i]);
  }
}

}  // namespace

std::vector<AgentState> step_agents(const std::vector<AgentState>& agents, const std::vector<StaticShape>& shapes,
                                    double dt, const AgentParams& params, const RobotState* robot) {
  if (!(dt > 0.0 && dt <= 0.2)) {
    throw Error(ErrorKind::kInvalidInput, "agent step dt must lie in (0, 0.2], got " + std::to_string(dt));
  }
  std::vector<AgentState> next = agents;
  for (size_t i = 0; i < agents.size(); ++i) {
    const AgentState& a = agents[i];
    const Eigen::Vector2d to_goal = a.goal - a.pos;
    const double dist = to_goal.norm();
    Eigen::Vector2d v = Eigen::Vector2d::Zero();
    if (dist > 1e-9) v = to_goal * (a.pref_speed * std::min(1.0, dist / params.arrival_radius) / dist);

    for (size_t j = 0; j < agents.size(); ++j) {
      if (j == i) continue;
      const Eigen::Vector2d delta = a.pos - agents[j].pos;
      const double d = delta.norm();
      if (d > params.interaction_range) continue;
      v += repulsion(delta, a.radius + agents[j].radius - d, params.repulsion_strength, params.repulsion_range,
                     params.tangential);
    }
    if (robot) {
      const Eigen::Vector2d delta = a.pos - robot->pose.position();
      const double d = delta.norm();
      if (d <= params.interaction_range) {
        v += repulsion(delta, a.radius + robot->radius - d, params.repulsion_strength, params.repulsion_range,
                       params.tangential);
      }
    }
    for (const auto& shape : shapes) {
      const double sd = scene::signed_distance(shape, a.pos);
      if (sd > params.interaction_range) continue;
      Eigen::Vector2d away = a.pos - scene::closest_point(shape, a.pos);
      if (sd < 0.0) away = -away;
      const double n = away.norm();
      if (n < 1e-12) continue;
      v += params.wall_strength * std::exp((a.radius - sd) / params.wall_range) * away / n;
    }
    v = clip_norm(v, a.pref_speed);
    next[i].vel = v;
    next[i].pos = a.pos + dt * v;
  }
  return next;
}

RobotState step_robot(const RobotState& robot, double v_cmd, double omega_cmd, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorKind::kInvalidInput, "robot step dt must be positive");
  RobotState r = robot;
  const double v_target = std::clamp(v_cmd, 0.0, r.v_max);
  const double dv = std::clamp(v_target - robot.v, -r.a_max * dt, r.a_max * dt);
  r.v = std::clamp(robot.v + dv, 0.0, r.v_max);
  r.omega = std::clamp(omega_cmd, -r.omega_max, r.omega_max);
  const double th = robot.pose.theta;
  if (std::abs(r.omega) > 1e-9) {
    const double th1 = th + r.omega * dt;
    r.pose.x += r.v / r.omega * (std::sin(th1) - std::sin(th));
    r.pose.y -= r.v / r.omega * (std::cos(th1) - std::cos(th));
    r.pose.theta = std::remainder(th1, 2.0 * M_PI);
  } else {
    r.pose.x += r.v * dt * std::cos(th);
    r.pose.y += r.v * dt * std::sin(th);
  }
  return r;
}

CollisionCheck check_collision(const RobotState& robot, const std::vector<AgentState>& agents,
                               const std::vector<StaticShape>& shapes) {
  CollisionCheck c;
  c.min_clearance = std::numeric_limits<double>::infinity();
  const Eigen::Vector2d p = robot.pose.position();
  for (const auto& a : agents) {
    const double d = (a.pos - p).norm();
    if (d < robot.radius + a.radius) c.collided = true;
    c.min_clearance = std::min(c.min_clearance, d - robot.radius - a.radius);
  }
  for (const auto& s : shapes) {
    const double sd = scene::signed_distance(s, p);
    if (sd < robot.radius) c.collided = true;
    c.min_clearance = std::min(c.min_clearance, sd - robot.radius);
  }
  return c;
}

const char* to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kSuccess: return "success";
    case Outcome::kCollision: return "collision";
    case Outcome::kTimeout: return "timeout";
    case Outcome::kPlannerError: return "planner_error";
  }
  return "unknown";
}

std::pair<double, double> pure_pursuit(const bernstein::Trajectory& traj, const SimConfig& cfg) {
  const long n = traj.xy.rows();
  if (n == 0) return {0.0, 0.0};

  double arc = 0.0;
  double elapsed = 0.0;
  const double t0 = traj.times[0];
  for (long k = 1; k < n && traj.times[k] - t0 <= cfg.speed_window + 1e-9; ++k) {
    arc += (traj.xy.row(k) - traj.xy.row(k - 1)).norm();
    elapsed = traj.times[k] - t0;
  }
  if (elapsed <= 0.0 && n > 1) {
    // Grid coarser than the window: use the first segment.
    arc = (traj.xy.row(1) - traj.xy.row(0)).norm();
    elapsed = traj.times[1] - t0;
  }
  const double v_plan = elapsed > 0.0 ? std::min(arc / elapsed, cfg.v_max) : 0.0;

  Eigen::Vector2d target = traj.xy.row(n - 1).transpose();
  for (long k = 0; k < n; ++k) {
    if (traj.xy.row(k).norm() >= cfg.lookahead) {
      target = traj.xy.row(k).transpose();
      break;
    }
  }
  const double dist = target.norm();
  if (dist < 1e-6 || v_plan < 1e-3) return {0.0, 0.0};
  const double angle = std::atan2(target.y(), target.x());
  if (std::abs(angle) > M_PI / 2) {
    // Target behind: rotate in place first.
    return {0.0, std::clamp(2.0 * angle, -cfg.omega_max, cfg.omega_max)};
  }
  const double curvature = 2.0 * target.y() / (dist * dist);
  double omega = v_plan * curvature;
  double v = v_plan;
  if (std::abs(omega) > cfg.omega_max) {
    omega = std::copysign(cfg.omega_max, omega);
    v = cfg.omega_max / std::abs(curvature);
  }
  return {v, omega};
}

EpisodeResult run_episode(const WorldSpec& world, const Planner& planner, const SimConfig& cfg) {
  world.validate();
  RobotState robot;
  robot.pose = world.robot_start;
  robot.radius = world.robot_radius;
  robot.v_max = cfg.v_max;
  robot.a_max = cfg.a_max;
  robot.omega_max = cfg.omega_max;
  std::vector<AgentState> agents = world.initial_agents();
  std::vector<Eigen::Vector2d> homes;
  for (const auto& a : world.agents) homes.push_back(a.start);

  EpisodeResult res;
  const long max_steps = std::lround(cfg.timeout / cfg.dt);
  double time = 0.0;
  for (long step = 0;; ++step) {
    if ((robot.pose.position() - world.robot_goal).norm() <= cfg.goal_tolerance) {
      res.outcome = Outcome::kSuccess;
      break;
    }
    if (step >= max_steps) {
      res.outcome = Outcome::kTimeout;
      break;
    }
    const Scenario scenario =
        scene::make_scenario(world.static_shapes, agents, robot.pose, world.robot_goal, cfg.scene);
    PlanOutput plan;
    try {
      plan = planner(PlanRequest{scenario, robot, static_cast<int>(step), time});
    } catch (const std::exception& e) {
      res.outcome = Outcome::kPlannerError;
      res.diagnostic = std::string("planner failed at step ") + std::to_string(step) + ": " + e.what();
      break;
    }
    const auto [v_cmd, w_cmd] = pure_pursuit(plan.traj, cfg);
    const RobotState next = step_robot(robot, v_cmd, w_cmd, cfg.dt);
    agents = step_agents(agents, world.static_shapes, cfg.dt, cfg.agents, &robot);
    turn_around(agents, homes, cfg.agent_turnaround);
    res.path_length += (next.pose.position() - robot.pose.position()).norm();
    robot = next;
    time = static_cast<double>(step + 1) * cfg.dt;

    const CollisionCheck cc = check_collision(robot, agents, world.static_shapes);
    res.step_log.push_back({static_cast<int>(step), time, robot.pose, robot.v, robot.omega, plan.cand_idx,
                            cc.min_clearance});
    if (cc.collided) {
      res.outcome = Outcome::kCollision;
      break;
    }
  }
  res.duration = time;
  res.mean_speed = res.duration > 0.0 ? res.path_length / res.duration : 0.0;
  return res;
}

void write_episode_csv(const EpisodeResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write episode log " + path);
  out << "step,time,x,y,theta,v,omega,cand_idx,min_clearance\n";
  char buf[256];
  for (const auto& s : result.step_log) {
    std::snprintf(buf, sizeof(buf), "%d,%.3f,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%.9g\n", s.step, s.time, s.pose.x,
                  s.pose.y, s.pose.theta, s.v, s.omega, s.cand_idx, s.min_clearance);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing episode log " + path);
}

Snapshot sample_snapshot(const WorldSpec& world, uint64_t seed, const SimConfig& cfg) {
  Rng rng(mix_seed(seed, 0x51a95ULL));
  Snapshot snap;
  snap.agents = world.initial_agents();
  std::vector<Eigen::Vector2d> homes;
  for (const auto& a : world.agents) homes.push_back(a.start);
  const int warmup = rng.uniform_int(0, 150);
  for (int i = 0; i < warmup; ++i) {
    snap.agents = step_agents(snap.agents, world.static_shapes, cfg.dt, cfg.agents);
    turn_around(snap.agents, homes, cfg.agent_turnaround);
  }

  const Eigen::Vector2d start = world.robot_start.position();
  const Eigen::Vector2d route = world.robot_goal - start;
  const Eigen::Vector2d side(-route.y() / route.norm(), route.x() / route.norm());
  const double route_heading = std::atan2(route.y(), route.x());
  snap.robot = world.robot_start;
  for (int tries = 0; tries < 50; ++tries) {
    const Eigen::Vector2d p = start + rng.uniform(0.0, 0.9) * route + rng.uniform(-1.0, 1.0) * side;
    RobotState probe;
    probe.pose = {p.x(), p.y(), route_heading + rng.uniform(-0.6, 0.6)};
    probe.radius = world.robot_radius;
    if (check_collision(probe, snap.agents, world.static_shapes).min_clearance > 0.3) {
      snap.robot = probe.pose;
      break;
    }
  }
  return snap;
}

}  // namespace crowdfm::sim
