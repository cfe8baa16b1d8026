#include "crowdfm/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "crowdfm/common.hpp"

namespace crowdfm::scene {

using bernstein::BasisMatrix;
using bernstein::TrajectoryCoeffs;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Eigen::Vector2d rotate(const Eigen::Vector2d& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

}  // namespace

double signed_distance(const StaticShape& shape, const Eigen::Vector2d& p) {
  return std::visit(
      Overloaded{
          [&](const Rect& r) {
            const Eigen::Vector2d center = 0.5 * (r.lo + r.hi);
            const Eigen::Vector2d half = 0.5 * (r.hi - r.lo);
            const Eigen::Vector2d q = (p - center).cwiseAbs() - half;
            const double outside = q.cwiseMax(0.0).norm();
            const double inside = std::min(std::max(q.x(), q.y()), 0.0);
            return outside + inside;
          },
          [&](const Circle& c) { return (p - c.center).norm() - c.radius; },
      },
      shape);
}

Eigen::Vector2d closest_point(const StaticShape& shape, const Eigen::Vector2d& p) {
  return std::visit(
      Overloaded{
          [&](const Rect& r) -> Eigen::Vector2d {
            Eigen::Vector2d q = p.cwiseMax(r.lo).cwiseMin(r.hi);
            if (q != p) return q;
            // Inside: project to the nearest edge.
            const double dl = p.x() - r.lo.x(), dr = r.hi.x() - p.x();
            const double db = p.y() - r.lo.y(), dt = r.hi.y() - p.y();
            const double m = std::min({dl, dr, db, dt});
            if (m == dl) return {r.lo.x(), p.y()};
            if (m == dr) return {r.hi.x(), p.y()};
            if (m == db) return {p.x(), r.lo.y()};
            return {p.x(), r.hi.y()};
          },
          [&](const Circle& c) -> Eigen::Vector2d {
            const Eigen::Vector2d d = p - c.center;
            const double n = d.norm();
            if (n < 1e-12) return c.center + Eigen::Vector2d(c.radius, 0.0);
            return c.center + d * (c.radius / n);
          },
      },
      shape);
}

std::optional<double> ray_hit(const StaticShape& shape, const Eigen::Vector2d& origin, const Eigen::Vector2d& dir) {
  return std::visit(
      Overloaded{
          [&](const Rect& r) -> std::optional<double> {
            // Slab method.
            double t0 = -std::numeric_limits<double>::infinity();
            double t1 = std::numeric_limits<double>::infinity();
            for (int a = 0; a < 2; ++a) {
              if (std::abs(dir[a]) < 1e-15) {
                if (origin[a] < r.lo[a] || origin[a] > r.hi[a]) return std::nullopt;
                continue;
              }
              double ta = (r.lo[a] - origin[a]) / dir[a];
              double tb = (r.hi[a] - origin[a]) / dir[a];
              if (ta > tb) std::swap(ta, tb);
              t0 = std::max(t0, ta);
              t1 = std::min(t1, tb);
            }
            if (t0 > t1 || t1 < 0.0) return std::nullopt;
            return t0 >= 0.0 ? t0 : t1;
          },
          [&](const Circle& c) -> std::optional<double> {
            const Eigen::Vector2d oc = origin - c.center;
            const double b = oc.dot(dir);
            const double cc = oc.squaredNorm() - c.radius * c.radius;
            const double disc = b * b - cc;
            if (disc < 0.0) return std::nullopt;
            const double sq = std::sqrt(disc);
            const double t_near = -b - sq, t_far = -b + sq;
            if (t_far < 0.0) return std::nullopt;
            return t_near >= 0.0 ? t_near : t_far;
          },
      },
      shape);
}

const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kSparse: return "sparse";
    case Difficulty::kDense: return "dense";
    case Difficulty::kCorridor: return "corridor";
  }
  return "unknown";
}

Difficulty difficulty_from_string(const std::string& name) {
  if (name == "sparse") return Difficulty::kSparse;
  if (name == "dense") return Difficulty::kDense;
  if (name == "corridor") return Difficulty::kCorridor;
  throw Error(ErrorKind::kConfig, "unknown world difficulty '" + name + "'");
}

void WorldSpec::validate() const {
  auto inside = [&](const Eigen::Vector2d& p) {
    return p.x() >= bounds[0] && p.x() <= bounds[2] && p.y() >= bounds[1] && p.y() <= bounds[3];
  };
  const Eigen::Vector2d start = robot_start.position();
  if (!inside(start) || !inside(robot_goal)) {
    throw Error(ErrorKind::kInvalidInput, "robot start/goal outside world bounds");
  }
  for (const auto& s : static_shapes) {
    if (signed_distance(s, start) <= robot_radius || signed_distance(s, robot_goal) <= robot_radius) {
      throw Error(ErrorKind::kInvalidInput, "robot start/goal overlaps a static shape");
    }
  }
  for (const auto& a : agents) {
    if (!(a.pref_speed > 0.0 && a.pref_speed <= 2.0)) {
      throw Error(ErrorKind::kInvalidInput, "agent preferred speed outside (0, 2]");
    }
    if (!(a.radius > 0.0)) throw Error(ErrorKind::kInvalidInput, "agent radius must be positive");
  }
}

std::vector<AgentState> WorldSpec::initial_agents() const {
  std::vector<AgentState> out;
  out.reserve(agents.size());
  for (const auto& a : agents) {
    AgentState s;
    s.pos = a.start;
    s.goal = a.goal;
    s.pref_speed = a.pref_speed;
    s.radius = a.radius;
    out.push_back(s);
  }
  return out;
}

namespace {

bool clear_of_shapes(const std::vector<StaticShape>& shapes, const Eigen::Vector2d& p, double margin) {
  return std::all_of(shapes.begin(), shapes.end(),
                     [&](const StaticShape& s) { return signed_distance(s, p) > margin; });
}

// Places agents one by one with bounded retries; false when the layout is
// too crowded and the whole world should be resampled.
template <class SamplePair>
bool place_agents(WorldSpec& w, Rng& rng, int count, double min_travel, SamplePair sample_pair,
                  double speed_lo, double speed_hi) {
  const Eigen::Vector2d robot = w.robot_start.position();
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int tries = 0; tries < 60 && !placed; ++tries) {
      AgentSpec a;
      a.radius = rng.uniform(0.2, 0.3);
      a.pref_speed = rng.uniform(speed_lo, speed_hi);
      std::tie(a.start, a.goal) = sample_pair(rng);
      if ((a.goal - a.start).norm() < min_travel) continue;
      if ((a.start - robot).norm() < 1.5 + a.radius) continue;
      if ((a.goal - robot).norm() < 0.8 + a.radius) continue;
      if ((a.start - w.robot_goal).norm() < 0.8 + a.radius) continue;
      if (!clear_of_shapes(w.static_shapes, a.start, a.radius + 0.1)) continue;
      if (!clear_of_shapes(w.static_shapes, a.goal, a.radius + 0.1)) continue;
      const bool overlaps = std::any_of(w.agents.begin(), w.agents.end(), [&](const AgentSpec& b) {
        return (b.start - a.start).norm() < a.radius + b.radius + 0.2;
      });
      if (overlaps) continue;
      w.agents.push_back(a);
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

bool build_world(WorldSpec& w, Rng& rng, Difficulty difficulty) {
  auto point_in = [&](double x0, double x1, double y0, double y1) {
    return Eigen::Vector2d(rng.uniform(x0, x1), rng.uniform(y0, y1));
  };
  switch (difficulty) {
    case Difficulty::kSparse: {
      w.bounds = {-8.0, -8.0, 8.0, 8.0};
      w.robot_start = {-6.0, rng.uniform(-3.0, 3.0), 0.0};
      w.robot_goal = {6.0, rng.uniform(-3.0, 3.0)};
      const int n_shapes = rng.uniform_int(2, 3);
      for (int i = 0; i < n_shapes; ++i) {
        const Eigen::Vector2d c = point_in(-3.0, 3.0, -4.0, 4.0);
        if (rng.uniform() < 0.5) {
          w.static_shapes.push_back(Circle{c, rng.uniform(0.3, 0.8)});
        } else {
          const Eigen::Vector2d half(rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8));
          w.static_shapes.push_back(Rect{c - half, c + half});
        }
      }
      const int n_agents = rng.uniform_int(4, 6);
      return place_agents(
          w, rng, n_agents, 4.0, [&](Rng&) { return std::pair{point_in(-7.0, 7.0, -7.0, 7.0), point_in(-7.0, 7.0, -7.0, 7.0)}; }, 0.5,
          1.0);
    }
    case Difficulty::kDense: {
      w.bounds = {-6.0, -6.0, 6.0, 6.0};
      w.robot_start = {-5.0, rng.uniform(-2.0, 2.0), 0.0};
      w.robot_goal = {5.0, rng.uniform(-2.0, 2.0)};
      const int n_shapes = rng.uniform_int(0, 2);
      for (int i = 0; i < n_shapes; ++i) {
        w.static_shapes.push_back(Circle{point_in(-3.0, 3.0, -4.0, 4.0), rng.uniform(0.3, 0.6)});
      }
      const int n_agents = rng.uniform_int(15, 20);
      return place_agents(
          w, rng, n_agents, 4.0, [&](Rng&) { return std::pair{point_in(-5.5, 5.5, -5.5, 5.5), point_in(-5.5, 5.5, -5.5, 5.5)}; }, 0.4,
          1.0);
    }
    case Difficulty::kCorridor: {
      w.bounds = {-8.0, -5.0, 8.0, 5.0};
      const double gap = rng.uniform(2.4, 3.0);
      const double length = rng.uniform(3.0, 4.5);
      w.static_shapes.push_back(Rect{{-length, 0.5 * gap}, {length, 0.5 * gap + 1.0}});
      w.static_shapes.push_back(Rect{{-length, -0.5 * gap - 1.0}, {length, -0.5 * gap}});
      w.robot_start = {-7.0, rng.uniform(-0.5, 0.5), 0.0};
      w.robot_goal = {7.0, rng.uniform(-0.5, 0.5)};
      const int n_agents = rng.uniform_int(6, 10);
      int toggle = 0;
      auto lane = [&](Rng& r) {
        const double y0 = r.uniform(-1.0, 1.0), y1 = r.uniform(-1.0, 1.0);
        const double xa = r.uniform(length - 1.0, 7.5), xb = -r.uniform(length - 1.0, 7.5);
        // Alternate direction so the corridor carries flow both ways.
        const bool oncoming = (toggle++ % 2) == 0;
        return oncoming ? std::pair{Eigen::Vector2d(xa, y0), Eigen::Vector2d(xb, y1)}
                        : std::pair{Eigen::Vector2d(xb, y0), Eigen::Vector2d(xa, y1)};
      };
      return place_agents(w, rng, n_agents, 4.0, lane, 0.4, 0.9);
    }
  }
  return false;
}

}  // namespace

WorldSpec sample_world(uint64_t seed, Difficulty difficulty) {
  Rng rng(mix_seed(seed, 0x5eed0000ULL + static_cast<uint64_t>(difficulty)));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    WorldSpec w;
    w.seed = seed;
    w.tag = to_string(difficulty);
    if (!build_world(w, rng, difficulty)) continue;
    const Eigen::Vector2d start = w.robot_start.position();
    if ((w.robot_goal - start).norm() < 8.0) continue;
    if (!clear_of_shapes(w.static_shapes, start, w.robot_radius + 0.3)) continue;
    if (!clear_of_shapes(w.static_shapes, w.robot_goal, w.robot_radius + 0.3)) continue;
    const Eigen::Vector2d to_goal = w.robot_goal - start;
    w.robot_start.theta = std::atan2(to_goal.y(), to_goal.x());
    return w;
  }
  throw Error(ErrorKind::kGeneration, std::string("could not sample a valid ") + to_string(difficulty) +
                                          " world for seed " + std::to_string(seed));
}

Scenario make_scenario(const std::vector<StaticShape>& shapes, const std::vector<AgentState>& agents,
                       const Pose& robot, const Eigen::Vector2d& goal, const SceneConfig& cfg) {
  Scenario s = Scenario::empty(cfg.n_pts, cfg.n_obs);
  const Eigen::Vector2d origin = robot.position();

  struct RayHit {
    int ray;
    double range;
  };
  std::vector<RayHit> hits;
  for (int i = 0; i < cfg.num_rays; ++i) {
    const double rel = 2.0 * M_PI * i / cfg.num_rays;
    const Eigen::Vector2d dir(std::cos(robot.theta + rel), std::sin(robot.theta + rel));
    double best = cfg.sensing_radius;
    bool any = false;
    for (const auto& shape : shapes) {
      if (auto t = ray_hit(shape, origin, dir); t && *t <= best) {
        best = *t;
        any = true;
      }
    }
    if (any) hits.push_back({i, best});
  }
  if (static_cast<int>(hits.size()) > cfg.n_pts) {
    std::stable_sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) { return a.range < b.range; });
    hits.resize(static_cast<size_t>(cfg.n_pts));
    std::sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) { return a.ray < b.ray; });
  }
  for (size_t i = 0; i < hits.size(); ++i) {
    const double rel = 2.0 * M_PI * hits[i].ray / cfg.num_rays;
    s.pointcloud[i] = {static_cast<float>(hits[i].range * std::cos(rel)),
                       static_cast<float>(hits[i].range * std::sin(rel))};
  }
  s.pointcloud_len = static_cast<int>(hits.size());

  std::vector<std::pair<double, size_t>> near;
  for (size_t i = 0; i < agents.size(); ++i) {
    const double r = (agents[i].pos - origin).norm();
    if (r <= cfg.sensing_radius) near.emplace_back(r, i);
  }
  std::stable_sort(near.begin(), near.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const size_t n_dyn = std::min(near.size(), static_cast<size_t>(cfg.n_obs));
  for (size_t k = 0; k < n_dyn; ++k) {
    const auto& a = agents[near[k].second];
    const Eigen::Vector2d p = rotate(a.pos - origin, -robot.theta);
    const Eigen::Vector2d v = rotate(a.vel, -robot.theta);
    s.dyn_obstacles[k] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(v.x()),
                          static_cast<float>(v.y())};
  }
  s.dyn_len = static_cast<int>(n_dyn);

  const Eigen::Vector2d to_goal = rotate(goal - origin, -robot.theta);
  const double n = to_goal.norm();
  if (n > 1e-9) {
    const double angle = std::atan2(to_goal.y(), to_goal.x());
    s.goal_heading = {static_cast<float>(std::cos(angle)), static_cast<float>(std::sin(angle))};
  }
  return s;
}

ExpertConfig default_expert() { return ExpertConfig{}; }

ExpertConfig human_like_expert() {
  ExpertConfig cfg;
  cfg.refine.d_safe = 0.8;
  cfg.nominal_speed = 0.75;
  cfg.speed_factors = {1.0, 0.7, 0.4};
  cfg.left_penalty = 0.5;
  return cfg;
}

namespace {

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

double mean_distance(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b) {
  return (a - b).rowwise().norm().mean();
}

}  // namespace

std::vector<ExpertCandidate> expert_candidates(const Scenario& scenario, const BasisMatrix& basis,
                                               const ExpertConfig& cfg) {
  scenario.validate();
  const Eigen::Vector2d g(scenario.goal_heading[0], scenario.goal_heading[1]);
  const Eigen::Vector2d left(-g.y(), g.x());
  const refine::ObstacleSet obstacles =
      refine::make_obstacles(scenario, cfg.refine.include_dynamic, cfg.refine.dynamic_radius);
  const long n = basis.waypoints();
  const double horizon = basis.horizon();

  Eigen::MatrixX2d nominal(n, 2);
  for (long k = 0; k < n; ++k) {
    const double t = basis.times[k] - basis.times[0];
    nominal.row(k) = (cfg.nominal_speed * t) * g.transpose();
  }

  struct Seed {
    double offset, speed;
  };
  std::vector<Seed> seeds;
  for (double f : cfg.speed_factors)
    for (double o : cfg.lateral_offsets) seeds.push_back({o, f * cfg.nominal_speed});

  std::vector<std::optional<ExpertCandidate>> slots(seeds.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(seeds.size()); ++i) {
    const Seed& sd = seeds[static_cast<size_t>(i)];
    Eigen::MatrixX2d wp(n, 2);
    for (long k = 0; k < n; ++k) {
      const double t = basis.times[k] - basis.times[0];
      const double lateral = sd.offset * smoothstep(t / (0.7 * horizon));
      wp.row(k) = (sd.speed * t) * g.transpose() + lateral * left.transpose();
    }
    try {
      const auto fit = bernstein::fit_coeffs(wp, basis);
      auto res = refine::project_refine(fit.coeffs, obstacles, basis, cfg.refine);
      ExpertCandidate c;
      c.coeffs = res.coeffs;
      c.traj = bernstein::eval_trajectory(res.coeffs, basis, true);
      c.collision_free = res.feasible;
      c.lateral_offset = sd.offset;
      c.speed = sd.speed;
      const double side = (c.traj.xy * left).mean();
      c.family = side > 0.25 ? 1 : (side < -0.25 ? 2 : 0);
      c.score = mean_distance(c.traj.xy, nominal) + (c.family == 1 ? cfg.left_penalty : 0.0);
      slots[static_cast<size_t>(i)] = std::move(c);
    } catch (const Error&) {
      // diverged seed; dropped
    }
  }
  std::vector<ExpertCandidate> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  if (out.empty()) throw Error(ErrorKind::kGeneration, "every expert seed failed to refine");
  return out;
}

ExpertResult expert_oracle(const Scenario& scenario, const BasisMatrix& basis, const ExpertConfig& cfg) {
  const auto cands = expert_candidates(scenario, basis, cfg);
  const ExpertCandidate* best_free = nullptr;
  const ExpertCandidate* best_any = nullptr;
  for (const auto& c : cands) {
    if (!best_any || c.score < best_any->score) best_any = &c;
    if (c.collision_free && (!best_free || c.score < best_free->score)) best_free = &c;
  }
  const ExpertCandidate& pick = best_free ? *best_free : *best_any;
  return {pick.coeffs, pick.traj, pick.collision_free};
}

std::vector<ExpertCandidate> expert_modes(const Scenario& scenario, const BasisMatrix& basis,
                                          const ExpertConfig& cfg, int max_modes) {
  const auto cands = expert_candidates(scenario, basis, cfg);
  std::array<const ExpertCandidate*, 3> best{nullptr, nullptr, nullptr};
  for (const auto& c : cands) {
    if (!c.collision_free) continue;
    auto& slot = best[static_cast<size_t>(c.family)];
    if (!slot || c.score < slot->score) slot = &c;
  }
  std::vector<const ExpertCandidate*> ranked;
  for (const auto* c : best)
    if (c) ranked.push_back(c);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ExpertCandidate* a, const ExpertCandidate* b) { return a->score < b->score; });
  std::vector<ExpertCandidate> out;
  for (const auto* c : ranked) {
    if (static_cast<int>(out.size()) >= max_modes) break;
    const bool distinct = std::all_of(out.begin(), out.end(), [&](const ExpertCandidate& o) {
      return mean_distance(o.traj.xy, c->traj.xy) >= cfg.min_mode_separation;
    });
    if (distinct) out.push_back(*c);
  }
  return out;
}

}  // namespace crowdfm::scene
