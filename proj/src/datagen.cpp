#include "crowdfm/datagen.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>

namespace crowdfm::datagen {

namespace {

struct SceneDraw {
  Scenario scenario;
  std::string tag;
  uint64_t seed = 0;
};

SceneDraw draw_scene(const DataGenConfig& cfg, int64_t scene_id) {
  SceneDraw d;
  d.seed = mix_seed(cfg.seed, static_cast<uint64_t>(scene_id));
  const auto difficulty = cfg.mix[static_cast<size_t>(scene_id % static_cast<int64_t>(cfg.mix.size()))];
  const scene::WorldSpec world = scene::sample_world(d.seed, difficulty);
  const sim::Snapshot snap = sim::sample_snapshot(world, d.seed, cfg.sim);
  d.scenario = scene::make_scenario(world.static_shapes, snap.agents, snap.robot, world.robot_goal, cfg.sim.scene);
  d.tag = world.tag;
  return d;
}

DatasetRecord make_record(const SceneDraw& d, int64_t scene_id, const bernstein::TrajectoryCoeffs& coeffs) {
  DatasetRecord r;
  r.scenario = d.scenario;
  r.target_coeffs = coeffs;
  r.meta = {d.seed, scene_id, d.tag};
  return r;
}

struct FirstFailure {
  std::mutex mutex;
  std::exception_ptr error;
  void capture() {
    std::lock_guard<std::mutex> lock(mutex);
    if (!error) error = std::current_exception();
  }
  void rethrow() {
    if (error) std::rethrow_exception(error);
  }
};

// Scenes are processed in fixed-size blocks in parallel and appended in id
// order, so the output does not depend on the thread count.
constexpr int kBlock = 16;

}  // namespace

std::string DataGenStats::summary() const {
  std::ostringstream s;
  s << "flow records: " << records << " from " << (scenes_tried - scenes_rejected) << " scenes (" << scenes_rejected
    << " of " << scenes_tried << " rejected)\n";
  s << "scorer records: " << scorer_records << " (" << scorer_scenes_rejected << " of " << scorer_scenes_tried
    << " scenes rejected)\n";
  for (const auto& [tag, n] : records_per_tag) s << "  " << tag << ": " << n << " records\n";
  for (const auto& [m, n] : modes_histogram) s << "  scenes with " << m << " mode(s): " << n << "\n";
  return s.str();
}

Datasets generate(const DataGenConfig& cfg, const bernstein::BasisMatrix& basis, DataGenStats* stats) {
  if (cfg.count < 0 || cfg.scorer_count < 0) throw Error(ErrorKind::kConfig, "record counts must be >= 0");
  if (cfg.mix.empty()) throw Error(ErrorKind::kConfig, "difficulty mix must not be empty");
  DataGenStats local;
  DataGenStats& st = stats ? *stats : local;
  st = DataGenStats{};
  Datasets out;
  // A scene that yields nothing is not retried, so cap the attempts.
  const int64_t max_scenes = 20 * static_cast<int64_t>(std::max(cfg.count, cfg.scorer_count)) + 100;

  FirstFailure failure;
  int64_t next = 0;
  while (static_cast<int>(out.flow.size()) < cfg.count) {
    if (next >= max_scenes) throw Error(ErrorKind::kGeneration, "too many scenes without a collision-free demonstration");
    std::vector<std::optional<std::pair<SceneDraw, std::vector<scene::ExpertCandidate>>>> block(kBlock);
#pragma omp parallel for schedule(dynamic, 1)
    for (int b = 0; b < kBlock; ++b) {
      SceneDraw d;
      std::vector<scene::ExpertCandidate> modes;
      try {
        d = draw_scene(cfg, next + b);
        modes = scene::expert_modes(d.scenario, basis, cfg.expert, cfg.max_modes);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kGeneration) failure.capture();
      } catch (...) {
        failure.capture();
      }
      block[static_cast<size_t>(b)].emplace(std::move(d), std::move(modes));
    }
    failure.rethrow();
    for (int b = 0; b < kBlock && static_cast<int>(out.flow.size()) < cfg.count; ++b) {
      const auto& [d, modes] = *block[static_cast<size_t>(b)];
      ++st.scenes_tried;
      if (modes.empty()) {
        ++st.scenes_rejected;
        continue;
      }
      ++st.modes_histogram[static_cast<int>(modes.size())];
      for (const auto& m : modes) {
        if (static_cast<int>(out.flow.size()) >= cfg.count) break;
        out.flow.push_back(make_record(d, next + b, m.coeffs));
        ++st.records_per_tag[d.tag];
      }
    }
    next += kBlock;
  }
  st.records = static_cast<int>(out.flow.size());

  next = 0;
  while (static_cast<int>(out.scorer.size()) < cfg.scorer_count) {
    if (next >= max_scenes) throw Error(ErrorKind::kGeneration, "too many scorer scenes without a demonstration");
    std::vector<std::optional<std::pair<SceneDraw, scene::ExpertResult>>> block(kBlock);
#pragma omp parallel for schedule(dynamic, 1)
    for (int b = 0; b < kBlock; ++b) {
      SceneDraw d;
      scene::ExpertResult e;
      try {
        d = draw_scene(cfg, kScorerSceneOffset + next + b);
        e = scene::expert_oracle(d.scenario, basis, cfg.human);
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kGeneration) failure.capture();
      } catch (...) {
        failure.capture();
      }
      block[static_cast<size_t>(b)].emplace(std::move(d), std::move(e));
    }
    failure.rethrow();
    for (int b = 0; b < kBlock && static_cast<int>(out.scorer.size()) < cfg.scorer_count; ++b) {
      const auto& [d, e] = *block[static_cast<size_t>(b)];
      ++st.scorer_scenes_tried;
      if (!e.collision_free) {
        ++st.scorer_scenes_rejected;
        continue;
      }
      DatasetRecord r = make_record(d, kScorerSceneOffset + next + b, e.coeffs);
      r.expert_xy = e.traj.xy.cast<float>();
      out.scorer.push_back(std::move(r));
    }
    next += kBlock;
  }
  st.scorer_records = static_cast<int>(out.scorer.size());
  return out;
}

}  // namespace crowdfm::datagen
