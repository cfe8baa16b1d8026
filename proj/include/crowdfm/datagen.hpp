#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/common.hpp"
#include "crowdfm/crowd_sim.hpp"
#include "crowdfm/scenario.hpp"
#include "crowdfm/scene.hpp"

namespace crowdfm::datagen {

struct DataGenConfig {
  int count = 500;         // flow-training records
  int scorer_count = 200;  // scorer records (one per scene)
  uint64_t seed = 1;
  std::vector<scene::Difficulty> mix{scene::Difficulty::kSparse, scene::Difficulty::kDense,
                                     scene::Difficulty::kCorridor};
  int max_modes = 3;
  scene::ExpertConfig expert = scene::default_expert();
  scene::ExpertConfig human = scene::human_like_expert();
  sim::SimConfig sim;
};

struct DataGenStats {
  int scenes_tried = 0;
  int scenes_rejected = 0;  // no collision-free demonstration
  int records = 0;
  int scorer_scenes_tried = 0;
  int scorer_scenes_rejected = 0;
  int scorer_records = 0;
  std::map<std::string, int> records_per_tag;
  std::map<int, int> modes_histogram;  // modes per accepted scene -> scenes

  std::string summary() const;
};

struct Datasets {
  std::vector<DatasetRecord> flow;
  std::vector<DatasetRecord> scorer;
};

/// Flow records hold every demonstrated mode of a scene as its own record;
/// scorer records come from a disjoint range of scene ids and carry the
/// human-like demonstrator's waypoints. Deterministic in the config.
Datasets generate(const DataGenConfig& cfg, const bernstein::BasisMatrix& basis, DataGenStats* stats = nullptr);

/// Scene ids of scorer records start here.
inline constexpr int64_t kScorerSceneOffset = int64_t{1} << 32;

}  // namespace crowdfm::datagen
