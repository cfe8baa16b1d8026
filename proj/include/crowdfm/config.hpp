#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/datagen.hpp"
#include "crowdfm/evaluation.hpp"
#include "crowdfm/flow_model.hpp"
#include "crowdfm/planner.hpp"
#include "crowdfm/scorer.hpp"

namespace crowdfm {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kConfigEnvVar = "CROWDFM_CONFIG";

struct BasisSettings {
  int order = 10;
  double horizon = 5.0;
  int waypoints = 50;
};

struct GuidanceSettings {
  double d_safe = 0.5;
  bool include_dynamic = true;
  double dynamic_radius = 0.3;
};

struct FlowTrainSettings {
  int steps = 2000;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  int checkpoint_every = 500;
};

struct ScorerTrainSettings {
  int steps = 2000;
  int batch_size = 4;
  double lr = 5e-4;
  double clip_norm = 5.0;
  uint64_t seed = 2;
  int checkpoint_every = 100;
  double holdout_fraction = 0.2;
};

struct DataSettings {
  int count = 500;
  int scorer_count = 200;
  uint64_t seed = 1;
  std::vector<std::string> mix{"sparse", "dense", "corridor"};
};

struct BenchSettings {
  std::string suite = "dense";
  int worlds = 10;
  int runs = 1;
  uint64_t seed = 7;
  double timeout = 60.0;
  std::vector<std::string> variants{"cfm", "cfm_guidance", "cfm_guidance_refine_cost", "cfm_guidance_refine_scorer"};
  int hlp_scenes = 30;
};

/// Every tunable of the pipeline in one document.
struct RunConfig {
  BasisSettings basis;
  scene::SceneConfig scene;
  flow::FlowNetConfig flow;
  GuidanceSettings guidance;
  refine::RefineConfig refine;
  scorer::ScorerConfig scorer;
  planner::CostWeights cost_weights;
  sim::SimConfig sim;
  FlowTrainSettings flow_train;
  ScorerTrainSettings scorer_train;
  DataSettings data;
  BenchSettings bench;
  uint64_t planner_seed = 11;

  /// Cross-field consistency; throws kConfig.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;

  /// Applies `section.key=value` (value parsed as JSON, else taken as a string).
  static void apply_override(nlohmann::json& doc, const std::string& assignment);

  bernstein::BasisMatrix make_basis() const;
  flow::SampleConfig sample_config() const;
  planner::PipelineConfig pipeline_config() const;
  flow::FlowTrainConfig flow_train_config() const;
  scorer::ScorerTrainConfig scorer_train_config() const;
  datagen::DataGenConfig datagen_config() const;
  eval::BenchmarkConfig bench_config() const;

  /// Short stable hash of the canonical JSON dump.
  std::string fingerprint() const;
};

/// Load order: explicit path, then $CROWDFM_CONFIG, then defaults; overrides
/// are applied last and the result is validated.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace crowdfm
