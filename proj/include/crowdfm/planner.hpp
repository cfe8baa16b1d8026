#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/common.hpp"
#include "crowdfm/crowd_sim.hpp"
#include "crowdfm/flow_model.hpp"
#include "crowdfm/guidance_refine.hpp"
#include "crowdfm/scorer.hpp"

namespace crowdfm::planner {

struct CostWeights {
  double collision = 10.0;
  double smoothness = 1.0;
  double progress = 2.0;
};

enum class Selector { kCostSelect, kScorer };

struct PipelineConfig {
  flow::SampleConfig sample;
  bool refine = true;
  refine::RefineConfig refine_cfg;
  Selector selector = Selector::kCostSelect;
  CostWeights weights;
  uint64_t seed = 0;
};

struct PlanResult {
  std::vector<bernstein::TrajectoryCoeffs> raw;  // sampled candidates, before refinement
  scorer::CandidateSet candidates;               // what the selector saw
  std::vector<bool> feasible;                    // per candidate; all true without refinement
  int selected = -1;
  bernstein::Trajectory trajectory;
  double ms_encode = 0.0;
  double ms_sample = 0.0;
  double ms_refine = 0.0;
  double ms_select = 0.0;
  double ms_total = 0.0;
};

/// encode -> guided sample -> optional refine -> select. The models must
/// outlive the planner.
class PipelinePlanner {
 public:
  PipelinePlanner(const flow::FlowModel& flow, const scorer::ScorerModel* scorer,
                  const bernstein::BasisMatrix& basis, const PipelineConfig& cfg);

  const PipelineConfig& config() const { return cfg_; }
  const bernstein::BasisMatrix& basis() const { return basis_; }

  PlanResult plan(const Scenario& scenario, Rng& rng) const;

  /// Closed-loop adapter. The RNG for replan `step` is derived from
  /// (seed, step) so episodes replay exactly. `observer` sees every plan.
  sim::Planner as_sim_planner(std::function<void(const sim::PlanRequest&, const PlanResult&)> observer = {}) const;

 private:
  const flow::FlowModel* flow_;
  const scorer::ScorerModel* scorer_;
  bernstein::BasisMatrix basis_;
  PipelineConfig cfg_;
};

}  // namespace crowdfm::planner
