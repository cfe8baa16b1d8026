#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/crowd_sim.hpp"
#include "crowdfm/planner.hpp"
#include "crowdfm/scorer.hpp"

namespace crowdfm::eval {

/// Mean per-waypoint Euclidean deviation.
double hlp(const Eigen::MatrixX2d& candidate_xy, const Eigen::MatrixX2d& expert_xy);

/// Hand-tuned baseline score of one candidate; lower is better.
double selection_cost(const bernstein::TrajectoryCoeffs& coeffs, const bernstein::BasisMatrix& basis,
                      const refine::ObstacleSet& obstacles, const Scenario& scenario,
                      const planner::CostWeights& weights, double d_safe, double v_max);

/// argmin of w1 * collision cost + w2 * mean |acc|^2 + w3 * (1 - progress / (v_max T)),
/// progress being the terminal displacement along the goal heading; lowest
/// index on ties.
int cost_select(const std::vector<bernstein::TrajectoryCoeffs>& cands, const Scenario& scenario,
                const bernstein::BasisMatrix& basis, const planner::CostWeights& weights, double d_safe,
                double v_max, bool include_dynamic = true, double dynamic_radius = 0.3);

struct EpisodeMetrics {
  double length = 0.0;
  double time = 0.0;
  double velocity = 0.0;
  bool velocity_defined = false;
};

EpisodeMetrics episode_metrics(const sim::EpisodeResult& result);

enum class Variant { kVanilla, kGuidance, kGuidanceRefine, kGuidanceRefineScorer };
const char* to_string(Variant v);
Variant variant_from_string(const std::string& name);

/// Pipeline settings of a variant derived from a base config: vanilla turns
/// guidance off, the first two skip refinement, all but the last use the
/// cost baseline.
planner::PipelineConfig variant_config(Variant v, const planner::PipelineConfig& base, double guidance_scale);

struct EpisodeRecord {
  Variant variant;
  std::string world;  // world tag
  uint64_t world_seed = 0;
  int run = 0;
  sim::Outcome outcome = sim::Outcome::kTimeout;
  EpisodeMetrics metrics;
  double mean_raw_collision = 0.0;  // mean L_collision of raw candidates over replans
  int plans = 0;
  std::vector<double> plan_ms;  // wall time per replan
};

struct ReportRow {
  Variant variant;
  std::string world;
  int runs = 0;
  int successes = 0;
  double rate = 0.0;
  double mean_len = 0.0;
  double mean_time = 0.0;
  double mean_vel = 0.0;
};

struct HlpPair {
  int64_t scene_id = 0;
  double hlp_scorer = 0.0;
  double hlp_cost = 0.0;
};

struct LatencyStats {
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  size_t samples = 0;
};

LatencyStats latency_stats(std::vector<double> ms);

struct BenchmarkReport {
  std::vector<ReportRow> rows;
  std::vector<EpisodeRecord> episodes;
  std::vector<HlpPair> hlp;
  std::string fingerprint;
  uint64_t seed = 0;

  std::map<Variant, LatencyStats> latency() const;
  std::string report_csv() const;
  std::string hlp_csv() const;
};

/// Aggregates episodes into per (variant, world) rows; means are over
/// successful runs only.
std::vector<ReportRow> aggregate(const std::vector<EpisodeRecord>& episodes);

struct BenchmarkConfig {
  std::vector<Variant> variants{Variant::kVanilla, Variant::kGuidance, Variant::kGuidanceRefine,
                                Variant::kGuidanceRefineScorer};
  int runs = 1;
  uint64_t seed = 1;
  double guidance_scale = 20.0;
  planner::PipelineConfig pipeline;
  sim::SimConfig sim;
};

/// Every (world, run, variant) episode, run in parallel; the report does not
/// depend on scheduling.
BenchmarkReport run_benchmark(const std::vector<scene::WorldSpec>& worlds, const flow::FlowModel& flow,
                              const scorer::ScorerModel* scorer, const bernstein::BasisMatrix& basis,
                              const BenchmarkConfig& cfg);

/// Generic form used by tests: one planner factory per variant.
using PlannerFactory = std::function<sim::Planner(Variant, uint64_t run_seed, EpisodeRecord& record)>;
std::vector<EpisodeRecord> run_episodes(const std::vector<scene::WorldSpec>& worlds,
                                        const std::vector<Variant>& variants, int runs, uint64_t seed,
                                        const sim::SimConfig& sim, const PlannerFactory& factory);

/// Open-loop paired comparison on stored expert scenes: both selectors pick
/// from the same refined candidate set.
std::vector<HlpPair> hlp_comparison(const std::vector<DatasetRecord>& scenes, const flow::FlowModel& flow,
                                    const scorer::ScorerModel& scorer, const bernstein::BasisMatrix& basis,
                                    const planner::PipelineConfig& pipeline, uint64_t seed);

/// Grouped bars per scene from HLP pairs.
std::string hlp_svg(const std::vector<HlpPair>& pairs);

void write_text(const std::string& path, const std::string& text);

}  // namespace crowdfm::eval
