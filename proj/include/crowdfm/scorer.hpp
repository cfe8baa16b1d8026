#pragma once

#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/flow_model.hpp"
#include "crowdfm/guidance_refine.hpp"
#include "crowdfm/nn.hpp"
#include "crowdfm/scenario.hpp"

namespace crowdfm::scorer {

using ad::Tensor;
using bernstein::BasisMatrix;
using bernstein::TrajectoryCoeffs;

struct CandidateSet {
  std::vector<TrajectoryCoeffs> coeffs;
  std::vector<double> refine_costs;
  std::vector<Eigen::MatrixX2d> trajectories;  // waypoints on the basis grid

  static CandidateSet build(std::vector<TrajectoryCoeffs> coeffs, std::vector<double> costs,
                            const BasisMatrix& basis);
  int size() const { return static_cast<int>(coeffs.size()); }
  /// Permuted copy: result[i] = this[perm[i]].
  CandidateSet permuted(const std::vector<int>& perm) const;
};

struct ScorerConfig {
  int order = 10;
  int d_model = 64;
  int heads = 8;
  int layers = 4;
  double reg_weight = 0.1;  // lambda_s
  bool cost_weighted_ce = false;
  double coeff_scale = 5.0;  // m, control points are divided by this
  // Context encoder branch settings (same architecture as the flow's).
  int dyn_heads = 4;
  int dyn_layers = 2;
  int n_obs = 10;
  double sensing_radius = 8.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ScorerConfig from_json(const nlohmann::json& j);
};

class ScorerModel {
 public:
  ScorerModel(const ScorerConfig& cfg, uint64_t seed);

  const ScorerConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return store_; }
  const ad::ParamStore& params() const { return store_; }

  /// Raw logits [1 x K]. K >= 2.
  Tensor scores(const CandidateSet& cands, const Scenario& scenario) const;
  std::vector<double> score(const CandidateSet& cands, const Scenario& scenario) const;

  void save(const std::string& path, const nlohmann::json& extra = {}, bool with_optimizer = false) const;
  static std::unique_ptr<ScorerModel> load(const std::string& path, bool with_optimizer = false);

 private:
  ScorerConfig cfg_;
  ad::ParamStore store_;
  flow::ContextEncoder encoder_;
  nn::Conv1d traj_conv1_, traj_conv2_;
  nn::Mlp traj_mlp_;
  Tensor e_traj_, e_static_, e_dyn_, e_goal_;
  nn::TransformerEncoder transformer_;
  nn::Mlp head_;
};

/// Index of the candidate with the smallest summed waypoint distance to the
/// expert; lowest index wins ties.
int label_closest(const CandidateSet& cands, const Eigen::MatrixX2d& expert_xy);

/// Cross-entropy of scores against j plus reg_weight * mean(refine_costs).
/// With cost weighting the CE term is scaled by 1 / (1 + cost_j).
Tensor scorer_loss(const Tensor& scores, int j, const std::vector<double>& refine_costs, double reg_weight,
                   bool cost_weighted = false);
double scorer_loss_value(const std::vector<double>& scores, int j, const std::vector<double>& refine_costs,
                         double reg_weight);

/// Argmax, lowest index on ties.
int select_best(const std::vector<double>& scores);

/// Resamples an expert path (given on its own time grid) onto `times` by
/// linear interpolation.
Eigen::MatrixX2d resample_expert(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& src_times,
                                 const Eigen::VectorXd& times);

/// Expert waypoints of a record on the basis grid (resampled when stored on
/// a different uniform grid over the same horizon).
Eigen::MatrixX2d expert_on_grid(const DatasetRecord& record, const BasisMatrix& basis);

struct ScorerTrainConfig {
  int steps = 1000;
  int batch_size = 4;
  ad::AdamConfig adam{5e-4f, 0.9f, 0.999f, 1e-8f, 5.0f};
  uint64_t seed = 1;
  flow::SampleConfig sample;
  refine::RefineConfig refine;
  std::string checkpoint_path;
  int checkpoint_every = 0;
};

/// Generates a refined candidate set for one scene with the frozen flow.
CandidateSet generate_candidates(const flow::FlowModel& flow, const Scenario& scenario, const BasisMatrix& basis,
                                 const flow::SampleConfig& sample, const refine::RefineConfig& refine, Rng& rng);

/// Labels come from candidates regenerated at every step.
flow::TrainLog train_scorer(ScorerModel& model, const flow::FlowModel& flow, const std::vector<DatasetRecord>& data,
                            const BasisMatrix& basis, const ScorerTrainConfig& cfg,
                            const std::function<void(int, double)>& on_step = {});

struct HeldOutReport {
  int scenes = 0;
  int correct = 0;
  double mean_k = 0.0;
  double accuracy() const { return scenes > 0 ? static_cast<double>(correct) / scenes : 0.0; }
  double chance() const { return mean_k > 0.0 ? 1.0 / mean_k : 0.0; }
};

HeldOutReport evaluate_top1(const ScorerModel& model, const flow::FlowModel& flow,
                            const std::vector<DatasetRecord>& data, const BasisMatrix& basis,
                            const flow::SampleConfig& sample, const refine::RefineConfig& refine, uint64_t seed);

}  // namespace crowdfm::scorer
