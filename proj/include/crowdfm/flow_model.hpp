#pragma once

#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/bernstein.hpp"
#include "crowdfm/common.hpp"
#include "crowdfm/guidance_refine.hpp"
#include "crowdfm/nn.hpp"
#include "crowdfm/scenario.hpp"

namespace crowdfm::flow {

using ad::Tensor;
using bernstein::BasisMatrix;
using bernstein::TrajectoryCoeffs;

struct FlowNetConfig {
  int order = 10;
  int d_model = 64;
  std::vector<int> unet_channels{32, 64};
  int time_dim = 32;
  int fusion_heads = 8;
  int fusion_layers = 3;
  int dyn_heads = 4;
  int dyn_layers = 2;
  int n_obs = 10;  // size of the positional-embedding table for obstacles
  double sensing_radius = 8.0;
  int euler_steps = 5;
  double guidance_scale = 20.0;
  int num_candidates = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static FlowNetConfig from_json(const nlohmann::json& j);
};

/// Per-dimension affine map between coefficient space and the standardized
/// space the network works in: xi = mean + std * z.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Standardizer identity(int dim);
  /// Moments of the targets with the std floored at `min_std`.
  static Standardizer fit(const std::vector<TrajectoryCoeffs>& targets, double min_std = 1e-3);

  Eigen::VectorXd to_z(const Eigen::VectorXd& xi) const;
  Eigen::VectorXd to_xi(const Eigen::VectorXd& z) const;
  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

/// Per-branch embeddings before fusion, each [1 x d_model].
struct ContextBranches {
  Tensor statics;
  Tensor dynamic;
  Tensor goal;
};

/// Point-cloud, dynamic-obstacle and goal encoders plus the fusion
/// transformer. Parameters live in the caller's store under `prefix`.
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(ad::ParamStore& store, const std::string& prefix, const FlowNetConfig& cfg, Rng& rng,
                 bool with_fusion = true);

  ContextBranches branches(const Scenario& scenario) const;
  /// Fused tokens [3 x d_model] in (static, dynamic, goal) order.
  Tensor encode(const Scenario& scenario) const;

 private:
  FlowNetConfig cfg_;
  nn::Conv1d pcd_conv1_, pcd_conv2_;
  nn::Mlp pcd_head_;
  Tensor empty_static_;
  nn::Mlp dyn_embed_;
  Tensor dyn_positions_;
  nn::TransformerEncoder dyn_transformer_;
  nn::Mlp dyn_head_;
  Tensor empty_dynamic_;
  nn::Mlp goal_mlp_;
  nn::TransformerEncoder fusion_;
  bool with_fusion_ = true;
};

/// Conditional 1-D U-Net over the (order+1)-long, 2-channel coefficient
/// sequence.
class UNet {
 public:
  UNet() = default;
  UNet(ad::ParamStore& store, const std::string& prefix, const FlowNetConfig& cfg, Rng& rng);

  /// z: [2 x batch*(order+1)], every sequence sharing tau and context.
  Tensor operator()(const Tensor& z, float tau, const Tensor& context, int batch) const;

 private:
  struct ResBlock {
    nn::Conv1d conv1, conv2;
    nn::Linear film;
  };
  ResBlock make_block(ad::ParamStore& store, const std::string& name, int channels, Rng& rng) const;
  Tensor block(const ResBlock& b, const Tensor& x, const Tensor& ctx_flat, int batch) const;

  FlowNetConfig cfg_;
  std::vector<int> lengths_;
  nn::Mlp time_mlp_;
  nn::Conv1d conv_in_;
  std::vector<nn::Conv1d> down_;
  std::vector<nn::Linear> time_down_;
  std::vector<ResBlock> down_blocks_;
  ResBlock mid_;
  std::vector<nn::Conv1d> up_, merge_;
  std::vector<nn::Linear> time_up_;
  std::vector<ResBlock> up_blocks_;
  nn::Conv1d conv_out_;
};

/// Something that can be integrated by the sampler. z rows are standardized
/// states that share one context.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual Eigen::MatrixXd evaluate(const Eigen::MatrixXd& z, double tau, const Tensor& context) const = 0;
};

class FlowModel : public VectorField {
 public:
  FlowModel(const FlowNetConfig& cfg, uint64_t seed);

  const FlowNetConfig& config() const { return cfg_; }
  int dim() const { return 2 * (cfg_.order + 1); }
  ad::ParamStore& params() { return store_; }
  const ad::ParamStore& params() const { return store_; }

  ContextBranches encode_branches(const Scenario& scenario) const { return encoder_.branches(scenario); }
  Tensor encode(const Scenario& scenario) const { return encoder_.encode(scenario); }

  /// z in the flat [cx; cy] layout, one row per sequence -> same shape.
  Tensor field(const Tensor& z_rows, float tau, const Tensor& context) const;
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& z, double tau, const Tensor& context) const override;

  Standardizer standardizer;

  /// Checkpoint header meta: config, basis description and standardization.
  nlohmann::json checkpoint_meta(double horizon, int waypoints) const;
  void save(const std::string& path, double horizon, int waypoints, const nlohmann::json& extra = {},
            bool with_optimizer = false) const;
  /// Builds a model from a checkpoint, checking it is a flow checkpoint.
  static std::unique_ptr<FlowModel> load(const std::string& path, bool with_optimizer = false,
                                         nlohmann::json* meta_out = nullptr);

 private:
  FlowNetConfig cfg_;
  ad::ParamStore store_;
  ContextEncoder encoder_;
  UNet unet_;
};

/// [K x dim] rows <-> [2 x K*(n+1)] channel layout used by the U-Net.
Tensor rows_to_channels(const Tensor& z_rows, int order);
Tensor channels_to_rows(const Tensor& channels, int order);

struct FlowSample {
  Eigen::VectorXd z1;  // standardized target
  Tensor context;
};

/// CFM objective on the learned network: for each sample draws tau ~ U(0,1)
/// and z0 ~ N(0, I), regresses onto z1 - z0. Returns the mean squared norm
/// as a graph node.
Tensor cfm_loss(const FlowModel& model, const std::vector<FlowSample>& batch, Rng& rng);
/// Same objective for any field, evaluated without gradients.
double cfm_loss_value(const VectorField& field, const std::vector<FlowSample>& batch, Rng& rng);

struct FlowTrainConfig {
  int steps = 2000;
  int batch_size = 16;
  ad::AdamConfig adam{1e-3f, 0.9f, 0.999f, 1e-8f, 5.0f};
  uint64_t seed = 1;
  int checkpoint_every = 0;  // 0: only at the end
  std::string checkpoint_path;
  double horizon = 5.0;
  int waypoints = 50;
};

struct TrainLog {
  std::vector<std::pair<int, double>> loss;  // (step, loss)
};

/// Minibatch Adam on the CFM loss, starting from the model's current state
/// and optimizer step count; batches depend only on (seed, step) so a run
/// resumed from a checkpoint matches an uninterrupted one.
TrainLog train_flow(FlowModel& model, const std::vector<DatasetRecord>& data, const FlowTrainConfig& cfg,
                    const std::function<void(int, double)>& on_step = {});

struct SampleConfig {
  int num_candidates = 10;
  int steps = 5;
  double guidance_scale = 0.0;
  double d_safe = 0.5;
  bool include_dynamic = true;
  double dynamic_radius = 0.3;
};

/// Forward-Euler integration of dz/dtau = v - lambda * std * grad L(xi)
/// from K standard-normal draws; returns de-standardized coefficients.
/// Candidates that become non-finite are dropped (their indices are
/// reported through `dropped`); kGeneration if all are dropped.
std::vector<TrajectoryCoeffs> sample_candidates(const VectorField& field, const Tensor& context,
                                                const Scenario& scenario, const Standardizer& standardizer,
                                                const BasisMatrix& basis, const SampleConfig& cfg, Rng& rng,
                                                std::vector<int>* dropped = nullptr);

}  // namespace crowdfm::flow
