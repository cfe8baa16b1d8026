#pragma once

#include <json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "crowdfm/common.hpp"
#include "crowdfm/tensor.hpp"

namespace crowdfm::ad {

enum class Init {
  kZeros,
  kOnes,
  kUniformFanIn,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  kNormalSmall,   // N(0, 0.02^2)
};

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float clip_norm = 0.0f;  // global gradient-norm clip, 0 disables
};

/// Named parameters in insertion order plus Adam moments. Handles returned by
/// add() stay valid across load(): values are overwritten in place.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng, int fan_in = 0);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  size_t parameter_count() const;

  void zero_grad();
  std::vector<std::vector<float>> snapshot() const;
  void restore(const std::vector<std::vector<float>>& values);

  long adam_steps() const { return step_; }

  /// Bias-corrected Adam update from accumulated gradients, then zeroes them.
  /// A non-finite gradient aborts with kTraining naming the parameter.
  void adam_step(const AdamConfig& cfg);

  /// Header line (JSON) followed by little-endian f32 blobs in header order;
  /// optimizer moments are appended when `with_optimizer` is set.
  void save(const std::string& path, const nlohmann::json& meta, bool with_optimizer = false) const;
  /// Loads values (and moments when present and requested); returns meta.
  nlohmann::json load(const std::string& path, bool with_optimizer = false);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long step_ = 0;
};

inline constexpr int kCheckpointFormatVersion = 1;

/// Reads only the JSON header of a checkpoint.
nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace crowdfm::ad
