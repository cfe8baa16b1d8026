#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdfm/bernstein.hpp"

namespace crowdfm {

/// Padding value for unused pointcloud / obstacle rows. Consumers mask by the
/// length fields and never read these.
inline constexpr float kSentinel = 1e3f;

/// Ego-frame sensor snapshot: x forward, y left.
struct Scenario {
  std::vector<std::array<float, 2>> pointcloud;     // N_pts rows
  int pointcloud_len = 0;
  std::vector<std::array<float, 4>> dyn_obstacles;  // N_obs rows of (x, y, vx, vy)
  int dyn_len = 0;
  std::array<float, 2> goal_heading{1.0f, 0.0f};

  static Scenario empty(int n_pts, int n_obs);

  int n_pts() const { return static_cast<int>(pointcloud.size()); }
  int n_obs() const { return static_cast<int>(dyn_obstacles.size()); }

  /// Resets rows beyond the length fields to the sentinel.
  void pad();
  /// Throws kInvalidInput if lengths, heading norm, or values are inconsistent.
  void validate() const;
};

struct RecordMeta {
  uint64_t seed = 0;
  int64_t scene_id = 0;
  std::string tag;
};

struct DatasetRecord {
  Scenario scenario;
  bernstein::TrajectoryCoeffs target_coeffs;
  std::optional<Eigen::MatrixX2f> expert_xy;
  RecordMeta meta;
};

inline constexpr int kDatasetVersion = 1;

void write_dataset(const std::vector<DatasetRecord>& records, const std::string& path);
std::vector<DatasetRecord> read_dataset(const std::string& path);

}  // namespace crowdfm
