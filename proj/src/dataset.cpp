#include <cmath>
#include <fstream>
#include <json.hpp>

#include "crowdfm/common.hpp"
#include "crowdfm/scenario.hpp"

namespace crowdfm {

using nlohmann::json;

Scenario Scenario::empty(int n_pts, int n_obs) {
  Scenario s;
  s.pointcloud.assign(static_cast<size_t>(n_pts), {kSentinel, kSentinel});
  s.dyn_obstacles.assign(static_cast<size_t>(n_obs), {kSentinel, kSentinel, 0.0f, 0.0f});
  return s;
}

void Scenario::pad() {
  for (size_t i = static_cast<size_t>(pointcloud_len); i < pointcloud.size(); ++i) {
    pointcloud[i] = {kSentinel, kSentinel};
  }
  for (size_t i = static_cast<size_t>(dyn_len); i < dyn_obstacles.size(); ++i) {
    dyn_obstacles[i] = {kSentinel, kSentinel, 0.0f, 0.0f};
  }
}

void Scenario::validate() const {
  if (pointcloud_len < 0 || pointcloud_len > n_pts() || dyn_len < 0 || dyn_len > n_obs()) {
    throw Error(ErrorKind::kInvalidInput, "scenario length fields out of range");
  }
  const double norm = std::hypot(goal_heading[0], goal_heading[1]);
  if (std::abs(norm - 1.0) > 1e-6) {
    throw Error(ErrorKind::kInvalidInput, "goal heading is not unit length (" + std::to_string(norm) + ")");
  }
  for (int i = 0; i < pointcloud_len; ++i) {
    for (float v : pointcloud[static_cast<size_t>(i)]) {
      if (!std::isfinite(v)) throw Error(ErrorKind::kInvalidInput, "non-finite pointcloud entry");
    }
  }
  for (int i = 0; i < dyn_len; ++i) {
    for (float v : dyn_obstacles[static_cast<size_t>(i)]) {
      if (!std::isfinite(v)) throw Error(ErrorKind::kInvalidInput, "non-finite obstacle entry");
    }
  }
}

namespace {

// Floats go through double so the decimal text round-trips to the same f32.
json float_array(const float* values, size_t n) {
  json out = json::array();
  for (size_t i = 0; i < n; ++i) out.push_back(static_cast<double>(values[i]));
  return out;
}

json record_to_json(const DatasetRecord& r) {
  json j;
  j["version"] = kDatasetVersion;
  j["seed"] = r.meta.seed;
  j["scene_id"] = r.meta.scene_id;
  j["tag"] = r.meta.tag;
  j["n_pts"] = r.scenario.n_pts();
  j["n_obs"] = r.scenario.n_obs();
  json pcd = json::array();
  for (int i = 0; i < r.scenario.pointcloud_len; ++i) {
    pcd.push_back(float_array(r.scenario.pointcloud[static_cast<size_t>(i)].data(), 2));
  }
  j["pcd"] = std::move(pcd);
  json dyn = json::array();
  for (int i = 0; i < r.scenario.dyn_len; ++i) {
    dyn.push_back(float_array(r.scenario.dyn_obstacles[static_cast<size_t>(i)].data(), 4));
  }
  j["dyn"] = std::move(dyn);
  j["goal"] = float_array(r.scenario.goal_heading.data(), 2);

  // Coefficients are stored as f32 like every other float field.
  std::vector<float> cx(r.target_coeffs.cx.size()), cy(r.target_coeffs.cy.size());
  for (size_t i = 0; i < cx.size(); ++i) cx[i] = static_cast<float>(r.target_coeffs.cx[static_cast<long>(i)]);
  for (size_t i = 0; i < cy.size(); ++i) cy[i] = static_cast<float>(r.target_coeffs.cy[static_cast<long>(i)]);
  j["coeffs_x"] = float_array(cx.data(), cx.size());
  j["coeffs_y"] = float_array(cy.data(), cy.size());

  if (r.expert_xy) {
    json xy = json::array();
    for (long i = 0; i < r.expert_xy->rows(); ++i) {
      const float row[2] = {(*r.expert_xy)(i, 0), (*r.expert_xy)(i, 1)};
      xy.push_back(float_array(row, 2));
    }
    j["expert_xy"] = std::move(xy);
  }
  return j;
}

template <size_t N>
std::array<float, N> read_row(const json& row) {
  if (!row.is_array() || row.size() != N) {
    throw std::runtime_error("expected an array of " + std::to_string(N) + " numbers");
  }
  std::array<float, N> out{};
  for (size_t i = 0; i < N; ++i) out[i] = static_cast<float>(row[i].get<double>());
  return out;
}

DatasetRecord record_from_json(const json& j) {
  DatasetRecord r;
  r.meta.seed = j.at("seed").get<uint64_t>();
  r.meta.scene_id = j.value("scene_id", int64_t{0});
  r.meta.tag = j.value("tag", std::string());
  const auto& pcd = j.at("pcd");
  const auto& dyn = j.at("dyn");
  const int n_pts = j.value("n_pts", static_cast<int>(pcd.size()));
  const int n_obs = j.value("n_obs", static_cast<int>(dyn.size()));
  if (static_cast<int>(pcd.size()) > n_pts || static_cast<int>(dyn.size()) > n_obs) {
    throw std::runtime_error("more rows than the declared capacity");
  }
  r.scenario = Scenario::empty(n_pts, n_obs);
  r.scenario.pointcloud_len = static_cast<int>(pcd.size());
  for (size_t i = 0; i < pcd.size(); ++i) r.scenario.pointcloud[i] = read_row<2>(pcd[i]);
  r.scenario.dyn_len = static_cast<int>(dyn.size());
  for (size_t i = 0; i < dyn.size(); ++i) r.scenario.dyn_obstacles[i] = read_row<4>(dyn[i]);
  r.scenario.goal_heading = read_row<2>(j.at("goal"));

  const auto cx = j.at("coeffs_x").get<std::vector<double>>();
  const auto cy = j.at("coeffs_y").get<std::vector<double>>();
  if (cx.size() != cy.size() || cx.size() < 2) throw std::runtime_error("bad coefficient arrays");
  r.target_coeffs.cx.resize(static_cast<long>(cx.size()));
  r.target_coeffs.cy.resize(static_cast<long>(cy.size()));
  for (size_t i = 0; i < cx.size(); ++i) {
    r.target_coeffs.cx[static_cast<long>(i)] = static_cast<double>(static_cast<float>(cx[i]));
    r.target_coeffs.cy[static_cast<long>(i)] = static_cast<double>(static_cast<float>(cy[i]));
  }
  if (j.contains("expert_xy")) {
    const auto& xy = j["expert_xy"];
    Eigen::MatrixX2f m(static_cast<long>(xy.size()), 2);
    for (size_t i = 0; i < xy.size(); ++i) {
      const auto row = read_row<2>(xy[i]);
      m(static_cast<long>(i), 0) = row[0];
      m(static_cast<long>(i), 1) = row[1];
    }
    r.expert_xy = std::move(m);
  }
  return r;
}

}  // namespace

void write_dataset(const std::vector<DatasetRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write dataset " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw Error(ErrorKind::kIo, "failed writing dataset " + path);
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open dataset " + path);
  std::vector<DatasetRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const int version = j.is_object() ? j.value("version", -1) : -1;
    if (version != kDatasetVersion) {
      throw Error(ErrorKind::kVersion, path + ":" + std::to_string(line_no) + ": dataset version " +
                                           std::to_string(version) + " unsupported");
    }
    try {
      records.push_back(record_from_json(j));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace crowdfm
