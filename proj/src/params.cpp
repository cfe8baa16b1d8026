#include "crowdfm/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace crowdfm::ad {

namespace {

void write_floats(std::ofstream& out, const std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<uint32_t>(v);
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
      out.write(bytes, 4);
    }
  }
}

void read_floats(std::ifstream& in, std::vector<float>& values, const std::string& path) {
  std::vector<unsigned char> raw(values.size() * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw Error(ErrorKind::kParse, "checkpoint truncated: " + path);
  for (size_t i = 0; i < values.size(); ++i) {
    const uint32_t bits = static_cast<uint32_t>(raw[4 * i]) | (static_cast<uint32_t>(raw[4 * i + 1]) << 8) |
                          (static_cast<uint32_t>(raw[4 * i + 2]) << 16) |
                          (static_cast<uint32_t>(raw[4 * i + 3]) << 24);
    values[i] = std::bit_cast<float>(bits);
  }
}

nlohmann::json parse_header(std::ifstream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "empty checkpoint: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, "bad checkpoint header in " + path + ": " + e.what());
  }
  if (header.value("format", "") != "crowdfm-checkpoint") {
    throw Error(ErrorKind::kParse, path + " is not a checkpoint");
  }
  if (header.value("format_version", -1) != kCheckpointFormatVersion) {
    throw Error(ErrorKind::kVersion, "checkpoint format version " +
                                         header.value("format_version", nlohmann::json(-1)).dump() +
                                         " unsupported (expected " +
                                         std::to_string(kCheckpointFormatVersion) + ")");
  }
  return header;
}

}  // namespace

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, Rng& rng, int fan_in) {
  if (contains(name)) throw Error(ErrorKind::kConfig, "duplicate parameter " + name);
  Tensor t = Tensor::zeros(std::move(shape), true);
  auto data = t.data_mut();
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(data.begin(), data.end(), 1.0f);
      break;
    case Init::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
      for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
      break;
    }
    case Init::kNormalSmall:
      for (float& v : data) v = static_cast<float>(0.02 * rng.normal());
      break;
  }
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(t);
  m_.emplace_back(t.numel(), 0.0f);
  v_.emplace_back(t.numel(), 0.0f);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::kConfig, "unknown parameter " + name);
  return tensors_[it->second];
}

size_t ParamStore::parameter_count() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.node()->grad.clear();
}

std::vector<std::vector<float>> ParamStore::snapshot() const {
  std::vector<std::vector<float>> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void ParamStore::restore(const std::vector<std::vector<float>>& values) {
  if (values.size() != tensors_.size()) throw Error(ErrorKind::kConfig, "snapshot size mismatch");
  for (size_t i = 0; i < tensors_.size(); ++i) {
    const auto& dst = tensors_[i].node()->value;
    if (values[i].size() != dst.size()) throw Error(ErrorKind::kConfig, "snapshot shape mismatch");
    tensors_[i].node()->value = values[i];
  }
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  float clip_scale = 1.0f;
  double norm_sq = 0.0;
  for (size_t p = 0; p < tensors_.size(); ++p) {
    for (float g : tensors_[p].node()->grad) {
      if (!std::isfinite(g)) {
        throw Error(ErrorKind::kTraining, "non-finite gradient in parameter " + names_[p]);
      }
      norm_sq += static_cast<double>(g) * g;
    }
  }
  if (cfg.clip_norm > 0.0f) {
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg.clip_norm) clip_scale = static_cast<float>(cfg.clip_norm / norm);
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step_));
  for (size_t p = 0; p < tensors_.size(); ++p) {
    Node& node = *tensors_[p].node();
    auto& m = m_[p];
    auto& v = v_[p];
    const bool has_grad = !node.grad.empty();
    for (size_t i = 0; i < node.value.size(); ++i) {
      const float g = has_grad ? node.grad[i] * clip_scale : 0.0f;
      m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      node.value[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    node.grad.clear();
  }
}

void ParamStore::save(const std::string& path, const nlohmann::json& meta, bool with_optimizer) const {
  nlohmann::json header;
  header["format"] = "crowdfm-checkpoint";
  header["format_version"] = kCheckpointFormatVersion;
  header["dtype"] = "f32";
  header["byte_order"] = "little";
  nlohmann::json params = nlohmann::json::array();
  for (size_t i = 0; i < tensors_.size(); ++i) {
    params.push_back({{"name", names_[i]}, {"shape", tensors_[i].shape()}});
  }
  header["params"] = std::move(params);
  header["optimizer"] = with_optimizer ? nlohmann::json{{"type", "adam"}, {"step", step_}}
                                       : nlohmann::json(nullptr);
  header["meta"] = meta;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path);
  out << header.dump() << '\n';
  for (const auto& t : tensors_) write_floats(out, t.node()->value);
  if (with_optimizer) {
    for (const auto& m : m_) write_floats(out, m);
    for (const auto& v : v_) write_floats(out, v);
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing checkpoint " + path);
}

nlohmann::json ParamStore::load(const std::string& path, bool with_optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path);
  const nlohmann::json header = parse_header(in, path);
  const auto& params = header.at("params");
  if (params.size() != tensors_.size()) {
    throw Error(ErrorKind::kConfig, "checkpoint " + path + " has " + std::to_string(params.size()) +
                                        " parameters, model expects " +
                                        std::to_string(tensors_.size()));
  }
  for (size_t i = 0; i < tensors_.size(); ++i) {
    const auto name = params[i].at("name").get<std::string>();
    const auto shape = params[i].at("shape").get<Shape>();
    if (name != names_[i] || shape != tensors_[i].shape()) {
      throw Error(ErrorKind::kConfig, "checkpoint/model mismatch at parameter " + names_[i] + " " +
                                          shape_str(tensors_[i].shape()) + " vs " + name + " " +
                                          shape_str(shape));
    }
  }
  for (auto& t : tensors_) read_floats(in, t.node()->value, path);
  const bool has_optimizer = header.contains("optimizer") && !header["optimizer"].is_null();
  if (with_optimizer && has_optimizer) {
    for (auto& m : m_) read_floats(in, m, path);
    for (auto& v : v_) read_floats(in, v, path);
    step_ = header["optimizer"].at("step").get<long>();
  }
  zero_grad();
  return header.value("meta", nlohmann::json::object());
}

nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path);
  return parse_header(in, path);
}

}  // namespace crowdfm::ad
