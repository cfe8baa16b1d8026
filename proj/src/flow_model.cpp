#include "crowdfm/flow_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crowdfm/params.hpp"

namespace crowdfm::flow {

using ad::Init;
using nlohmann::json;

void FlowNetConfig::validate() const {
  if (order < 1) throw Error(ErrorKind::kConfig, "flow.order must be >= 1");
  if (d_model < 1) throw Error(ErrorKind::kConfig, "flow.d_model must be >= 1");
  for (int heads : {fusion_heads, dyn_heads}) {
    if (heads < 1 || d_model % heads != 0) {
      throw Error(ErrorKind::kConfig, "flow.d_model " + std::to_string(d_model) + " is not divisible by " +
                                          std::to_string(heads) + " heads");
    }
  }
  if (unet_channels.empty()) throw Error(ErrorKind::kConfig, "flow.unet_channels must not be empty");
  for (int c : unet_channels)
    if (c < 1) throw Error(ErrorKind::kConfig, "flow.unet_channels entries must be >= 1");
  if (time_dim < 2 || time_dim % 2 != 0) throw Error(ErrorKind::kConfig, "flow.time_dim must be even");
  if (fusion_layers < 0 || dyn_layers < 0) throw Error(ErrorKind::kConfig, "layer counts must be >= 0");
  if (n_obs < 1) throw Error(ErrorKind::kConfig, "flow.n_obs must be >= 1");
  if (!(sensing_radius > 0.0)) throw Error(ErrorKind::kConfig, "flow.sensing_radius must be > 0");
  if (euler_steps < 1) throw Error(ErrorKind::kConfig, "flow.euler_steps must be >= 1");
  if (guidance_scale < 0.0) throw Error(ErrorKind::kConfig, "flow.guidance_scale must be >= 0");
  if (num_candidates < 1) throw Error(ErrorKind::kConfig, "flow.num_candidates must be >= 1");
}

json FlowNetConfig::to_json() const {
  return {{"order", order},
          {"d_model", d_model},
          {"unet_channels", unet_channels},
          {"time_dim", time_dim},
          {"fusion_heads", fusion_heads},
          {"fusion_layers", fusion_layers},
          {"dyn_heads", dyn_heads},
          {"dyn_layers", dyn_layers},
          {"n_obs", n_obs},
          {"sensing_radius", sensing_radius},
          {"euler_steps", euler_steps},
          {"guidance_scale", guidance_scale},
          {"num_candidates", num_candidates}};
}

FlowNetConfig FlowNetConfig::from_json(const json& j) {
  FlowNetConfig c;
  c.order = j.value("order", c.order);
  c.d_model = j.value("d_model", c.d_model);
  c.unet_channels = j.value("unet_channels", c.unet_channels);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.fusion_heads = j.value("fusion_heads", c.fusion_heads);
  c.fusion_layers = j.value("fusion_layers", c.fusion_layers);
  c.dyn_heads = j.value("dyn_heads", c.dyn_heads);
  c.dyn_layers = j.value("dyn_layers", c.dyn_layers);
  c.n_obs = j.value("n_obs", c.n_obs);
  c.sensing_radius = j.value("sensing_radius", c.sensing_radius);
  c.euler_steps = j.value("euler_steps", c.euler_steps);
  c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
  c.num_candidates = j.value("num_candidates", c.num_candidates);
  c.validate();
  return c;
}

// ---- standardization --------------------------------------------------------

Standardizer Standardizer::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Standardizer Standardizer::fit(const std::vector<TrajectoryCoeffs>& targets, double min_std) {
  if (targets.empty()) throw Error(ErrorKind::kInvalidInput, "cannot standardize an empty target set");
  const long dim = targets.front().dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& t : targets) {
    if (t.dim() != dim) throw Error(ErrorKind::kInvalidInput, "targets have mixed orders");
    mean += t.flat();
  }
  mean /= static_cast<double>(targets.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& t : targets) var += (t.flat() - mean).cwiseAbs2();
  var /= static_cast<double>(targets.size());
  return {mean, var.cwiseSqrt().cwiseMax(min_std)};
}

Eigen::VectorXd Standardizer::to_z(const Eigen::VectorXd& xi) const {
  return (xi - mean).cwiseQuotient(std);
}

Eigen::VectorXd Standardizer::to_xi(const Eigen::VectorXd& z) const { return mean + std.cwiseProduct(z); }

json Standardizer::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"std", std::vector<double>(std.data(), std.data() + std.size())}};
}

Standardizer Standardizer::from_json(const json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != s.size()) throw Error(ErrorKind::kParse, "standardizer mean/std lengths differ");
  Standardizer out;
  out.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<long>(m.size()));
  out.std = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<long>(s.size()));
  return out;
}

// ---- context encoder --------------------------------------------------------

ContextEncoder::ContextEncoder(ad::ParamStore& store, const std::string& prefix, const FlowNetConfig& cfg,
                               Rng& rng, bool with_fusion)
    : cfg_(cfg), with_fusion_(with_fusion) {
  const int d = cfg.d_model;
  pcd_conv1_ = nn::Conv1d(store, prefix + ".pcd.conv1", 2, d, 1, 1, 0, rng);
  pcd_conv2_ = nn::Conv1d(store, prefix + ".pcd.conv2", d, d, 1, 1, 0, rng);
  pcd_head_ = nn::Mlp(store, prefix + ".pcd.head", {d, d, d}, rng);
  empty_static_ = store.add(prefix + ".pcd.empty", {1, d}, Init::kNormalSmall, rng);
  dyn_embed_ = nn::Mlp(store, prefix + ".dyn.embed", {4, d, d}, rng);
  dyn_positions_ = store.add(prefix + ".dyn.positions", {cfg.n_obs, d}, Init::kNormalSmall, rng);
  dyn_transformer_ = nn::TransformerEncoder(store, prefix + ".dyn.transformer", d, cfg.dyn_heads, cfg.dyn_layers, rng);
  dyn_head_ = nn::Mlp(store, prefix + ".dyn.head", {d, d, d}, rng);
  empty_dynamic_ = store.add(prefix + ".dyn.empty", {1, d}, Init::kNormalSmall, rng);
  goal_mlp_ = nn::Mlp(store, prefix + ".goal", {2, d, d}, rng);
  if (with_fusion) {
    fusion_ = nn::TransformerEncoder(store, prefix + ".fusion", d, cfg.fusion_heads, cfg.fusion_layers, rng);
  }
}

ContextBranches ContextEncoder::branches(const Scenario& scenario) const {
  ContextBranches out;
  const float inv_r = static_cast<float>(1.0 / cfg_.sensing_radius);

  const int n_pts = scenario.pointcloud_len;
  if (n_pts == 0) {
    out.statics = empty_static_;
  } else {
    std::vector<float> xy(2 * static_cast<size_t>(n_pts));
    for (int i = 0; i < n_pts; ++i) {
      xy[static_cast<size_t>(i)] = scenario.pointcloud[static_cast<size_t>(i)][0] * inv_r;
      xy[static_cast<size_t>(n_pts + i)] = scenario.pointcloud[static_cast<size_t>(i)][1] * inv_r;
    }
    Tensor h = Tensor::from_data({2, n_pts}, std::move(xy));
    h = ad::relu(pcd_conv1_(h));
    h = ad::relu(pcd_conv2_(h));
    out.statics = pcd_head_(ad::max_pool_global(ad::transpose(h), n_pts));
  }

  // Obstacles ordered by range so the positional embedding sees a canonical order.
  const int n_dyn = std::min(scenario.dyn_len, cfg_.n_obs);
  if (n_dyn == 0) {
    out.dynamic = empty_dynamic_;
  } else {
    std::vector<int> order(static_cast<size_t>(scenario.dyn_len));
    std::iota(order.begin(), order.end(), 0);
    auto range2 = [&](int i) {
      const auto& o = scenario.dyn_obstacles[static_cast<size_t>(i)];
      return o[0] * o[0] + o[1] * o[1];
    };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return range2(a) < range2(b); });
    std::vector<float> feats(4 * static_cast<size_t>(n_dyn));
    for (int r = 0; r < n_dyn; ++r) {
      const auto& o = scenario.dyn_obstacles[static_cast<size_t>(order[static_cast<size_t>(r)])];
      feats[4 * static_cast<size_t>(r) + 0] = o[0] * inv_r;
      feats[4 * static_cast<size_t>(r) + 1] = o[1] * inv_r;
      feats[4 * static_cast<size_t>(r) + 2] = o[2];
      feats[4 * static_cast<size_t>(r) + 3] = o[3];
    }
    Tensor tokens = dyn_embed_(Tensor::from_data({n_dyn, 4}, std::move(feats)));
    tokens = ad::add(tokens, ad::slice_rows(dyn_positions_, 0, n_dyn));
    tokens = dyn_transformer_(tokens, n_dyn);
    out.dynamic = dyn_head_(ad::max_pool_global(tokens, n_dyn));
  }

  out.goal = goal_mlp_(Tensor::row({scenario.goal_heading[0], scenario.goal_heading[1]}));
  return out;
}

Tensor ContextEncoder::encode(const Scenario& scenario) const {
  const ContextBranches b = branches(scenario);
  const Tensor tokens = ad::concat_rows({b.statics, b.dynamic, b.goal});
  return with_fusion_ ? fusion_(tokens) : tokens;
}

// ---- U-Net ------------------------------------------------------------------

UNet::ResBlock UNet::make_block(ad::ParamStore& store, const std::string& name, int channels, Rng& rng) const {
  ResBlock b;
  b.conv1 = nn::Conv1d(store, name + ".conv1", channels, channels, 3, 1, 1, rng);
  b.conv2 = nn::Conv1d(store, name + ".conv2", channels, channels, 3, 1, 1, rng);
  b.film = nn::Linear(store, name + ".film", 3 * cfg_.d_model, 2 * channels, rng);
  return b;
}

UNet::UNet(ad::ParamStore& store, const std::string& prefix, const FlowNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto& ch = cfg.unet_channels;
  const int levels = static_cast<int>(ch.size());
  lengths_.push_back(cfg.order + 1);
  for (int l = 1; l < levels; ++l) lengths_.push_back((lengths_.back() - 1) / 2 + 1);

  const int t_hidden = 2 * cfg.time_dim;
  time_mlp_ = nn::Mlp(store, prefix + ".time", {cfg.time_dim, t_hidden, t_hidden}, rng);
  conv_in_ = nn::Conv1d(store, prefix + ".conv_in", 2, ch[0], 3, 1, 1, rng);
  for (int l = 0; l < levels; ++l) {
    const std::string lv = prefix + ".down" + std::to_string(l);
    if (l > 0) down_.emplace_back(store, lv + ".conv", ch[static_cast<size_t>(l - 1)], ch[static_cast<size_t>(l)], 3, 2, 1, rng);
    time_down_.emplace_back(store, lv + ".time", t_hidden, ch[static_cast<size_t>(l)], rng);
    down_blocks_.push_back(make_block(store, lv + ".block", ch[static_cast<size_t>(l)], rng));
  }
  mid_ = make_block(store, prefix + ".mid", ch.back(), rng);
  up_.resize(static_cast<size_t>(std::max(levels - 1, 0)));
  merge_.resize(up_.size());
  time_up_.resize(up_.size());
  up_blocks_.resize(up_.size());
  for (int l = levels - 2; l >= 0; --l) {
    const std::string lv = prefix + ".up" + std::to_string(l);
    const int c = ch[static_cast<size_t>(l)];
    up_[static_cast<size_t>(l)] = nn::Conv1d(store, lv + ".conv", ch[static_cast<size_t>(l + 1)], c, 3, 1, 1, rng);
    merge_[static_cast<size_t>(l)] = nn::Conv1d(store, lv + ".merge", 2 * c, c, 3, 1, 1, rng);
    time_up_[static_cast<size_t>(l)] = nn::Linear(store, lv + ".time", t_hidden, c, rng);
    up_blocks_[static_cast<size_t>(l)] = make_block(store, lv + ".block", c, rng);
  }
  // Zero output layer: an untrained field is identically zero.
  conv_out_ = nn::Conv1d(store, prefix + ".conv_out", ch[0], 2, 3, 1, 1, rng, /*zero_init=*/true);
}

Tensor UNet::block(const ResBlock& b, const Tensor& x, const Tensor& ctx_flat, int batch) const {
  const int c = x.rows();
  Tensor h = b.conv1(ad::relu(x), batch);
  const Tensor mod = b.film(ctx_flat);
  h = ad::film(h, ad::slice_cols(mod, 0, c), ad::slice_cols(mod, c, c));
  h = b.conv2(ad::relu(h), batch);
  return ad::add(x, h);
}

Tensor UNet::operator()(const Tensor& z, float tau, const Tensor& context, int batch) const {
  const int levels = static_cast<int>(cfg_.unet_channels.size());
  const Tensor temb = ad::relu(time_mlp_(ad::sinusoidal_embed(tau, cfg_.time_dim)));
  const Tensor ctx = ad::reshape(context, {1, static_cast<int>(context.numel())});

  Tensor h = conv_in_(z, batch);
  std::vector<Tensor> skips;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) h = down_[static_cast<size_t>(l - 1)](h, batch);
    h = ad::add_channel_bias(h, time_down_[static_cast<size_t>(l)](temb));
    h = block(down_blocks_[static_cast<size_t>(l)], h, ctx, batch);
    skips.push_back(h);
  }
  h = block(mid_, h, ctx, batch);
  for (int l = levels - 2; l >= 0; --l) {
    const auto li = static_cast<size_t>(l);
    h = ad::upsample_nearest(h, lengths_[li], batch);
    h = up_[li](h, batch);
    h = merge_[li](ad::concat_rows({h, skips[li]}), batch);
    h = ad::add_channel_bias(h, time_up_[li](temb));
    h = block(up_blocks_[li], h, ctx, batch);
  }
  return conv_out_(ad::relu(h), batch);
}

// ---- model ------------------------------------------------------------------

Tensor rows_to_channels(const Tensor& z_rows, int order) {
  const int n1 = order + 1;
  const int k = z_rows.rows();
  if (z_rows.cols() != 2 * n1) {
    throw Error(ErrorKind::kInvalidShape, "expected rows of length " + std::to_string(2 * n1) + ", got " +
                                              ad::shape_str(z_rows.shape()));
  }
  if (k == 1) return ad::reshape(z_rows, {2, n1});
  std::vector<Tensor> channels;
  for (int c = 0; c < 2; ++c) {
    std::vector<Tensor> parts;
    for (int i = 0; i < k; ++i) parts.push_back(ad::slice_cols(ad::slice_rows(z_rows, i, 1), c * n1, n1));
    channels.push_back(ad::concat_cols(parts));
  }
  return ad::concat_rows(channels);
}

Tensor channels_to_rows(const Tensor& channels, int order) {
  const int n1 = order + 1;
  const int k = channels.cols() / n1;
  if (channels.rows() != 2 || channels.cols() != k * n1) {
    throw Error(ErrorKind::kInvalidShape, "bad channel layout " + ad::shape_str(channels.shape()));
  }
  if (k == 1) return ad::reshape(channels, {1, 2 * n1});
  const Tensor cx = ad::slice_rows(channels, 0, 1);
  const Tensor cy = ad::slice_rows(channels, 1, 1);
  std::vector<Tensor> rows;
  for (int i = 0; i < k; ++i) {
    rows.push_back(ad::concat_cols({ad::slice_cols(cx, i * n1, n1), ad::slice_cols(cy, i * n1, n1)}));
  }
  return ad::concat_rows(rows);
}

FlowModel::FlowModel(const FlowNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0xf10eULL));
  encoder_ = ContextEncoder(store_, "enc", cfg, rng);
  unet_ = UNet(store_, "unet", cfg, rng);
  standardizer = Standardizer::identity(dim());
}

Tensor FlowModel::field(const Tensor& z_rows, float tau, const Tensor& context) const {
  const int k = z_rows.rows();
  return channels_to_rows(unet_(rows_to_channels(z_rows, cfg_.order), tau, context, k), cfg_.order);
}

Eigen::MatrixXd FlowModel::evaluate(const Eigen::MatrixXd& z, double tau, const Tensor& context) const {
  if (!z.allFinite() || !std::isfinite(tau)) {
    throw Error(ErrorKind::kNumerical, "vector field input is not finite");
  }
  if (z.cols() != dim()) {
    throw Error(ErrorKind::kInvalidShape, "vector field expects " + std::to_string(dim()) + " columns, got " +
                                              std::to_string(z.cols()));
  }
  ad::NoGradGuard no_grad;
  const int k = static_cast<int>(z.rows());
  std::vector<float> data(static_cast<size_t>(k) * dim());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < dim(); ++j) data[static_cast<size_t>(i) * dim() + j] = static_cast<float>(z(i, j));
  const Tensor out = field(Tensor::from_data({k, dim()}, std::move(data)), static_cast<float>(tau), context);
  Eigen::MatrixXd v(k, dim());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < dim(); ++j) v(i, j) = out.at(i, j);
  return v;
}

json FlowModel::checkpoint_meta(double horizon, int waypoints) const {
  return {{"kind", "flow"},
          {"order", cfg_.order},
          {"horizon", horizon},
          {"waypoints", waypoints},
          {"standardizer", standardizer.to_json()},
          {"config", cfg_.to_json()}};
}

void FlowModel::save(const std::string& path, double horizon, int waypoints, const json& extra,
                     bool with_optimizer) const {
  json meta = checkpoint_meta(horizon, waypoints);
  if (extra.is_object()) meta.update(extra);
  store_.save(path, meta, with_optimizer);
}

std::unique_ptr<FlowModel> FlowModel::load(const std::string& path, bool with_optimizer, json* meta_out) {
  const json header = ad::read_checkpoint_header(path);
  const json meta = header.value("meta", json::object());
  if (meta.value("kind", "") != "flow") {
    throw Error(ErrorKind::kConfig, path + " is not a flow checkpoint");
  }
  auto model = std::make_unique<FlowModel>(FlowNetConfig::from_json(meta.at("config")), 0);
  model->store_.load(path, with_optimizer);
  model->standardizer = Standardizer::from_json(meta.at("standardizer"));
  if (model->standardizer.mean.size() != model->dim()) {
    throw Error(ErrorKind::kConfig, "standardizer dimension does not match the model in " + path);
  }
  if (meta_out) *meta_out = meta;
  return model;
}

// ---- objective & training ---------------------------------------------------

namespace {

struct Draw {
  double tau;
  Eigen::VectorXd z0;
};

Draw draw_noise(Rng& rng, long dim) {
  Draw d;
  d.tau = rng.uniform();
  d.z0.resize(dim);
  for (long i = 0; i < dim; ++i) d.z0[i] = rng.normal();
  return d;
}

Tensor row_tensor(const Eigen::VectorXd& v) {
  std::vector<float> data(static_cast<size_t>(v.size()));
  for (long i = 0; i < v.size(); ++i) data[static_cast<size_t>(i)] = static_cast<float>(v[i]);
  return Tensor::row(std::move(data));
}

}  // namespace

Tensor cfm_loss(const FlowModel& model, const std::vector<FlowSample>& batch, Rng& rng) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidInput, "cfm_loss on an empty batch");
  Tensor total;
  for (const auto& s : batch) {
    const Draw d = draw_noise(rng, s.z1.size());
    const Eigen::VectorXd zt = (1.0 - d.tau) * d.z0 + d.tau * s.z1;
    const Eigen::VectorXd u = s.z1 - d.z0;
    const Tensor v = model.field(row_tensor(zt), static_cast<float>(d.tau), s.context);
    const Tensor err = ad::sum_squares(ad::sub(v, row_tensor(u)));
    total = total.defined() ? ad::add(total, err) : err;
  }
  return ad::scale(total, 1.0f / static_cast<float>(batch.size()));
}

double cfm_loss_value(const VectorField& field, const std::vector<FlowSample>& batch, Rng& rng) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidInput, "cfm_loss on an empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    const Draw d = draw_noise(rng, s.z1.size());
    const Eigen::VectorXd zt = (1.0 - d.tau) * d.z0 + d.tau * s.z1;
    const Eigen::VectorXd u = s.z1 - d.z0;
    const Eigen::MatrixXd v = field.evaluate(zt.transpose(), d.tau, s.context);
    total += (v.row(0).transpose() - u).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

TrainLog train_flow(FlowModel& model, const std::vector<DatasetRecord>& data, const FlowTrainConfig& cfg,
                    const std::function<void(int, double)>& on_step) {
  if (data.empty()) throw Error(ErrorKind::kInvalidInput, "train_flow needs a non-empty dataset");
  if (cfg.batch_size < 1) throw Error(ErrorKind::kConfig, "batch size must be >= 1");
  std::vector<Eigen::VectorXd> targets;
  targets.reserve(data.size());
  for (const auto& r : data) {
    if (r.target_coeffs.order() != model.config().order) {
      throw Error(ErrorKind::kConfig, "dataset coefficient order " + std::to_string(r.target_coeffs.order()) +
                                          " does not match the model order " +
                                          std::to_string(model.config().order));
    }
    targets.push_back(model.standardizer.to_z(r.target_coeffs.flat()));
  }

  auto& store = model.params();
  TrainLog log;
  const int n = static_cast<int>(data.size());
  for (long step = store.adam_steps(); step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(step)));
    std::vector<FlowSample> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int idx = rng.uniform_int(0, n - 1);
      batch.push_back({targets[static_cast<size_t>(idx)], model.encode(data[static_cast<size_t>(idx)].scenario)});
    }
    const Tensor loss = cfm_loss(model, batch, rng);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      if (!cfg.checkpoint_path.empty()) {
        model.save(cfg.checkpoint_path, cfg.horizon, cfg.waypoints, {{"step", step}}, true);
      }
      throw Error(ErrorKind::kTraining, "non-finite loss at step " + std::to_string(step) +
                                            (cfg.checkpoint_path.empty()
                                                 ? std::string()
                                                 : "; last good parameters saved to " + cfg.checkpoint_path));
    }
    loss.backward();
    store.adam_step(cfg.adam);
    log.loss.emplace_back(static_cast<int>(step), value);
    if (on_step) on_step(static_cast<int>(step), value);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && (step + 1) % cfg.checkpoint_every == 0) {
      model.save(cfg.checkpoint_path, cfg.horizon, cfg.waypoints, {{"step", step + 1}}, true);
    }
  }
  if (!cfg.checkpoint_path.empty()) {
    model.save(cfg.checkpoint_path, cfg.horizon, cfg.waypoints, {{"step", store.adam_steps()}}, true);
  }
  return log;
}

// ---- sampling ---------------------------------------------------------------

std::vector<TrajectoryCoeffs> sample_candidates(const VectorField& field, const Tensor& context,
                                                const Scenario& scenario, const Standardizer& standardizer,
                                                const BasisMatrix& basis, const SampleConfig& cfg, Rng& rng,
                                                std::vector<int>* dropped) {
  if (cfg.steps < 1) throw Error(ErrorKind::kInvalidInput, "sampling needs at least one Euler step");
  if (!(cfg.guidance_scale >= 0.0)) throw Error(ErrorKind::kInvalidInput, "guidance scale must be >= 0");
  if (cfg.num_candidates < 1) throw Error(ErrorKind::kInvalidInput, "need at least one candidate");
  const long dim = standardizer.mean.size();
  if (dim != 2L * (basis.order + 1)) {
    throw Error(ErrorKind::kInvalidInput, "standardizer dimension does not match the basis order");
  }
  const int k = cfg.num_candidates;
  Eigen::MatrixXd z(k, dim);
  for (int i = 0; i < k; ++i)
    for (long j = 0; j < dim; ++j) z(i, j) = rng.normal();

  const bool guided = cfg.guidance_scale > 0.0;
  refine::ObstacleSet obstacles;
  if (guided) obstacles = refine::make_obstacles(scenario, cfg.include_dynamic, cfg.dynamic_radius);

  std::vector<bool> alive(static_cast<size_t>(k), true);
  const double h = 1.0 / cfg.steps;
  for (int s = 0; s < cfg.steps; ++s) {
    const double tau = s * h;
    const Eigen::MatrixXd v = field.evaluate(z, tau, context);
    for (int i = 0; i < k; ++i) {
      if (!alive[static_cast<size_t>(i)]) continue;
      Eigen::VectorXd step = v.row(i).transpose();
      if (guided) {
        const Eigen::VectorXd xi = standardizer.to_xi(z.row(i).transpose());
        const Eigen::VectorXd g =
            refine::collision_cost_grad(TrajectoryCoeffs::from_flat(xi), basis, obstacles, cfg.d_safe);
        step -= cfg.guidance_scale * standardizer.std.cwiseProduct(g);
      }
      z.row(i) += h * step.transpose();
      if (!z.row(i).allFinite()) {
        alive[static_cast<size_t>(i)] = false;
        z.row(i).setZero();  // keep the batch evaluable
      }
    }
  }

  std::vector<TrajectoryCoeffs> out;
  for (int i = 0; i < k; ++i) {
    if (alive[static_cast<size_t>(i)]) {
      out.push_back(TrajectoryCoeffs::from_flat(standardizer.to_xi(z.row(i).transpose())));
    } else if (dropped) {
      dropped->push_back(i);
    }
  }
  if (out.empty()) throw Error(ErrorKind::kGeneration, "every candidate became non-finite during sampling");
  return out;
}

}  // namespace crowdfm::flow
