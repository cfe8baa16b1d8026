#include "crowdfm/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "crowdfm/params.hpp"

namespace crowdfm::scorer {

using ad::Init;
using nlohmann::json;

CandidateSet CandidateSet::build(std::vector<TrajectoryCoeffs> coeffs, std::vector<double> costs,
                                 const BasisMatrix& basis) {
  if (coeffs.size() != costs.size()) {
    throw Error(ErrorKind::kInvalidInput, "candidate and cost lists differ in length");
  }
  CandidateSet set;
  set.trajectories.reserve(coeffs.size());
  for (const auto& c : coeffs) set.trajectories.push_back(bernstein::eval_trajectory(c, basis).xy);
  set.coeffs = std::move(coeffs);
  set.refine_costs = std::move(costs);
  return set;
}

CandidateSet CandidateSet::permuted(const std::vector<int>& perm) const {
  if (perm.size() != coeffs.size()) throw Error(ErrorKind::kInvalidInput, "permutation has the wrong length");
  CandidateSet out;
  for (int p : perm) {
    const auto i = static_cast<size_t>(p);
    out.coeffs.push_back(coeffs.at(i));
    out.refine_costs.push_back(refine_costs.at(i));
    if (i < trajectories.size()) out.trajectories.push_back(trajectories[i]);
  }
  return out;
}

void ScorerConfig::validate() const {
  if (order < 1) throw Error(ErrorKind::kConfig, "scorer.order must be >= 1");
  if (heads < 1 || d_model < 1 || d_model % heads != 0) {
    throw Error(ErrorKind::kConfig, "scorer.d_model " + std::to_string(d_model) + " is not divisible by " +
                                        std::to_string(heads) + " heads");
  }
  if (dyn_heads < 1 || d_model % dyn_heads != 0) {
    throw Error(ErrorKind::kConfig, "scorer.d_model is not divisible by scorer.dyn_heads");
  }
  if (layers < 0 || dyn_layers < 0) throw Error(ErrorKind::kConfig, "scorer layer counts must be >= 0");
  if (!(reg_weight >= 0.0)) throw Error(ErrorKind::kConfig, "scorer.reg_weight must be >= 0");
  if (!(coeff_scale > 0.0)) throw Error(ErrorKind::kConfig, "scorer.coeff_scale must be > 0");
  if (n_obs < 1) throw Error(ErrorKind::kConfig, "scorer.n_obs must be >= 1");
  if (!(sensing_radius > 0.0)) throw Error(ErrorKind::kConfig, "scorer.sensing_radius must be > 0");
}

json ScorerConfig::to_json() const {
  return {{"order", order},         {"d_model", d_model},       {"heads", heads},
          {"layers", layers},       {"reg_weight", reg_weight}, {"cost_weighted_ce", cost_weighted_ce},
          {"coeff_scale", coeff_scale}, {"dyn_heads", dyn_heads}, {"dyn_layers", dyn_layers},
          {"n_obs", n_obs},         {"sensing_radius", sensing_radius}};
}

ScorerConfig ScorerConfig::from_json(const json& j) {
  ScorerConfig c;
  c.order = j.value("order", c.order);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.reg_weight = j.value("reg_weight", c.reg_weight);
  c.cost_weighted_ce = j.value("cost_weighted_ce", c.cost_weighted_ce);
  c.coeff_scale = j.value("coeff_scale", c.coeff_scale);
  c.dyn_heads = j.value("dyn_heads", c.dyn_heads);
  c.dyn_layers = j.value("dyn_layers", c.dyn_layers);
  c.n_obs = j.value("n_obs", c.n_obs);
  c.sensing_radius = j.value("sensing_radius", c.sensing_radius);
  c.validate();
  return c;
}

namespace {

flow::FlowNetConfig encoder_config(const ScorerConfig& c) {
  flow::FlowNetConfig f;
  f.order = c.order;
  f.d_model = c.d_model;
  f.dyn_heads = c.dyn_heads;
  f.dyn_layers = c.dyn_layers;
  f.n_obs = c.n_obs;
  f.sensing_radius = c.sensing_radius;
  f.fusion_heads = c.heads;
  return f;
}

}  // namespace

ScorerModel::ScorerModel(const ScorerConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x5c0aeULL));
  const int d = cfg.d_model;
  encoder_ = flow::ContextEncoder(store_, "enc", encoder_config(cfg), rng, /*with_fusion=*/false);
  traj_conv1_ = nn::Conv1d(store_, "traj.conv1", 2, d / 2, 3, 1, 1, rng);
  traj_conv2_ = nn::Conv1d(store_, "traj.conv2", d / 2, d, 3, 1, 1, rng);
  traj_mlp_ = nn::Mlp(store_, "traj.mlp", {d, d, d}, rng);
  e_traj_ = store_.add("embed.traj", {1, d}, Init::kNormalSmall, rng);
  e_static_ = store_.add("embed.static", {1, d}, Init::kNormalSmall, rng);
  e_dyn_ = store_.add("embed.dyn", {1, d}, Init::kNormalSmall, rng);
  e_goal_ = store_.add("embed.goal", {1, d}, Init::kNormalSmall, rng);
  transformer_ = nn::TransformerEncoder(store_, "transformer", d, cfg.heads, cfg.layers, rng);
  head_ = nn::Mlp(store_, "head", {d, d, 1}, rng);
}

Tensor ScorerModel::scores(const CandidateSet& cands, const Scenario& scenario) const {
  const int k = cands.size();
  if (k < 2) throw Error(ErrorKind::kInvalidInput, "scoring needs at least two candidates, got " + std::to_string(k));
  const int n1 = cfg_.order + 1;
  const float inv = static_cast<float>(1.0 / cfg_.coeff_scale);
  std::vector<float> cp(2 * static_cast<size_t>(k) * n1);
  for (int i = 0; i < k; ++i) {
    const auto& c = cands.coeffs[static_cast<size_t>(i)];
    if (c.order() != cfg_.order) {
      throw Error(ErrorKind::kInvalidInput, "candidate order " + std::to_string(c.order()) +
                                                " does not match the scorer order " + std::to_string(cfg_.order));
    }
    for (int j = 0; j < n1; ++j) {
      cp[static_cast<size_t>(i * n1 + j)] = static_cast<float>(c.cx[j]) * inv;
      cp[static_cast<size_t>(k * n1 + i * n1 + j)] = static_cast<float>(c.cy[j]) * inv;
    }
  }
  Tensor h = Tensor::from_data({2, k * n1}, std::move(cp));
  h = ad::relu(traj_conv1_(h, k));
  h = ad::relu(traj_conv2_(h, k));
  const Tensor ht = ad::transpose(h);  // [k*n1 x d]
  std::vector<Tensor> pooled;
  pooled.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) pooled.push_back(ad::mean_rows(ad::slice_rows(ht, i * n1, n1)));
  const Tensor traj_tokens = ad::add_bias(traj_mlp_(ad::concat_rows(pooled)), e_traj_);

  const flow::ContextBranches b = encoder_.branches(scenario);
  const Tensor tokens = ad::concat_rows({traj_tokens, ad::add(b.statics, e_static_), ad::add(b.dynamic, e_dyn_),
                                         ad::add(b.goal, e_goal_)});
  const Tensor out = transformer_(tokens);
  return ad::transpose(head_(ad::slice_rows(out, 0, k)));
}

std::vector<double> ScorerModel::score(const CandidateSet& cands, const Scenario& scenario) const {
  ad::NoGradGuard no_grad;
  const Tensor s = scores(cands, scenario);
  std::vector<double> out(static_cast<size_t>(s.cols()));
  for (int i = 0; i < s.cols(); ++i) out[static_cast<size_t>(i)] = s.at(0, i);
  return out;
}

void ScorerModel::save(const std::string& path, const json& extra, bool with_optimizer) const {
  json meta = {{"kind", "scorer"}, {"d_model", cfg_.d_model}, {"reg_weight", cfg_.reg_weight},
               {"config", cfg_.to_json()}};
  if (extra.is_object()) meta.update(extra);
  store_.save(path, meta, with_optimizer);
}

std::unique_ptr<ScorerModel> ScorerModel::load(const std::string& path, bool with_optimizer) {
  const json header = ad::read_checkpoint_header(path);
  const json meta = header.value("meta", json::object());
  if (meta.value("kind", "") != "scorer") throw Error(ErrorKind::kConfig, path + " is not a scorer checkpoint");
  auto model = std::make_unique<ScorerModel>(ScorerConfig::from_json(meta.at("config")), 0);
  model->store_.load(path, with_optimizer);
  return model;
}

int label_closest(const CandidateSet& cands, const Eigen::MatrixX2d& expert_xy) {
  if (cands.trajectories.empty()) throw Error(ErrorKind::kInvalidInput, "no candidate trajectories to label");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < cands.trajectories.size(); ++i) {
    const auto& xy = cands.trajectories[i];
    if (xy.rows() != expert_xy.rows()) {
      throw Error(ErrorKind::kInvalidInput, "expert has " + std::to_string(expert_xy.rows()) +
                                                " waypoints but candidates have " + std::to_string(xy.rows()));
    }
    const double d = (xy - expert_xy).rowwise().norm().sum();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Tensor scorer_loss(const Tensor& scores, int j, const std::vector<double>& refine_costs, double reg_weight,
                   bool cost_weighted) {
  if (j < 0 || j >= scores.cols()) throw Error(ErrorKind::kInvalidInput, "label index out of range");
  Tensor ce = ad::cross_entropy(scores, j);
  if (cost_weighted) ce = ad::scale(ce, static_cast<float>(1.0 / (1.0 + refine_costs.at(static_cast<size_t>(j)))));
  double mean_cost = 0.0;
  for (double c : refine_costs) mean_cost += c;
  if (!refine_costs.empty()) mean_cost /= static_cast<double>(refine_costs.size());
  const Tensor reg = Tensor::from_data({1, 1}, {static_cast<float>(reg_weight * mean_cost)});
  return ad::add(ce, reg);
}

double scorer_loss_value(const std::vector<double>& scores, int j, const std::vector<double>& refine_costs,
                         double reg_weight) {
  if (j < 0 || j >= static_cast<int>(scores.size())) throw Error(ErrorKind::kInvalidInput, "label index out of range");
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  double mean_cost = 0.0;
  for (double c : refine_costs) mean_cost += c;
  if (!refine_costs.empty()) mean_cost /= static_cast<double>(refine_costs.size());
  return std::log(z) + m - scores[static_cast<size_t>(j)] + reg_weight * mean_cost;
}

int select_best(const std::vector<double>& scores) {
  if (scores.empty()) throw Error(ErrorKind::kInvalidInput, "select_best on an empty score list");
  int best = 0;
  for (size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

Eigen::MatrixX2d resample_expert(const Eigen::MatrixX2d& xy, const Eigen::VectorXd& src_times,
                                 const Eigen::VectorXd& times) {
  if (xy.rows() != src_times.size() || xy.rows() == 0) {
    throw Error(ErrorKind::kInvalidInput, "expert path and its time grid differ in length");
  }
  Eigen::MatrixX2d out(times.size(), 2);
  long k = 0;
  for (long i = 0; i < times.size(); ++i) {
    const double t = times[i];
    while (k + 1 < src_times.size() - 1 && src_times[k + 1] < t) ++k;
    if (src_times.size() == 1 || t <= src_times[0]) {
      out.row(i) = xy.row(0);
    } else if (t >= src_times[src_times.size() - 1]) {
      out.row(i) = xy.row(xy.rows() - 1);
    } else {
      const double a = (t - src_times[k]) / (src_times[k + 1] - src_times[k]);
      out.row(i) = (1.0 - a) * xy.row(k) + a * xy.row(k + 1);
    }
  }
  return out;
}

CandidateSet generate_candidates(const flow::FlowModel& flow, const Scenario& scenario, const BasisMatrix& basis,
                                 const flow::SampleConfig& sample, const refine::RefineConfig& refine, Rng& rng) {
  const Tensor ctx = [&] {
    ad::NoGradGuard no_grad;
    return flow.encode(scenario);
  }();
  std::vector<TrajectoryCoeffs> raw =
      flow::sample_candidates(flow, ctx, scenario, flow.standardizer, basis, sample, rng);
  const refine::ObstacleSet obs = refine::make_obstacles(scenario, refine.include_dynamic, refine.dynamic_radius);
  std::vector<refine::RefineResult> refined = refine::refine_all(raw, obs, basis, refine);
  std::vector<TrajectoryCoeffs> coeffs;
  std::vector<double> costs;
  for (auto& r : refined) {
    coeffs.push_back(std::move(r.coeffs));
    costs.push_back(r.cost);
  }
  return CandidateSet::build(std::move(coeffs), std::move(costs), basis);
}

Eigen::MatrixX2d expert_on_grid(const DatasetRecord& r, const BasisMatrix& basis) {
  if (!r.expert_xy) {
    throw Error(ErrorKind::kInvalidInput, "scorer training record " + std::to_string(r.meta.scene_id) +
                                              " has no expert waypoints");
  }
  const Eigen::MatrixX2d xy = r.expert_xy->cast<double>();
  if (xy.rows() == basis.waypoints()) return xy;
  // Expert stored on its own uniform grid over the same horizon.
  const Eigen::VectorXd src = Eigen::VectorXd::LinSpaced(xy.rows(), basis.times[0], basis.times[basis.times.size() - 1]);
  return resample_expert(xy, src, basis.times);
}

flow::TrainLog train_scorer(ScorerModel& model, const flow::FlowModel& flow, const std::vector<DatasetRecord>& data,
                            const BasisMatrix& basis, const ScorerTrainConfig& cfg,
                            const std::function<void(int, double)>& on_step) {
  if (data.empty()) throw Error(ErrorKind::kInvalidInput, "train_scorer needs a non-empty dataset");
  if (cfg.batch_size < 1) throw Error(ErrorKind::kConfig, "batch size must be >= 1");
  if (flow.config().order != model.config().order || basis.order != model.config().order) {
    throw Error(ErrorKind::kConfig, "flow, scorer and basis orders disagree");
  }
  std::vector<Eigen::MatrixX2d> experts;
  experts.reserve(data.size());
  for (const auto& r : data) experts.push_back(expert_on_grid(r, basis));

  auto& store = model.params();
  const auto& sc = model.config();
  flow::TrainLog log;
  const int n = static_cast<int>(data.size());
  for (long step = store.adam_steps(); step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(step)));
    Tensor total;
    int used = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<size_t>(rng.uniform_int(0, n - 1));
      Rng sample_rng(mix_seed(rng.next(), idx));
      CandidateSet cands;
      try {
        cands = generate_candidates(flow, data[idx].scenario, basis, cfg.sample, cfg.refine, sample_rng);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kGeneration) throw;
      }
      if (cands.size() < 2) {
        std::fprintf(stderr, "warning: step %ld scene %lld: fewer than two valid candidates, skipped\n", step,
                     static_cast<long long>(data[idx].meta.scene_id));
        continue;
      }
      const int j = label_closest(cands, experts[idx]);
      const Tensor loss =
          scorer_loss(model.scores(cands, data[idx].scenario), j, cands.refine_costs, sc.reg_weight,
                      sc.cost_weighted_ce);
      total = total.defined() ? ad::add(total, loss) : loss;
      ++used;
    }
    if (used == 0) continue;
    const Tensor loss = ad::scale(total, 1.0f / static_cast<float>(used));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      if (!cfg.checkpoint_path.empty()) model.save(cfg.checkpoint_path, {{"step", step}, {"K", cfg.sample.num_candidates}}, true);
      throw Error(ErrorKind::kTraining, "non-finite scorer loss at step " + std::to_string(step));
    }
    loss.backward();
    store.adam_step(cfg.adam);
    log.loss.emplace_back(static_cast<int>(step), value);
    if (on_step) on_step(static_cast<int>(step), value);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && (step + 1) % cfg.checkpoint_every == 0) {
      model.save(cfg.checkpoint_path, {{"step", step + 1}, {"K", cfg.sample.num_candidates}}, true);
    }
  }
  if (!cfg.checkpoint_path.empty()) model.save(cfg.checkpoint_path, {{"step", store.adam_steps()}, {"K", cfg.sample.num_candidates}}, true);
  return log;
}

HeldOutReport evaluate_top1(const ScorerModel& model, const flow::FlowModel& flow,
                            const std::vector<DatasetRecord>& data, const BasisMatrix& basis,
                            const flow::SampleConfig& sample, const refine::RefineConfig& refine, uint64_t seed) {
  HeldOutReport rep;
  double k_sum = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    CandidateSet cands;
    try {
      cands = generate_candidates(flow, data[i].scenario, basis, sample, refine, rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kGeneration) throw;
    }
    if (cands.size() < 2) continue;
    const int j = label_closest(cands, expert_on_grid(data[i], basis));
    const int pick = select_best(model.score(cands, data[i].scenario));
    ++rep.scenes;
    if (pick == j) ++rep.correct;
    k_sum += cands.size();
  }
  rep.mean_k = rep.scenes > 0 ? k_sum / rep.scenes : 0.0;
  return rep;
}

}  // namespace crowdfm::scorer
