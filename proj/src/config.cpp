#include "crowdfm/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace crowdfm {

using nlohmann::json;

namespace {

json refine_to_json(const refine::RefineConfig& r) {
  return {{"d_safe", r.d_safe},
          {"v_max", r.v_max},
          {"a_max", r.a_max},
          {"max_iters", r.max_iters},
          {"step_size", r.step_size},
          {"proximity_weight", r.proximity_weight},
          {"convergence_tol", r.convergence_tol},
          {"collision_weight", r.collision_weight},
          {"velocity_weight", r.velocity_weight},
          {"accel_weight", r.accel_weight},
          {"clearance_margin", r.clearance_margin},
          {"velocity_margin", r.velocity_margin},
          {"accel_margin", r.accel_margin},
          {"include_dynamic", r.include_dynamic},
          {"dynamic_radius", r.dynamic_radius},
          {"audit_tol", r.audit_tol},
          {"lbfgs_memory", r.lbfgs_memory}};
}

refine::RefineConfig refine_from_json(const json& j) {
  refine::RefineConfig r;
  r.d_safe = j.value("d_safe", r.d_safe);
  r.v_max = j.value("v_max", r.v_max);
  r.a_max = j.value("a_max", r.a_max);
  r.max_iters = j.value("max_iters", r.max_iters);
  r.step_size = j.value("step_size", r.step_size);
  r.proximity_weight = j.value("proximity_weight", r.proximity_weight);
  r.convergence_tol = j.value("convergence_tol", r.convergence_tol);
  r.collision_weight = j.value("collision_weight", r.collision_weight);
  r.velocity_weight = j.value("velocity_weight", r.velocity_weight);
  r.accel_weight = j.value("accel_weight", r.accel_weight);
  r.clearance_margin = j.value("clearance_margin", r.clearance_margin);
  r.velocity_margin = j.value("velocity_margin", r.velocity_margin);
  r.accel_margin = j.value("accel_margin", r.accel_margin);
  r.include_dynamic = j.value("include_dynamic", r.include_dynamic);
  r.dynamic_radius = j.value("dynamic_radius", r.dynamic_radius);
  r.audit_tol = j.value("audit_tol", r.audit_tol);
  r.lbfgs_memory = j.value("lbfgs_memory", r.lbfgs_memory);
  return r;
}

// Rejects keys that the defaults do not have, so typos fail loudly.
void check_keys(const json& doc, const json& reference, const std::string& where) {
  if (!doc.is_object()) return;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!reference.contains(it.key())) throw Error(ErrorKind::kConfig, "unknown config key '" + path + "'");
    const json& ref = reference.at(it.key());
    if (ref.is_object()) {
      if (!it.value().is_object()) throw Error(ErrorKind::kConfig, "config key '" + path + "' must be an object");
      check_keys(it.value(), ref, path);
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kConfig, message);
}

}  // namespace

void RunConfig::validate() const {
  flow.validate();
  scorer.validate();
  refine.validate();
  require(basis.order >= 1, "basis.order must be >= 1");
  require(basis.horizon > 0.0, "basis.horizon must be > 0");
  require(basis.waypoints >= basis.order + 1,
          "basis.waypoints (" + std::to_string(basis.waypoints) + ") must be at least order + 1 (" +
              std::to_string(basis.order + 1) + ")");
  require(flow.order == basis.order, "flow.order must equal basis.order");
  require(scorer.order == basis.order, "scorer.order must equal basis.order");
  require(scene.n_pts >= 1 && scene.num_rays >= 1, "scene.n_pts and scene.num_rays must be >= 1");
  require(scene.n_obs >= 1, "scene.n_obs must be >= 1");
  require(flow.n_obs == scene.n_obs && scorer.n_obs == scene.n_obs, "flow.n_obs and scorer.n_obs must equal scene.n_obs");
  require(flow.sensing_radius == scene.sensing_radius && scorer.sensing_radius == scene.sensing_radius,
          "flow/scorer sensing_radius must equal scene.sensing_radius");
  require(guidance.d_safe > 0.0, "guidance.d_safe must be > 0");
  require(guidance.dynamic_radius >= 0.0, "guidance.dynamic_radius must be >= 0");
  require(sim.dt > 0.0 && sim.dt <= 0.2, "sim.dt must lie in (0, 0.2]");
  require(sim.timeout > 0.0 && sim.goal_tolerance > 0.0, "sim.timeout and sim.goal_tolerance must be > 0");
  require(sim.v_max > 0.0 && sim.a_max > 0.0 && sim.omega_max > 0.0, "sim limits must be > 0");
  require(refine.v_max <= sim.v_max, "refine.v_max must not exceed sim.v_max");
  require(cost_weights.collision >= 0.0 && cost_weights.smoothness >= 0.0 && cost_weights.progress >= 0.0,
          "cost weights must be >= 0");
  require(flow_train.steps >= 0 && flow_train.batch_size >= 1 && flow_train.lr > 0.0,
          "flow_train needs steps >= 0, batch_size >= 1, lr > 0");
  require(scorer_train.steps >= 0 && scorer_train.batch_size >= 1 && scorer_train.lr > 0.0,
          "scorer_train needs steps >= 0, batch_size >= 1, lr > 0");
  require(scorer_train.holdout_fraction >= 0.0 && scorer_train.holdout_fraction < 1.0,
          "scorer_train.holdout_fraction must lie in [0, 1)");
  require(data.count >= 0 && data.scorer_count >= 0, "data counts must be >= 0");
  require(!data.mix.empty(), "data.mix must not be empty");
  for (const auto& m : data.mix) (void)scene::difficulty_from_string(m);
  require(bench.suite == "all" || bench.suite == "sparse" || bench.suite == "dense" || bench.suite == "corridor",
          "bench.suite must be sparse, dense, corridor or all");
  require(bench.worlds >= 1 && bench.runs >= 1, "bench.worlds and bench.runs must be >= 1");
  require(bench.timeout > 0.0, "bench.timeout must be > 0");
  for (const auto& v : bench.variants) (void)eval::variant_from_string(v);
}

json RunConfig::to_json() const {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["basis"] = {{"order", basis.order}, {"horizon", basis.horizon}, {"waypoints", basis.waypoints}};
  j["scene"] = {{"n_pts", scene.n_pts},
                {"n_obs", scene.n_obs},
                {"num_rays", scene.num_rays},
                {"sensing_radius", scene.sensing_radius}};
  j["flow"] = flow.to_json();
  j["guidance"] = {{"d_safe", guidance.d_safe},
                   {"include_dynamic", guidance.include_dynamic},
                   {"dynamic_radius", guidance.dynamic_radius}};
  j["refine"] = refine_to_json(refine);
  j["scorer"] = scorer.to_json();
  j["cost_weights"] = {{"collision", cost_weights.collision},
                       {"smoothness", cost_weights.smoothness},
                       {"progress", cost_weights.progress}};
  const auto& a = sim.agents;
  j["sim"] = {{"dt", sim.dt},
              {"goal_tolerance", sim.goal_tolerance},
              {"timeout", sim.timeout},
              {"lookahead", sim.lookahead},
              {"speed_window", sim.speed_window},
              {"v_max", sim.v_max},
              {"a_max", sim.a_max},
              {"omega_max", sim.omega_max},
              {"agent_turnaround", sim.agent_turnaround},
              {"agents",
               {{"repulsion_strength", a.repulsion_strength},
                {"repulsion_range", a.repulsion_range},
                {"wall_strength", a.wall_strength},
                {"wall_range", a.wall_range},
                {"tangential", a.tangential},
                {"arrival_radius", a.arrival_radius},
                {"interaction_range", a.interaction_range}}}};
  j["flow_train"] = {{"steps", flow_train.steps},
                     {"batch_size", flow_train.batch_size},
                     {"lr", flow_train.lr},
                     {"clip_norm", flow_train.clip_norm},
                     {"seed", flow_train.seed},
                     {"checkpoint_every", flow_train.checkpoint_every}};
  j["scorer_train"] = {{"steps", scorer_train.steps},
                       {"batch_size", scorer_train.batch_size},
                       {"lr", scorer_train.lr},
                       {"clip_norm", scorer_train.clip_norm},
                       {"seed", scorer_train.seed},
                       {"checkpoint_every", scorer_train.checkpoint_every},
                       {"holdout_fraction", scorer_train.holdout_fraction}};
  j["data"] = {{"count", data.count}, {"scorer_count", data.scorer_count}, {"seed", data.seed}, {"mix", data.mix}};
  j["bench"] = {{"suite", bench.suite},   {"worlds", bench.worlds},     {"runs", bench.runs},
                {"seed", bench.seed},     {"timeout", bench.timeout},   {"variants", bench.variants},
                {"hlp_scenes", bench.hlp_scenes}};
  j["planner_seed"] = planner_seed;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "config document must be a JSON object");
  const int version = j.value("schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion) {
    throw Error(ErrorKind::kVersion, "config schema version " + std::to_string(version) + " is not supported (expected " +
                                         std::to_string(kConfigSchemaVersion) + ")");
  }
  RunConfig c;
  check_keys(j, c.to_json(), "");
  try {
    const json e = json::object();
    const json& b = j.value("basis", e);
    c.basis.order = b.value("order", c.basis.order);
    c.basis.horizon = b.value("horizon", c.basis.horizon);
    c.basis.waypoints = b.value("waypoints", c.basis.waypoints);
    const json& s = j.value("scene", e);
    c.scene.n_pts = s.value("n_pts", c.scene.n_pts);
    c.scene.n_obs = s.value("n_obs", c.scene.n_obs);
    c.scene.num_rays = s.value("num_rays", c.scene.num_rays);
    c.scene.sensing_radius = s.value("sensing_radius", c.scene.sensing_radius);
    json f = c.flow.to_json();
    f.update(j.value("flow", e));
    c.flow = flow::FlowNetConfig::from_json(f);
    const json& g = j.value("guidance", e);
    c.guidance.d_safe = g.value("d_safe", c.guidance.d_safe);
    c.guidance.include_dynamic = g.value("include_dynamic", c.guidance.include_dynamic);
    c.guidance.dynamic_radius = g.value("dynamic_radius", c.guidance.dynamic_radius);
    json r = refine_to_json(c.refine);
    r.update(j.value("refine", e));
    c.refine = refine_from_json(r);
    json sc = c.scorer.to_json();
    sc.update(j.value("scorer", e));
    c.scorer = scorer::ScorerConfig::from_json(sc);
    const json& w = j.value("cost_weights", e);
    c.cost_weights.collision = w.value("collision", c.cost_weights.collision);
    c.cost_weights.smoothness = w.value("smoothness", c.cost_weights.smoothness);
    c.cost_weights.progress = w.value("progress", c.cost_weights.progress);
    const json& m = j.value("sim", e);
    c.sim.dt = m.value("dt", c.sim.dt);
    c.sim.goal_tolerance = m.value("goal_tolerance", c.sim.goal_tolerance);
    c.sim.timeout = m.value("timeout", c.sim.timeout);
    c.sim.lookahead = m.value("lookahead", c.sim.lookahead);
    c.sim.speed_window = m.value("speed_window", c.sim.speed_window);
    c.sim.v_max = m.value("v_max", c.sim.v_max);
    c.sim.a_max = m.value("a_max", c.sim.a_max);
    c.sim.omega_max = m.value("omega_max", c.sim.omega_max);
    c.sim.agent_turnaround = m.value("agent_turnaround", c.sim.agent_turnaround);
    const json& a = m.value("agents", e);
    auto& ap = c.sim.agents;
    ap.repulsion_strength = a.value("repulsion_strength", ap.repulsion_strength);
    ap.repulsion_range = a.value("repulsion_range", ap.repulsion_range);
    ap.wall_strength = a.value("wall_strength", ap.wall_strength);
    ap.wall_range = a.value("wall_range", ap.wall_range);
    ap.tangential = a.value("tangential", ap.tangential);
    ap.arrival_radius = a.value("arrival_radius", ap.arrival_radius);
    ap.interaction_range = a.value("interaction_range", ap.interaction_range);
    const json& ft = j.value("flow_train", e);
    c.flow_train.steps = ft.value("steps", c.flow_train.steps);
    c.flow_train.batch_size = ft.value("batch_size", c.flow_train.batch_size);
    c.flow_train.lr = ft.value("lr", c.flow_train.lr);
    c.flow_train.clip_norm = ft.value("clip_norm", c.flow_train.clip_norm);
    c.flow_train.seed = ft.value("seed", c.flow_train.seed);
    c.flow_train.checkpoint_every = ft.value("checkpoint_every", c.flow_train.checkpoint_every);
    const json& st = j.value("scorer_train", e);
    c.scorer_train.steps = st.value("steps", c.scorer_train.steps);
    c.scorer_train.batch_size = st.value("batch_size", c.scorer_train.batch_size);
    c.scorer_train.lr = st.value("lr", c.scorer_train.lr);
    c.scorer_train.clip_norm = st.value("clip_norm", c.scorer_train.clip_norm);
    c.scorer_train.seed = st.value("seed", c.scorer_train.seed);
    c.scorer_train.checkpoint_every = st.value("checkpoint_every", c.scorer_train.checkpoint_every);
    c.scorer_train.holdout_fraction = st.value("holdout_fraction", c.scorer_train.holdout_fraction);
    const json& d = j.value("data", e);
    c.data.count = d.value("count", c.data.count);
    c.data.scorer_count = d.value("scorer_count", c.data.scorer_count);
    c.data.seed = d.value("seed", c.data.seed);
    c.data.mix = d.value("mix", c.data.mix);
    const json& be = j.value("bench", e);
    c.bench.suite = be.value("suite", c.bench.suite);
    c.bench.worlds = be.value("worlds", c.bench.worlds);
    c.bench.runs = be.value("runs", c.bench.runs);
    c.bench.seed = be.value("seed", c.bench.seed);
    c.bench.timeout = be.value("timeout", c.bench.timeout);
    c.bench.variants = be.value("variants", c.bench.variants);
    c.bench.hlp_scenes = be.value("hlp_scenes", c.bench.hlp_scenes);
    c.planner_seed = j.value("planner_seed", c.planner_seed);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kConfig, std::string("bad config value: ") + ex.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, "cannot parse config " + path + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write config " + path);
  out << to_json().dump(2) << '\n';
}

void RunConfig::apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kConfig, "override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::stringstream ks(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ks, part, '.')) parts.push_back(part);
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw Error(ErrorKind::kConfig, "override path '" + key + "' crosses a non-object");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

bernstein::BasisMatrix RunConfig::make_basis() const {
  return bernstein::canonical_basis(basis.order, basis.horizon, basis.waypoints);
}

flow::SampleConfig RunConfig::sample_config() const {
  flow::SampleConfig s;
  s.num_candidates = flow.num_candidates;
  s.steps = flow.euler_steps;
  s.guidance_scale = flow.guidance_scale;
  s.d_safe = guidance.d_safe;
  s.include_dynamic = guidance.include_dynamic;
  s.dynamic_radius = guidance.dynamic_radius;
  return s;
}

planner::PipelineConfig RunConfig::pipeline_config() const {
  planner::PipelineConfig p;
  p.sample = sample_config();
  p.refine_cfg = refine;
  p.weights = cost_weights;
  p.seed = planner_seed;
  return p;
}

flow::FlowTrainConfig RunConfig::flow_train_config() const {
  flow::FlowTrainConfig f;
  f.steps = flow_train.steps;
  f.batch_size = flow_train.batch_size;
  f.adam.lr = static_cast<float>(flow_train.lr);
  f.adam.clip_norm = static_cast<float>(flow_train.clip_norm);
  f.seed = flow_train.seed;
  f.checkpoint_every = flow_train.checkpoint_every;
  f.horizon = basis.horizon;
  f.waypoints = basis.waypoints;
  return f;
}

scorer::ScorerTrainConfig RunConfig::scorer_train_config() const {
  scorer::ScorerTrainConfig s;
  s.steps = scorer_train.steps;
  s.batch_size = scorer_train.batch_size;
  s.adam.lr = static_cast<float>(scorer_train.lr);
  s.adam.clip_norm = static_cast<float>(scorer_train.clip_norm);
  s.seed = scorer_train.seed;
  s.checkpoint_every = scorer_train.checkpoint_every;
  s.sample = sample_config();
  s.refine = refine;
  return s;
}

datagen::DataGenConfig RunConfig::datagen_config() const {
  datagen::DataGenConfig d;
  d.count = data.count;
  d.scorer_count = data.scorer_count;
  d.seed = data.seed;
  d.mix.clear();
  for (const auto& m : data.mix) d.mix.push_back(scene::difficulty_from_string(m));
  for (auto* e : {&d.expert, &d.human}) {
    e->refine.v_max = refine.v_max;
    e->refine.a_max = refine.a_max;
  }
  d.sim = sim;
  d.sim.scene = scene;
  return d;
}

eval::BenchmarkConfig RunConfig::bench_config() const {
  eval::BenchmarkConfig b;
  b.variants.clear();
  for (const auto& v : bench.variants) b.variants.push_back(eval::variant_from_string(v));
  b.runs = bench.runs;
  b.seed = bench.seed;
  b.guidance_scale = flow.guidance_scale;
  b.pipeline = pipeline_config();
  b.sim = sim;
  b.sim.scene = scene;
  b.sim.timeout = bench.timeout;
  return b;
}

std::string RunConfig::fingerprint() const {
  const std::string dump = to_json().dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  std::string source = path;
  if (source.empty()) {
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) source = env;
  }
  if (!source.empty()) {
    std::ifstream in(source);
    if (!in) throw Error(ErrorKind::kConfig, "cannot open config " + source);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kConfig, "cannot parse config " + source + ": " + e.what());
    }
  }
  for (const auto& o : overrides) RunConfig::apply_override(doc, o);
  return RunConfig::from_json(doc);
}

}  // namespace crowdfm
