#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "crowdfm/config.hpp"
#include "crowdfm/datagen.hpp"
#include "crowdfm/evaluation.hpp"
#include "crowdfm/flow_model.hpp"
#include "crowdfm/params.hpp"
#include "crowdfm/planner.hpp"
#include "crowdfm/render.hpp"
#include "crowdfm/scorer.hpp"
#include "crowdfm/version.hpp"

namespace fs = std::filesystem;
using namespace crowdfm;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config (default: $CROWDFM_CONFIG, else built-in defaults)");
  cmd->add_option("--set", c.overrides, "Override a config value, e.g. --set flow.guidance_scale=10")
      ->take_all();
}

void write_loss_csv(const std::string& path, const flow::TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : log.loss) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g\n", step, loss);
    out << buf;
  }
}

std::vector<scene::WorldSpec> make_suite(const std::string& suite, int count, uint64_t seed) {
  std::vector<scene::Difficulty> kinds;
  if (suite == "all") {
    kinds = {scene::Difficulty::kSparse, scene::Difficulty::kDense, scene::Difficulty::kCorridor};
  } else {
    kinds = {scene::difficulty_from_string(suite)};
  }
  std::vector<scene::WorldSpec> worlds;
  for (auto k : kinds)
    for (int i = 0; i < count; ++i) worlds.push_back(scene::sample_world(mix_seed(seed, static_cast<uint64_t>(i)), k));
  return worlds;
}

int run_gen_data(const Common& c, const std::string& out, std::string scorer_out, int count, int scorer_count,
                 long long seed) {
  std::vector<std::string> ov = c.overrides;
  if (count >= 0) ov.push_back("data.count=" + std::to_string(count));
  if (scorer_count >= 0) ov.push_back("data.scorer_count=" + std::to_string(scorer_count));
  if (seed >= 0) ov.push_back("data.seed=" + std::to_string(seed));
  const RunConfig cfg = resolve_config(c.config, ov);
  if (scorer_out.empty()) scorer_out = fs::path(out).replace_extension("").string() + ".scorer.jsonl";
  datagen::DataGenStats stats;
  const auto sets = datagen::generate(cfg.datagen_config(), cfg.make_basis(), &stats);
  write_dataset(sets.flow, out);
  write_dataset(sets.scorer, scorer_out);
  std::cout << stats.summary();
  std::cout << "wrote " << out << " and " << scorer_out << "\n";
  return 0;
}

int run_train_flow(const Common& c, const std::string& data_path, const std::string& out, int steps, bool resume) {
  std::vector<std::string> ov = c.overrides;
  if (steps >= 0) ov.push_back("flow_train.steps=" + std::to_string(steps));
  const RunConfig cfg = resolve_config(c.config, ov);
  const auto data = read_dataset(data_path);
  if (data.empty()) throw Error(ErrorKind::kInvalidInput, "dataset " + data_path + " is empty");
  std::unique_ptr<flow::FlowModel> model;
  if (resume && fs::exists(out)) {
    model = flow::FlowModel::load(out, true);
    std::cout << "resuming from step " << model->params().adam_steps() << "\n";
  } else {
    model = std::make_unique<flow::FlowModel>(cfg.flow, cfg.flow_train.seed);
    std::vector<bernstein::TrajectoryCoeffs> targets;
    for (const auto& r : data) targets.push_back(r.target_coeffs);
    model->standardizer = flow::Standardizer::fit(targets);
  }
  auto tc = cfg.flow_train_config();
  tc.checkpoint_path = out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto log = flow::train_flow(*model, data, tc, [&](int step, double loss) {
    if (step % 100 == 0) std::printf("step %d loss %.5f\n", step, loss);
  });
  write_loss_csv(out + ".log.csv", log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!log.loss.empty()) {
    std::printf("trained %zu steps in %.1f s; first loss %.4f, last loss %.4f\n", log.loss.size(), secs,
                log.loss.front().second, log.loss.back().second);
  }
  std::cout << "checkpoint " << out << ", log " << out << ".log.csv\n";
  return 0;
}

int run_train_scorer(const Common& c, const std::string& data_path, const std::string& flow_path,
                     const std::string& out, int steps, bool resume) {
  std::vector<std::string> ov = c.overrides;
  if (steps >= 0) ov.push_back("scorer_train.steps=" + std::to_string(steps));
  const RunConfig cfg = resolve_config(c.config, ov);
  const auto flow = flow::FlowModel::load(flow_path);
  if (flow->config().order != cfg.basis.order) throw Error(ErrorKind::kConfig, "flow checkpoint order differs from the config");
  auto data = read_dataset(data_path);
  if (data.size() < 2) throw Error(ErrorKind::kInvalidInput, "scorer dataset needs at least two records");
  const size_t holdout = static_cast<size_t>(cfg.scorer_train.holdout_fraction * static_cast<double>(data.size()));
  std::vector<DatasetRecord> held(data.end() - static_cast<long>(holdout), data.end());
  data.resize(data.size() - holdout);

  std::unique_ptr<scorer::ScorerModel> model;
  if (resume && fs::exists(out)) {
    model = scorer::ScorerModel::load(out, true);
    std::cout << "resuming from step " << model->params().adam_steps() << "\n";
  } else {
    model = std::make_unique<scorer::ScorerModel>(cfg.scorer, cfg.scorer_train.seed);
  }
  const auto basis = cfg.make_basis();
  auto tc = cfg.scorer_train_config();
  tc.checkpoint_path = out;
  const auto log = scorer::train_scorer(*model, *flow, data, basis, tc, [&](int step, double loss) {
    if (step % 50 == 0) std::printf("step %d loss %.5f\n", step, loss);
  });
  write_loss_csv(out + ".log.csv", log);
  if (!held.empty()) {
    const auto rep = scorer::evaluate_top1(*model, *flow, held, basis, tc.sample, tc.refine, cfg.scorer_train.seed + 1);
    std::printf("held-out top-1 accuracy %.3f over %d scenes (chance %.3f)\n", rep.accuracy(), rep.scenes,
                rep.chance());
  }
  std::cout << "checkpoint " << out << ", log " << out << ".log.csv\n";
  return 0;
}

int run_rollout(const Common& c, const std::string& flow_path, const std::string& scorer_path, long long world_seed,
                const std::string& difficulty, const std::string& out, const std::string& render_dir) {
  const RunConfig cfg = resolve_config(c.config, c.overrides);
  const auto flow = flow::FlowModel::load(flow_path);
  std::unique_ptr<scorer::ScorerModel> scorer;
  planner::PipelineConfig pc = cfg.pipeline_config();
  pc.refine = true;
  if (!scorer_path.empty()) {
    scorer = scorer::ScorerModel::load(scorer_path);
    pc.selector = planner::Selector::kScorer;
  } else {
    pc.selector = planner::Selector::kCostSelect;
    std::cout << "no scorer checkpoint given; selecting candidates with the cost function\n";
  }
  const auto basis = cfg.make_basis();
  const planner::PipelinePlanner pipeline(*flow, scorer.get(), basis, pc);
  const scene::WorldSpec world =
      scene::sample_world(static_cast<uint64_t>(world_seed), scene::difficulty_from_string(difficulty));
  if (!render_dir.empty()) fs::create_directories(render_dir);

  int frames = 0;
  std::vector<double> latency;
  auto observer = [&](const sim::PlanRequest& req, const planner::PlanResult& r) {
    latency.push_back(r.ms_total);
    if (render_dir.empty()) return;
    render::Frame f;
    f.world = &world;
    f.robot = req.robot.pose;
    f.robot_radius = req.robot.radius;
    f.scenario = &req.scenario;
    f.candidates = r.candidates.trajectories;
    f.selected = r.selected;
    f.step = req.step;
    f.time = req.time;
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05d.svg", req.step);
    eval::write_text((fs::path(render_dir) / name).string(), render::frame_svg(f));
    ++frames;
  };
  sim::SimConfig sc = cfg.sim;
  sc.scene = cfg.scene;
  const auto result = sim::run_episode(world, pipeline.as_sim_planner(observer), sc);
  sim::write_episode_csv(result, out);
  const auto m = eval::episode_metrics(result);
  const auto lat = eval::latency_stats(latency);
  std::printf("%s: %s after %.1f s, length %.2f m, mean speed %.2f m/s\n", world.tag.c_str(),
              sim::to_string(result.outcome), m.time, m.length, m.velocity);
  if (!result.diagnostic.empty()) std::printf("%s\n", result.diagnostic.c_str());
  std::printf("plan latency mean %.1f ms, p95 %.1f ms over %zu plans\n", lat.mean_ms, lat.p95_ms, lat.samples);
  if (!render_dir.empty()) std::printf("rendered %d frames into %s\n", frames, render_dir.c_str());
  return 0;
}

int run_bench(const Common& c, const std::string& flow_path, const std::string& scorer_path,
              const std::string& hlp_data, const std::string& suite, int runs, const std::string& out_dir) {
  std::vector<std::string> ov = c.overrides;
  if (!suite.empty()) ov.push_back("bench.suite=\"" + suite + "\"");
  if (runs > 0) ov.push_back("bench.runs=" + std::to_string(runs));
  const RunConfig cfg = resolve_config(c.config, ov);
  const auto flow = flow::FlowModel::load(flow_path);
  std::unique_ptr<scorer::ScorerModel> scorer;
  if (!scorer_path.empty()) scorer = scorer::ScorerModel::load(scorer_path);
  auto bc = cfg.bench_config();
  if (!scorer) {
    const auto before = bc.variants.size();
    std::erase(bc.variants, eval::Variant::kGuidanceRefineScorer);
    if (bc.variants.size() != before) std::cout << "no scorer checkpoint given; skipping the scorer variant\n";
  }
  const auto basis = cfg.make_basis();
  const auto worlds = make_suite(cfg.bench.suite, cfg.bench.worlds, cfg.bench.seed);
  const auto t0 = std::chrono::steady_clock::now();
  eval::BenchmarkReport report = eval::run_benchmark(worlds, *flow, scorer.get(), basis, bc);
  report.fingerprint = cfg.fingerprint();
  if (scorer && !hlp_data.empty()) {
    auto scenes = read_dataset(hlp_data);
    if (static_cast<int>(scenes.size()) > cfg.bench.hlp_scenes) scenes.resize(static_cast<size_t>(cfg.bench.hlp_scenes));
    report.hlp = eval::hlp_comparison(scenes, *flow, *scorer, basis, bc.pipeline, cfg.bench.seed);
  }
  fs::create_directories(out_dir);
  eval::write_text((fs::path(out_dir) / "report.csv").string(), report.report_csv());
  eval::write_text((fs::path(out_dir) / "hlp.csv").string(), report.hlp_csv());
  eval::write_text((fs::path(out_dir) / "hlp.svg").string(), eval::hlp_svg(report.hlp));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << report.report_csv();
  std::printf("config %s, seed %llu, %zu episodes in %.1f s\n", report.fingerprint.c_str(),
              static_cast<unsigned long long>(report.seed), report.episodes.size(), secs);
  for (const auto& [v, s] : report.latency()) {
    std::printf("latency %-28s mean %7.2f ms  p95 %7.2f ms  (%zu plans)\n", eval::to_string(v), s.mean_ms, s.p95_ms,
                s.samples);
  }
  if (!report.hlp.empty()) {
    int wins = 0;
    for (const auto& h : report.hlp) wins += h.hlp_scorer <= h.hlp_cost ? 1 : 0;
    std::printf("hlp: scorer <= cost function in %d of %zu scenes\n", wins, report.hlp.size());
  }
  return 0;
}

int exit_code(ErrorKind kind) {
  return kind == ErrorKind::kConfig || kind == ErrorKind::kVersion ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching local planner for crowded scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("crowdfm ") + kVersion + " (config schema " +
                                        std::to_string(kConfigSchemaVersion) + ", checkpoint format " +
                                        std::to_string(ad::kCheckpointFormatVersion) + ", dataset format " +
                                        std::to_string(kDatasetVersion) + ")");

  Common common;
  std::string out, scorer_out, data, flow_path, scorer_path, render_dir, difficulty = "dense", suite, hlp_data;
  int count = -1, scorer_count = -1, steps = -1, runs = 0;
  long long seed = -1, world_seed = 1;
  bool resume = false;

  auto* gen = app.add_subcommand("gen-data", "Generate flow and scorer training sets");
  add_common(gen, common);
  gen->add_option("--out", out, "Flow-set JSONL path")->required();
  gen->add_option("--scorer-out", scorer_out, "Scorer-set JSONL path (default: --out with .scorer.jsonl as extension)");
  gen->add_option("--count", count, "Number of flow records")->check(CLI::NonNegativeNumber);
  gen->add_option("--scorer-count", scorer_count, "Number of scorer records")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed, "Generation seed")->check(CLI::NonNegativeNumber);

  auto* tf = app.add_subcommand("train-flow", "Train the flow model");
  add_common(tf, common);
  tf->add_option("--data", data, "Flow-set JSONL")->required()->check(CLI::ExistingFile);
  tf->add_option("--out", out, "Checkpoint path")->required();
  tf->add_option("--steps", steps, "Total optimizer steps")->check(CLI::NonNegativeNumber);
  tf->add_flag("--resume", resume, "Continue from the checkpoint at --out if it exists");

  auto* ts = app.add_subcommand("train-scorer", "Train the scorer against a frozen flow model");
  add_common(ts, common);
  ts->add_option("--data", data, "Scorer-set JSONL")->required()->check(CLI::ExistingFile);
  ts->add_option("--flow", flow_path, "Flow checkpoint")->required()->check(CLI::ExistingFile);
  ts->add_option("--out", out, "Checkpoint path")->required();
  ts->add_option("--steps", steps, "Total optimizer steps")->check(CLI::NonNegativeNumber);
  ts->add_flag("--resume", resume, "Continue from the checkpoint at --out if it exists");

  auto* ro = app.add_subcommand("rollout", "Run one closed-loop episode");
  add_common(ro, common);
  ro->add_option("--flow", flow_path, "Flow checkpoint")->required()->check(CLI::ExistingFile);
  ro->add_option("--scorer", scorer_path, "Scorer checkpoint (default: cost-function selection)")
      ->check(CLI::ExistingFile);
  ro->add_option("--world-seed", world_seed, "World seed");
  ro->add_option("--world", difficulty, "sparse, dense or corridor");
  ro->add_option("--out", out, "Episode CSV path")->default_val("episode.csv");
  ro->add_option("--render", render_dir, "Directory for one SVG per replan step");

  auto* be = app.add_subcommand("bench", "Benchmark planner variants over a world suite");
  add_common(be, common);
  be->add_option("--flow", flow_path, "Flow checkpoint")->required()->check(CLI::ExistingFile);
  be->add_option("--scorer", scorer_path, "Scorer checkpoint")->check(CLI::ExistingFile);
  be->add_option("--hlp-data", hlp_data, "Scorer-set JSONL for the open-loop HLP comparison")
      ->check(CLI::ExistingFile);
  be->add_option("--suite", suite, "sparse, dense, corridor or all");
  be->add_option("--runs", runs, "Runs per world")->check(CLI::PositiveNumber);
  be->add_option("--out", out, "Output directory")->default_val("bench_out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(common, out, scorer_out, count, scorer_count, seed);
    if (tf->parsed()) return run_train_flow(common, data, out, steps, resume);
    if (ts->parsed()) return run_train_scorer(common, data, flow_path, out, steps, resume);
    if (ro->parsed()) return run_rollout(common, flow_path, scorer_path, world_seed, difficulty, out, render_dir);
    if (be->parsed()) return run_bench(common, flow_path, scorer_path, hlp_data, suite, runs, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
