#include "crowdfm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>

namespace crowdfm::eval {

double hlp(const Eigen::MatrixX2d& candidate_xy, const Eigen::MatrixX2d& expert_xy) {
  if (candidate_xy.rows() != expert_xy.rows() || candidate_xy.rows() < 1) {
    throw Error(ErrorKind::kInvalidInput, "hlp needs two paths of equal, non-zero length (got " +
                                              std::to_string(candidate_xy.rows()) + " and " +
                                              std::to_string(expert_xy.rows()) + ")");
  }
  return (candidate_xy - expert_xy).rowwise().norm().mean();
}

double selection_cost(const bernstein::TrajectoryCoeffs& coeffs, const bernstein::BasisMatrix& basis,
                      const refine::ObstacleSet& obstacles, const Scenario& scenario,
                      const planner::CostWeights& weights, double d_safe, double v_max) {
  const auto traj = bernstein::eval_trajectory(coeffs, basis, true);
  const double collision = refine::collision_cost(traj.xy, basis.times, obstacles, d_safe);
  const double smooth = traj.acc->rowwise().squaredNorm().mean();
  const Eigen::Vector2d heading(scenario.goal_heading[0], scenario.goal_heading[1]);
  const double progress = traj.xy.row(traj.xy.rows() - 1).dot(heading);
  const double reach = v_max * basis.horizon();
  return weights.collision * collision + weights.smoothness * smooth +
         weights.progress * (1.0 - progress / reach);
}

int cost_select(const std::vector<bernstein::TrajectoryCoeffs>& cands, const Scenario& scenario,
                const bernstein::BasisMatrix& basis, const planner::CostWeights& weights, double d_safe,
                double v_max, bool include_dynamic, double dynamic_radius) {
  if (cands.empty()) throw Error(ErrorKind::kInvalidInput, "cost_select on an empty candidate list");
  const auto obs = refine::make_obstacles(scenario, include_dynamic, dynamic_radius);
  int best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < cands.size(); ++i) {
    const double c = selection_cost(cands[i], basis, obs, scenario, weights, d_safe, v_max);
    if (c < best_cost) {
      best_cost = c;
      best = static_cast<int>(i);
    }
  }
  return best;
}

EpisodeMetrics episode_metrics(const sim::EpisodeResult& result) {
  EpisodeMetrics m;
  m.length = result.path_length;
  m.time = result.duration;
  m.velocity_defined = result.duration > 0.0;
  m.velocity = m.velocity_defined ? m.length / m.time : 0.0;
  return m;
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kVanilla: return "cfm";
    case Variant::kGuidance: return "cfm_guidance";
    case Variant::kGuidanceRefine: return "cfm_guidance_refine_cost";
    case Variant::kGuidanceRefineScorer: return "cfm_guidance_refine_scorer";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : {Variant::kVanilla, Variant::kGuidance, Variant::kGuidanceRefine, Variant::kGuidanceRefineScorer}) {
    if (name == to_string(v)) return v;
  }
  throw Error(ErrorKind::kConfig, "unknown planner variant '" + name + "'");
}

planner::PipelineConfig variant_config(Variant v, const planner::PipelineConfig& base, double guidance_scale) {
  planner::PipelineConfig c = base;
  c.sample.guidance_scale = v == Variant::kVanilla ? 0.0 : guidance_scale;
  c.refine = v == Variant::kGuidanceRefine || v == Variant::kGuidanceRefineScorer;
  c.selector = v == Variant::kGuidanceRefineScorer ? planner::Selector::kScorer : planner::Selector::kCostSelect;
  return c;
}

LatencyStats latency_stats(std::vector<double> ms) {
  LatencyStats s;
  s.samples = ms.size();
  if (ms.empty()) return s;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  // Nearest-rank percentile.
  const auto rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
  s.p95_ms = ms[std::max<size_t>(rank, 1) - 1];
  return s;
}

std::map<Variant, LatencyStats> BenchmarkReport::latency() const {
  std::map<Variant, std::vector<double>> all;
  for (const auto& e : episodes) all[e.variant].insert(all[e.variant].end(), e.plan_ms.begin(), e.plan_ms.end());
  std::map<Variant, LatencyStats> out;
  for (auto& [v, ms] : all) out[v] = latency_stats(std::move(ms));
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string BenchmarkReport::report_csv() const {
  std::ostringstream out;
  out << "variant,world,runs,successes,rate,mean_len_m,mean_time_s,mean_vel_mps\n";
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << r.world << ',' << r.runs << ',' << r.successes << ',' << fmt(r.rate) << ',';
    if (r.successes > 0) out << fmt(r.mean_len) << ',' << fmt(r.mean_time) << ',' << fmt(r.mean_vel);
    else out << ",,";
    out << '\n';
  }
  return out.str();
}

std::string BenchmarkReport::hlp_csv() const {
  std::ostringstream out;
  out << "scene_id,hlp_scorer,hlp_cost\n";
  for (const auto& h : hlp) out << h.scene_id << ',' << fmt(h.hlp_scorer) << ',' << fmt(h.hlp_cost) << '\n';
  return out.str();
}

std::vector<ReportRow> aggregate(const std::vector<EpisodeRecord>& episodes) {
  std::vector<ReportRow> rows;
  auto find = [&](Variant v, const std::string& w) -> ReportRow& {
    for (auto& r : rows)
      if (r.variant == v && r.world == w) return r;
    rows.push_back({v, w});
    return rows.back();
  };
  for (const auto& e : episodes) {
    ReportRow& r = find(e.variant, e.world);
    ++r.runs;
    if (e.outcome == sim::Outcome::kSuccess) {
      ++r.successes;
      r.mean_len += e.metrics.length;
      r.mean_time += e.metrics.time;
      r.mean_vel += e.metrics.velocity;
    }
  }
  for (auto& r : rows) {
    r.rate = r.runs > 0 ? static_cast<double>(r.successes) / r.runs : 0.0;
    if (r.successes > 0) {
      r.mean_len /= r.successes;
      r.mean_time /= r.successes;
      r.mean_vel /= r.successes;
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.variant != b.variant) return a.variant < b.variant;
    return a.world < b.world;
  });
  return rows;
}

std::vector<EpisodeRecord> run_episodes(const std::vector<scene::WorldSpec>& worlds,
                                        const std::vector<Variant>& variants, int runs, uint64_t seed,
                                        const sim::SimConfig& sim, const PlannerFactory& factory) {
  if (runs < 1) throw Error(ErrorKind::kConfig, "runs per world must be >= 1");
  struct Job {
    size_t world;
    int run;
    Variant variant;
  };
  std::vector<Job> jobs;
  for (size_t w = 0; w < worlds.size(); ++w)
    for (int r = 0; r < runs; ++r)
      for (Variant v : variants) jobs.push_back({w, r, v});

  std::vector<EpisodeRecord> records(jobs.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const long n = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      const Job& job = jobs[static_cast<size_t>(i)];
      const scene::WorldSpec& world = worlds[job.world];
      EpisodeRecord& rec = records[static_cast<size_t>(i)];
      rec.variant = job.variant;
      rec.world = world.tag;
      rec.world_seed = world.seed;
      rec.run = job.run;
      // Paired across variants: the same run seed for every variant.
      const uint64_t run_seed = mix_seed(mix_seed(seed, world.seed), static_cast<uint64_t>(job.run));
      const sim::Planner planner = factory(job.variant, run_seed, rec);
      const sim::EpisodeResult res = sim::run_episode(world, planner, sim);
      rec.outcome = res.outcome;
      rec.metrics = episode_metrics(res);
      if (rec.plans > 0) rec.mean_raw_collision /= rec.plans;
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return records;
}

BenchmarkReport run_benchmark(const std::vector<scene::WorldSpec>& worlds, const flow::FlowModel& flow,
                              const scorer::ScorerModel* scorer, const bernstein::BasisMatrix& basis,
                              const BenchmarkConfig& cfg) {
  for (Variant v : cfg.variants) {
    if (v == Variant::kGuidanceRefineScorer && !scorer) {
      throw Error(ErrorKind::kConfig, std::string("variant ") + to_string(v) + " needs a scorer checkpoint");
    }
  }
  BenchmarkReport report;
  report.seed = cfg.seed;
  auto factory = [&](Variant v, uint64_t run_seed, EpisodeRecord& rec) -> sim::Planner {
    planner::PipelineConfig pc = variant_config(v, cfg.pipeline, cfg.guidance_scale);
    pc.seed = run_seed;
    auto pipeline = std::make_shared<planner::PipelinePlanner>(flow, scorer, basis, pc);
    auto obs_cfg = pc.sample;
    EpisodeRecord* out = &rec;
    sim::Planner inner = pipeline->as_sim_planner([out, obs_cfg, &basis](const sim::PlanRequest& req,
                                                                          const planner::PlanResult& r) {
      const auto obs = refine::make_obstacles(req.scenario, obs_cfg.include_dynamic, obs_cfg.dynamic_radius);
      double c = 0.0;
      for (const auto& raw : r.raw) c += refine::collision_cost(raw, basis, obs, obs_cfg.d_safe);
      out->mean_raw_collision += c / static_cast<double>(r.raw.size());
      ++out->plans;
      out->plan_ms.push_back(r.ms_total);
    });
    // Keep the pipeline alive as long as the closure.
    return [pipeline, inner](const sim::PlanRequest& req) { return inner(req); };
  };
  report.episodes = run_episodes(worlds, cfg.variants, cfg.runs, cfg.seed, cfg.sim, factory);
  report.rows = aggregate(report.episodes);
  return report;
}

std::vector<HlpPair> hlp_comparison(const std::vector<DatasetRecord>& scenes, const flow::FlowModel& flow,
                                    const scorer::ScorerModel& scorer, const bernstein::BasisMatrix& basis,
                                    const planner::PipelineConfig& pipeline, uint64_t seed) {
  std::vector<HlpPair> out;
  for (size_t i = 0; i < scenes.size(); ++i) {
    const DatasetRecord& rec = scenes[i];
    Rng rng(mix_seed(seed, i));
    scorer::CandidateSet cands;
    try {
      cands = scorer::generate_candidates(flow, rec.scenario, basis, pipeline.sample, pipeline.refine_cfg, rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kGeneration) throw;
    }
    if (cands.size() < 2) continue;
    const Eigen::MatrixX2d expert = scorer::expert_on_grid(rec, basis);
    const int by_scorer = scorer::select_best(scorer.score(cands, rec.scenario));
    const int by_cost = cost_select(cands.coeffs, rec.scenario, basis, pipeline.weights, pipeline.sample.d_safe,
                                    pipeline.refine_cfg.v_max, pipeline.sample.include_dynamic,
                                    pipeline.sample.dynamic_radius);
    out.push_back({rec.meta.scene_id, hlp(cands.trajectories[static_cast<size_t>(by_scorer)], expert),
                   hlp(cands.trajectories[static_cast<size_t>(by_cost)], expert)});
  }
  return out;
}

std::string hlp_svg(const std::vector<HlpPair>& pairs) {
  const double bar = 8.0, gap = 6.0, left = 50.0, top = 30.0, height = 220.0;
  const double width = left + static_cast<double>(pairs.size()) * (2 * bar + gap) + 20.0;
  double vmax = 1e-9;
  for (const auto& p : pairs) vmax = std::max({vmax, p.hlp_scorer, p.hlp_cost});
  std::ostringstream s;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"10\">\n",
                std::max(width, 260.0), top + height + 40.0);
  s << buf;
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<text x=\"%.0f\" y=\"16\">HLP per scene (m), lower is closer to the demonstration</text>\n", left);
  s << buf;
  std::snprintf(buf, sizeof(buf), "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", left,
                top + height, width - 10.0, top + height);
  s << buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"4\" y=\"%.1f\">%.2f</text>\n<text x=\"4\" y=\"%.1f\">0</text>\n", top + 4.0,
                vmax, top + height);
  s << buf;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const double x = left + static_cast<double>(i) * (2 * bar + gap);
    const double hs = height * pairs[i].hlp_scorer / vmax;
    const double hc = height * pairs[i].hlp_cost / vmax;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#2b7bb9\"/>\n"
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#e08a2c\"/>\n",
                  x, top + height - hs, bar, hs, x + bar, top + height - hc, bar, hc);
    s << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"%.0f\" y=\"%.0f\" width=\"10\" height=\"10\" fill=\"#2b7bb9\"/><text x=\"%.0f\" y=\"%.0f\">scorer</text>\n"
                "<rect x=\"%.0f\" y=\"%.0f\" width=\"10\" height=\"10\" fill=\"#e08a2c\"/><text x=\"%.0f\" y=\"%.0f\">cost function</text>\n",
                left, top + height + 15, left + 14, top + height + 24, left + 80, top + height + 15, left + 94,
                top + height + 24);
  s << buf << "</svg>\n";
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path);
}

}  // namespace crowdfm::eval
