#include "crowdfm/planner.hpp"

#include <chrono>

#include "crowdfm/evaluation.hpp"

namespace crowdfm::planner {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

PipelinePlanner::PipelinePlanner(const flow::FlowModel& flow, const scorer::ScorerModel* scorer,
                                 const bernstein::BasisMatrix& basis, const PipelineConfig& cfg)
    : flow_(&flow), scorer_(scorer), basis_(basis), cfg_(cfg) {
  if (cfg.selector == Selector::kScorer && !scorer) {
    throw Error(ErrorKind::kConfig, "scorer selection requested without a scorer model");
  }
  if (basis.order != flow.config().order) {
    throw Error(ErrorKind::kConfig, "basis order " + std::to_string(basis.order) + " does not match the flow order " +
                                        std::to_string(flow.config().order));
  }
  if (scorer && scorer->config().order != basis.order) {
    throw Error(ErrorKind::kConfig, "scorer order does not match the basis order");
  }
  cfg.refine_cfg.validate();
}

PlanResult PipelinePlanner::plan(const Scenario& scenario, Rng& rng) const {
  PlanResult out;
  const auto t_start = Clock::now();

  auto t0 = Clock::now();
  ad::Tensor ctx;
  {
    ad::NoGradGuard no_grad;
    ctx = flow_->encode(scenario);
  }
  out.ms_encode = ms_since(t0);

  t0 = Clock::now();
  out.raw = flow::sample_candidates(*flow_, ctx, scenario, flow_->standardizer, basis_, cfg_.sample, rng);
  out.ms_sample = ms_since(t0);

  t0 = Clock::now();
  std::vector<bernstein::TrajectoryCoeffs> coeffs;
  std::vector<double> costs;
  if (cfg_.refine) {
    const auto obs =
        refine::make_obstacles(scenario, cfg_.refine_cfg.include_dynamic, cfg_.refine_cfg.dynamic_radius);
    for (auto& r : refine::refine_all(out.raw, obs, basis_, cfg_.refine_cfg)) {
      coeffs.push_back(std::move(r.coeffs));
      costs.push_back(r.cost);
      out.feasible.push_back(r.feasible);
    }
  } else {
    const auto obs = refine::make_obstacles(scenario, cfg_.sample.include_dynamic, cfg_.sample.dynamic_radius);
    for (const auto& c : out.raw) {
      coeffs.push_back(c);
      costs.push_back(refine::collision_cost(c, basis_, obs, cfg_.sample.d_safe));
      out.feasible.push_back(true);
    }
  }
  out.candidates = scorer::CandidateSet::build(std::move(coeffs), std::move(costs), basis_);
  out.ms_refine = ms_since(t0);

  // Selection is restricted to feasible candidates whenever there is one.
  t0 = Clock::now();
  const int k = out.candidates.size();
  std::vector<int> pool;
  for (int i = 0; i < k; ++i)
    if (out.feasible[static_cast<size_t>(i)]) pool.push_back(i);
  if (pool.empty())
    for (int i = 0; i < k; ++i) pool.push_back(i);

  std::vector<double> value(static_cast<size_t>(k));
  if (cfg_.selector == Selector::kScorer && k >= 2) {
    value = scorer_->score(out.candidates, scenario);
  } else {
    const auto obs = refine::make_obstacles(scenario, cfg_.sample.include_dynamic, cfg_.sample.dynamic_radius);
    for (int i = 0; i < k; ++i) {
      value[static_cast<size_t>(i)] =
          -eval::selection_cost(out.candidates.coeffs[static_cast<size_t>(i)], basis_, obs, scenario, cfg_.weights,
                                cfg_.sample.d_safe, cfg_.refine_cfg.v_max);
    }
  }
  int best = pool.front();
  for (int i : pool)
    if (value[static_cast<size_t>(i)] > value[static_cast<size_t>(best)]) best = i;
  out.selected = best;
  out.trajectory = bernstein::eval_trajectory(out.candidates.coeffs[static_cast<size_t>(best)], basis_);
  out.ms_select = ms_since(t0);
  out.ms_total = ms_since(t_start);
  return out;
}

sim::Planner PipelinePlanner::as_sim_planner(
    std::function<void(const sim::PlanRequest&, const PlanResult&)> observer) const {
  return [this, observer](const sim::PlanRequest& req) {
    Rng rng(mix_seed(cfg_.seed, static_cast<uint64_t>(req.step)));
    PlanResult r = plan(req.scenario, rng);
    if (observer) observer(req, r);
    return sim::PlanOutput{std::move(r.trajectory), r.selected};
  };
}

}  // namespace crowdfm::planner
