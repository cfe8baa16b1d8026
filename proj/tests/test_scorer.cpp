#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "crowdfm/scorer.hpp"
#include "helpers.hpp"

using namespace crowdfm;
using namespace crowdfm::scorer;

namespace {

CandidateSet random_set(Rng& rng, int k, const bernstein::BasisMatrix& basis) {
  std::vector<bernstein::TrajectoryCoeffs> c;
  std::vector<double> costs;
  for (int i = 0; i < k; ++i) {
    c.push_back(testing::forward_coeffs(rng, 10, rng.uniform(2.0, 5.0)));
    costs.push_back(rng.uniform(0.0, 3.0));
  }
  return CandidateSet::build(std::move(c), std::move(costs), basis);
}

std::vector<int> random_perm(Rng& rng, int k) {
  std::vector<int> p(k);
  std::iota(p.begin(), p.end(), 0);
  for (int i = k; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_int(0, i - 1)]);
  return p;
}

}  // namespace

TEST_CASE("scores permute exactly with the candidates") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  ScorerModel model(ScorerConfig{}, 1);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = rng.uniform_int(2, 12);
    const auto set = random_set(rng, k, basis);
    const auto s = testing::random_scenario(rng, 128, 10, rng.uniform_int(0, 128), rng.uniform_int(0, 10));
    const auto perm = random_perm(rng, k);
    const auto a = model.score(set, s);
    const auto b = model.score(set.permuted(perm), s);
    for (int i = 0; i < k; ++i) CHECK(b[i] == a[perm[i]]);
  }
}

TEST_CASE("cross entropy of uniform scores is ln K") {
  for (int k = 2; k <= 16; ++k) {
    const Tensor s = Tensor::from_data({1, k}, std::vector<float>(k, 1.25f));
    const std::vector<double> costs(k, 0.0);
    CHECK(std::abs(scorer_loss(s, 0, costs, 0.1).item() - std::log(static_cast<double>(k))) < 1e-6);
    CHECK(std::abs(scorer_loss_value(std::vector<double>(k, 1.25), k - 1, costs, 0.1) - std::log(static_cast<double>(k))) < 1e-12);
  }
}

TEST_CASE("loss terms and gradient") {
  const std::vector<double> scores{0.3, -1.2, 2.0, 0.5};
  const std::vector<double> costs{1.0, 0.0, 3.0, 2.0};
  std::vector<float> f(scores.begin(), scores.end());
  Tensor t = Tensor::from_data({1, 4}, f, true);
  const Tensor loss = scorer_loss(t, 2, costs, 0.1);
  double z = 0.0;
  for (double s : scores) z += std::exp(s);
  const double ce = std::log(z) - scores[2];
  CHECK(loss.item() == doctest::Approx(ce + 0.1 * 1.5).epsilon(1e-6));
  CHECK(scorer_loss_value(scores, 2, costs, 0.1) == doctest::Approx(ce + 0.15).epsilon(1e-12));
  loss.backward();
  for (int i = 0; i < 4; ++i) CHECK(t.grad()[i] == doctest::Approx(std::exp(scores[i]) / z - (i == 2)).epsilon(1e-5));

  const Tensor weighted = scorer_loss(Tensor::from_data({1, 4}, f), 2, costs, 0.0, true);
  CHECK(weighted.item() == doctest::Approx(ce / 4.0).epsilon(1e-6));
  CHECK_THROWS_AS(scorer_loss(t, 4, costs, 0.1), Error);
}

TEST_CASE("label is the candidate closest to the expert, lowest index on ties") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  Rng rng(3);
  const auto set = random_set(rng, 6, basis);
  const Eigen::MatrixX2d expert = set.trajectories[4].array() + 0.01;
  CHECK(label_closest(set, expert) == 4);

  auto dup = set.coeffs;
  dup[1] = dup[4];
  const auto with_tie = CandidateSet::build(dup, set.refine_costs, basis);
  CHECK(label_closest(with_tie, expert) == 1);
  CHECK_THROWS_AS(label_closest(set, Eigen::MatrixX2d::Zero(10, 2)), Error);
}

TEST_CASE("select_best picks the first maximum") {
  CHECK(select_best({0.1, 0.7, 0.7, -1.0}) == 1);
  CHECK(select_best({5.0}) == 0);
  CHECK_THROWS_AS(select_best({}), Error);
}

TEST_CASE("expert resampling interpolates linearly") {
  Eigen::MatrixX2d xy(3, 2);
  xy << 0, 0, 1, 2, 3, 2;
  Eigen::VectorXd src(3), dst(4);
  src << 0.0, 1.0, 2.0;
  dst << 0.0, 0.5, 1.5, 2.5;
  const auto out = resample_expert(xy, src, dst);
  CHECK(out(1, 0) == doctest::Approx(0.5));
  CHECK(out(1, 1) == doctest::Approx(1.0));
  CHECK(out(2, 0) == doctest::Approx(2.0));
  CHECK(out(3, 0) == doctest::Approx(3.0));
}

TEST_CASE("scoring needs at least two candidates") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  ScorerModel model(ScorerConfig{}, 1);
  Rng rng(4);
  const auto one = random_set(rng, 1, basis);
  CHECK_THROWS_AS(model.score(one, Scenario::empty(128, 10)), Error);
}

TEST_CASE("scorer checkpoint round trip") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  ScorerConfig cfg;
  cfg.reg_weight = 0.3;
  ScorerModel model(cfg, 5);
  const auto path = (std::filesystem::temp_directory_path() / "crowdfm_scorer.ckpt").string();
  model.save(path);
  const auto back = ScorerModel::load(path);
  CHECK(back->config().reg_weight == 0.3);
  Rng rng(6);
  const auto set = random_set(rng, 5, basis);
  const auto s = testing::random_scenario(rng, 128, 10, 30, 4);
  CHECK(back->score(set, s) == model.score(set, s));
  std::filesystem::remove(path);
}

TEST_CASE("a few optimizer steps fit a single fixed label") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  ScorerConfig cfg;
  cfg.d_model = 32;
  cfg.layers = 1;
  ScorerModel model(cfg, 7);
  Rng rng(8);
  // Well separated laterally so the label is learnable from geometry alone.
  std::vector<bernstein::TrajectoryCoeffs> c;
  for (int i = 0; i < 6; ++i) {
    auto ci = testing::forward_coeffs(rng, 10, 4.0);
    for (int j = 1; j <= 10; ++j) ci.cy[j] += 0.8 * (i - 2.5) * j / 10.0;
    c.push_back(ci);
  }
  const auto set = CandidateSet::build(c, std::vector<double>(6, 0.0), basis);
  const auto s = testing::random_scenario(rng, 128, 10, 30, 4);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 60; ++step) {
    const Tensor loss = scorer_loss(model.scores(set, s), 3, set.refine_costs, 0.0);
    if (step == 0) first = loss.item();
    last = loss.item();
    loss.backward();
    model.params().adam_step({1e-3f});
  }
  CHECK(last < 0.5 * first);
  CHECK(select_best(model.score(set, s)) == 3);
}
