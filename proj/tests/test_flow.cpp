#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "crowdfm/flow_model.hpp"
#include "crowdfm/scorer.hpp"
#include "helpers.hpp"

using namespace crowdfm;
using namespace crowdfm::flow;

namespace {

struct ConstantField : VectorField {
  Eigen::VectorXd c;
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& z, double, const Tensor&) const override {
    Eigen::MatrixXd out(z.rows(), z.cols());
    for (long i = 0; i < z.rows(); ++i) out.row(i) = c.transpose();
    return out;
  }
};

// Conditional-path velocity towards a single known target.
struct OracleField : VectorField {
  Eigen::VectorXd z1;
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& z, double tau, const Tensor&) const override {
    Eigen::MatrixXd out(z.rows(), z.cols());
    for (long i = 0; i < z.rows(); ++i) out.row(i) = (z1.transpose() - z.row(i)) / (1.0 - tau);
    return out;
  }
};

// Sends row 1 to infinity.
struct BlowUpField : VectorField {
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& z, double, const Tensor&) const override {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    if (z.rows() > 1) out(1, 0) = std::numeric_limits<double>::infinity();
    return out;
  }
};

FlowNetConfig tiny_config() {
  FlowNetConfig cfg;
  cfg.d_model = 16;
  cfg.fusion_heads = 4;
  cfg.fusion_layers = 1;
  cfg.dyn_heads = 2;
  cfg.dyn_layers = 1;
  cfg.unet_channels = {8, 16};
  cfg.time_dim = 8;
  return cfg;
}

Standardizer test_standardizer(Rng& rng) {
  Standardizer s = Standardizer::identity(22);
  for (int i = 0; i < 22; ++i) {
    s.mean[i] = rng.uniform(-1, 1);
    s.std[i] = rng.uniform(0.2, 2.0);
  }
  return s;
}

std::vector<double> initial_z(uint64_t seed, int k, int dim) {
  Rng rng(seed);
  std::vector<double> z;
  for (int i = 0; i < k * dim; ++i) z.push_back(rng.normal());
  return z;
}

}  // namespace

TEST_CASE("zero field leaves the initial draws in place") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  Rng srng(1);
  const auto st = test_standardizer(srng);
  ConstantField f;
  f.c = Eigen::VectorXd::Zero(22);
  SampleConfig cfg;
  cfg.num_candidates = 4;
  Rng rng(42);
  const auto out = sample_candidates(f, Tensor(), Scenario::empty(8, 2), st, basis, cfg, rng);
  const auto z0 = initial_z(42, 4, 22);
  REQUIRE(out.size() == 4);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd z(22);
    for (int j = 0; j < 22; ++j) z[j] = z0[i * 22 + j];
    CHECK(out[i].flat() == st.to_xi(z));
  }
}

TEST_CASE("constant field is integrated exactly") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  Rng srng(2);
  const auto st = test_standardizer(srng);
  ConstantField f;
  f.c = Eigen::VectorXd::LinSpaced(22, -1.0, 2.0);
  for (int steps : {1, 5, 16}) {
    SampleConfig cfg;
    cfg.num_candidates = 3;
    cfg.steps = steps;
    Rng rng(7);
    const auto out = sample_candidates(f, Tensor(), Scenario::empty(8, 2), st, basis, cfg, rng);
    const auto z0 = initial_z(7, 3, 22);
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd z(22);
      for (int j = 0; j < 22; ++j) z[j] = z0[i * 22 + j] + f.c[j];
      CHECK((out[i].flat() - st.to_xi(z)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("the conditional oracle field has zero CFM loss") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    OracleField f;
    f.z1 = Eigen::VectorXd::Random(22);
    const std::vector<FlowSample> batch{{f.z1, Tensor()}};
    CHECK(cfm_loss_value(f, batch, rng) < 1e-20);
  }
  ConstantField zero;
  zero.c = Eigen::VectorXd::Zero(22);
  CHECK(cfm_loss_value(zero, {{Eigen::VectorXd::Ones(22), Tensor()}}, rng) > 0.0);
}

TEST_CASE("guidance lowers the collision cost of paired samples") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  Standardizer st = Standardizer::identity(22);
  st.mean = testing::forward_coeffs(*std::make_unique<Rng>(0), 10, 4.0).flat();
  st.mean.segment(12, 10).setZero();
  st.std.setConstant(0.3);
  st.std[0] = st.std[11] = 1e-3;
  auto s = Scenario::empty(64, 4);
  s.pointcloud_len = 10;
  for (int i = 0; i < 10; ++i) s.pointcloud[i] = {2.0f, static_cast<float>(-0.45 + 0.1 * i)};
  s.pad();
  const auto obs = refine::make_obstacles(s);
  ConstantField zero;
  zero.c = Eigen::VectorXd::Zero(22);
  int improved = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SampleConfig plain;
    plain.num_candidates = 1;
    SampleConfig guided = plain;
    guided.guidance_scale = 20.0;
    Rng r1(seed), r2(seed);
    const auto a = sample_candidates(zero, Tensor(), s, st, basis, plain, r1);
    const auto b = sample_candidates(zero, Tensor(), s, st, basis, guided, r2);
    const double ca = refine::collision_cost(a[0], basis, obs, 0.5);
    const double cb = refine::collision_cost(b[0], basis, obs, 0.5);
    CHECK(cb <= ca);
    improved += cb < ca;
  }
  CHECK(improved >= 15);
}

TEST_CASE("non-finite candidates are dropped and reported") {
  const auto basis = bernstein::canonical_basis(10, 5.0, 50);
  BlowUpField f;
  SampleConfig cfg;
  cfg.num_candidates = 3;
  Rng rng(1);
  std::vector<int> dropped;
  const auto out = sample_candidates(f, Tensor(), Scenario::empty(8, 2), Standardizer::identity(22), basis, cfg, rng, &dropped);
  CHECK(out.size() == 2);
  CHECK(dropped == std::vector<int>{1});
  cfg.num_candidates = 0;
  CHECK_THROWS_AS(sample_candidates(f, Tensor(), Scenario::empty(8, 2), Standardizer::identity(22), basis, cfg, rng), Error);
}

TEST_CASE("standardizer fit and inverse") {
  Rng rng(4);
  std::vector<bernstein::TrajectoryCoeffs> targets;
  for (int i = 0; i < 50; ++i) {
    auto c = testing::random_coeffs(rng, 10);
    c.cx[0] = c.cy[0] = 0.0;
    targets.push_back(c);
  }
  const auto st = Standardizer::fit(targets);
  CHECK(st.std[0] == 1e-3);
  CHECK(st.std[11] == 1e-3);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(22);
  for (const auto& t : targets) mean += t.flat();
  mean /= 50.0;
  CHECK((st.mean - mean).norm() < 1e-12);
  const Eigen::VectorXd xi = targets[3].flat();
  CHECK((st.to_xi(st.to_z(xi)) - xi).norm() < 1e-12);
  CHECK(Standardizer::from_json(st.to_json()).std == st.std);
}

TEST_CASE("row and channel layouts are inverse") {
  Rng rng(5);
  std::vector<float> v(3 * 22);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  const Tensor rows = Tensor::from_data({3, 22}, v);
  const Tensor ch = rows_to_channels(rows, 10);
  CHECK(ch.rows() == 2);
  CHECK(ch.cols() == 33);
  CHECK(ch.at(1, 11 + 4) == rows.at(1, 11 + 4));  // cy[4] of row 1
  const Tensor back = channels_to_rows(ch, 10);
  for (size_t i = 0; i < v.size(); ++i) CHECK(back.data()[i] == v[i]);
}

TEST_CASE("batched field evaluation equals one-at-a-time") {
  FlowModel model(tiny_config(), 3);
  Rng rng(6);
  const auto s = testing::random_scenario(rng, 32, 4, 20, 3);
  ad::NoGradGuard ng;
  const Tensor ctx = model.encode(s);
  CHECK(ctx.rows() == 3);
  CHECK(ctx.cols() == 16);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(4, 22);
  const Eigen::MatrixXd all = model.evaluate(z, 0.3, ctx);
  for (int i = 0; i < 4; ++i) {
    const Eigen::MatrixXd one = model.evaluate(z.row(i), 0.3, ctx);
    CHECK((one.row(0) - all.row(i)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("flow checkpoint round trip and resumed training match") {
  Rng rng(8);
  std::vector<DatasetRecord> data;
  for (int i = 0; i < 6; ++i) {
    DatasetRecord r;
    r.scenario = testing::random_scenario(rng, 32, 4, 10, 2);
    r.target_coeffs = testing::forward_coeffs(rng, 10);
    data.push_back(r);
  }
  std::vector<bernstein::TrajectoryCoeffs> targets;
  for (const auto& r : data) targets.push_back(r.target_coeffs);

  FlowTrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 2;
  FlowModel straight(tiny_config(), 9);
  straight.standardizer = Standardizer::fit(targets);
  train_flow(straight, data, tc);

  const auto path = (std::filesystem::temp_directory_path() / "crowdfm_flow_resume.ckpt").string();
  FlowModel first(tiny_config(), 9);
  first.standardizer = Standardizer::fit(targets);
  tc.steps = 2;
  tc.checkpoint_path = path;
  train_flow(first, data, tc);
  auto resumed = FlowModel::load(path, true);
  CHECK(resumed->params().adam_steps() == 2);
  tc.steps = 4;
  tc.checkpoint_path.clear();
  train_flow(*resumed, data, tc);
  CHECK(resumed->params().snapshot() == straight.params().snapshot());
  CHECK(resumed->standardizer.mean == straight.standardizer.mean);

  // A scorer checkpoint is not a flow checkpoint.
  scorer::ScorerConfig sc;
  sc.d_model = 16;
  sc.heads = 4;
  sc.layers = 1;
  sc.dyn_heads = 2;
  sc.dyn_layers = 1;
  scorer::ScorerModel scorer_model(sc, 1);
  scorer_model.save(path);
  CHECK_THROWS_AS(FlowModel::load(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("training reduces the CFM loss on a small fixed set") {
  Rng rng(10);
  std::vector<DatasetRecord> data;
  for (int i = 0; i < 8; ++i) {
    DatasetRecord r;
    r.scenario = testing::random_scenario(rng, 32, 4, 10, 2);
    r.target_coeffs = testing::forward_coeffs(rng, 10);
    data.push_back(r);
  }
  std::vector<bernstein::TrajectoryCoeffs> targets;
  for (const auto& r : data) targets.push_back(r.target_coeffs);
  FlowModel model(tiny_config(), 11);
  model.standardizer = Standardizer::fit(targets);
  FlowTrainConfig tc;
  tc.steps = 300;
  tc.batch_size = 8;
  tc.adam.lr = 3e-3f;
  const auto log = train_flow(model, data, tc);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) head += log.loss[i].second / 20.0;
  for (int i = 0; i < 50; ++i) tail += log.loss[log.loss.size() - 1 - i].second / 50.0;
  CHECK(tail < 0.8 * head);
}

TEST_CASE("flow config validation") {
  FlowNetConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.d_model = 60;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = FlowNetConfig{};
  cfg.time_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(FlowNetConfig::from_json(FlowNetConfig{}.to_json()).to_json() == FlowNetConfig{}.to_json());
}
