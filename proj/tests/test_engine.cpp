#include <gtest/gtest.h>

#include "difflearn/engine.hpp"
#include "reference.hpp"

using namespace difflearn;

namespace {

QuadraticProblem desk() {
  GenerationSpec g;
  g.seed = 7;
  return generate_synthetic(g);
}

std::vector<Eigen::MatrixXd> engine_models(const QuadraticProblem& p, const ParticipationPlan& plan,
                                           const SimulationConfig& cfg, int blocks, int rep = 0) {
  BlockRunner r(p, plan, cfg, rep, Eigen::VectorXd::Zero(p.dim()));
  std::vector<Eigen::MatrixXd> out;
  for (int i = 0; i < blocks; ++i) {
    r.advance();
    out.push_back(r.state().models);
  }
  return out;
}

}  // namespace

TEST(Config, Validation) {
  SimulationConfig c;
  c.mu = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.blocks = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.local_steps = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Presets, StandardDiffusionMatchesReference) {
  const auto p = desk();
  const auto A = build_metropolis(random_geometric_topology(8, 0.8, 7));
  const auto pre = apply_preset(Preset::standard_diffusion, A, ActivationModel::uniform(8, 0.3), 9);
  EXPECT_EQ(pre.local_steps, 1);
  SimulationConfig cfg;
  cfg.mu = 0.01;
  cfg.local_steps = pre.local_steps;
  cfg.seed = 42;
  const auto got = engine_models(p, pre.plan, cfg, 50, 2);
  const auto want = reference::atc_diffusion(p, A, 0.01, 50, 42, 2);
  for (int i = 0; i < 50; ++i) ASSERT_TRUE(got[i] == want[i]) << "block " << i;
}

TEST(Presets, FedAvgFullMatchesReference) {
  const auto p = desk();
  const auto A = build_metropolis(ring_topology(8));
  const auto pre = apply_preset(Preset::fedavg_full, A, ActivationModel::uniform(8, 0.3), 4);
  SimulationConfig cfg;
  cfg.mu = 0.02;
  cfg.local_steps = pre.local_steps;
  cfg.seed = 5;
  const auto got = engine_models(p, pre.plan, cfg, 40);
  const auto want = reference::fedavg_full(p, 0.02, 4, 40, 5, 0);
  for (int i = 0; i < 40; ++i) ASSERT_TRUE(got[i] == want[i]) << "block " << i;
}

TEST(Presets, FedAvgPartialWithAllAgentsIsFull) {
  const auto p = desk();
  const auto A = build_metropolis(ring_topology(8));
  const auto model = ActivationModel::uniform(8, 0.5);
  const auto full = apply_preset(Preset::fedavg_full, A, model, 3);
  const auto part = apply_preset(Preset::fedavg_partial, A, model, 3, 8);
  SimulationConfig cfg;
  cfg.local_steps = 3;
  const auto a = engine_models(p, full.plan, cfg, 30);
  const auto b = engine_models(p, part.plan, cfg, 30);
  for (int i = 0; i < 30; ++i) ASSERT_TRUE(a[i] == b[i]) << "block " << i;
  EXPECT_THROW(apply_preset(Preset::fedavg_partial, A, model, 3, 9), InvalidArgument);
  EXPECT_THROW(apply_preset(Preset::fedavg_partial, A, model, 3, 0), InvalidArgument);
}

TEST(Presets, Shapes) {
  const auto A = build_metropolis(ring_topology(5));
  const auto model = ActivationModel::uniform(5, 0.4);
  EXPECT_EQ(apply_preset(Preset::async_diffusion, A, model, 7).local_steps, 1);
  EXPECT_EQ(apply_preset(Preset::async_diffusion, A, model, 7).plan.model.probabilities(),
            model.probabilities());
  const auto dfl = apply_preset(Preset::decentralized_fl, A, model, 7);
  EXPECT_EQ(dfl.local_steps, 7);
  EXPECT_EQ(dfl.plan.marginals(), Eigen::VectorXd::Ones(5));
}

TEST(Engine, InactiveAgentsAreFrozen) {
  const auto p = desk();
  const auto A = build_metropolis(random_geometric_topology(8, 0.8, 7));
  const auto plan = bernoulli_plan(A, ActivationModel::uniform(8, 0.4));
  SimulationConfig cfg;
  cfg.local_steps = 3;
  BlockRunner r(p, plan, cfg, 0, Eigen::Vector2d(0.5, -0.5));
  for (int i = 0; i < 5; ++i) r.advance();
  for (int i = 0; i < 200; ++i) {
    const Eigen::MatrixXd before = r.state().models;
    const auto pat = r.advance();
    for (int k = 0; k < 8; ++k)
      if (!pat.active(k)) ASSERT_TRUE(r.state().models.col(k) == before.col(k));
  }
}

TEST(Engine, CombinationPreservesMass) {
  // tiny step: the adapt phase is a no-op and each block is models * A_i
  const auto p = desk();
  const auto A = build_metropolis(random_geometric_topology(8, 0.8, 7));
  const auto plan = bernoulli_plan(A, ActivationModel::uniform(8, 0.6));
  SimulationConfig cfg;
  cfg.mu = 1e-300;
  cfg.local_steps = 1;
  BlockRunner r(p, plan, cfg, 0, Eigen::Vector2d(1.0, 2.0));
  for (int i = 0; i < 100; ++i) {
    const Eigen::MatrixXd before = r.state().models;
    const auto pat = r.advance();
    const Eigen::MatrixXd a = plan.combine_matrix(pat).weights;
    EXPECT_LE((before * a - r.state().models).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(r.state().models.rowwise().sum()(0), before.rowwise().sum()(0), 1e-12);
  }
}

TEST(Engine, CompleteGraphFullParticipationIsCentralizedGd) {
  // deterministic gradients, uniform averaging, T = 1: every agent holds the
  // same model w <- w - mu (1/K) sum_k grad J_k(w)
  const auto p = desk();
  const auto plan = bernoulli_plan(uniform_average_matrix(8), ActivationModel::uniform(8, 1.0));
  SimulationConfig cfg;
  cfg.mu = 0.05;
  cfg.local_steps = 1;
  cfg.deterministic_gradient = true;
  BlockRunner r(p, plan, cfg, 0, Eigen::Vector2d::Zero());
  Eigen::VectorXd w = Eigen::Vector2d::Zero();
  for (int i = 0; i < 300; ++i) {
    r.advance();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(2);
    for (int k = 0; k < 8; ++k) g += p.local_gradient(k, w);
    w -= cfg.mu * g / 8;
    for (int k = 0; k < 8; ++k) ASSERT_LE((r.state().models.col(k) - w).norm(), 1e-12);
  }
  EXPECT_LE((w - p.unweighted_minimizer()).norm(), 1e-6);
}

TEST(Engine, SmallStepConvergesToTarget) {
  // deterministic gradients: no noise floor, only the O(mu) bias remains
  const auto p = desk();
  const auto A = build_metropolis(random_geometric_topology(8, 0.8, 7));
  const auto plan = bernoulli_plan(A, ActivationModel::uniform(8, 1.0));
  double previous = 1e300;
  for (double mu : {0.02, 0.005}) {
    SimulationConfig cfg;
    cfg.mu = mu;
    cfg.local_steps = 1;
    cfg.deterministic_gradient = true;
    cfg.blocks = static_cast<int>(40.0 / mu);
    const auto tr = run(cfg, p, plan);
    const double last = tr.msd.back();
    EXPECT_LT(last, previous);
    previous = last;
  }
  EXPECT_LT(previous, 1e-4);
}

TEST(Engine, BatchAveragingReducesNoise) {
  const auto p = desk();
  const auto A = build_metropolis(random_geometric_topology(8, 0.8, 7));
  const auto plan = bernoulli_plan(A, ActivationModel::uniform(8, 1.0));
  SimulationConfig cfg;
  cfg.mu = 0.01;
  cfg.local_steps = 1;
  cfg.blocks = 20000;
  cfg.init = InitRule::at_target();
  const double one = measure_msd(run(cfg, p, plan)).msd;
  cfg.batch = 10;
  const double ten = measure_msd(run(cfg, p, plan)).msd;
  EXPECT_LT(ten, 0.5 * one);
}

TEST(Engine, Determinism) {
  const auto p = desk();
  const auto A = build_metropolis(random_geometric_topology(8, 0.8, 7));
  const auto plan = bernoulli_plan(A, ActivationModel::uniform_random(8, 0.3, 1.0, 2));
  SimulationConfig cfg;
  cfg.blocks = 300;
  cfg.repetitions = 3;
  const auto a = run(cfg, p, plan);
  cfg.threads = 3;
  const auto b = run(cfg, p, plan);
  EXPECT_EQ(a.msd, b.msd);
  EXPECT_EQ(a.pattern_digests, b.pattern_digests);
  EXPECT_TRUE(a.final_models == b.final_models);
  cfg.seed = 2;
  EXPECT_NE(run(cfg, p, plan).msd, a.msd);
}

TEST(Engine, RepetitionReplay) {
  // a single repetition can be replayed in isolation
  const auto p = desk();
  const auto plan = bernoulli_plan(build_metropolis(ring_topology(8)), ActivationModel::uniform(8, 0.5));
  SimulationConfig cfg;
  const auto a = engine_models(p, plan, cfg, 20, 4);
  const auto b = engine_models(p, plan, cfg, 20, 4);
  const auto c = engine_models(p, plan, cfg, 20, 3);
  EXPECT_TRUE(a.back() == b.back());
  EXPECT_FALSE(a.back() == c.back());
}

TEST(Engine, DivergenceIsReported) {
  const auto p = desk();
  const auto plan = bernoulli_plan(build_metropolis(ring_topology(8)), ActivationModel::uniform(8, 1.0));
  SimulationConfig cfg;
  cfg.mu = 5.0;
  cfg.blocks = 2000;
  try {
    run(cfg, p, plan);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}

TEST(Engine, MismatchedInputsRejected) {
  const auto p = desk();
  const auto plan = bernoulli_plan(build_metropolis(ring_topology(5)), ActivationModel::uniform(5, 1.0));
  EXPECT_THROW(BlockRunner(p, plan, SimulationConfig{}, 0, Eigen::Vector2d::Zero()), InvalidArgument);
  const auto ok = bernoulli_plan(build_metropolis(ring_topology(8)), ActivationModel::uniform(8, 1.0));
  EXPECT_THROW(BlockRunner(p, ok, SimulationConfig{}, 0, Eigen::Vector3d::Zero()), InvalidArgument);
}

TEST(Engine, ReferencePoint) {
  const auto p = desk();
  const auto model = ActivationModel::uniform_random(8, 0.2, 1.0, 3);
  const auto plan = bernoulli_plan(build_metropolis(ring_topology(8)), model);
  EXPECT_LE((reference_point(p, plan, StepMode::plain) - drifted_optimum(p, model)).norm(), 1e-14);
  EXPECT_LE((reference_point(p, plan, StepMode::drift_corrected) - p.unweighted_minimizer()).norm(),
            1e-14);
}

namespace {

TrajectoryRecord synthetic_curve(std::vector<double> msd) {
  TrajectoryRecord tr;
  tr.blocks = static_cast<int>(msd.size()) - 1;
  tr.fourth.assign(msd.size(), 0.0);
  tr.msd = std::move(msd);
  return tr;
}

}  // namespace

TEST(MeasureMsd, ConstantCurve) {
  const auto m = measure_msd(synthetic_curve(std::vector<double>(101, 2.0)));
  EXPECT_EQ(m.window, 20);
  EXPECT_DOUBLE_EQ(m.msd, 2.0);
  EXPECT_TRUE(m.stationary);
}

TEST(MeasureMsd, DriftingCurveIsNotStationary) {
  std::vector<double> c(101);
  for (int i = 0; i <= 100; ++i) c[i] = 1.0 + i;
  const auto m = measure_msd(synthetic_curve(c), 40);
  EXPECT_DOUBLE_EQ(m.msd, (62.0 + 101.0) / 2);
  EXPECT_FALSE(m.stationary);
  EXPECT_THROW(measure_msd(synthetic_curve(c), 101), InvalidArgument);
}

TEST(ConvergenceBlock, FirstCrossing) {
  const auto tr = synthetic_curve({10.0, 5.0, 2.0, 1.05, 1.2, 1.0});
  EXPECT_EQ(convergence_block(tr, 1.0), 3);
  EXPECT_EQ(convergence_block(tr, 0.5), -1);
  EXPECT_EQ(convergence_block(tr, 1.0, 0.0), 5);
}
