#include <gtest/gtest.h>

#include <cmath>

#include "difflearn/participation.hpp"

using namespace difflearn;

namespace {

ActivationPattern pattern(std::initializer_list<int> bits) {
  std::vector<char> a;
  for (int b : bits) a.push_back(static_cast<char>(b));
  return ActivationPattern(a);
}

void expect_doubly_stochastic_symmetric(const Eigen::MatrixXd& a, double tol = 1e-12) {
  EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), tol);
  EXPECT_LE((a.colwise().sum().array() - 1.0).abs().maxCoeff(), tol);
  EXPECT_LE((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), tol);
  EXPECT_GE(a.minCoeff(), 0.0);
}

}  // namespace

TEST(ActivationModel, RejectsOutOfRange) {
  EXPECT_THROW(ActivationModel(Eigen::Vector2d(0.5, 1.5)), InvalidArgument);
  EXPECT_THROW(ActivationModel(Eigen::Vector2d(-0.1, 0.5)), InvalidArgument);
  EXPECT_THROW(ActivationModel::uniform_random(3, 0.8, 0.2, 1), InvalidArgument);
}

TEST(ActivationModel, UniformRandomRange) {
  const auto m = ActivationModel::uniform_random(50, 0.3, 0.7, 4);
  EXPECT_GE(m.probabilities().minCoeff(), 0.3);
  EXPECT_LE(m.probabilities().maxCoeff(), 0.7);
  EXPECT_EQ(m.probabilities(), ActivationModel::uniform_random(50, 0.3, 0.7, 4).probabilities());
}

TEST(SamplePattern, Degenerate) {
  Rng rng = make_stream(1, Stream::pattern);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sample_pattern(ActivationModel::uniform(3, 1.0), rng).count(), 3);
    EXPECT_EQ(sample_pattern(ActivationModel::uniform(2, 0.0), rng).count(), 0);
  }
}

TEST(SamplePattern, EmpiricalRate) {
  // 3 sigma of a binomial rate at n = 1e5 is about 0.0047
  const int n = 100000;
  const auto model = ActivationModel::uniform(4, 0.5);
  Rng rng = make_stream(17, Stream::pattern);
  std::vector<int> hits(4, 0);
  for (int i = 0; i < n; ++i) {
    const auto p = sample_pattern(model, rng);
    for (int k = 0; k < 4; ++k) hits[k] += p.active(k);
  }
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(hits[k] / double(n), 0.5, 0.01);
}

TEST(SamplePattern, ReproduciblePerBlock) {
  const auto model = ActivationModel::uniform_random(10, 0.2, 0.9, 3);
  for (std::uint64_t block = 0; block < 20; ++block) {
    Rng a = make_stream(5, Stream::pattern, {0, block});
    Rng b = make_stream(5, Stream::pattern, {0, block});
    EXPECT_EQ(sample_pattern(model, a), sample_pattern(model, b));
  }
}

TEST(SampleSubset, ExactSize) {
  Rng rng = make_stream(8, Stream::pattern);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_subset(10, 4, rng).count(), 4);
  EXPECT_EQ(sample_subset(5, 5, rng).count(), 5);
}

TEST(EffectiveMatrix, AllActiveReturnsA) {
  const auto A = build_metropolis(random_geometric_topology(7, 0.5, 2));
  const auto e = effective_matrix(A, ActivationPattern::all(7, true), 3, 3);
  EXPECT_EQ(e.weights, A.weights);
}

TEST(EffectiveMatrix, NoneActiveIsIdentity) {
  const auto A = build_metropolis(ring_topology(5));
  const auto e = effective_matrix(A, ActivationPattern::all(5, false), 2, 2);
  EXPECT_EQ(e.weights, Eigen::MatrixXd::Identity(5, 5));
}

TEST(EffectiveMatrix, BeforeLastStepIsIdentity) {
  const auto A = build_metropolis(ring_topology(4));
  for (int t = 1; t < 5; ++t)
    EXPECT_EQ(effective_matrix(A, ActivationPattern::all(4, true), t, 5).weights,
              Eigen::MatrixXd::Identity(4, 4));
}

TEST(EffectiveMatrix, RingWithThirdAgentInactive) {
  const auto A = build_metropolis(ring_topology(3));
  const auto e = effective_matrix(A, pattern({1, 1, 0}), 1, 1);
  Eigen::Matrix3d want;
  want << 2.0 / 3, 1.0 / 3, 0, 1.0 / 3, 2.0 / 3, 0, 0, 0, 1;
  EXPECT_LE((e.weights - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EffectiveMatrix, IsolatedActiveAgentKeepsItself) {
  const auto A = build_metropolis(path_topology(3));
  const auto e = effective_matrix(A, pattern({1, 0, 1}), 1, 1);
  EXPECT_EQ(e.weights, Eigen::MatrixXd::Identity(3, 3));
}

TEST(EffectiveMatrix, StepOutOfRange) {
  const auto A = build_metropolis(ring_topology(3));
  EXPECT_THROW(effective_matrix(A, pattern({1, 1, 1}), 0, 2), InvalidArgument);
  EXPECT_THROW(effective_matrix(A, pattern({1, 1, 1}), 3, 2), InvalidArgument);
  EXPECT_THROW(effective_matrix(A, pattern({1, 1}), 1, 1), InvalidArgument);
}

TEST(EffectiveMatrix, RandomPatternsStayDoublyStochastic) {
  Rng rng = make_stream(31, Stream::oracle);
  for (int trial = 0; trial < 500; ++trial) {
    const int K = 1 + static_cast<int>(rng() % 12);
    const auto A = build_metropolis(random_geometric_topology(K, 0.6, rng()));
    const auto p = sample_pattern(ActivationModel::uniform(K, uniform01(rng)), rng);
    expect_doubly_stochastic_symmetric(effective_matrix(A, p, 1, 1).weights);
  }
}

TEST(StepSize, Plain) {
  const auto s = step_size_matrix(ActivationPattern::all(4, true), 0.01, StepMode::plain,
                                  Eigen::VectorXd::Constant(4, 0.3));
  EXPECT_EQ(s.diag, Eigen::VectorXd::Constant(4, 0.01));
  const auto z = step_size_matrix(ActivationPattern::all(4, false), 0.01, StepMode::plain,
                                  Eigen::VectorXd::Constant(4, 0.3));
  EXPECT_EQ(z.dense(), Eigen::MatrixXd::Zero(4, 4));
}

TEST(StepSize, DriftCorrected) {
  const auto s = step_size_matrix(pattern({1, 0}), 0.01, StepMode::drift_corrected,
                                  Eigen::Vector2d(0.5, 0.9));
  EXPECT_DOUBLE_EQ(s.diag[0], 0.02);
  EXPECT_EQ(s.diag[1], 0.0);
  EXPECT_THROW(step_size_matrix(pattern({1, 1}), 0.01, StepMode::drift_corrected,
                                Eigen::Vector2d(0.5, 0.0)),
               InvalidArgument);
  // q_k = 0 is fine without correction
  EXPECT_NO_THROW(
      step_size_matrix(pattern({1, 1}), 0.01, StepMode::plain, Eigen::Vector2d(0.5, 0.0)));
}

TEST(ExpectedMatrix, Extremes) {
  const auto A = build_metropolis(random_geometric_topology(6, 0.5, 9));
  EXPECT_LE((expected_matrix(A, ActivationModel::uniform(6, 1.0)).weights - A.weights)
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
  EXPECT_EQ(expected_matrix(A, ActivationModel::uniform(6, 0.0)).weights,
            Eigen::MatrixXd::Identity(6, 6));
}

TEST(ExpectedMatrix, TwoAgentPath) {
  const auto A = build_metropolis(path_topology(2));
  const auto e = expected_matrix(A, ActivationModel::uniform(2, 0.5));
  EXPECT_DOUBLE_EQ(e(0, 1), 0.125);
  EXPECT_DOUBLE_EQ(e(0, 0), 0.875);
  expect_doubly_stochastic_symmetric(e.weights);
}

TEST(ExpectedMatrix, MatchesEnumeration) {
  const auto A = build_metropolis(random_geometric_topology(5, 0.6, 4));
  const auto model = ActivationModel::uniform_random(5, 0.1, 0.9, 6);
  const auto plan = bernoulli_plan(A, model);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(5, 5);
  double total = 0.0;
  for (const auto& [p, w] : plan.enumerate()) {
    mean += w * plan.combine_matrix(p).weights;
    total += w;
  }
  EXPECT_NEAR(total, 1.0, 1e-14);
  EXPECT_LE((mean - expected_matrix(A, model).weights).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExpectedStepProduct, Extremes) {
  const auto A = build_metropolis(ring_topology(4));
  const auto full = expected_step_product(A, ActivationModel::uniform(4, 1.0), 0.01);
  EXPECT_LE((full.product - 0.01 * A.weights).cwiseAbs().maxCoeff(), 1e-17);
  const auto none = expected_step_product(A, ActivationModel::uniform(4, 0.0), 0.01);
  EXPECT_LE(none.product.cwiseAbs().maxCoeff(), 1e-18);
  EXPECT_EQ(none.mean_step, Eigen::VectorXd::Zero(4));
}

TEST(ExpectedStepProduct, MatchesEnumeration) {
  const auto A = build_metropolis(path_topology(4));
  const auto model = ActivationModel(Eigen::Vector4d(0.2, 0.5, 0.7, 1.0));
  const auto plan = bernoulli_plan(A, model);
  const double mu = 0.01;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(4, 4);
  for (const auto& [p, w] : plan.enumerate())
    mean += w * plan.combine_matrix(p).weights *
            step_size_matrix(p, mu, StepMode::plain, model.probabilities()).dense();
  EXPECT_LE((mean - expected_step_product(A, model, mu).product).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(ExpectedStepProduct, MonteCarloTwoAgents) {
  // 1e6 patterns; each entry within 3 standard errors of the estimator
  const auto A = build_metropolis(path_topology(2));
  const auto model = ActivationModel::uniform(2, 0.5);
  const double mu = 0.01;
  const int n = 1000000;
  const auto plan = bernoulli_plan(A, model);
  Rng rng = make_stream(3, Stream::pattern);
  Eigen::Matrix2d sum = Eigen::Matrix2d::Zero(), sq = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const auto p = plan.sample(rng);
    const Eigen::Matrix2d x = plan.combine_matrix(p).weights *
                              step_size_matrix(p, mu, StepMode::plain, model.probabilities()).dense();
    sum += x;
    sq += x.cwiseAbs2();
  }
  const Eigen::Matrix2d mean = sum / n;
  const Eigen::Matrix2d se = ((sq / n - mean.cwiseAbs2()) / (n - 1)).cwiseSqrt();
  const Eigen::MatrixXd want = expected_step_product(A, model, mu).product;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_LE(std::abs(mean(i, j) - want(i, j)), 3 * se(i, j) + 1e-18);
}

TEST(Plan, SubsetAverage) {
  const auto plan = ParticipationPlan{uniform_average_matrix(5), ActivationModel::uniform(5, 0.4),
                                      MatrixRule::subset_average, 2};
  EXPECT_EQ(plan.marginals(), Eigen::VectorXd::Constant(5, 0.4));
  const auto all = plan.enumerate();
  EXPECT_EQ(all.size(), 10u);  // C(5, 2)
  for (const auto& [p, w] : all) {
    EXPECT_NEAR(w, 0.1, 1e-15);
    const auto a = plan.combine_matrix(p).weights;
    expect_doubly_stochastic_symmetric(a);
    for (int k = 0; k < 5; ++k)
      if (p.active(k)) EXPECT_DOUBLE_EQ(a(k, k), 0.5);
  }
}

TEST(Plan, EnumerationBudget) {
  const auto plan = bernoulli_plan(build_metropolis(ring_topology(13)), ActivationModel::uniform(13, 0.5));
  EXPECT_THROW(plan.enumerate(12), InvalidArgument);
  EXPECT_THROW(bernoulli_plan(build_metropolis(ring_topology(3)), ActivationModel::uniform(4, 0.5)),
               InvalidArgument);
}
