#pragma once

// Random agent activation per block, the time-varying combination and
// step-size matrices it induces, and their exact expectations.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "difflearn/errors.hpp"
#include "difflearn/netgraph.hpp"
#include "difflearn/rng.hpp"

namespace difflearn {

/// Per-agent activation probabilities q_k in [0, 1].
class ActivationModel {
 public:
  ActivationModel() = default;
  explicit ActivationModel(Eigen::VectorXd q) : q_(std::move(q)) {
    for (Eigen::Index k = 0; k < q_.size(); ++k)
      if (!(q_[k] >= 0.0 && q_[k] <= 1.0))
        throw InvalidArgument("activation probability q[" + std::to_string(k) + "] = " +
                              std::to_string(q_[k]) + " outside [0,1]");
  }

  static ActivationModel uniform(int agents, double q) {
    return ActivationModel(Eigen::VectorXd::Constant(agents, q));
  }

  /// q_k drawn uniformly from [low, high], reproducible under `seed`.
  static ActivationModel uniform_random(int agents, double low, double high, std::uint64_t seed) {
    if (!(low >= 0.0 && high <= 1.0 && low <= high))
      throw InvalidArgument("uniform-random activation range must satisfy 0 <= low <= high <= 1");
    Rng rng = make_stream(seed, Stream::activation);
    Eigen::VectorXd q(agents);
    for (int k = 0; k < agents; ++k) q[k] = low + (high - low) * uniform01(rng);
    return ActivationModel(std::move(q));
  }

  int agents() const noexcept { return static_cast<int>(q_.size()); }
  double operator[](int k) const { return q_[k]; }
  const Eigen::VectorXd& probabilities() const noexcept { return q_; }

 private:
  Eigen::VectorXd q_;
};

/// Which agents take part in one block iteration; fixed for all T local steps.
class ActivationPattern {
 public:
  ActivationPattern() = default;
  explicit ActivationPattern(std::vector<char> active) : active_(std::move(active)) {}

  static ActivationPattern all(int agents, bool value) {
    return ActivationPattern(std::vector<char>(agents, value ? 1 : 0));
  }

  /// Bit k of `mask` is agent k.
  static ActivationPattern from_mask(int agents, std::uint64_t mask) {
    std::vector<char> a(agents);
    for (int k = 0; k < agents; ++k) a[k] = static_cast<char>((mask >> k) & 1U);
    return ActivationPattern(std::move(a));
  }

  int agents() const noexcept { return static_cast<int>(active_.size()); }
  bool active(int k) const { return active_[k] != 0; }
  int count() const { return static_cast<int>(std::count(active_.begin(), active_.end(), 1)); }

  std::uint64_t digest() const {
    std::uint64_t h = mix64(active_.size());
    for (std::size_t k = 0; k < active_.size(); ++k)
      if (active_[k]) h = mix64(h ^ (k + 1));
    return h;
  }

  bool operator==(const ActivationPattern&) const = default;

 private:
  std::vector<char> active_;
};

enum class StepMode { plain, drift_corrected };

/// diag(mu_{1,i}, ..., mu_{K,i}); entry k is zero exactly when k is inactive.
struct StepSizeMatrix {
  Eigen::VectorXd diag;

  Eigen::MatrixXd dense() const { return diag.asDiagonal(); }
};

/// Independent Bernoulli(q_k) draws, agent 0 first.
inline ActivationPattern sample_pattern(const ActivationModel& model, Rng& rng) {
  std::vector<char> a(model.agents());
  for (int k = 0; k < model.agents(); ++k) a[k] = uniform01(rng) < model[k] ? 1 : 0;
  return ActivationPattern(std::move(a));
}

/// Uniformly random subset of exactly `size` agents (partial-participation FedAvg).
inline ActivationPattern sample_subset(int agents, int size, Rng& rng) {
  std::vector<int> order(agents);
  std::iota(order.begin(), order.end(), 0);
  // partial Fisher-Yates on the first `size` slots
  for (int j = 0; j < size; ++j) {
    std::uniform_int_distribution<int> pick(j, agents - 1);
    std::swap(order[j], order[pick(rng)]);
  }
  std::vector<char> a(agents, 0);
  for (int j = 0; j < size; ++j) a[order[j]] = 1;
  return ActivationPattern(std::move(a));
}

/// Combination matrix in force at local step t of a block. Identity for t < T;
/// at t = T an active agent keeps a_{lk} towards active neighbors and absorbs
/// the weight of inactive ones into its self-weight, while an inactive agent
/// keeps only itself.
inline CombinationMatrix effective_matrix(const CombinationMatrix& A,
                                          const ActivationPattern& pattern, int t, int T) {
  const int K = A.agents();
  if (T < 1 || t < 1 || t > T)
    throw InvalidArgument("local step t=" + std::to_string(t) + " outside [1," +
                          std::to_string(T) + "]");
  if (pattern.agents() != K) throw InvalidArgument("pattern size does not match matrix");
  if (t != T) return {Eigen::MatrixXd::Identity(K, K)};

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(K, K);
  for (int k = 0; k < K; ++k) {
    if (!pattern.active(k)) {
      a(k, k) = 1.0;
      continue;
    }
    bool full = true;
    for (int l = 0; l < K; ++l)
      if (l != k && A(l, k) != 0.0 && !pattern.active(l)) full = false;
    if (full) {
      a.col(k) = A.weights.col(k);
      continue;
    }
    double off = 0.0;
    for (int l = 0; l < K; ++l) {
      if (l != k && pattern.active(l)) {
        a(l, k) = A(l, k);
        off += A(l, k);
      }
    }
    a(k, k) = 1.0 - off;
  }
  return {std::move(a)};
}

/// Weights 1/S among the S active agents; inactive agents keep themselves.
inline CombinationMatrix subset_average_matrix(const ActivationPattern& pattern) {
  const int K = pattern.agents();
  const int S = pattern.count();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(K, K);
  for (int k = 0; k < K; ++k) {
    if (!pattern.active(k)) {
      a(k, k) = 1.0;
      continue;
    }
    for (int l = 0; l < K; ++l)
      if (pattern.active(l)) a(l, k) = 1.0 / S;
  }
  return {std::move(a)};
}

inline StepSizeMatrix step_size_matrix(const ActivationPattern& pattern, double mu, StepMode mode,
                                       const Eigen::VectorXd& q) {
  const int K = pattern.agents();
  if (!(mu > 0.0)) throw InvalidArgument("step size must be positive");
  if (mode == StepMode::drift_corrected) {
    if (q.size() != K) throw InvalidArgument("probability vector size does not match pattern");
    for (int k = 0; k < K; ++k)
      if (!(q[k] > 0.0))
        throw InvalidArgument("drift correction needs q_k > 0 for every agent; q[" +
                              std::to_string(k) + "] = " + std::to_string(q[k]));
  }
  Eigen::VectorXd d = Eigen::VectorXd::Zero(K);
  for (int k = 0; k < K; ++k)
    if (pattern.active(k)) d[k] = mode == StepMode::plain ? mu : mu / q[k];
  return {std::move(d)};
}

/// E[A_{(i+1)T}]: off-diagonal q_l q_k a_{lk}, diagonal absorbs the rest.
inline CombinationMatrix expected_matrix(const CombinationMatrix& A, const ActivationModel& model) {
  const int K = A.agents();
  if (model.agents() != K) throw InvalidArgument("activation model size does not match matrix");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(K, K);
  for (int k = 0; k < K; ++k) {
    double off = 0.0;
    for (int l = 0; l < K; ++l) {
      if (l == k) continue;
      a(l, k) = model[l] * model[k] * A(l, k);
      off += a(l, k);
    }
    a(k, k) = 1.0 - off;
  }
  return {std::move(a)};
}

struct ExpectedStepProduct {
  Eigen::MatrixXd product;    // E[A_{(i+1)T} M_i] = mu (Abar - I) + Mbar
  Eigen::VectorXd mean_step;  // diagonal of Mbar = mu q
};

inline ExpectedStepProduct expected_step_product(const CombinationMatrix& A,
                                                 const ActivationModel& model, double mu) {
  const int K = A.agents();
  const CombinationMatrix abar = expected_matrix(A, model);
  Eigen::VectorXd mbar = mu * model.probabilities();
  Eigen::MatrixXd prod = mu * (abar.weights - Eigen::MatrixXd::Identity(K, K));
  prod.diagonal() += mbar;
  return {std::move(prod), std::move(mbar)};
}

/// How the combine step at t = T is formed from a pattern.
enum class MatrixRule {
  partial_neighborhood,  // Bernoulli activation, self-weight absorbs inactive neighbors
  subset_average,        // exactly S active agents averaging with weight 1/S
};

/// Everything the engine and the theory evaluator need to know about the
/// random participation process: base weights, the pattern distribution, and
/// how a pattern becomes a combination matrix.
struct ParticipationPlan {
  CombinationMatrix base;
  ActivationModel model;
  MatrixRule rule = MatrixRule::partial_neighborhood;
  int subset_size = 0;  // only for subset_average

  int agents() const noexcept { return base.agents(); }

  /// Marginal activation probabilities (S/K for uniform subsets).
  Eigen::VectorXd marginals() const {
    if (rule == MatrixRule::subset_average)
      return Eigen::VectorXd::Constant(agents(), static_cast<double>(subset_size) / agents());
    return model.probabilities();
  }

  ActivationPattern sample(Rng& rng) const {
    if (rule == MatrixRule::subset_average) return sample_subset(agents(), subset_size, rng);
    return sample_pattern(model, rng);
  }

  CombinationMatrix combine_matrix(const ActivationPattern& pattern) const {
    if (rule == MatrixRule::subset_average) return subset_average_matrix(pattern);
    return effective_matrix(base, pattern, 1, 1);
  }

  /// Probability of one specific pattern.
  double probability(const ActivationPattern& pattern) const {
    const int K = agents();
    if (rule == MatrixRule::subset_average) {
      if (pattern.count() != subset_size) return 0.0;
      // 1 / C(K, S)
      double c = 1.0;
      for (int j = 0; j < subset_size; ++j) c = c * (K - j) / (j + 1);
      return 1.0 / c;
    }
    double p = 1.0;
    for (int k = 0; k < K; ++k) p *= pattern.active(k) ? model[k] : 1.0 - model[k];
    return p;
  }

  /// Every pattern with nonzero probability, with its probability.
  std::vector<std::pair<ActivationPattern, double>> enumerate(int max_agents = 12) const {
    const int K = agents();
    if (K > max_agents || K > 62)
      throw InvalidArgument("exact enumeration over 2^" + std::to_string(K) +
                            " patterns exceeds the budget (K <= " + std::to_string(max_agents) +
                            "); use monte-carlo mode");
    std::vector<std::pair<ActivationPattern, double>> out;
    const std::uint64_t n = std::uint64_t{1} << K;
    for (std::uint64_t mask = 0; mask < n; ++mask) {
      ActivationPattern p = ActivationPattern::from_mask(K, mask);
      const double w = probability(p);
      if (w > 0.0) out.emplace_back(std::move(p), w);
    }
    return out;
  }
};

inline ParticipationPlan bernoulli_plan(CombinationMatrix A, ActivationModel model) {
  if (model.agents() != A.agents())
    throw InvalidArgument("activation model has " + std::to_string(model.agents()) +
                          " agents but the combination matrix has " + std::to_string(A.agents()));
  return {std::move(A), std::move(model), MatrixRule::partial_neighborhood, 0};
}

}  // namespace difflearn
