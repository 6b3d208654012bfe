#pragma once

// Network topologies and static combination matrices.
//
// A combination matrix here is symmetric, doubly stochastic, supported on the
// adjacency relation, and primitive. Metropolis-Hastings weights give all four
// properties on any connected graph.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "difflearn/errors.hpp"
#include "difflearn/rng.hpp"

namespace difflearn {

/// Undirected graph over K agents; every agent is its own neighbor.
class Topology {
 public:
  explicit Topology(int agents) : k_(agents) {
    if (agents < 1) throw InvalidArgument("topology needs at least one agent");
    adj_.assign(static_cast<std::size_t>(k_) * k_, 0);
    for (int i = 0; i < k_; ++i) adj_[index(i, i)] = 1;
  }

  static Topology from_edges(int agents, const std::vector<std::pair<int, int>>& edges) {
    Topology t(agents);
    for (auto [a, b] : edges) t.connect(a, b);
    return t;
  }

  int agents() const noexcept { return k_; }

  bool adjacent(int a, int b) const { return adj_[index(a, b)] != 0; }

  void connect(int a, int b) {
    if (a < 0 || b < 0 || a >= k_ || b >= k_)
      throw InvalidArgument("edge (" + std::to_string(a) + "," + std::to_string(b) +
                            ") references an agent outside [0," + std::to_string(k_) + ")");
    adj_[index(a, b)] = 1;
    adj_[index(b, a)] = 1;
  }

  /// Neighbor count excluding the agent itself.
  int degree(int k) const {
    int d = 0;
    for (int l = 0; l < k_; ++l)
      if (l != k && adjacent(l, k)) ++d;
    return d;
  }

  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (int a = 0; a < k_; ++a)
      for (int b = a + 1; b < k_; ++b)
        if (adjacent(a, b)) out.emplace_back(a, b);
    return out;
  }

  /// Some (reachable, unreachable) pair when the graph is disconnected.
  std::optional<std::pair<int, int>> unreachable_pair() const {
    std::vector<char> seen(k_, 0);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = 1;
    while (!frontier.empty()) {
      const int k = frontier.front();
      frontier.pop();
      for (int l = 0; l < k_; ++l) {
        if (!seen[l] && adjacent(k, l)) {
          seen[l] = 1;
          frontier.push(l);
        }
      }
    }
    for (int l = 0; l < k_; ++l)
      if (!seen[l]) return std::make_pair(0, l);
    return std::nullopt;
  }

  bool connected() const { return !unreachable_pair().has_value(); }

 private:
  std::size_t index(int a, int b) const {
    return static_cast<std::size_t>(a) * k_ + static_cast<std::size_t>(b);
  }

  int k_;
  std::vector<char> adj_;
};

inline Topology ring_topology(int agents) {
  Topology t(agents);
  if (agents == 2) t.connect(0, 1);
  if (agents > 2)
    for (int k = 0; k < agents; ++k) t.connect(k, (k + 1) % agents);
  return t;
}

inline Topology path_topology(int agents) {
  Topology t(agents);
  for (int k = 0; k + 1 < agents; ++k) t.connect(k, k + 1);
  return t;
}

inline Topology complete_topology(int agents) {
  Topology t(agents);
  for (int a = 0; a < agents; ++a)
    for (int b = a + 1; b < agents; ++b) t.connect(a, b);
  return t;
}

/// Agents placed uniformly in the unit square, linked when within `radius`.
/// Placements are redrawn (from the same seeded stream) until the graph is
/// connected.
inline Topology random_geometric_topology(int agents, double radius, std::uint64_t seed,
                                          int max_attempts = 1000) {
  if (!(radius > 0.0)) throw InvalidArgument("random-geometric radius must be positive");
  Rng rng = make_stream(seed, Stream::topology);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<double> x(agents), y(agents);
    for (int k = 0; k < agents; ++k) {
      x[k] = uniform01(rng);
      y[k] = uniform01(rng);
    }
    Topology t(agents);
    for (int a = 0; a < agents; ++a)
      for (int b = a + 1; b < agents; ++b)
        if (std::hypot(x[a] - x[b], y[a] - y[b]) <= radius) t.connect(a, b);
    if (t.connected()) return t;
  }
  throw InvalidArgument("random-geometric generator produced no connected graph with radius " +
                        std::to_string(radius) + " after " + std::to_string(max_attempts) +
                        " attempts");
}

struct CombinationMatrix {
  Eigen::MatrixXd weights;

  int agents() const noexcept { return static_cast<int>(weights.rows()); }
  double operator()(int l, int k) const { return weights(l, k); }
};

inline CombinationMatrix build_metropolis(const Topology& topology) {
  if (auto pair = topology.unreachable_pair())
    throw InvalidArgument("topology is disconnected: agent " + std::to_string(pair->second) +
                          " is unreachable from agent " + std::to_string(pair->first));
  const int K = topology.agents();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(K, K);
  for (int l = 0; l < K; ++l)
    for (int k = 0; k < K; ++k)
      if (l != k && topology.adjacent(l, k))
        a(l, k) = 1.0 / (1.0 + std::max(topology.degree(l), topology.degree(k)));
  for (int k = 0; k < K; ++k) {
    double off = 0.0;
    for (int l = 0; l < K; ++l)
      if (l != k) off += a(l, k);
    a(k, k) = 1.0 - off;
  }
  return {std::move(a)};
}

/// (1/K) 11^T, the averaging matrix of a central server.
inline CombinationMatrix uniform_average_matrix(int agents) {
  return {Eigen::MatrixXd::Constant(agents, agents, 1.0 / agents)};
}

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }

  const CheckResult& at(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw InvalidArgument("no check named " + name);
  }
};

namespace detail {

// Boolean powers of the support pattern, up to exponent K^2.
inline bool is_primitive(const Eigen::MatrixXd& a, double* zero_entries) {
  const int K = static_cast<int>(a.rows());
  using BoolMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
  BoolMat support = (a.array() > 0.0).cast<int>();
  BoolMat power = support;
  const long limit = static_cast<long>(K) * K;
  for (long m = 1;; ++m) {
    const long zeros = (power.array() == 0).count();
    if (zeros == 0) {
      *zero_entries = 0.0;
      return true;
    }
    if (m >= limit) {
      *zero_entries = static_cast<double>(zeros);
      return false;
    }
    power = ((power * support).array() > 0).cast<int>();
  }
}

}  // namespace detail

inline ValidationReport validate_combination(const CombinationMatrix& A, const Topology& topology,
                                             double tolerance = 1e-12) {
  const Eigen::MatrixXd& a = A.weights;
  const int K = topology.agents();
  if (a.rows() != K || a.cols() != K)
    throw InvalidArgument("combination matrix is " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " but topology has " + std::to_string(K) +
                          " agents");
  ValidationReport report;

  const double negative = std::max(0.0, -a.minCoeff());
  report.checks.push_back({"nonnegative", negative == 0.0, negative});

  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  report.checks.push_back({"symmetric", asym <= tolerance, asym});

  const double col = (a.colwise().sum().array() - 1.0).abs().maxCoeff();
  report.checks.push_back({"column-stochastic", col <= tolerance, col});

  const double row = (a.rowwise().sum().array() - 1.0).abs().maxCoeff();
  report.checks.push_back({"row-stochastic", row <= tolerance, row});

  double outside = 0.0;
  for (int l = 0; l < K; ++l)
    for (int k = 0; k < K; ++k)
      if (!topology.adjacent(l, k)) outside = std::max(outside, std::abs(a(l, k)));
  report.checks.push_back({"support", outside == 0.0, outside});

  double zeros = 0.0;
  const bool primitive = detail::is_primitive(a, &zeros);
  report.checks.push_back({"primitive", primitive, zeros});
  return report;
}

/// Normalized left eigenvector for eigenvalue 1 (p^T A = p^T, sum p = 1),
/// by power iteration from a non-uniform start.
inline Eigen::VectorXd perron_vector(const CombinationMatrix& A, int max_iterations = 200000,
                                     double tolerance = 1e-14) {
  const int K = A.agents();
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(K, 1.0, static_cast<double>(K));
  p /= p.sum();
  const Eigen::MatrixXd at = A.weights.transpose();
  double residual = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::VectorXd next = at * p;
    next /= next.sum();
    residual = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (residual <= tolerance) return p;
  }
  throw NumericalError("perron_vector did not converge; residual " + std::to_string(residual));
}

}  // namespace difflearn
