#pragma once

// Directly coded special cases, written without the engine's pattern/matrix
// machinery. They consume the same random streams in the same order, so the
// engine must match them bit for bit.

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "difflearn/netgraph.hpp"
#include "difflearn/problems.hpp"
#include "difflearn/rng.hpp"

namespace reference {

using difflearn::CombinationMatrix;
using difflearn::QuadraticProblem;

/// Adapt-then-combine diffusion: psi_k = w_k - mu grad Q_k(w_k),
/// w_k = sum_l a_lk psi_l. Returns the models (M x K) after every iteration.
inline std::vector<Eigen::MatrixXd> atc_diffusion(const QuadraticProblem& p,
                                                  const CombinationMatrix& A, double mu,
                                                  int iterations, std::uint64_t seed, int rep) {
  const int K = p.agents(), M = p.dim();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(M, K);
  std::vector<Eigen::MatrixXd> out;
  for (int i = 0; i < iterations; ++i) {
    Eigen::MatrixXd psi(M, K);
    for (int k = 0; k < K; ++k) {
      difflearn::Rng rng = difflearn::make_stream(
          seed, difflearn::Stream::sample,
          {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k)});
      std::uniform_int_distribution<int> pick(0, p.samples(k) - 1);
      const int n = pick(rng);
      Eigen::VectorXd wk = w.col(k);
      wk -= mu * p.stochastic_gradient(k, wk, n);
      psi.col(k) = wk;
    }
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(M);
      for (int l = 0; l < K; ++l)
        if (A(l, k) != 0.0) acc += A(l, k) * psi.col(l);
      w.col(k) = acc;
    }
    out.push_back(w);
  }
  return out;
}

/// Federated averaging with every agent participating: T local SGD steps
/// from the common model, then the server average (1/K) sum_l phi_l.
inline std::vector<Eigen::MatrixXd> fedavg_full(const QuadraticProblem& p, double mu, int T,
                                                int rounds, std::uint64_t seed, int rep) {
  const int K = p.agents(), M = p.dim();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(M, K);
  std::vector<Eigen::MatrixXd> out;
  const double weight = 1.0 / K;
  for (int i = 0; i < rounds; ++i) {
    Eigen::MatrixXd phi(M, K);
    for (int k = 0; k < K; ++k) {
      difflearn::Rng rng = difflearn::make_stream(
          seed, difflearn::Stream::sample,
          {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k)});
      std::uniform_int_distribution<int> pick(0, p.samples(k) - 1);
      Eigen::VectorXd wk = w.col(k);
      for (int t = 0; t < T; ++t) wk -= mu * p.stochastic_gradient(k, wk, pick(rng));
      phi.col(k) = wk;
    }
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(M);
    for (int l = 0; l < K; ++l) avg += weight * phi.col(l);
    for (int k = 0; k < K; ++k) w.col(k) = avg;
    out.push_back(w);
  }
  return out;
}

}  // namespace reference
