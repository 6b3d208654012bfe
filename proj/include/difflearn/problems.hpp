#pragma once

// Regularized least-squares problems with exact oracles.
//
// Agent k holds N_k pairs (u_{k,n}, d_k(n)) and the local risk
//   J_k(w) = (1/N_k) sum_n |d_k(n) - u_{k,n}^T w|^2 + rho ||w||^2,
// whose Hessian H_k = (2/N_k) sum_n u u^T + 2 rho I is constant. The gradient
// noise of single-sample SGD is therefore available in closed form.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "difflearn/errors.hpp"
#include "difflearn/participation.hpp"
#include "difflearn/rng.hpp"

namespace difflearn {

struct RegressionDataset {
  std::vector<Eigen::MatrixXd> inputs;   // agent k: N_k x M, row n is u_{k,n}^T
  std::vector<Eigen::VectorXd> outputs;  // agent k: N_k
  std::vector<double> noise_variance;    // generation metadata, may be empty
  Eigen::VectorXd w_star;                // generative model, may be empty

  int agents() const noexcept { return static_cast<int>(inputs.size()); }
  int dim() const { return inputs.empty() ? 0 : static_cast<int>(inputs.front().cols()); }
  int samples(int k) const { return static_cast<int>(inputs[k].rows()); }
};

struct GenerationSpec {
  int agents = 8;
  int dim = 2;
  int samples = 100;
  double rho = 0.1;
  Eigen::MatrixXd input_covariance;  // empty means identity
  double mean_low = -1.0;
  double mean_high = 1.0;
  double noise_var_low = 0.1;
  double noise_var_high = 1.0;
  std::optional<Eigen::VectorXd> w_star;  // drawn N(0, I) when absent
  std::uint64_t seed = 1;
};

class QuadraticProblem {
 public:
  QuadraticProblem(RegressionDataset data, double rho) : data_(std::move(data)), rho_(rho) {
    if (data_.agents() < 1) throw InvalidArgument("dataset has no agents");
    if (!(rho_ >= 0.0)) throw InvalidArgument("ridge parameter must be nonnegative");
    const int M = data_.dim();
    if (M < 1) throw InvalidArgument("input dimension must be positive");
    for (int k = 0; k < data_.agents(); ++k) {
      if (data_.samples(k) < 1)
        throw InvalidArgument("agent " + std::to_string(k) + " has no samples");
      if (data_.inputs[k].cols() != M)
        throw InvalidArgument("agent " + std::to_string(k) + " has inputs of dimension " +
                              std::to_string(data_.inputs[k].cols()) + ", expected " +
                              std::to_string(M));
      if (data_.outputs[k].size() != data_.samples(k))
        throw InvalidArgument("agent " + std::to_string(k) + " output count mismatch");
    }
    hessians_.reserve(data_.agents());
    linear_.reserve(data_.agents());
    for (int k = 0; k < data_.agents(); ++k) {
      const Eigen::MatrixXd& U = data_.inputs[k];
      const double scale = 2.0 / U.rows();
      Eigen::MatrixXd H = scale * (U.transpose() * U);
      H.diagonal().array() += 2.0 * rho_;
      hessians_.push_back(0.5 * (H + H.transpose()));
      linear_.push_back(scale * (U.transpose() * data_.outputs[k]));
    }
  }

  int agents() const noexcept { return data_.agents(); }
  int dim() const { return data_.dim(); }
  int samples(int k) const { return data_.samples(k); }
  double rho() const noexcept { return rho_; }
  const RegressionDataset& dataset() const noexcept { return data_; }

  double risk(int k, const Eigen::VectorXd& w) const {
    check_agent(k);
    const Eigen::VectorXd r = data_.outputs[k] - data_.inputs[k] * w;
    return r.squaredNorm() / samples(k) + rho_ * w.squaredNorm();
  }

  /// grad J_k(w) = H_k w - r_k.
  Eigen::VectorXd local_gradient(int k, const Eigen::VectorXd& w) const {
    check_agent(k);
    return hessians_[k] * w - linear_[k];
  }

  /// grad Q_k(w; x_{k,n}) = 2 u (u^T w - d) + 2 rho w.
  Eigen::VectorXd stochastic_gradient(int k, const Eigen::VectorXd& w, int n) const {
    check_agent(k);
    if (n < 0 || n >= samples(k))
      throw InvalidArgument("sample index " + std::to_string(n) + " outside [0," +
                            std::to_string(samples(k)) + ") for agent " + std::to_string(k));
    const auto u = data_.inputs[k].row(n).transpose();
    const double err = u.dot(w) - data_.outputs[k][n];
    return 2.0 * err * u + 2.0 * rho_ * w;
  }

  const Eigen::MatrixXd& hessian(int k) const {
    check_agent(k);
    return hessians_[k];
  }

  Eigen::VectorXd local_minimizer(int k) const {
    check_agent(k);
    return hessians_[k].ldlt().solve(linear_[k]);
  }

  /// Block-diagonal stack of all H_k.
  Eigen::MatrixXd stacked_hessian() const {
    const int K = agents(), M = dim();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(K * M, K * M);
    for (int k = 0; k < K; ++k) H.block(k * M, k * M, M, M) = hessians_[k];
    return H;
  }

  /// Smallest and largest Hessian eigenvalue over all agents (nu, delta).
  std::pair<double, double> curvature_bounds() const {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& H : hessians_) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
      lo = std::min(lo, es.eigenvalues().minCoeff());
      hi = std::max(hi, es.eigenvalues().maxCoeff());
    }
    return {lo, hi};
  }

  /// argmin (1/K) sum_k weight_k J_k(w), from the weighted normal equations.
  Eigen::VectorXd weighted_minimizer(const Eigen::VectorXd& weight) const {
    if (weight.size() != agents()) throw InvalidArgument("weight vector size mismatch");
    if (!(weight.maxCoeff() > 0.0))
      throw InvalidArgument("all activation probabilities are zero; the objective is degenerate");
    const int M = dim();
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(M, M);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(M);
    for (int k = 0; k < agents(); ++k) {
      lhs += weight[k] * hessians_[k];
      rhs += weight[k] * linear_[k];
    }
    Eigen::VectorXd w = lhs.ldlt().solve(rhs);
    // one step of iterative refinement
    Eigen::VectorXd resid = rhs - lhs * w;
    w += lhs.ldlt().solve(resid);
    return w;
  }

  Eigen::VectorXd unweighted_minimizer() const {
    return weighted_minimizer(Eigen::VectorXd::Ones(agents()));
  }

  /// Stationarity residual || (1/K) sum_k weight_k grad J_k(w) ||.
  double stationarity_residual(const Eigen::VectorXd& weight, const Eigen::VectorXd& w) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    for (int k = 0; k < agents(); ++k) g += weight[k] * local_gradient(k, w);
    return g.norm() / agents();
  }

 private:
  void check_agent(int k) const {
    if (k < 0 || k >= agents())
      throw InvalidArgument("agent index " + std::to_string(k) + " outside [0," +
                            std::to_string(agents()) + ")");
  }

  RegressionDataset data_;
  double rho_;
  std::vector<Eigen::MatrixXd> hessians_;
  std::vector<Eigen::VectorXd> linear_;
};

inline QuadraticProblem generate_synthetic(const GenerationSpec& spec) {
  if (spec.agents < 1 || spec.dim < 1 || spec.samples < 1)
    throw InvalidArgument("generation needs positive agents, dim and samples");
  if (spec.mean_low > spec.mean_high || spec.noise_var_low > spec.noise_var_high ||
      spec.noise_var_low < 0.0)
    throw InvalidArgument("generation ranges must satisfy low <= high and variances >= 0");
  const int M = spec.dim;
  Eigen::MatrixXd cov = spec.input_covariance.size() == 0 ? Eigen::MatrixXd::Identity(M, M)
                                                          : spec.input_covariance;
  if (cov.rows() != M || cov.cols() != M)
    throw InvalidArgument("input covariance must be " + std::to_string(M) + "x" +
                          std::to_string(M));
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidArgument("input covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw InvalidArgument("input covariance is not positive semidefinite (min eigenvalue " +
                          std::to_string(es.eigenvalues().minCoeff()) + ")");
  const Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  Rng rng = make_stream(spec.seed, Stream::data);
  std::normal_distribution<double> normal(0.0, 1.0);

  RegressionDataset data;
  if (spec.w_star) {
    if (spec.w_star->size() != M) throw InvalidArgument("w_star dimension mismatch");
    data.w_star = *spec.w_star;
  } else {
    data.w_star.resize(M);
    for (int m = 0; m < M; ++m) data.w_star[m] = normal(rng);
  }
  for (int k = 0; k < spec.agents; ++k) {
    Eigen::VectorXd mean(M);
    for (int m = 0; m < M; ++m)
      mean[m] = spec.mean_low + (spec.mean_high - spec.mean_low) * uniform01(rng);
    const double sigma2 =
        spec.noise_var_low + (spec.noise_var_high - spec.noise_var_low) * uniform01(rng);
    const double sigma = std::sqrt(sigma2);
    Eigen::MatrixXd U(spec.samples, M);
    Eigen::VectorXd d(spec.samples);
    Eigen::VectorXd z(M);
    for (int n = 0; n < spec.samples; ++n) {
      for (int m = 0; m < M; ++m) z[m] = normal(rng);
      U.row(n) = (mean + root * z).transpose();
      d[n] = U.row(n).dot(data.w_star) + sigma * normal(rng);
    }
    data.inputs.push_back(std::move(U));
    data.outputs.push_back(std::move(d));
    data.noise_variance.push_back(sigma2);
  }
  return QuadraticProblem(std::move(data), spec.rho);
}

/// w° = argmin (1/K) sum_k q_k J_k(w), the point the uncorrected algorithm
/// is centered on.
inline Eigen::VectorXd drifted_optimum(const QuadraticProblem& problem,
                                       const ActivationModel& model) {
  return problem.weighted_minimizer(model.probabilities());
}

/// b = -col{grad J_k(w_ref)}.
inline Eigen::VectorXd bias_vector(const QuadraticProblem& problem, const Eigen::VectorXd& w_ref) {
  const int K = problem.agents(), M = problem.dim();
  Eigen::VectorXd b(K * M);
  for (int k = 0; k < K; ++k) b.segment(k * M, M) = -problem.local_gradient(k, w_ref);
  return b;
}

/// Exact covariance of the single-sample gradient noise at w_ref (uniform
/// sampling over the finite dataset).
inline Eigen::MatrixXd noise_covariance(const QuadraticProblem& problem, int k,
                                        const Eigen::VectorXd& w_ref) {
  const int N = problem.samples(k), M = problem.dim();
  const Eigen::VectorXd g = problem.local_gradient(k, w_ref);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(M, M);
  for (int n = 0; n < N; ++n) {
    const Eigen::VectorXd s = problem.stochastic_gradient(k, w_ref, n) - g;
    R.noalias() += s * s.transpose();
  }
  R /= N;
  return 0.5 * (R + R.transpose());
}

/// Block-diagonal diag{R_k}.
inline Eigen::MatrixXd stacked_noise_covariance(const QuadraticProblem& problem,
                                                const Eigen::VectorXd& w_ref) {
  const int K = problem.agents(), M = problem.dim();
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(K * M, K * M);
  for (int k = 0; k < K; ++k) R.block(k * M, k * M, M, M) = noise_covariance(problem, k, w_ref);
  return R;
}

struct NoiseMoments {
  double second = 0.0;  // E||s||^2
  double fourth = 0.0;  // E||s||^4
};

inline NoiseMoments noise_moments(const QuadraticProblem& problem, int k,
                                  const Eigen::VectorXd& w_ref) {
  const int N = problem.samples(k);
  const Eigen::VectorXd g = problem.local_gradient(k, w_ref);
  NoiseMoments m;
  for (int n = 0; n < N; ++n) {
    const double s2 = (problem.stochastic_gradient(k, w_ref, n) - g).squaredNorm();
    m.second += s2;
    m.fourth += s2 * s2;
  }
  m.second /= N;
  m.fourth /= N;
  return m;
}

/// Columnar text: "agent,sample,u0,...,u{M-1},d" with a header row.
inline void write_dataset(std::ostream& os, const RegressionDataset& data) {
  const int M = data.dim();
  os << "agent,sample";
  for (int m = 0; m < M; ++m) os << ",u" << m;
  os << ",d\n";
  os << std::setprecision(17);
  for (int k = 0; k < data.agents(); ++k) {
    for (int n = 0; n < data.samples(k); ++n) {
      os << k << ',' << n;
      for (int m = 0; m < M; ++m) os << ',' << data.inputs[k](n, m);
      os << ',' << data.outputs[k][n] << '\n';
    }
  }
}

inline RegressionDataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidArgument("dataset file is empty");
  int columns = 1;
  for (char c : line) columns += c == ',';
  const int M = columns - 3;
  if (M < 1 || line.rfind("agent,sample", 0) != 0)
    throw InvalidArgument("dataset header must be agent,sample,u0,...,d");

  std::vector<std::vector<std::pair<int, std::vector<double>>>> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InvalidArgument("dataset line " + std::to_string(lineno) + ": bad number '" + cell +
                              "'");
      }
    }
    if (static_cast<int>(values.size()) != columns)
      throw InvalidArgument("dataset line " + std::to_string(lineno) + ": expected " +
                            std::to_string(columns) + " columns");
    const int k = static_cast<int>(values[0]);
    if (k < 0 || k != values[0])
      throw InvalidArgument("dataset line " + std::to_string(lineno) + ": bad agent id");
    if (static_cast<int>(rows.size()) <= k) rows.resize(k + 1);
    rows[k].emplace_back(static_cast<int>(values[1]),
                         std::vector<double>(values.begin() + 2, values.end()));
  }
  RegressionDataset data;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& r = rows[k];
    if (r.empty()) throw InvalidArgument("agent " + std::to_string(k) + " has no samples");
    std::sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Eigen::MatrixXd U(r.size(), M);
    Eigen::VectorXd d(r.size());
    for (std::size_t n = 0; n < r.size(); ++n) {
      for (int m = 0; m < M; ++m) U(n, m) = r[n].second[m];
      d[n] = r[n].second[M];
    }
    data.inputs.push_back(std::move(U));
    data.outputs.push_back(std::move(d));
  }
  return data;
}

}  // namespace difflearn
