#pragma once

// Closed-form steady-state mean-square deviation.
//
// Over one block the frozen-Hessian error recursion is
//   e' = Phi e - Q b + sum_t F_t s_t,
//   Phi = A_p^T (I - M_p H)^T,  Q = A_p^T sum_{t<T} (I - M_p H)^t M_p,
//   F_t = A_p^T (I - M_p H)^t M_p,
// with A_p, M_p the (Kronecker-lifted) combination and step-size matrices of
// the block's activation pattern. Taking expectations of e e^T gives the
// linear fixed point z = G z + y in vectorized form, and the MSD is
// (1/K) z^T bvec(I).
//
// bvec is plain column stacking and block_kron the ordinary Kronecker
// product, so that bvec(E X F^T) = block_kron(F, E) bvec(X).

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "difflearn/errors.hpp"
#include "difflearn/participation.hpp"
#include "difflearn/problems.hpp"
#include "difflearn/rng.hpp"

namespace difflearn {

inline Eigen::VectorXd bvec(const Eigen::MatrixXd& X) {
  return Eigen::Map<const Eigen::VectorXd>(X.data(), X.size());
}

inline Eigen::MatrixXd unbvec(const Eigen::VectorXd& v, Eigen::Index rows) {
  if (rows <= 0 || v.size() % rows != 0)
    throw InvalidArgument("cannot reshape a vector of length " + std::to_string(v.size()) +
                          " into " + std::to_string(rows) + " rows");
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, v.size() / rows);
}

inline Eigen::MatrixXd block_kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.size() == 0 || B.size() == 0) throw InvalidArgument("block_kron of an empty matrix");
  return Eigen::kroneckerProduct(A, B).eval();
}

/// Everything the MSD expression depends on, evaluated at the reference point.
struct MsdInputs {
  ParticipationPlan plan;
  Eigen::MatrixXd hessian;  // diag{H_k}, KM x KM
  Eigen::MatrixXd noise;    // diag{R_k}, KM x KM
  Eigen::VectorXd bias;     // -col{grad J_k(w_ref)}
  Eigen::VectorXd w_ref;
  double mu = 0.01;
  int local_steps = 1;
  StepMode mode = StepMode::plain;
  int agents = 0;
  int dim = 0;

  int size() const noexcept { return agents * dim; }

  void validate() const {
    const int n = size();
    if (agents < 1 || dim < 1) throw InvalidArgument("MSD inputs need K >= 1 and M >= 1");
    if (plan.agents() != agents) throw InvalidArgument("plan size does not match K");
    if (hessian.rows() != n || hessian.cols() != n || noise.rows() != n || noise.cols() != n ||
        bias.size() != n)
      throw InvalidArgument("MSD inputs have inconsistent dimensions (expected KM = " +
                            std::to_string(n) + ")");
    if (!(mu > 0.0) || local_steps < 1) throw InvalidArgument("need mu > 0 and T >= 1");
  }
};

/// Hessians, gradient-noise covariances (scaled by 1/batch) and bias at the
/// point the iterates concentrate around for the given step-size rule.
inline MsdInputs make_msd_inputs(const QuadraticProblem& problem, ParticipationPlan plan,
                                 double mu, int local_steps, StepMode mode, int batch = 1) {
  MsdInputs in;
  in.agents = problem.agents();
  in.dim = problem.dim();
  in.w_ref = mode == StepMode::drift_corrected ? problem.unweighted_minimizer()
                                               : problem.weighted_minimizer(plan.marginals());
  in.plan = std::move(plan);
  in.hessian = problem.stacked_hessian();
  in.noise = stacked_noise_covariance(problem, in.w_ref) / static_cast<double>(batch);
  in.bias = bias_vector(problem, in.w_ref);
  in.mu = mu;
  in.local_steps = local_steps;
  in.mode = mode;
  in.validate();
  return in;
}

/// Deterministic per-pattern quantities.
struct PatternTerms {
  Eigen::MatrixXd phi;        // A_p^T (I - M_p H)^T
  Eigen::MatrixXd drive;      // Q = A_p^T sum_{t<T} (I - M_p H)^t M_p
  Eigen::MatrixXd g_term;     // phi (x)_b phi
  Eigen::MatrixXd cross_term; // Q (x)_b phi
  Eigen::VectorXd noise_term; // sum_t bvec(F_t diag{R_k} F_t^T)
  Eigen::VectorXd bias_term;  // bvec(Q b b^T Q^T)
};

namespace detail {

inline Eigen::MatrixXd lifted_combination(const ParticipationPlan& plan,
                                          const ActivationPattern& pattern, int dim) {
  const Eigen::MatrixXd at = plan.combine_matrix(pattern).weights.transpose();
  return Eigen::kroneckerProduct(at, Eigen::MatrixXd::Identity(dim, dim)).eval();
}

struct BlockOperators {
  Eigen::MatrixXd phi;
  Eigen::MatrixXd drive;
  std::vector<Eigen::MatrixXd> noise_gains;  // F_t, t = 0..T-1
};

inline BlockOperators block_operators(const MsdInputs& in, const ActivationPattern& pattern) {
  const int n = in.size(), M = in.dim;
  const Eigen::MatrixXd lifted = lifted_combination(in.plan, pattern, M);
  const StepSizeMatrix steps = step_size_matrix(pattern, in.mu, in.mode, in.plan.marginals());
  Eigen::VectorXd step(n);
  for (int k = 0; k < in.agents; ++k) step.segment(k * M, M).setConstant(steps.diag[k]);
  const Eigen::MatrixXd contraction =
      Eigen::MatrixXd::Identity(n, n) - step.asDiagonal() * in.hessian;

  BlockOperators ops;
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
  for (int t = 0; t < in.local_steps; ++t) {
    const Eigen::MatrixXd gain = power * step.asDiagonal();
    ops.noise_gains.push_back(lifted * gain);
    sum += gain;
    power = contraction * power;
  }
  ops.phi = lifted * power;
  ops.drive = lifted * sum;
  return ops;
}

// out += weight * kron(F, E), skipping structurally zero entries of F.
inline void add_kron(Eigen::MatrixXd& out, const Eigen::MatrixXd& F, const Eigen::MatrixXd& E,
                     double weight) {
  const Eigen::Index r = E.rows(), c = E.cols();
  for (Eigen::Index j = 0; j < F.cols(); ++j)
    for (Eigen::Index i = 0; i < F.rows(); ++i)
      if (F(i, j) != 0.0) out.block(i * r, j * c, r, c).noalias() += (weight * F(i, j)) * E;
}

}  // namespace detail

inline PatternTerms sample_operator_terms(const MsdInputs& in, const ActivationPattern& pattern) {
  in.validate();
  detail::BlockOperators ops = detail::block_operators(in, pattern);
  PatternTerms terms;
  terms.g_term = block_kron(ops.phi, ops.phi);
  terms.cross_term = block_kron(ops.drive, ops.phi);
  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(in.size(), in.size());
  for (const auto& F : ops.noise_gains) noise += F * in.noise * F.transpose();
  terms.noise_term = bvec(noise);
  const Eigen::VectorXd qb = ops.drive * in.bias;
  terms.bias_term = bvec(qb * qb.transpose());
  terms.phi = std::move(ops.phi);
  terms.drive = std::move(ops.drive);
  return terms;
}

enum class EstimationMode { exact, monte_carlo, automatic };

struct EstimationOptions {
  EstimationMode mode = EstimationMode::automatic;
  long samples = 200000;       // Monte Carlo pattern count
  int enumeration_limit = 12;  // exact mode needs K <= this
  std::uint64_t seed = 1;
};

struct ExpectationEstimate {
  Eigen::MatrixXd g;            // E[phi (x)_b phi]
  Eigen::MatrixXd cross;        // E[Q (x)_b phi]
  Eigen::VectorXd noise_term;   // E[sum_t bvec(F_t R F_t^T)]
  Eigen::VectorXd bias_term;    // E[bvec(Q b b^T Q^T)]
  Eigen::MatrixXd mean_phi;     // Bbar_T = E[phi]
  Eigen::MatrixXd mean_drive;   // E[Q]
  Eigen::VectorXd mean_error;   // lim E e = -(I - Bbar_T)^{-1} E[Q] b
  Eigen::VectorXd y;            // forcing of z = G z + y

  EstimationMode mode = EstimationMode::exact;
  long samples = 0;             // patterns visited
  Eigen::MatrixXd g_stderr;     // entrywise, Monte Carlo only
  Eigen::VectorXd noise_stderr;
  Eigen::VectorXd bias_stderr;
  double spectral_radius = 0.0;
  double distance_to_identity = 0.0;  // ||I - G|| in the max-row-sum norm
};

namespace detail {

// Largest |eigenvalue| of G. G maps the PSD cone into itself, so its spectral
// radius is attained by a real eigenvalue; power iteration from bvec(I) finds
// it when a dense eigensolve would be too slow.
inline double spectral_radius(const Eigen::MatrixXd& g, Eigen::Index side) {
  if (g.rows() <= 1024) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(g, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::VectorXd x = bvec(Eigen::MatrixXd::Identity(side, side));
  x.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 3000; ++it) {
    Eigen::VectorXd next = g * x;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    const double change = std::abs(norm - lambda);
    lambda = norm;
    x = next / norm;
    if (it > 50 && change < 1e-13) break;
  }
  return lambda;
}

inline void finish_estimate(const MsdInputs& in, ExpectationEstimate& est) {
  const int n = in.size();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::PartialPivLU<Eigen::MatrixXd> mean_lu(I - est.mean_phi);
  est.mean_error = mean_lu.solve(-(est.mean_drive * in.bias));

  // cross terms: -E[phi m b^T Q^T] - E[Q b m^T phi^T]
  const Eigen::VectorXd mb = bvec(est.mean_error * in.bias.transpose());
  const Eigen::MatrixXd x = unbvec(est.cross * mb, n);
  est.y = est.bias_term + est.noise_term - bvec(x + x.transpose());

  est.spectral_radius = spectral_radius(est.g, n);
  est.distance_to_identity =
      (Eigen::MatrixXd::Identity(n * n, n * n) - est.g).cwiseAbs().rowwise().sum().maxCoeff();
  if (!(est.spectral_radius < 1.0))
    throw NumericalError("spectral radius of G is " + std::to_string(est.spectral_radius) +
                         " >= 1: step size mu = " + std::to_string(in.mu) +
                         " is outside the stability range");
}

}  // namespace detail

inline ExpectationEstimate estimate_expectations(const MsdInputs& in,
                                                 const EstimationOptions& options = {}) {
  in.validate();
  const int n = in.size();
  const Eigen::Index n2 = static_cast<Eigen::Index>(n) * n;
  EstimationMode mode = options.mode;
  if (mode == EstimationMode::automatic)
    mode = in.agents <= options.enumeration_limit ? EstimationMode::exact
                                                  : EstimationMode::monte_carlo;

  ExpectationEstimate est;
  est.mode = mode;
  est.g = Eigen::MatrixXd::Zero(n2, n2);
  est.cross = Eigen::MatrixXd::Zero(n2, n2);
  est.noise_term = Eigen::VectorXd::Zero(n2);
  est.bias_term = Eigen::VectorXd::Zero(n2);
  est.mean_phi = Eigen::MatrixXd::Zero(n, n);
  est.mean_drive = Eigen::MatrixXd::Zero(n, n);

  auto accumulate = [&](const ActivationPattern& pattern, double weight,
                        Eigen::MatrixXd* g_sq, Eigen::VectorXd* noise_sq, Eigen::VectorXd* bias_sq) {
    const detail::BlockOperators ops = detail::block_operators(in, pattern);
    detail::add_kron(est.g, ops.phi, ops.phi, weight);
    detail::add_kron(est.cross, ops.drive, ops.phi, weight);
    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(n, n);
    for (const auto& F : ops.noise_gains) noise.noalias() += F * in.noise * F.transpose();
    const Eigen::VectorXd qb = ops.drive * in.bias;
    const Eigen::MatrixXd bias = qb * qb.transpose();
    est.noise_term += weight * bvec(noise);
    est.bias_term += weight * bvec(bias);
    est.mean_phi += weight * ops.phi;
    est.mean_drive += weight * ops.drive;
    if (g_sq) {
      const Eigen::MatrixXd phi_sq = ops.phi.cwiseAbs2();
      detail::add_kron(*g_sq, phi_sq, phi_sq, weight);
      *noise_sq += weight * bvec(noise).cwiseAbs2();
      *bias_sq += weight * bvec(bias).cwiseAbs2();
    }
  };

  if (mode == EstimationMode::exact) {
    const auto patterns = in.plan.enumerate(options.enumeration_limit);
    for (const auto& [pattern, prob] : patterns) accumulate(pattern, prob, nullptr, nullptr, nullptr);
    est.samples = static_cast<long>(patterns.size());
  } else {
    if (options.samples < 2) throw InvalidArgument("Monte Carlo needs at least 2 samples");
    Eigen::MatrixXd g_sq = Eigen::MatrixXd::Zero(n2, n2);
    Eigen::VectorXd noise_sq = Eigen::VectorXd::Zero(n2), bias_sq = Eigen::VectorXd::Zero(n2);
    const double w = 1.0 / static_cast<double>(options.samples);
    for (long s = 0; s < options.samples; ++s) {
      Rng rng = make_stream(options.seed, Stream::theory, {static_cast<std::uint64_t>(s)});
      accumulate(in.plan.sample(rng), w, &g_sq, &noise_sq, &bias_sq);
    }
    const double nm1 = static_cast<double>(options.samples - 1);
    auto stderr_of = [&](const auto& mean, const auto& mean_sq) {
      return ((mean_sq - mean.cwiseAbs2()).cwiseMax(0.0) * (options.samples / nm1) /
              static_cast<double>(options.samples))
          .cwiseSqrt()
          .eval();
    };
    est.g_stderr = stderr_of(est.g, g_sq);
    est.noise_stderr = stderr_of(est.noise_term, noise_sq);
    est.bias_stderr = stderr_of(est.bias_term, bias_sq);
    est.samples = options.samples;
  }
  detail::finish_estimate(in, est);
  return est;
}

struct ApproximationValue {
  double value = 0.0;      // MSD-scale value of the proportional form
  double remainder = 0.0;  // size of the O(mu) term it leaves out
};

struct MsdReport {
  double msd = 0.0;
  double msd_noise = 0.0;  // contribution of the gradient-noise forcing
  double msd_bias = 0.0;   // contribution of Q b b^T Q^T
  double msd_cross = 0.0;  // contribution of the mean/bias cross term
  Eigen::VectorXd z;
  double solve_residual = 0.0;  // relative
  ExpectationEstimate estimate;
  std::optional<ApproximationValue> approx_local_updates;
  std::optional<ApproximationValue> approx_activation;
};

/// MSD = (1/K) z^T bvec(I) with z = (I - G)^{-1} y.
inline MsdReport msd_value(const MsdInputs& in, const EstimationOptions& options = {}) {
  MsdReport rep;
  rep.estimate = estimate_expectations(in, options);
  const ExpectationEstimate& est = rep.estimate;
  const int n = in.size();
  const Eigen::Index n2 = static_cast<Eigen::Index>(n) * n;
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n2, n2) - est.g;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  rep.z = lu.solve(est.y);
  const double scale = std::max(est.y.norm(), 1e-300);
  rep.solve_residual = est.y.norm() == 0.0 ? (lhs * rep.z).norm() : (lhs * rep.z - est.y).norm() / scale;
  if (!std::isfinite(rep.solve_residual) || rep.solve_residual > 1e-10)
    throw NumericalError("I - G is numerically singular (relative residual " +
                         std::to_string(rep.solve_residual) + ")");

  const Eigen::VectorXd ident = bvec(Eigen::MatrixXd::Identity(n, n));
  auto project = [&](const Eigen::VectorXd& y) { return lu.solve(y).dot(ident) / in.agents; };
  rep.msd = rep.z.dot(ident) / in.agents;
  rep.msd_noise = project(est.noise_term);
  rep.msd_bias = project(est.bias_term);
  rep.msd_cross = rep.msd - rep.msd_noise - rep.msd_bias;
  return rep;
}

/// (1/K) tr( mu T D^{T-1} (b b^T + diag R) D^{T-1 T} ), D = I - mu H, and the
/// size (1/K) mu tr(D^{2T-1}) of the term it drops.
inline ApproximationValue approx_local_updates(const MsdInputs& in) {
  in.validate();
  const int n = in.size();
  const Eigen::MatrixXd D = Eigen::MatrixXd::Identity(n, n) - in.mu * in.hessian;
  Eigen::MatrixXd half = Eigen::MatrixXd::Identity(n, n);
  for (int t = 1; t < in.local_steps; ++t) half = D * half;
  const Eigen::MatrixXd forcing = in.bias * in.bias.transpose() + in.noise;
  ApproximationValue out;
  out.value = in.mu * in.local_steps * (half * forcing * half.transpose()).trace() / in.agents;
  Eigen::MatrixXd rem = half * half * D;
  out.remainder = in.mu * rem.trace() / in.agents;
  return out;
}

/// Single-local-step form driven by E[A (x) A]:
///   (1/K) bvec(I)^T (I - c E[A (x) A])^{-1} mu^2 E[A (x) A] bvec(b b^T + diag R),
/// with c = (1 - mu h)^2 and h the mean Hessian eigenvalue standing in for the
/// O(mu) factor. `remainder` reports mu h.
inline ApproximationValue approx_activation(const MsdInputs& in,
                                            const EstimationOptions& options = {}) {
  in.validate();
  if (in.local_steps != 1) throw InvalidArgument("approx_activation requires T = 1");
  const int n = in.size();
  const Eigen::Index n2 = static_cast<Eigen::Index>(n) * n;
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n2, n2);
  const bool exact = options.mode == EstimationMode::exact ||
                     (options.mode == EstimationMode::automatic &&
                      in.agents <= options.enumeration_limit);
  if (exact) {
    for (const auto& [p, prob] : in.plan.enumerate(options.enumeration_limit)) {
      const Eigen::MatrixXd a = detail::lifted_combination(in.plan, p, in.dim);
      detail::add_kron(e, a, a, prob);
    }
  } else {
    const double w = 1.0 / static_cast<double>(options.samples);
    for (long s = 0; s < options.samples; ++s) {
      Rng rng = make_stream(options.seed, Stream::theory, {static_cast<std::uint64_t>(s)});
      const Eigen::MatrixXd a = detail::lifted_combination(in.plan, in.plan.sample(rng), in.dim);
      detail::add_kron(e, a, a, w);
    }
  }
  const double h = in.hessian.trace() / n;
  const double c = (1.0 - in.mu * h) * (1.0 - in.mu * h);
  const Eigen::VectorXd v = bvec(in.bias * in.bias.transpose() + in.noise);
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n2, n2) - c * e;
  const Eigen::VectorXd z = lhs.partialPivLu().solve(in.mu * in.mu * (e * v));
  ApproximationValue out;
  out.value = z.dot(bvec(Eigen::MatrixXd::Identity(n, n))) / in.agents;
  out.remainder = in.mu * h;
  return out;
}

}  // namespace difflearn
