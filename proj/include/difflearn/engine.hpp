#pragma once

// The stochastic recursion with local updates and partial participation.
//
// Each block i: draw an activation pattern, let every active agent take T
// stochastic-gradient steps with its own step size, then combine the models of
// active agents with the pattern's combination matrix. Inactive agents hold
// their model for the whole block.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "difflearn/errors.hpp"
#include "difflearn/netgraph.hpp"
#include "difflearn/participation.hpp"
#include "difflearn/problems.hpp"
#include "difflearn/rng.hpp"

namespace difflearn {

enum class Preset {
  general,
  fedavg_full,
  fedavg_partial,
  standard_diffusion,
  async_diffusion,
  decentralized_fl,
};

/// Starting point of every agent.
struct InitRule {
  enum class Kind { zero, target, vector };
  Kind kind = Kind::zero;
  Eigen::VectorXd value;  // Kind::vector only

  static InitRule zero() { return {}; }
  static InitRule at_target() { return {Kind::target, {}}; }
  static InitRule at(Eigen::VectorXd w) { return {Kind::vector, std::move(w)}; }
};

struct SimulationConfig {
  double mu = 0.01;
  int local_steps = 5;
  int blocks = 1000;
  int repetitions = 1;
  std::uint64_t seed = 1;
  StepMode mode = StepMode::plain;
  Preset preset = Preset::general;
  int subset_size = 0;
  bool deterministic_gradient = false;
  int batch = 1;
  InitRule init;
  bool per_agent = false;  // keep per-agent deviation curves
  int threads = 1;

  void validate() const {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw InvalidArgument("mu must be positive");
    if (local_steps < 1) throw InvalidArgument("local_steps must be >= 1");
    if (blocks < 1) throw InvalidArgument("blocks must be >= 1");
    if (repetitions < 1) throw InvalidArgument("repetitions must be >= 1");
    if (batch < 1) throw InvalidArgument("batch must be >= 1");
  }
};

/// Stacked models, column k is agent k (so the column-major storage is
/// col{w_1, ..., w_K}), plus the block/local-step clock.
struct NetworkState {
  Eigen::MatrixXd models;
  int block = 0;
  int local_step = 0;

  Eigen::Map<const Eigen::VectorXd> stacked() const {
    return {models.data(), models.size()};
  }
};

struct PresetPlan {
  ParticipationPlan plan;
  int local_steps = 1;
};

/// Configure the general recursion so that it reduces to a named special
/// case. `A` and `model` are only consulted by presets that keep them.
inline PresetPlan apply_preset(Preset preset, const CombinationMatrix& A,
                               const ActivationModel& model, int local_steps,
                               int subset_size = 0) {
  const int K = A.agents();
  switch (preset) {
    case Preset::general:
      return {bernoulli_plan(A, model), local_steps};
    case Preset::fedavg_full:
      return {bernoulli_plan(uniform_average_matrix(K), ActivationModel::uniform(K, 1.0)),
              local_steps};
    case Preset::fedavg_partial: {
      if (subset_size < 1 || subset_size > K)
        throw InvalidArgument("fedavg-partial needs 1 <= S <= K; got S=" +
                              std::to_string(subset_size) + ", K=" + std::to_string(K));
      ParticipationPlan p{uniform_average_matrix(K),
                          ActivationModel::uniform(K, static_cast<double>(subset_size) / K),
                          MatrixRule::subset_average, subset_size};
      return {std::move(p), local_steps};
    }
    case Preset::standard_diffusion:
      return {bernoulli_plan(A, ActivationModel::uniform(K, 1.0)), 1};
    case Preset::async_diffusion:
      return {bernoulli_plan(A, model), 1};
    case Preset::decentralized_fl:
      return {bernoulli_plan(A, ActivationModel::uniform(K, 1.0)), local_steps};
  }
  throw InvalidArgument("unknown preset");
}

/// Point the iterates concentrate around: w° for the plain step-size rule,
/// the unweighted minimizer under drift correction.
inline Eigen::VectorXd reference_point(const QuadraticProblem& problem,
                                       const ParticipationPlan& plan, StepMode mode) {
  if (mode == StepMode::drift_corrected) return problem.unweighted_minimizer();
  return problem.weighted_minimizer(plan.marginals());
}

/// Steps one repetition of the recursion block by block.
class BlockRunner {
 public:
  BlockRunner(const QuadraticProblem& problem, const ParticipationPlan& plan,
              const SimulationConfig& config, int repetition, const Eigen::VectorXd& start)
      : problem_(problem), plan_(plan), config_(config), repetition_(repetition) {
    config_.validate();
    if (plan.agents() != problem.agents())
      throw InvalidArgument("plan has " + std::to_string(plan.agents()) +
                            " agents but the problem has " + std::to_string(problem.agents()));
    if (start.size() != problem.dim())
      throw InvalidArgument("initial model has dimension " + std::to_string(start.size()) +
                            ", expected " + std::to_string(problem.dim()));
    state_.models = start.replicate(1, problem.agents());
    probabilities_ = plan.marginals();
  }

  const NetworkState& state() const noexcept { return state_; }

  /// One block iteration; returns the pattern that was in force.
  ActivationPattern advance() {
    const int K = problem_.agents();
    const int T = config_.local_steps;
    const auto block = static_cast<std::uint64_t>(state_.block);
    const auto rep = static_cast<std::uint64_t>(repetition_);

    Rng pattern_rng = make_stream(config_.seed, Stream::pattern, {rep, block});
    ActivationPattern pattern = plan_.sample(pattern_rng);
    const StepSizeMatrix steps = step_size_matrix(pattern, config_.mu, config_.mode, probabilities_);

    for (int k = 0; k < K; ++k) {
      if (!pattern.active(k)) continue;
      Rng sample_rng =
          make_stream(config_.seed, Stream::sample, {rep, block, static_cast<std::uint64_t>(k)});
      std::uniform_int_distribution<int> pick(0, problem_.samples(k) - 1);
      Eigen::VectorXd w = state_.models.col(k);
      for (int t = 1; t <= T; ++t) {
        if (config_.deterministic_gradient) {
          w -= steps.diag[k] * problem_.local_gradient(k, w);
        } else if (config_.batch == 1) {
          w -= steps.diag[k] * problem_.stochastic_gradient(k, w, pick(sample_rng));
        } else {
          Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
          for (int j = 0; j < config_.batch; ++j)
            g += problem_.stochastic_gradient(k, w, pick(sample_rng));
          w -= steps.diag[k] * (g / config_.batch);
        }
      }
      state_.models.col(k) = w;
    }

    // combine at t = T; inactive columns of the matrix are unit vectors
    const CombinationMatrix a = plan_.combine_matrix(pattern);
    Eigen::MatrixXd next(state_.models.rows(), K);
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd psi = Eigen::VectorXd::Zero(state_.models.rows());
      for (int l = 0; l < K; ++l)
        if (a(l, k) != 0.0) psi += a(l, k) * state_.models.col(l);
      next.col(k) = psi;
    }
    state_.models = std::move(next);
    state_.local_step = 0;
    ++state_.block;

    const double peak = state_.models.cwiseAbs().maxCoeff();
    if (!(peak <= 1e9))
      throw NumericalError("iterates diverged at block " + std::to_string(state_.block) +
                           " (repetition " + std::to_string(repetition_) + ", max |w| = " +
                           std::to_string(peak) + ")");
    return pattern;
  }

 private:
  const QuadraticProblem& problem_;
  const ParticipationPlan& plan_;
  SimulationConfig config_;
  int repetition_;
  NetworkState state_;
  Eigen::VectorXd probabilities_;
};

/// Learning curves recorded at block boundaries; index 0 is the initial state.
/// Curves are averaged over repetitions.
struct TrajectoryRecord {
  Eigen::VectorXd target;
  int agents = 0;
  int blocks = 0;
  int repetitions = 0;
  std::vector<double> msd;     // mean over agents of ||target - w_k||^2
  std::vector<double> fourth;  // mean over agents of ||target - w_k||^4
  std::vector<std::vector<double>> per_agent;  // [block][agent], when requested
  std::vector<std::vector<std::uint64_t>> pattern_digests;  // [repetition][block]
  std::vector<Eigen::MatrixXd> final_models;                // [repetition]
};

namespace detail {

struct RepetitionTrace {
  std::vector<double> msd, fourth;
  std::vector<std::vector<double>> per_agent;
  std::vector<std::uint64_t> digests;
  Eigen::MatrixXd final_models;
};

inline void record_deviation(const Eigen::MatrixXd& models, const Eigen::VectorXd& target,
                             bool per_agent, RepetitionTrace& trace) {
  const int K = static_cast<int>(models.cols());
  double s2 = 0.0, s4 = 0.0;
  std::vector<double> agents;
  if (per_agent) agents.resize(K);
  for (int k = 0; k < K; ++k) {
    const double d = (target - models.col(k)).squaredNorm();
    s2 += d;
    s4 += d * d;
    if (per_agent) agents[k] = d;
  }
  trace.msd.push_back(s2 / K);
  trace.fourth.push_back(s4 / K);
  if (per_agent) trace.per_agent.push_back(std::move(agents));
}

inline RepetitionTrace run_repetition(const QuadraticProblem& problem,
                                      const ParticipationPlan& plan,
                                      const SimulationConfig& config, int repetition,
                                      const Eigen::VectorXd& start,
                                      const Eigen::VectorXd& target) {
  BlockRunner runner(problem, plan, config, repetition, start);
  RepetitionTrace trace;
  trace.msd.reserve(config.blocks + 1);
  trace.fourth.reserve(config.blocks + 1);
  trace.digests.reserve(config.blocks);
  record_deviation(runner.state().models, target, config.per_agent, trace);
  for (int i = 0; i < config.blocks; ++i) {
    trace.digests.push_back(runner.advance().digest());
    record_deviation(runner.state().models, target, config.per_agent, trace);
  }
  trace.final_models = runner.state().models;
  return trace;
}

}  // namespace detail

inline Eigen::VectorXd initial_model(const QuadraticProblem& problem, const InitRule& init,
                                     const Eigen::VectorXd& target) {
  switch (init.kind) {
    case InitRule::Kind::zero:
      return Eigen::VectorXd::Zero(problem.dim());
    case InitRule::Kind::target:
      return target;
    case InitRule::Kind::vector:
      return init.value;
  }
  throw InvalidArgument("unknown init rule");
}

/// Runs all repetitions (in parallel when config.threads > 1) and averages
/// squared deviations across them. Bitwise reproducible for a given seed
/// regardless of the thread count.
inline TrajectoryRecord run(const SimulationConfig& config, const QuadraticProblem& problem,
                            const ParticipationPlan& plan) {
  config.validate();
  const Eigen::VectorXd target = reference_point(problem, plan, config.mode);
  const Eigen::VectorXd start = initial_model(problem, config.init, target);

  std::vector<detail::RepetitionTrace> traces(config.repetitions);
  const int workers = std::max(1, std::min(config.threads, config.repetitions));
  if (workers == 1) {
    for (int r = 0; r < config.repetitions; ++r)
      traces[r] = detail::run_repetition(problem, plan, config, r, start, target);
  } else {
    for (int first = 0; first < config.repetitions; first += workers) {
      std::vector<std::future<detail::RepetitionTrace>> jobs;
      for (int r = first; r < std::min(config.repetitions, first + workers); ++r)
        jobs.push_back(std::async(std::launch::async, [&, r] {
          return detail::run_repetition(problem, plan, config, r, start, target);
        }));
      for (int j = 0; j < static_cast<int>(jobs.size()); ++j) traces[first + j] = jobs[j].get();
    }
  }

  TrajectoryRecord rec;
  rec.target = target;
  rec.agents = problem.agents();
  rec.blocks = config.blocks;
  rec.repetitions = config.repetitions;
  const std::size_t points = static_cast<std::size_t>(config.blocks) + 1;
  rec.msd.assign(points, 0.0);
  rec.fourth.assign(points, 0.0);
  if (config.per_agent) rec.per_agent.assign(points, std::vector<double>(problem.agents(), 0.0));
  for (auto& tr : traces) {
    for (std::size_t i = 0; i < points; ++i) {
      rec.msd[i] += tr.msd[i] / config.repetitions;
      rec.fourth[i] += tr.fourth[i] / config.repetitions;
      if (config.per_agent)
        for (int k = 0; k < problem.agents(); ++k)
          rec.per_agent[i][k] += tr.per_agent[i][k] / config.repetitions;
    }
    rec.pattern_digests.push_back(std::move(tr.digests));
    rec.final_models.push_back(std::move(tr.final_models));
  }
  return rec;
}

struct EmpiricalMsd {
  double msd = 0.0;
  double fourth = 0.0;
  double first_half = 0.0;
  double second_half = 0.0;
  bool stationary = false;  // halves differ by less than 10%
  int window = 0;
};

/// Steady-state average over the last `window` recorded blocks (default: the
/// final 20%).
inline EmpiricalMsd measure_msd(const TrajectoryRecord& trajectory, int window = 0) {
  const int n = trajectory.blocks;
  if (window <= 0) window = std::max(1, n / 5);
  if (window > n)
    throw InvalidArgument("steady-state window of " + std::to_string(window) +
                          " blocks exceeds the trajectory length " + std::to_string(n));
  EmpiricalMsd out;
  out.window = window;
  const int begin = n + 1 - window;
  const int mid = begin + window / 2;
  int first_count = 0, second_count = 0;
  for (int i = begin; i <= n; ++i) {
    out.msd += trajectory.msd[i];
    out.fourth += trajectory.fourth[i];
    if (i < mid) {
      out.first_half += trajectory.msd[i];
      ++first_count;
    } else {
      out.second_half += trajectory.msd[i];
      ++second_count;
    }
  }
  out.msd /= window;
  out.fourth /= window;
  if (first_count > 0) out.first_half /= first_count;
  if (second_count > 0) out.second_half /= second_count;
  const double scale = std::max(out.first_half, out.second_half);
  out.stationary = first_count == 0 || scale == 0.0 ||
                   std::abs(out.first_half - out.second_half) < 0.1 * scale;
  return out;
}

/// First block at which the learning curve is within `tolerance` (relative)
/// of the steady-state value; -1 when it never gets there.
inline int convergence_block(const TrajectoryRecord& trajectory, double steady_msd,
                             double tolerance = 0.1) {
  for (int i = 0; i <= trajectory.blocks; ++i)
    if (trajectory.msd[i] <= (1.0 + tolerance) * steady_msd) return i;
  return -1;
}

}  // namespace difflearn
