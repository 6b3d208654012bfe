#pragma once

// Experiment orchestration behind the command-line tool: build the objects a
// configuration describes, run simulate/theory/sweep, and write result files.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "difflearn/config.hpp"
#include "difflearn/engine.hpp"
#include "difflearn/errors.hpp"
#include "difflearn/msdtheory.hpp"

namespace difflearn {

inline constexpr const char* kVersion = "0.3.0";

struct Experiment {
  Topology topology{1};
  CombinationMatrix A;
  ActivationModel model;
  QuadraticProblem problem;
  PresetPlan preset;
  SimulationConfig sim;
};

inline Experiment build_experiment(const RunConfiguration& cfg) {
  validate(cfg);
  const int K = cfg.topology.agents;
  Topology topo = make_topology(cfg.topology);
  CombinationMatrix A = build_metropolis(topo);
  ActivationModel model = make_activation(cfg.activation, K);
  QuadraticProblem problem = make_problem(cfg.problem, K);
  SimulationConfig sim = make_simulation(cfg);
  PresetPlan preset = apply_preset(sim.preset, A, model, sim.local_steps, sim.subset_size);
  sim.local_steps = preset.local_steps;
  return {std::move(topo), std::move(A), std::move(model), std::move(problem), std::move(preset),
          sim};
}

struct TheorySummary {
  double msd = 0.0;
  double msd_noise = 0.0;
  double msd_bias = 0.0;
  double msd_cross = 0.0;
  std::string mode;
  long samples = 0;
  double spectral_radius = 0.0;
  double distance_to_identity = 0.0;
  double max_g_stderr = 0.0;
  double solve_residual = 0.0;
  std::optional<ApproximationValue> approx_local_updates;
  std::optional<ApproximationValue> approx_activation;
};

inline TheorySummary summarize(const MsdReport& r) {
  TheorySummary s;
  s.msd = r.msd;
  s.msd_noise = r.msd_noise;
  s.msd_bias = r.msd_bias;
  s.msd_cross = r.msd_cross;
  s.mode = r.estimate.mode == EstimationMode::exact ? "exact" : "monte-carlo";
  s.samples = r.estimate.samples;
  s.spectral_radius = r.estimate.spectral_radius;
  s.distance_to_identity = r.estimate.distance_to_identity;
  s.max_g_stderr = r.estimate.g_stderr.size() ? r.estimate.g_stderr.maxCoeff() : 0.0;
  s.solve_residual = r.solve_residual;
  s.approx_local_updates = r.approx_local_updates;
  s.approx_activation = r.approx_activation;
  return s;
}

inline MsdReport theory_for(const RunConfiguration& cfg, const Experiment& ex) {
  MsdInputs in = make_msd_inputs(ex.problem, ex.preset.plan, ex.sim.mu, ex.sim.local_steps,
                                 ex.sim.mode, ex.sim.batch);
  const EstimationOptions opt = make_estimation(cfg);
  MsdReport rep = msd_value(in, opt);
  if (cfg.theory.approximations) {
    rep.approx_local_updates = approx_local_updates(in);
    if (in.local_steps == 1) rep.approx_activation = approx_activation(in, opt);
  }
  return rep;
}

struct PointResult {
  std::string label;
  std::string axis;  // empty for a single run
  double value = 0.0;
  std::string status = "ok";
  std::string error;
  EmpiricalMsd empirical;
  std::optional<TheorySummary> theory;
  std::string theory_error;
  int convergence_block = -1;
  std::string trajectory_file;
  std::vector<double> curve;  // rep-averaged MSD per block, index 0 = start
};

struct ResultBundle {
  std::string command;
  std::uint64_t seed = 0;
  std::string axis;
  std::vector<PointResult> points;
  double wall_seconds = 0.0;  // excluded from determinism guarantees
};

inline double to_db(double msd) {
  return msd > 0.0 ? 10.0 * std::log10(msd) : -std::numeric_limits<double>::infinity();
}

inline void write_trajectory(const std::filesystem::path& file, const TrajectoryRecord& tr) {
  std::ofstream os(file);
  if (!os) throw InvalidArgument("cannot write " + file.string());
  os << "block,msd,fourth";
  if (!tr.per_agent.empty())
    for (int k = 0; k < tr.agents; ++k) os << ",agent_" << k;
  os << "\n";
  char buf[64];
  for (int i = 0; i <= tr.blocks; ++i) {
    os << i;
    std::snprintf(buf, sizeof buf, ",%.10e,%.10e", tr.msd[i], tr.fourth[i]);
    os << buf;
    if (!tr.per_agent.empty())
      for (double d : tr.per_agent[i]) {
        std::snprintf(buf, sizeof buf, ",%.10e", d);
        os << buf;
      }
    os << "\n";
  }
}

/// One simulate+theory pair. Failures are recorded on the point, not thrown.
inline PointResult run_point(const RunConfiguration& cfg, std::string label, std::string axis,
                             double value, const std::filesystem::path& out_dir) {
  PointResult pt;
  pt.label = std::move(label);
  pt.axis = std::move(axis);
  pt.value = value;
  try {
    const Experiment ex = build_experiment(cfg);
    const TrajectoryRecord tr = run(ex.sim, ex.problem, ex.preset.plan);
    const int window =
        std::max(1, static_cast<int>(std::lround(cfg.simulation.window * cfg.simulation.blocks)));
    pt.empirical = measure_msd(tr, window);
    pt.convergence_block = convergence_block(tr, pt.empirical.msd);
    pt.curve = tr.msd;
    if (cfg.output.trajectories && !out_dir.empty()) {
      pt.trajectory_file = pt.label + ".trajectory.csv";
      write_trajectory(out_dir / pt.trajectory_file, tr);
    }
    if (cfg.theory.enabled) {
      try {
        pt.theory = summarize(theory_for(cfg, ex));
      } catch (const std::exception& e) {
        pt.theory_error = e.what();
      }
    }
  } catch (const NumericalError& e) {
    pt.status = "diverged";
    pt.error = pt.label + ": " + e.what();
  } catch (const std::exception& e) {
    pt.status = "error";
    pt.error = pt.label + ": " + e.what();
  }
  return pt;
}

inline Json to_json(const TheorySummary& t) {
  Json j = {{"msd", t.msd},
            {"msd_db", to_db(t.msd)},
            {"components", {{"noise", t.msd_noise}, {"bias", t.msd_bias}, {"cross", t.msd_cross}}},
            {"estimation", {{"mode", t.mode},
                            {"patterns", t.samples},
                            {"spectral_radius", t.spectral_radius},
                            {"distance_to_identity", t.distance_to_identity},
                            {"max_g_stderr", t.max_g_stderr},
                            {"solve_residual", t.solve_residual}}}};
  if (t.approx_local_updates)
    j["approx_local_updates"] = {{"value", t.approx_local_updates->value},
                                 {"remainder", t.approx_local_updates->remainder}};
  if (t.approx_activation)
    j["approx_activation"] = {{"value", t.approx_activation->value},
                              {"remainder", t.approx_activation->remainder}};
  return j;
}

inline Json to_json(const PointResult& p) {
  Json j;
  j["label"] = p.label;
  if (!p.axis.empty()) {
    j["axis"] = p.axis;
    j["value"] = p.value;
  }
  j["status"] = p.status;
  if (!p.error.empty()) j["error"] = p.error;
  if (p.status == "ok") {
    j["empirical"] = {{"msd", p.empirical.msd},
                      {"msd_db", to_db(p.empirical.msd)},
                      {"fourth", p.empirical.fourth},
                      {"window_blocks", p.empirical.window},
                      {"stationary", p.empirical.stationary},
                      {"first_half", p.empirical.first_half},
                      {"second_half", p.empirical.second_half}};
    j["convergence_block"] = p.convergence_block;
    if (!p.trajectory_file.empty()) j["trajectory"] = p.trajectory_file;
  }
  if (p.theory) {
    j["theory"] = to_json(*p.theory);
    if (p.status == "ok" && p.empirical.msd > 0.0)
      j["relative_gap"] = (p.theory->msd - p.empirical.msd) / p.empirical.msd;
  }
  if (!p.theory_error.empty()) j["theory_error"] = p.theory_error;
  return j;
}

inline Json to_json(const ResultBundle& b) {
  Json pts = Json::array();
  for (const auto& p : b.points) pts.push_back(to_json(p));
  Json j = {{"command", b.command}, {"seed", b.seed}};
  if (!b.axis.empty()) j["axis"] = b.axis;
  j["points"] = pts;
  j["metadata"] = {{"version", kVersion}, {"wall_seconds", b.wall_seconds}};
  return j;
}

inline bool all_ok(const ResultBundle& b) {
  for (const auto& p : b.points)
    if (p.status != "ok") return false;
  return true;
}

inline std::filesystem::path prepare_output(const RunConfiguration& cfg) {
  std::filesystem::path dir(cfg.output.directory);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_json(const std::filesystem::path& file, const Json& j) {
  std::ofstream os(file);
  if (!os) throw InvalidArgument("cannot write " + file.string());
  os << j.dump(2) << "\n";
}

/// Plot-ready columnar files: one learning curve per point (block, MSD in dB,
/// theory in dB) and, for sweeps, one table of axis value against MSD.
inline std::vector<std::filesystem::path> emit_plotdata(const ResultBundle& bundle,
                                                        const std::filesystem::path& dir) {
  if (bundle.points.empty()) throw InvalidArgument("result bundle has no points to plot");
  std::vector<std::filesystem::path> written;
  char buf[160];
  for (const auto& p : bundle.points) {
    if (p.status != "ok" || p.curve.empty()) continue;
    const auto file = dir / (p.label + ".curve.dat");
    std::ofstream os(file);
    os << "# block msd_db theory_db\n";
    const double th = p.theory ? to_db(p.theory->msd) : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < p.curve.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu %.6f %.6f\n", i, to_db(p.curve[i]), th);
      os << buf;
    }
    written.push_back(file);
  }
  if (!bundle.axis.empty()) {
    const auto file = dir / "sweep.dat";
    std::ofstream os(file);
    os << "# " << bundle.axis << " empirical_msd empirical_db theory_msd theory_db convergence_block status\n";
    for (const auto& p : bundle.points) {
      const double emp = p.status == "ok" ? p.empirical.msd : std::numeric_limits<double>::quiet_NaN();
      const double th = p.theory ? p.theory->msd : std::numeric_limits<double>::quiet_NaN();
      std::snprintf(buf, sizeof buf, "%.6g %.10e %.6f %.10e %.6f %d %s\n", p.value, emp, to_db(emp),
                    th, to_db(th), p.convergence_block, p.status.c_str());
      os << buf;
    }
    written.push_back(file);
  }
  return written;
}

namespace detail {

inline void finish_bundle(const RunConfiguration& cfg, const std::filesystem::path& dir,
                          ResultBundle& b, std::chrono::steady_clock::time_point start) {
  b.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(dir / "summary.json", to_json(b));
  if (cfg.output.plotdata) emit_plotdata(b, dir);
}

}  // namespace detail

inline ResultBundle cmd_simulate(const RunConfiguration& cfg) {
  const auto start = std::chrono::steady_clock::now();
  validate(cfg);
  const auto dir = prepare_output(cfg);
  ResultBundle b;
  b.command = "simulate";
  b.seed = cfg.seed;
  b.points.push_back(run_point(cfg, "run", "", 0.0, dir));
  detail::finish_bundle(cfg, dir, b, start);
  return b;
}

/// Theory only; writes theory.json.
inline Json cmd_theory(const RunConfiguration& cfg) {
  validate(cfg);
  const auto dir = prepare_output(cfg);
  const Experiment ex = build_experiment(cfg);
  const MsdReport rep = theory_for(cfg, ex);
  Json j = to_json(summarize(rep));
  j["seed"] = cfg.seed;
  j["mu"] = ex.sim.mu;
  j["local_steps"] = ex.sim.local_steps;
  j["agents"] = ex.problem.agents();
  write_json(dir / "theory.json", j);
  return j;
}

enum class SweepAxis { mu, local_steps, activation };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "mu") return SweepAxis::mu;
  if (s == "local-steps") return SweepAxis::local_steps;
  if (s == "activation") return SweepAxis::activation;
  throw ConfigError("<axis>", "'" + s + "' is not one of: mu, local-steps, activation");
}

inline const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::mu: return "mu";
    case SweepAxis::local_steps: return "local-steps";
    case SweepAxis::activation: return "activation";
  }
  return "?";
}

/// One simulate+theory pair per axis value. Points run concurrently up to
/// simulation.threads; each point keeps the master seed, so a point's result
/// does not depend on which other points are in the sweep.
inline ResultBundle cmd_sweep(const RunConfiguration& cfg, SweepAxis axis) {
  const auto start = std::chrono::steady_clock::now();
  validate(cfg);
  std::vector<RunConfiguration> configs;
  std::vector<double> values;
  std::vector<std::string> labels;
  char buf[64];
  if (axis == SweepAxis::mu) {
    if (cfg.sweep.mu.empty()) throw ConfigError("sweep.mu", "empty sweep axis");
    for (double v : cfg.sweep.mu) {
      RunConfiguration c = cfg;
      c.simulation.mu = v;
      configs.push_back(c);
      values.push_back(v);
      std::snprintf(buf, sizeof buf, "mu_%g", v);
      labels.emplace_back(buf);
    }
  } else if (axis == SweepAxis::local_steps) {
    if (cfg.sweep.local_steps.empty()) throw ConfigError("sweep.local_steps", "empty sweep axis");
    for (int v : cfg.sweep.local_steps) {
      RunConfiguration c = cfg;
      c.simulation.local_steps = v;
      configs.push_back(c);
      values.push_back(v);
      labels.push_back("T_" + std::to_string(v));
    }
  } else {
    if (cfg.sweep.q.empty()) throw ConfigError("sweep.q", "empty sweep axis");
    for (double v : cfg.sweep.q) {
      RunConfiguration c = cfg;
      c.activation.kind = "scalar";
      c.activation.q = v;
      configs.push_back(c);
      values.push_back(v);
      std::snprintf(buf, sizeof buf, "q_%g", v);
      labels.emplace_back(buf);
    }
  }
  const auto dir = prepare_output(cfg);
  ResultBundle b;
  b.command = "sweep";
  b.seed = cfg.seed;
  b.axis = axis_name(axis);
  b.points.resize(configs.size());
  const std::size_t workers = std::max(1, cfg.simulation.threads);
  for (std::size_t first = 0; first < configs.size(); first += workers) {
    std::vector<std::future<PointResult>> jobs;
    for (std::size_t i = first; i < std::min(configs.size(), first + workers); ++i) {
      configs[i].simulation.threads = 1;
      jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                [&, i] { return run_point(configs[i], labels[i], b.axis, values[i], dir); }));
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) b.points[first + j] = jobs[j].get();
  }
  detail::finish_bundle(cfg, dir, b, start);
  return b;
}

// ---- figure reproductions ----

/// Sparser, unit-scale profile used by the activation and local-update
/// figures: agent disagreement is large enough there for the trends to stand
/// well above Monte-Carlo noise.
inline RunConfiguration figure_profile() {
  RunConfiguration c;
  c.topology.radius = 0.5;
  c.problem.input_covariance = {{1.0, 0.0}, {0.0, 1.0}};
  c.problem.mean_low = -1.0;
  c.problem.mean_high = 1.0;
  c.simulation.threads = 1;
  return c;
}

/// Learning curve against the theory line on the desk problem.
inline ResultBundle reproduce_fig2(RunConfiguration cfg) {
  ResultBundle b = cmd_simulate(cfg);
  b.command = "reproduce-fig2";
  write_json(std::filesystem::path(cfg.output.directory) / "summary.json", to_json(b));
  return b;
}

/// Uniform activation probabilities, one local step.
inline ResultBundle reproduce_fig4(RunConfiguration cfg) {
  if (cfg.sweep.q.empty()) cfg.sweep.q = {0.1, 0.5, 0.9};
  cfg.simulation.local_steps = 1;
  ResultBundle b = cmd_sweep(cfg, SweepAxis::activation);
  b.command = "reproduce-fig4";
  write_json(std::filesystem::path(cfg.output.directory) / "summary.json", to_json(b));
  return b;
}

/// Full participation, varying local steps.
inline ResultBundle reproduce_fig5(RunConfiguration cfg) {
  if (cfg.sweep.local_steps.empty()) cfg.sweep.local_steps = {2, 5, 10};
  cfg.activation.kind = "scalar";
  cfg.activation.q = 1.0;
  ResultBundle b = cmd_sweep(cfg, SweepAxis::local_steps);
  b.command = "reproduce-fig5";
  write_json(std::filesystem::path(cfg.output.directory) / "summary.json", to_json(b));
  return b;
}

}  // namespace difflearn
