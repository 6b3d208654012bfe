#pragma once

// Run configuration: one JSON document with fixed sections. Unknown keys and
// type mismatches are rejected with the dotted path of the offending field.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "difflearn/engine.hpp"
#include "difflearn/errors.hpp"
#include "difflearn/msdtheory.hpp"
#include "difflearn/netgraph.hpp"
#include "difflearn/participation.hpp"
#include "difflearn/problems.hpp"

namespace difflearn {

using Json = nlohmann::ordered_json;

struct TopologySpec {
  std::string kind = "random-geometric";  // ring | path | complete | random-geometric | edges
  int agents = 8;
  double radius = 0.8;
  std::uint64_t seed = 7;
  std::vector<std::pair<int, int>> edges;

  bool operator==(const TopologySpec&) const = default;
};

struct ActivationSpec {
  std::string kind = "uniform-random";  // scalar | vector | uniform-random
  double q = 1.0;
  std::vector<double> values;
  double low = 0.6;
  double high = 1.0;
  std::uint64_t seed = 7;

  bool operator==(const ActivationSpec&) const = default;
};

struct ProblemSpec {
  int dim = 2;
  int samples = 100;
  double rho = 0.1;
  std::vector<std::vector<double>> input_covariance{{0.1, 0.0}, {0.0, 0.1}};
  double mean_low = -0.3;
  double mean_high = 0.3;
  double noise_var_low = 0.1;
  double noise_var_high = 1.0;
  std::vector<double> w_star;  // empty: drawn from the seed
  std::uint64_t seed = 7;
  std::string dataset;  // optional CSV; overrides generation when set

  bool operator==(const ProblemSpec&) const = default;
};

struct SimulationSpec {
  double mu = 0.01;
  int local_steps = 5;
  int blocks = 50000;
  int repetitions = 5;
  std::string mode = "plain";     // plain | drift-corrected
  std::string preset = "general"; // general | fedavg-full | fedavg-partial | standard-diffusion |
                                  // async-diffusion | decentralized-fl
  int subset_size = 0;
  bool deterministic_gradient = false;
  int batch = 1;
  std::string init = "zero";  // zero | target | vector
  std::vector<double> init_vector;
  bool per_agent = false;
  int threads = 1;
  double window = 0.2;  // steady-state window as a fraction of the blocks

  bool operator==(const SimulationSpec&) const = default;
};

struct TheorySpec {
  bool enabled = true;
  std::string mode = "auto";  // exact | monte-carlo | auto
  long samples = 200000;
  int enumeration_limit = 12;
  bool approximations = false;

  bool operator==(const TheorySpec&) const = default;
};

struct SweepSpec {
  std::vector<double> mu;
  std::vector<int> local_steps;
  std::vector<double> q;

  bool operator==(const SweepSpec&) const = default;
};

struct OutputSpec {
  std::string directory = "out";
  bool trajectories = true;
  bool plotdata = true;

  bool operator==(const OutputSpec&) const = default;
};

struct RunConfiguration {
  std::uint64_t seed = 1;
  TopologySpec topology;
  ActivationSpec activation;
  ProblemSpec problem;
  SimulationSpec simulation;
  TheorySpec theory;
  SweepSpec sweep;
  OutputSpec output;

  bool operator==(const RunConfiguration&) const = default;
};

namespace detail {

// Walks one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const Json& v = j_.at(key);
    check_type(v, out, at(key));
    try {
      out = v.get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(at(key), std::string("wrong type: ") + e.what());
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), at(key));
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  template <class T>
  static void check_type(const Json& v, const T&, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<long long>() < 0)
        throw ConfigError(path, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
    } else {
      if (!v.is_array()) throw ConfigError(path, "expected an array");
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require_one_of(const std::string& path, const std::string& value,
                           std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (value == a) return;
    list += list.empty() ? a : std::string(", ") + a;
  }
  throw ConfigError(path, "'" + value + "' is not one of: " + list);
}

}  // namespace detail

/// Checks cross-field invariants; parsing calls it, callers that build a
/// configuration in code should too.
inline void validate(const RunConfiguration& c) {
  const auto& t = c.topology;
  detail::require_one_of("topology.kind", t.kind, {"ring", "path", "complete", "random-geometric", "edges"});
  if (t.agents < 1) throw ConfigError("topology.agents", "must be >= 1");
  if (t.kind == "random-geometric" && !(t.radius > 0.0))
    throw ConfigError("topology.radius", "must be positive");
  for (std::size_t e = 0; e < t.edges.size(); ++e)
    if (t.edges[e].first < 0 || t.edges[e].second < 0 || t.edges[e].first >= t.agents ||
        t.edges[e].second >= t.agents)
      throw ConfigError("topology.edges[" + std::to_string(e) + "]", "agent index out of range");

  const auto& a = c.activation;
  detail::require_one_of("activation.kind", a.kind, {"scalar", "vector", "uniform-random"});
  if (a.kind == "scalar" && !(a.q >= 0.0 && a.q <= 1.0))
    throw ConfigError("activation.q", "must lie in [0, 1]");
  if (a.kind == "vector") {
    if (static_cast<int>(a.values.size()) != t.agents)
      throw ConfigError("activation.values", "needs one entry per agent (" +
                                                 std::to_string(t.agents) + ")");
    for (std::size_t k = 0; k < a.values.size(); ++k)
      if (!(a.values[k] >= 0.0 && a.values[k] <= 1.0))
        throw ConfigError("activation.values[" + std::to_string(k) + "]", "must lie in [0, 1]");
  }
  if (a.kind == "uniform-random" && !(a.low >= 0.0 && a.high <= 1.0 && a.low <= a.high))
    throw ConfigError("activation", "uniform-random range must satisfy 0 <= low <= high <= 1");

  const auto& p = c.problem;
  if (p.dim < 1) throw ConfigError("problem.dim", "must be >= 1");
  if (p.samples < 1) throw ConfigError("problem.samples", "must be >= 1");
  if (!(p.rho >= 0.0)) throw ConfigError("problem.rho", "must be >= 0");
  if (!p.input_covariance.empty()) {
    if (static_cast<int>(p.input_covariance.size()) != p.dim)
      throw ConfigError("problem.input_covariance", "must be dim x dim");
    for (const auto& row : p.input_covariance)
      if (static_cast<int>(row.size()) != p.dim)
        throw ConfigError("problem.input_covariance", "must be dim x dim");
  }
  if (p.mean_low > p.mean_high) throw ConfigError("problem.mean_low", "exceeds mean_high");
  if (p.noise_var_low < 0.0 || p.noise_var_low > p.noise_var_high)
    throw ConfigError("problem.noise_var_low", "must satisfy 0 <= low <= noise_var_high");
  if (!p.w_star.empty() && static_cast<int>(p.w_star.size()) != p.dim)
    throw ConfigError("problem.w_star", "must have dim entries");

  const auto& s = c.simulation;
  if (!(s.mu > 0.0)) throw ConfigError("simulation.mu", "must be positive");
  if (s.local_steps < 1) throw ConfigError("simulation.local_steps", "must be >= 1");
  if (s.blocks < 1) throw ConfigError("simulation.blocks", "must be >= 1");
  if (s.repetitions < 1) throw ConfigError("simulation.repetitions", "must be >= 1");
  if (s.batch < 1) throw ConfigError("simulation.batch", "must be >= 1");
  if (s.threads < 1) throw ConfigError("simulation.threads", "must be >= 1");
  if (!(s.window > 0.0 && s.window <= 1.0)) throw ConfigError("simulation.window", "must lie in (0, 1]");
  detail::require_one_of("simulation.mode", s.mode, {"plain", "drift-corrected"});
  detail::require_one_of("simulation.preset", s.preset,
                         {"general", "fedavg-full", "fedavg-partial", "standard-diffusion",
                          "async-diffusion", "decentralized-fl"});
  if (s.preset == "fedavg-partial" && (s.subset_size < 1 || s.subset_size > t.agents))
    throw ConfigError("simulation.subset_size", "fedavg-partial needs 1 <= subset_size <= agents");
  detail::require_one_of("simulation.init", s.init, {"zero", "target", "vector"});
  if (s.init == "vector" && static_cast<int>(s.init_vector.size()) != p.dim)
    throw ConfigError("simulation.init_vector", "must have dim entries");

  const auto& th = c.theory;
  detail::require_one_of("theory.mode", th.mode, {"exact", "monte-carlo", "auto"});
  if (th.samples < 2) throw ConfigError("theory.samples", "must be >= 2");
  if (th.enumeration_limit < 1 || th.enumeration_limit > 20)
    throw ConfigError("theory.enumeration_limit", "must lie in [1, 20]");

  for (std::size_t i = 0; i < c.sweep.mu.size(); ++i)
    if (!(c.sweep.mu[i] > 0.0)) throw ConfigError("sweep.mu[" + std::to_string(i) + "]", "must be positive");
  for (std::size_t i = 0; i < c.sweep.local_steps.size(); ++i)
    if (c.sweep.local_steps[i] < 1)
      throw ConfigError("sweep.local_steps[" + std::to_string(i) + "]", "must be >= 1");
  for (std::size_t i = 0; i < c.sweep.q.size(); ++i)
    if (!(c.sweep.q[i] >= 0.0 && c.sweep.q[i] <= 1.0))
      throw ConfigError("sweep.q[" + std::to_string(i) + "]", "must lie in [0, 1]");
  if (c.output.directory.empty()) throw ConfigError("output.directory", "must not be empty");
}

inline RunConfiguration parse_config(const Json& j) {
  RunConfiguration c;
  detail::Section root(j, "");
  root.get("seed", c.seed);

  if (root.has("topology")) {
    auto s = root.child("topology");
    auto& t = c.topology;
    s.get("kind", t.kind);
    s.get("agents", t.agents);
    s.get("radius", t.radius);
    s.get("seed", t.seed);
    if (s.has("edges")) {
      const Json& e = s.raw("edges");
      if (!e.is_array()) throw ConfigError(s.at("edges"), "expected an array of [a, b] pairs");
      for (std::size_t i = 0; i < e.size(); ++i) {
        const Json& pr = e[i];
        if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number_integer() ||
            !pr[1].is_number_integer())
          throw ConfigError(s.at("edges") + "[" + std::to_string(i) + "]",
                            "expected a pair of agent indices");
        t.edges.emplace_back(pr[0].get<int>(), pr[1].get<int>());
      }
    }
    s.finish();
  }
  if (root.has("activation")) {
    auto s = root.child("activation");
    auto& a = c.activation;
    s.get("kind", a.kind);
    s.get("q", a.q);
    s.get("values", a.values);
    s.get("low", a.low);
    s.get("high", a.high);
    s.get("seed", a.seed);
    s.finish();
  }
  if (root.has("problem")) {
    auto s = root.child("problem");
    auto& p = c.problem;
    s.get("dim", p.dim);
    s.get("samples", p.samples);
    s.get("rho", p.rho);
    s.get("input_covariance", p.input_covariance);
    s.get("mean_low", p.mean_low);
    s.get("mean_high", p.mean_high);
    s.get("noise_var_low", p.noise_var_low);
    s.get("noise_var_high", p.noise_var_high);
    s.get("w_star", p.w_star);
    s.get("seed", p.seed);
    s.get("dataset", p.dataset);
    s.finish();
  }
  if (root.has("simulation")) {
    auto s = root.child("simulation");
    auto& m = c.simulation;
    s.get("mu", m.mu);
    s.get("local_steps", m.local_steps);
    s.get("blocks", m.blocks);
    s.get("repetitions", m.repetitions);
    s.get("mode", m.mode);
    s.get("preset", m.preset);
    s.get("subset_size", m.subset_size);
    s.get("deterministic_gradient", m.deterministic_gradient);
    s.get("batch", m.batch);
    s.get("init", m.init);
    s.get("init_vector", m.init_vector);
    s.get("per_agent", m.per_agent);
    s.get("threads", m.threads);
    s.get("window", m.window);
    s.finish();
  }
  if (root.has("theory")) {
    auto s = root.child("theory");
    auto& t = c.theory;
    s.get("enabled", t.enabled);
    s.get("mode", t.mode);
    s.get("samples", t.samples);
    s.get("enumeration_limit", t.enumeration_limit);
    s.get("approximations", t.approximations);
    s.finish();
  }
  if (root.has("sweep")) {
    auto s = root.child("sweep");
    s.get("mu", c.sweep.mu);
    s.get("local_steps", c.sweep.local_steps);
    s.get("q", c.sweep.q);
    s.finish();
  }
  if (root.has("output")) {
    auto s = root.child("output");
    s.get("directory", c.output.directory);
    s.get("trajectories", c.output.trajectories);
    s.get("plotdata", c.output.plotdata);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline RunConfiguration parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("<document>", e.what());
  }
  return parse_config(j);
}

inline RunConfiguration load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline Json to_json(const RunConfiguration& c) {
  Json j;
  j["seed"] = c.seed;
  const auto& t = c.topology;
  Json edges = Json::array();
  for (auto [a, b] : t.edges) edges.push_back({a, b});
  j["topology"] = {{"kind", t.kind}, {"agents", t.agents}, {"radius", t.radius},
                   {"seed", t.seed}, {"edges", edges}};
  const auto& a = c.activation;
  j["activation"] = {{"kind", a.kind}, {"q", a.q},     {"values", a.values},
                     {"low", a.low},   {"high", a.high}, {"seed", a.seed}};
  const auto& p = c.problem;
  j["problem"] = {{"dim", p.dim},
                  {"samples", p.samples},
                  {"rho", p.rho},
                  {"input_covariance", p.input_covariance},
                  {"mean_low", p.mean_low},
                  {"mean_high", p.mean_high},
                  {"noise_var_low", p.noise_var_low},
                  {"noise_var_high", p.noise_var_high},
                  {"w_star", p.w_star},
                  {"seed", p.seed},
                  {"dataset", p.dataset}};
  const auto& s = c.simulation;
  j["simulation"] = {{"mu", s.mu},
                     {"local_steps", s.local_steps},
                     {"blocks", s.blocks},
                     {"repetitions", s.repetitions},
                     {"mode", s.mode},
                     {"preset", s.preset},
                     {"subset_size", s.subset_size},
                     {"deterministic_gradient", s.deterministic_gradient},
                     {"batch", s.batch},
                     {"init", s.init},
                     {"init_vector", s.init_vector},
                     {"per_agent", s.per_agent},
                     {"threads", s.threads},
                     {"window", s.window}};
  const auto& th = c.theory;
  j["theory"] = {{"enabled", th.enabled},
                 {"mode", th.mode},
                 {"samples", th.samples},
                 {"enumeration_limit", th.enumeration_limit},
                 {"approximations", th.approximations}};
  j["sweep"] = {{"mu", c.sweep.mu}, {"local_steps", c.sweep.local_steps}, {"q", c.sweep.q}};
  j["output"] = {{"directory", c.output.directory},
                 {"trajectories", c.output.trajectories},
                 {"plotdata", c.output.plotdata}};
  return j;
}

inline std::string serialize_config(const RunConfiguration& c) { return to_json(c).dump(2); }

// ---- turning a configuration into library objects ----

inline Topology make_topology(const TopologySpec& t) {
  if (t.kind == "ring") return ring_topology(t.agents);
  if (t.kind == "path") return path_topology(t.agents);
  if (t.kind == "complete") return complete_topology(t.agents);
  if (t.kind == "random-geometric") return random_geometric_topology(t.agents, t.radius, t.seed);
  return Topology::from_edges(t.agents, t.edges);
}

inline ActivationModel make_activation(const ActivationSpec& a, int agents) {
  if (a.kind == "scalar") return ActivationModel::uniform(agents, a.q);
  if (a.kind == "vector") return ActivationModel(Eigen::Map<const Eigen::VectorXd>(
      a.values.data(), static_cast<Eigen::Index>(a.values.size())));
  return ActivationModel::uniform_random(agents, a.low, a.high, a.seed);
}

inline GenerationSpec make_generation(const ProblemSpec& p, int agents) {
  GenerationSpec g;
  g.agents = agents;
  g.dim = p.dim;
  g.samples = p.samples;
  g.rho = p.rho;
  if (!p.input_covariance.empty()) {
    g.input_covariance.resize(p.dim, p.dim);
    for (int r = 0; r < p.dim; ++r)
      for (int col = 0; col < p.dim; ++col) g.input_covariance(r, col) = p.input_covariance[r][col];
  }
  g.mean_low = p.mean_low;
  g.mean_high = p.mean_high;
  g.noise_var_low = p.noise_var_low;
  g.noise_var_high = p.noise_var_high;
  if (!p.w_star.empty())
    g.w_star = Eigen::Map<const Eigen::VectorXd>(p.w_star.data(),
                                                 static_cast<Eigen::Index>(p.w_star.size()));
  g.seed = p.seed;
  return g;
}

inline QuadraticProblem make_problem(const ProblemSpec& p, int agents) {
  if (!p.dataset.empty()) {
    std::ifstream in(p.dataset);
    if (!in) throw ConfigError("problem.dataset", "cannot open " + p.dataset);
    RegressionDataset data = read_dataset(in);
    if (data.agents() != agents)
      throw ConfigError("problem.dataset", "has " + std::to_string(data.agents()) +
                                               " agents, topology has " + std::to_string(agents));
    return QuadraticProblem(std::move(data), p.rho);
  }
  return generate_synthetic(make_generation(p, agents));
}

inline Preset parse_preset(const std::string& s) {
  if (s == "fedavg-full") return Preset::fedavg_full;
  if (s == "fedavg-partial") return Preset::fedavg_partial;
  if (s == "standard-diffusion") return Preset::standard_diffusion;
  if (s == "async-diffusion") return Preset::async_diffusion;
  if (s == "decentralized-fl") return Preset::decentralized_fl;
  return Preset::general;
}

inline StepMode parse_mode(const std::string& s) {
  return s == "drift-corrected" ? StepMode::drift_corrected : StepMode::plain;
}

inline EstimationMode parse_estimation(const std::string& s) {
  if (s == "exact") return EstimationMode::exact;
  if (s == "monte-carlo") return EstimationMode::monte_carlo;
  return EstimationMode::automatic;
}

inline SimulationConfig make_simulation(const RunConfiguration& c) {
  const auto& s = c.simulation;
  SimulationConfig out;
  out.mu = s.mu;
  out.local_steps = s.local_steps;
  out.blocks = s.blocks;
  out.repetitions = s.repetitions;
  out.seed = c.seed;
  out.mode = parse_mode(s.mode);
  out.preset = parse_preset(s.preset);
  out.subset_size = s.subset_size;
  out.deterministic_gradient = s.deterministic_gradient;
  out.batch = s.batch;
  if (s.init == "target") out.init = InitRule::at_target();
  if (s.init == "vector")
    out.init = InitRule::at(Eigen::Map<const Eigen::VectorXd>(
        s.init_vector.data(), static_cast<Eigen::Index>(s.init_vector.size())));
  out.per_agent = s.per_agent;
  out.threads = s.threads;
  return out;
}

inline EstimationOptions make_estimation(const RunConfiguration& c) {
  EstimationOptions o;
  o.mode = parse_estimation(c.theory.mode);
  o.samples = c.theory.samples;
  o.enumeration_limit = c.theory.enumeration_limit;
  o.seed = c.seed;
  return o;
}

}  // namespace difflearn
