// difflearn: simulate diffusion learning with local updates and partial
// participation, evaluate the steady-state MSD theory, run sweeps.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "difflearn/config.hpp"
#include "difflearn/harness.hpp"

using namespace difflearn;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string theory_mode;
  std::optional<long> samples;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "run configuration (JSON)");
  cmd->add_option("--seed", f.seed, "override the master seed");
  cmd->add_option("-o,--out", f.out, "output directory");
  cmd->add_option("--theory-mode", f.theory_mode, "exact | monte-carlo | auto")
      ->check(CLI::IsMember({"exact", "monte-carlo", "auto"}));
  cmd->add_option("--samples", f.samples, "Monte-Carlo pattern count for the theory");
}

RunConfiguration resolve(const CommonFlags& f, const RunConfiguration& fallback) {
  RunConfiguration cfg = f.config.empty() ? fallback : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output.directory = f.out;
  if (!f.theory_mode.empty()) cfg.theory.mode = f.theory_mode;
  if (f.samples) cfg.theory.samples = *f.samples;
  validate(cfg);
  return cfg;
}

void report(const ResultBundle& b) {
  for (const auto& p : b.points) {
    if (p.status != "ok") {
      std::fprintf(stderr, "%s: %s\n", p.label.c_str(), p.error.c_str());
      continue;
    }
    std::printf("%-12s empirical %.6e (%.2f dB)", p.label.c_str(), p.empirical.msd,
                to_db(p.empirical.msd));
    if (p.theory)
      std::printf("  theory %.6e (%.2f dB)  gap %+.3f", p.theory->msd, to_db(p.theory->msd),
                  (p.theory->msd - p.empirical.msd) / p.empirical.msd);
    else if (!p.theory_error.empty())
      std::printf("  theory unavailable: %s", p.theory_error.c_str());
    std::printf("  converged@%d%s\n", p.convergence_block, p.empirical.stationary ? "" : "  [not stationary]");
  }
}

int bundle_status(const ResultBundle& b) { return all_ok(b) ? 0 : 3; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion learning with local updates and partial agent participation"};
  app.require_subcommand(1);

  CommonFlags simulate_f, theory_f, sweep_f, fig2_f, fig4_f, fig5_f;
  std::string axis;
  auto* simulate = app.add_subcommand("simulate", "run the recursion and compare with theory");
  auto* theory = app.add_subcommand("theory", "evaluate the steady-state MSD expression");
  auto* sweep = app.add_subcommand("sweep", "simulate+theory over one axis");
  auto* fig2 = app.add_subcommand("reproduce-fig2", "learning curve vs theory, desk problem");
  auto* fig4 = app.add_subcommand("reproduce-fig4", "activation probability sweep, T = 1");
  auto* fig5 = app.add_subcommand("reproduce-fig5", "local-update sweep, full participation");
  add_common(simulate, simulate_f);
  add_common(theory, theory_f);
  add_common(sweep, sweep_f);
  add_common(fig2, fig2_f);
  add_common(fig4, fig4_f);
  add_common(fig5, fig5_f);
  sweep->add_option("--axis", axis, "mu | local-steps | activation")
      ->required()
      ->check(CLI::IsMember({"mu", "local-steps", "activation"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      const ResultBundle b = cmd_simulate(resolve(simulate_f, RunConfiguration{}));
      report(b);
      return bundle_status(b);
    }
    if (theory->parsed()) {
      const Json j = cmd_theory(resolve(theory_f, RunConfiguration{}));
      std::printf("theory MSD %.6e (%.2f dB), %s over %ld patterns, spectral radius %.6f\n",
                  j["msd"].get<double>(), j["msd_db"].get<double>(),
                  j["estimation"]["mode"].get<std::string>().c_str(),
                  j["estimation"]["patterns"].get<long>(),
                  j["estimation"]["spectral_radius"].get<double>());
      return 0;
    }
    if (sweep->parsed()) {
      const ResultBundle b = cmd_sweep(resolve(sweep_f, RunConfiguration{}), parse_axis(axis));
      report(b);
      return bundle_status(b);
    }
    if (fig2->parsed()) {
      const ResultBundle b = reproduce_fig2(resolve(fig2_f, RunConfiguration{}));
      report(b);
      return bundle_status(b);
    }
    if (fig4->parsed()) {
      const ResultBundle b = reproduce_fig4(resolve(fig4_f, figure_profile()));
      report(b);
      return bundle_status(b);
    }
    if (fig5->parsed()) {
      const ResultBundle b = reproduce_fig5(resolve(fig5_f, figure_profile()));
      report(b);
      return bundle_status(b);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
