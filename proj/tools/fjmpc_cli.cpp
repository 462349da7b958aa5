// Command-line front end: simulate one scenario, run the grid sweeps, or
// recompute tracking metrics from a logged trace.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 safety stop.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fjmpc.hpp"

namespace {

using namespace fjmpc;

constexpr int kExitConfig = 2;
constexpr int kExitSafetyStop = 3;

struct Overrides {
  std::string controller;
  std::string scenario;
};

ScenarioConfig load(const std::string& path, const Overrides& o) {
  ScenarioConfig c = path.empty() ? ScenarioConfig{} : load_scenario(path);
  if (!o.controller.empty()) c.controller = o.controller;
  if (!o.scenario.empty()) c.kind = parse_scenario_kind(o.scenario);
  c.resolve();
  c.validate();
  return c;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

int cmd_simulate(const std::string& config, const std::string& out_path, const Overrides& o) {
  const ScenarioConfig c = load(config, o);
  const ScenarioResult r = run_scenario(c);
  if (!out_path.empty()) {
    auto out = open_out(out_path);
    r.log.write_csv(out);
  }
  std::cout << "controller=" << c.controller << '\n' << "scenario=" << to_string(c.kind) << '\n';
  print_metrics(std::cout, r.metrics);
  if (r.metrics.safety_stop) {
    std::cerr << "safety stop: " << r.log.stop_reason << '\n';
    return kExitSafetyStop;
  }
  return 0;
}

int cmd_sp_validity(const std::string& config, const std::string& out_path, unsigned threads, const Overrides& o) {
  const ScenarioConfig c = load(config, o);
  const SweepGrid d = default_sp_validity_grid();
  const SweepResult r = sp_validity_sweep(c, c.sweep.K.empty() ? d.K : c.sweep.K,
                                          c.sweep.gamma_rf.empty() ? d.gamma_rf : c.sweep.gamma_rf,
                                          c.sweep.omega_n.empty() ? d.omega_n : c.sweep.omega_n, threads);
  auto out = open_out(out_path);
  r.write_csv(out);
  std::size_t valid = 0;
  for (const auto& cell : r.cells) valid += cell.flag == "valid";
  std::cout << "cells=" << r.cells.size() << '\n' << "valid=" << valid << '\n';
  return 0;
}

int cmd_horizons(const std::string& config, const std::string& out_path, double budget_ms, const Overrides& o) {
  const ScenarioConfig c = load(config, o);
  const SweepGrid d = default_horizon_grid();
  std::vector<MpcVariant> variants{MpcVariant::fast, MpcVariant::slow, MpcVariant::full};
  if (!o.controller.empty()) variants = {parse_mpc_variant(o.controller)};
  const SweepResult r = horizon_feasibility_sweep(c, c.sweep.N_P.empty() ? d.N_P : c.sweep.N_P,
                                                  c.sweep.N_C.empty() ? d.N_C : c.sweep.N_C, budget_ms * 1e-3,
                                                  variants);
  auto out = open_out(out_path);
  r.write_csv(out);
  std::size_t feasible = 0;
  for (const auto& cell : r.cells) feasible += cell.flag == "feasible";
  std::cout << "cells=" << r.cells.size() << '\n' << "feasible=" << feasible << '\n';
  return 0;
}

int cmd_rmse(const std::string& in_path) {
  std::ifstream in(in_path);
  if (!in) throw ConfigError("cannot open '" + in_path + "'");
  const TraceLog log = TraceLog::read_csv(in);
  const Metrics m = compute_metrics(log, 0.0);
  std::cout << "pos_rmse=" << m.pos_rmse << " vel_rmse=" << m.vel_rmse << " max_tau=" << m.max_tau << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible-joint SP/MPC simulation toolkit"};
  app.require_subcommand(1);

  Overrides overrides;
  std::string config, out_path, in_path;
  double budget_ms = 1.0;
  unsigned threads = 0;

  auto* sim = app.add_subcommand("simulate", "Run one closed-loop scenario");
  sim->add_option("--config", config, "JSON config");
  sim->add_option("--out", out_path, "Trace CSV output");
  sim->add_option("--controller", overrides.controller, "motor-pd | sp | mpc-fast | mpc-slow | mpc-full");
  sim->add_option("--scenario", overrides.scenario, "step | smooth-step | chirp | impact | hold");

  auto* sweep = app.add_subcommand("sweep", "Grid sweeps");
  sweep->require_subcommand(1);
  auto* spv = sweep->add_subcommand("sp-validity", "SP validity over stiffness, gamma_rf and omega_n");
  spv->add_option("--config", config, "JSON config");
  spv->add_option("--out", out_path, "Sweep CSV output")->required();
  spv->add_option("--threads", threads, "Worker threads (0 = hardware)");
  auto* hor = sweep->add_subcommand("horizons", "Controller compute time over (N_P, N_C)");
  hor->add_option("--config", config, "JSON config");
  hor->add_option("--out", out_path, "Sweep CSV output")->required();
  hor->add_option("--budget-ms", budget_ms, "Per-cycle budget for the p99 compute time")->check(CLI::PositiveNumber);
  hor->add_option("--controller", overrides.controller, "Restrict to one MPC variant");

  auto* rm = app.add_subcommand("rmse", "Tracking metrics of a trace CSV");
  rm->add_option("--in", in_path, "Trace CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n' << app.help();
    return kExitConfig;
  }

  try {
    if (*sim) return cmd_simulate(config, out_path, overrides);
    if (*spv) return cmd_sp_validity(config, out_path, threads, overrides);
    if (*hor) return cmd_horizons(config, out_path, budget_ms, overrides);
    if (*rm) return cmd_rmse(in_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
