// Acceptance gate: one line per criterion, nonzero exit on any hard failure.

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "fjmpc.hpp"
#include "oracles.hpp"

using namespace fjmpc;

namespace {

enum class Verdict { pass, advisory, fail };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome pass_if(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

// 1
Outcome energy() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = PlantParams::canonical();
  FullState s = FullState::zero(1);
  s.theta(0) = 0.1;
  const double E0 = total_energy(p, s);
  for (long k = 0; k < 50000; ++k) s = step_rk4(p, s, Vec::Zero(1), Vec::Zero(1), 1e-4, k * 1e-4);
  const double drift = std::abs(total_energy(p, s) - E0) / E0;
  const double secs = seconds_since(t0);
  return pass_if(drift < 1e-6 && secs < 5.0, fmt("drift=%.3e runtime=%.2fs", drift, secs));
}

// 2
Outcome fast_mode() {
  const auto m = build_fast_model(PlantParams::canonical(), FullState::zero(1));
  const Eigen::VectorXcd ev = m.A.eigenvalues();
  const double w = std::sqrt(362.0 * (1.0 + 1.0 / 0.598));
  double err = 0.0;
  for (int i = 0; i < ev.size(); ++i) err = std::max({err, std::abs(ev(i).real()), std::abs(std::abs(ev(i).imag()) - w)});
  return pass_if(err < 1e-9, fmt("omega=%.6f err=%.3e", w, err));
}

// 3
Outcome zoh() {
  const auto m = build_fast_model(PlantParams::canonical(), FullState::zero(1));
  const double w = std::sqrt(362.0 * (1.0 + 1.0 / 0.598)), gain = 362.0 / 0.598;
  double err = 0.0;
  for (double dt : {1e-4, 1e-3, 1e-2}) {
    const auto d = discretize_zoh(m, dt);
    const auto [Ad, Ed] = oracle::oscillator_zoh(w, dt);
    err = std::max({err, (d.Ad - Ad).cwiseAbs().maxCoeff(), (d.Ed - gain * Ed).cwiseAbs().maxCoeff()});
  }
  return pass_if(err < 1e-10, fmt("max entry err=%.3e", err));
}

// 4
Outcome condensing() {
  std::mt19937 rng(4);
  std::normal_distribution<double> n01;
  auto p = PlantParams::canonical();
  const FullState s = FullState::zero(1);
  double worst = 0.0;
  int cases = 0;
  for (const auto& m : {build_fast_model(p, s), build_slow_model(p, s), build_full_model(p, s)}) {
    const auto dm = discretize_zoh(m, 1e-3);
    for (int trial = 0; trial < 50; ++trial, ++cases) {
      const int N_P = std::uniform_int_distribution<int>(1, 20)(rng);
      const int N_C = std::uniform_int_distribution<int>(1, N_P)(rng);
      const auto po = condense(dm, N_P, N_C);
      Vec z(m.states()), u(m.inputs() * N_C);
      for (auto& v : z) v = n01(rng);
      for (auto& v : u) v = 10.0 * n01(rng);
      const Vec expect = oracle::simulate_outputs(dm, z, u, N_P, N_C);
      const Vec got = po.C_hat * z + po.D_hat * u;
      worst = std::max(worst, (got - expect).cwiseAbs().maxCoeff() / (1.0 + expect.cwiseAbs().maxCoeff()));
    }
  }
  return pass_if(worst < 1e-9, fmt("cases=%d max rel err=%.3e", cases, worst));
}

// 5
Outcome qp_oracle() {
  std::mt19937 rng(5);
  double worst = 0.0;
  int outside = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto qp = oracle::random_box_qp(rng, std::uniform_int_distribution<int>(1, 6)(rng));
    const auto sol = solve_box_qp(qp);
    const double best = qp.cost(oracle::enumerate_box_qp(qp));
    worst = std::max(worst, std::abs(sol.cost - best) / (1.0 + std::abs(best)));
    outside += (sol.u_star.array() < qp.lb.array()).any() || (sol.u_star.array() > qp.ub.array()).any();
  }
  return pass_if(worst < 1e-8 && outside == 0, fmt("max rel gap=%.3e outside=%d", worst, outside));
}

// 6
Outcome constraints() {
  const auto t0 = std::chrono::steady_clock::now();
  double peak_applied = 0.0, peak_command = 0.0;
  int stops = 0;
  for (const char* ctrl : {"mpc-fast", "mpc-slow", "mpc-full"}) {
    for (auto kind : {ScenarioKind::step, ScenarioKind::smooth_step, ScenarioKind::chirp, ScenarioKind::impact}) {
      ScenarioConfig c;
      c.kind = kind;
      c.controller = ctrl;
      c.resolve();
      const auto r = run_scenario(c);
      stops += r.metrics.safety_stop;
      peak_applied = std::max(peak_applied, r.metrics.max_tau);
      for (const auto& cyc : r.log.cycles) peak_command = std::max(peak_command, std::abs(cyc.command));
    }
  }
  const double secs = seconds_since(t0);
  return pass_if(peak_command <= 100.0 && peak_applied <= 100.0 && stops == 0 && secs < 60.0,
                 fmt("max|command|=%.6f max|tau_m|=%.6f safety_stops=%d runtime=%.1fs", peak_command, peak_applied,
                     stops, secs));
}

// 7
Outcome ordering() {
  std::map<std::string, Metrics> m;
  for (const auto& name : controller_names()) {
    ScenarioConfig c;
    c.kind = ScenarioKind::chirp;
    c.controller = name;
    c.resolve();
    m[name] = run_scenario(c).metrics;
  }
  const double fp = m["mpc-fast"].pos_rmse, fv = m["mpc-fast"].vel_rmse;
  // Relative margin of each required inequality a < b is (b - a) / b.
  std::vector<double> margins{(m["sp"].pos_rmse - fp) / m["sp"].pos_rmse,
                              (m["motor-pd"].pos_rmse - fp) / m["motor-pd"].pos_rmse};
  for (const auto& [name, x] : m)
    if (name != "mpc-fast") margins.push_back((x.vel_rmse - fv) / x.vel_rmse);
  const double worst = *std::min_element(margins.begin(), margins.end());
  std::string detail;
  for (const auto& [name, x] : m) detail += fmt("%s=%.4f/%.4f ", name.c_str(), x.pos_rmse, x.vel_rmse);
  detail += fmt("(pos/vel rmse) worst margin=%.1f%%", 100.0 * worst);
  if (worst > 0.05) return {Verdict::pass, detail};
  if (worst > -0.05) return {Verdict::advisory, detail};
  return {Verdict::fail, detail};
}

// 8
Outcome overshoot() {
  auto peak = [](const char* ctrl) {
    ScenarioConfig c;
    c.controller = ctrl;
    c.sim.T_end = 2.0;
    c.sim.record_decimation = 1;
    const auto r = run_scenario(c);
    return (*std::max_element(r.log.q.begin(), r.log.q.end()) - 0.26) / 0.26;
  };
  const double pd = peak("motor-pd"), fast = peak("mpc-fast");
  return pass_if(pd > 0.02 && fast < pd, fmt("overshoot motor-pd=%.2f%% mpc-fast=%.2f%%", 100.0 * pd, 100.0 * fast));
}

// 9
double stiff_limit_error(double K) {
  ScenarioConfig c;
  c.controller = "sp";
  c.plant.K.setConstant(K);
  c.sim.dt_ctrl = 1e-4;
  c.sim.dt_plant = 1e-5;
  c.sim.record_decimation = 100;
  c.sim.T_end = 2.0;
  c.gains.dtau_cutoff_hz = 1000.0;
  const auto r = run_scenario(c);
  const auto g = synthesize_gains(c.plant, sp_design(c.gains));
  const auto ref = oracle::rigid_step(1.0 + g.B_d(0), g.K_q(0), g.D_q(0), 0.26, r.log.t);
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(r.log.q[i] - ref[i]));
  return r.metrics.safety_stop ? std::numeric_limits<double>::infinity() : err;
}

Outcome stiff_limit() {
  const double stiff = stiff_limit_error(1e6), soft = stiff_limit_error(362.0);
  return pass_if(stiff < 0.01 * 0.26 && soft > stiff,
                 fmt("sup err K=1e6: %.3f%% of step, K=362: %.3f%%", 100.0 * stiff / 0.26, 100.0 * soft / 0.26));
}

// 10
Outcome sp_validity_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = default_sp_validity_grid();
  const auto res = sp_validity_sweep(ScenarioConfig{}, grid.K, grid.gamma_rf, grid.omega_n);
  // Minimal valid stiffness: lowest K from which every stiffer cell is valid.
  std::map<std::pair<double, std::string>, double> k_min;
  std::map<std::pair<double, std::string>, bool> tail_valid;
  for (auto it = res.cells.rbegin(); it != res.cells.rend(); ++it) {
    const auto key = std::make_pair(it->axis2, it->axis3);
    if (!tail_valid.count(key)) tail_valid[key] = true, k_min[key] = std::numeric_limits<double>::infinity();
    tail_valid[key] = tail_valid[key] && it->flag == "valid";
    if (tail_valid[key]) k_min[key] = it->axis1;
  }
  int violations = 0;
  for (double w : grid.omega_n)
    for (std::size_t i = 1; i < grid.gamma_rf.size(); ++i)
      violations += k_min[{grid.gamma_rf[i], detail::format_axis(w)}] > k_min[{grid.gamma_rf[i - 1], detail::format_axis(w)}];
  for (double g : grid.gamma_rf)
    for (std::size_t i = 1; i < grid.omega_n.size(); ++i)
      violations += k_min[{g, detail::format_axis(grid.omega_n[i])}] < k_min[{g, detail::format_axis(grid.omega_n[i - 1])}];
  int invalid = 0;
  for (const auto& c : res.cells) invalid += c.flag != "valid";
  std::string table;
  for (double g : grid.gamma_rf) {
    table += fmt(" g=%g:", g);
    for (double w : grid.omega_n) table += fmt("%.0f,", k_min[{g, detail::format_axis(w)}]);
    table.pop_back();
  }
  const double secs = seconds_since(t0);
  return pass_if(violations == 0 && secs < 600.0,
                 fmt("cells=%zu invalid=%d violations=%d runtime=%.0fs Kmin per omega", res.cells.size(), invalid,
                     violations, secs) +
                     table);
}

// 11
Outcome horizon_inclusion() {
  const auto grid = default_horizon_grid();
  const auto res = horizon_feasibility_sweep(ScenarioConfig{}, grid.N_P, grid.N_C, 1e-3);
  std::map<std::string, std::map<std::pair<double, double>, bool>> feasible;
  for (const auto& c : res.cells) feasible[c.axis3][{c.axis1, c.axis2}] = c.flag == "feasible";
  int compared = 0, violations = 0;
  std::map<std::string, int> count;
  for (const auto& [cell, full_ok] : feasible["mpc-full"]) {
    ++compared;
    if (full_ok && (!feasible["mpc-slow"][cell] || !feasible["mpc-fast"][cell])) ++violations;
  }
  for (const auto& [v, cells] : feasible)
    for (const auto& [cell, ok] : cells) count[v] += ok;
  const double frac = compared ? static_cast<double>(violations) / compared : 1.0;
  return pass_if(frac <= 0.05, fmt("feasible fast=%d slow=%d full=%d of %d; violations=%d (%.1f%%)",
                                   count["mpc-fast"], count["mpc-slow"], count["mpc-full"], compared, violations,
                                   100.0 * frac));
}

// 12
Outcome decomposition() {
  double worst = 0.0;
  long cycles = 0;
  for (const char* ctrl : {"sp", "mpc-fast"}) {
    for (auto kind : {ScenarioKind::step, ScenarioKind::chirp, ScenarioKind::impact}) {
      ScenarioConfig c;
      c.kind = kind;
      c.controller = ctrl;
      c.resolve();
      const auto r = run_scenario(c);
      for (const auto& cyc : r.log.cycles) {
        worst = std::max(worst, std::abs(cyc.tau_slow + cyc.tau_fast - cyc.tau));
        ++cycles;
      }
    }
  }
  return pass_if(worst < 1e-12, fmt("cycles=%ld max residual=%.3e", cycles, worst));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"energy conservation", energy},
      {"fast-mode frequency", fast_mode},
      {"ZOH correctness", zoh},
      {"condensing correctness", condensing},
      {"QP oracle equivalence", qp_oracle},
      {"constraint guarantee", constraints},
      {"controller ordering on chirp", ordering},
      {"motor-PD overshoot vs MPC-fast", overshoot},
      {"stiff-limit SP validity", stiff_limit},
      {"SP-validity trend", sp_validity_trend},
      {"horizon-feasibility inclusion", horizon_inclusion},
      {"decomposition identity", decomposition},
  };
  int hard = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::advisory ? "ADVISORY-FAIL" : "FAIL";
    std::printf("%-13s %2zu %-32s %s\n", tag, i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    hard += o.verdict == Verdict::fail;
  }
  std::printf("%d hard failure(s)\n", hard);
  return hard == 0 ? 0 : 1;
}
