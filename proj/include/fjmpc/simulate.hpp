#pragma once

// Fixed-step closed-loop simulation: RK4 on the plant at dt_plant, controller
// sampled every dt_ctrl with zero-order-hold torque, saturation at the plant.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fjmpc/controllers.hpp"
#include "fjmpc/model.hpp"

namespace fjmpc {

struct SimConfig {
  double dt_plant = 1e-4;
  double dt_ctrl = 1e-3;
  double T_end = 5.0;
  int record_decimation = 10;

  int steps_per_control() const { return static_cast<int>(std::lround(dt_ctrl / dt_plant)); }
  long total_steps() const { return std::lround(T_end / dt_plant); }

  void validate() const {
    if (!(dt_plant > 0.0) || !(dt_ctrl > 0.0)) throw ConfigError("sim: time steps must be > 0");
    if (!(T_end > 0.0)) throw ConfigError("sim: T_end must be > 0");
    if (record_decimation < 1) throw ConfigError("sim: record_decimation must be >= 1");
    const double ratio = dt_ctrl / dt_plant;
    if (ratio < 1.0 - 1e-9 || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
      throw ConfigError("sim: dt_ctrl must be an integer multiple of dt_plant");
  }
};

enum class PulseShape { half_sine, rectangular };

struct ExternalTorqueEvent {
  double t_start = 0.0;
  double duration = 0.05;
  PulseShape shape = PulseShape::half_sine;
  double peak = 0.0;  // N m
  int joint = 0;

  /// Integral of the pulse over its window, N m s.
  double impulse() const {
    return shape == PulseShape::half_sine ? peak * duration * 2.0 / std::numbers::pi : peak * duration;
  }
};

/// Sum of active pulses at time t (link-side torque per joint).
inline Vec apply_events(const std::vector<ExternalTorqueEvent>& events, double t, int n = 1) {
  Vec tau = Vec::Zero(n);
  for (const auto& e : events) {
    if (!(e.duration > 0.0)) throw ConfigError("event: duration must be > 0");
    if (e.joint < 0 || e.joint >= n) throw DimensionError("event: joint index out of range");
    const double s = t - e.t_start;
    if (s < 0.0 || s > e.duration) continue;
    tau(e.joint) += e.shape == PulseShape::half_sine ? e.peak * std::sin(std::numbers::pi * s / e.duration)
                                                     : e.peak;
  }
  return tau;
}

/// One classical RK4 step with inputs held constant.
inline FullState step_rk4(const PlantParams& p, const FullState& s, const Vec& tau_m, const Vec& tau_ext,
                          double dt, double t = 0.0) {
  if (!(dt > 0.0)) throw ConfigError("step_rk4: dt must be > 0");
  const StateDerivative k1 = dynamics_rhs(p, s, tau_m, tau_ext);
  const StateDerivative k2 = dynamics_rhs(p, s + (0.5 * dt) * k1, tau_m, tau_ext);
  const StateDerivative k3 = dynamics_rhs(p, s + (0.5 * dt) * k2, tau_m, tau_ext);
  const StateDerivative k4 = dynamics_rhs(p, s + dt * k3, tau_m, tau_ext);
  FullState next = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.finite()) throw IntegrationDiverged(t + dt, "step_rk4: non-finite state");
  return next;
}

enum class Termination { completed, safety_stop, diverged };

/// Logged time series of one joint plus per-control-cycle diagnostics.
struct TraceLog {
  std::vector<double> t, q, dq, theta, dtheta, tau, tau_m, tau_m_slow, tau_m_fast, q_d, dq_d, tau_ext,
      ctrl_compute_time;

  // One entry per control cycle (not decimated).
  struct Cycle {
    double t = 0.0;
    double compute_time = 0.0;  // s
    double tau = 0.0;
    double tau_slow = NAN;
    double tau_fast = NAN;
    double command = 0.0;  // pre-saturation tau_m_slow + tau_m_fast
    int qp_iterations = 0;
  };
  std::vector<Cycle> cycles;

  Termination termination = Termination::completed;
  std::string stop_reason;

  bool safety_stop() const { return termination != Termination::completed; }
  std::size_t size() const { return t.size(); }

  static const char* csv_header() {
    return "t,q,dq,theta,dtheta,tau,tau_m,tau_m_slow,tau_m_fast,q_d,dq_d,tau_ext,ctrl_us";
  }

  void write_csv(std::ostream& os) const;
  static TraceLog read_csv(std::istream& is);
};

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace detail

inline void TraceLog::write_csv(std::ostream& os) const {
  os << csv_header() << '\n';
  std::string line;
  for (std::size_t i = 0; i < t.size(); ++i) {
    line.clear();
    const double cols[] = {t[i],        q[i],          dq[i],         theta[i], dtheta[i],
                           tau[i],      tau_m[i],      tau_m_slow[i], tau_m_fast[i],
                           q_d[i],      dq_d[i],       tau_ext[i],    ctrl_compute_time[i] * 1e6};
    for (std::size_t c = 0; c < std::size(cols); ++c) {
      if (c) line.push_back(',');
      detail::append_number(line, cols[c]);
    }
    line.push_back('\n');
    os << line;
  }
}

inline TraceLog TraceLog::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("trace csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw ConfigError("trace csv: unexpected header '" + line + "'");
  TraceLog log;
  std::vector<double>* cols[] = {&log.t,   &log.q,     &log.dq,         &log.theta,      &log.dtheta,
                                 &log.tau, &log.tau_m, &log.tau_m_slow, &log.tau_m_fast, &log.q_d,
                                 &log.dq_d, &log.tau_ext, &log.ctrl_compute_time};
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    for (std::size_t c = 0; c < std::size(cols); ++c) {
      double v = 0.0;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw ConfigError("trace csv: bad number on row " + std::to_string(row));
      cols[c]->push_back(v);
      p = res.ptr;
      if (c + 1 < std::size(cols)) {
        if (p == end || *p != ',') throw ConfigError("trace csv: short row " + std::to_string(row));
        ++p;
      }
    }
    if (p != end) throw ConfigError("trace csv: trailing data on row " + std::to_string(row));
  }
  for (double& us : log.ctrl_compute_time) us *= 1e-6;
  return log;
}

/// Run aborted by a non-finite plant state; carries the log recorded so far.
class DivergedRun : public IntegrationDiverged {
 public:
  DivergedRun(const IntegrationDiverged& e, TraceLog partial)
      : IntegrationDiverged(e), log_(std::move(partial)) {}
  const TraceLog& log() const noexcept { return log_; }

 private:
  TraceLog log_;
};

struct ClosedLoopOptions {
  int log_joint = 0;
  // Per-cycle hook, e.g. for budget enforcement in timing sweeps. Returning
  // false stops the run as a safety stop.
  std::function<bool(const TraceLog::Cycle&)> on_cycle;
};

/// Closed-loop run. Controller infeasibility ends the run as a safety stop with a
/// partial log; a diverged integration throws DivergedRun.
inline TraceLog run_closed_loop(const PlantParams& p, Controller& controller, const ReferenceFn& reference,
                                const std::vector<ExternalTorqueEvent>& events, const SimConfig& sim,
                                const FullState& initial, const ClosedLoopOptions& opts = {}) {
  p.validate();
  sim.validate();
  detail::check_state(p, initial);
  const int j = opts.log_joint;
  if (j < 0 || j >= p.n) throw DimensionError("run_closed_loop: log_joint out of range");

  const int per_ctrl = sim.steps_per_control();
  const long n_steps = sim.total_steps();
  const auto expected_rows = static_cast<std::size_t>(n_steps / sim.record_decimation + 2);

  TraceLog log;
  for (auto* c : {&log.t, &log.q, &log.dq, &log.theta, &log.dtheta, &log.tau, &log.tau_m, &log.tau_m_slow,
                  &log.tau_m_fast, &log.q_d, &log.dq_d, &log.tau_ext, &log.ctrl_compute_time})
    c->reserve(expected_rows);
  log.cycles.reserve(static_cast<std::size_t>(n_steps / per_ctrl + 2));

  controller.reset();
  FullState state = initial;
  Vec tau_m = Vec::Zero(p.n), tau_m_slow = Vec::Zero(p.n), tau_m_fast = Vec::Zero(p.n);
  double last_compute = 0.0;

  for (long k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * sim.dt_plant;

    if (k % per_ctrl == 0 && k < n_steps) {
      ControllerOutput out;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        out = controller.update(t, state, reference);
      } catch (const ControllerInfeasible& e) {
        log.termination = Termination::safety_stop;
        log.stop_reason = e.what();
        break;
      }
      last_compute = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!out.tau_m_slow.allFinite() || !out.tau_m_fast.allFinite()) {
        log.termination = Termination::safety_stop;
        log.stop_reason = controller.name() + ": non-finite command";
        break;
      }
      const Vec command = out.total();
      tau_m = command.cwiseMax(-p.tau_max).cwiseMin(p.tau_max);
      tau_m_slow = out.tau_m_slow;
      tau_m_fast = out.tau_m_fast;

      TraceLog::Cycle cyc;
      cyc.t = t;
      cyc.compute_time = last_compute;
      cyc.tau = p.K(j) * (state.theta(j) - state.q(j));
      if (out.diagnostics.tau_slow.size() == p.n) {
        cyc.tau_slow = out.diagnostics.tau_slow(j);
        cyc.tau_fast = out.diagnostics.tau_fast(j);
      }
      cyc.command = command(j);
      cyc.qp_iterations = out.diagnostics.qp_iterations;
      log.cycles.push_back(cyc);
      if (opts.on_cycle && !opts.on_cycle(cyc)) {
        log.termination = Termination::safety_stop;
        log.stop_reason = "cycle hook requested stop";
        break;
      }
    }

    const Vec tau_ext = apply_events(events, t, p.n);

    if (k % sim.record_decimation == 0) {
      const ReferenceSample ref = reference(t);
      log.t.push_back(t);
      log.q.push_back(state.q(j));
      log.dq.push_back(state.dq(j));
      log.theta.push_back(state.theta(j));
      log.dtheta.push_back(state.dtheta(j));
      log.tau.push_back(p.K(j) * (state.theta(j) - state.q(j)));
      log.tau_m.push_back(tau_m(j));
      log.tau_m_slow.push_back(tau_m_slow(j));
      log.tau_m_fast.push_back(tau_m_fast(j));
      log.q_d.push_back(ref.q_d(j));
      log.dq_d.push_back(ref.dq_d(j));
      log.tau_ext.push_back(tau_ext(j));
      log.ctrl_compute_time.push_back(last_compute);
    }
    if (k == n_steps) break;

    try {
      state = step_rk4(p, state, tau_m, tau_ext, sim.dt_plant, t);
    } catch (const IntegrationDiverged& e) {
      log.termination = Termination::diverged;
      log.stop_reason = e.what();
      throw DivergedRun(e, std::move(log));
    }
  }
  return log;
}

}  // namespace fjmpc
