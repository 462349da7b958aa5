#pragma once

// Experiment harness: JSON scenario configs, controller/reference wiring,
// tracking metrics, and the two grid sweeps (SP validity, horizon timing).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fjmpc/controllers.hpp"
#include "fjmpc/model.hpp"
#include "fjmpc/mpc.hpp"
#include "fjmpc/reference.hpp"
#include "fjmpc/simulate.hpp"
#include "fjmpc/sp_core.hpp"

#include <nlohmann/json.hpp>

namespace fjmpc {

enum class ScenarioKind { step, smooth_step, chirp, impact, hold };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::step: return "step";
    case ScenarioKind::smooth_step: return "smooth-step";
    case ScenarioKind::chirp: return "chirp";
    case ScenarioKind::impact: return "impact";
    case ScenarioKind::hold: return "hold";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  for (auto k : {ScenarioKind::step, ScenarioKind::smooth_step, ScenarioKind::chirp, ScenarioKind::impact,
                 ScenarioKind::hold})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown scenario kind '" + s + "'");
}

inline const std::vector<std::string>& controller_names() {
  static const std::vector<std::string> names{"motor-pd", "sp", "mpc-fast", "mpc-slow", "mpc-full"};
  return names;
}

inline MpcVariant parse_mpc_variant(const std::string& s) {
  for (auto v : {MpcVariant::fast, MpcVariant::slow, MpcVariant::full})
    if (s == to_string(v)) return v;
  throw ConfigError("not an MPC controller: '" + s + "'");
}

/// Design scalars for the selected controller. Unset fields fall back to the
/// experiment defaults of that controller.
struct GainsConfig {
  std::optional<double> omega_n, zeta, gamma_rf, zeta_f;
  double dtau_cutoff_hz = 100.0;
};

/// Impact pulse that gives the canonical plant under SP a link velocity peak
/// of about 1.5 rad/s. The same pulse (same impulse) is used for every controller.
inline ExternalTorqueEvent default_impact() {
  ExternalTorqueEvent e;
  e.t_start = 0.5;
  e.duration = 0.05;
  e.shape = PulseShape::half_sine;
  e.peak = 55.3;
  e.joint = 0;
  return e;
}

struct SweepGrid {
  std::vector<double> K, gamma_rf, omega_n;
  std::vector<int> N_P, N_C;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::step;
  double q0 = 0.0;
  double amplitude = 0.26;  // rad
  std::optional<double> T;  // smooth-step duration or chirp length, s
  double t_step = 0.0;
  double f0 = 0.0, f1 = 4.0;  // chirp, Hz
  ExternalTorqueEvent impact = default_impact();
  std::string controller = "sp";
  GainsConfig gains;
  std::map<MpcVariant, MpcConfig> mpc{{MpcVariant::fast, MpcConfig::defaults(MpcVariant::fast)},
                                      {MpcVariant::slow, MpcConfig::defaults(MpcVariant::slow)},
                                      {MpcVariant::full, MpcConfig::defaults(MpcVariant::full)}};
  PlantParams plant = PlantParams::canonical();
  SimConfig sim;
  bool T_end_explicit = false;  // otherwise stretched to cover the trajectory
  std::uint64_t seed = 0;
  SweepGrid sweep;

  double duration() const { return T.value_or(kind == ScenarioKind::chirp ? 20.0 : 1.0); }

  /// Fills defaults that depend on the scenario kind. Call after overrides.
  void resolve() {
    if (!T_end_explicit && (kind == ScenarioKind::chirp || kind == ScenarioKind::smooth_step))
      sim.T_end = std::max(sim.T_end, t_step + duration());
  }

  void validate() const {
    plant.validate();
    sim.validate();
    if (!std::isfinite(amplitude) || !std::isfinite(q0)) throw ConfigError("scenario: amplitude must be finite");
    if (std::find(controller_names().begin(), controller_names().end(), controller) == controller_names().end())
      throw ConfigError("unknown controller '" + controller + "'");
    if (kind == ScenarioKind::chirp && !(f0 <= f1)) throw ConfigError("scenario: need f0 <= f1");
    if (kind == ScenarioKind::chirp || kind == ScenarioKind::smooth_step) {
      if (!(duration() > 0.0)) throw ConfigError("scenario: T must be > 0");
      if (t_step + duration() > sim.T_end + 1e-12) throw ConfigError("scenario: T must not exceed sim.T_end");
    }
    if (kind == ScenarioKind::impact) {
      if (!(impact.duration > 0.0)) throw ConfigError("scenario: impact duration must be > 0");
      if (impact.joint < 0 || impact.joint >= plant.n) throw ConfigError("scenario: impact joint out of range");
    }
    for (const auto& [v, c] : mpc) c.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON loading.

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

inline int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return j.get<int>();
}

// Scalar (broadcast to n) or array of length n.
inline Vec per_joint(const json& j, int n, const std::string& where) {
  if (j.is_number()) return Vec::Constant(n, j.get<double>());
  if (!j.is_array()) throw ConfigError(where + ": expected a number or an array");
  if (static_cast<int>(j.size()) != n) throw ConfigError(where + ": expected " + std::to_string(n) + " entries");
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = number(j[i], where);
  return v;
}

inline Vec vector_of(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Vec v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<long>(i)) = number(j[i], where);
  return v;
}

template <class T>
std::vector<T> list_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty array");
  std::vector<T> out;
  for (const auto& e : j) {
    if constexpr (std::is_same_v<T, int>) out.push_back(integer(e, where));
    else out.push_back(number(e, where));
  }
  return out;
}

inline PlantParams parse_plant(const json& j) {
  reject_unknown(j, {"n", "M_link", "B", "K", "g_amp", "tau_max"}, "plant");
  PlantParams p = PlantParams::canonical();
  const int n = j.contains("n") ? integer(j["n"], "plant.n") : 1;
  if (n < 1) throw ConfigError("plant.n must be >= 1");
  if (n != 1) {
    // No canonical values for more joints: everything must be given.
    for (const char* key : {"M_link", "B", "K", "tau_max"})
      if (!j.contains(key)) throw ConfigError(std::string("plant.") + key + " is required when n > 1");
  }
  p.n = n;
  p.g_amp = Vec::Zero(n);
  if (j.contains("M_link")) {
    const json& m = j["M_link"];
    if (m.is_array() && !m.empty() && m[0].is_array()) {
      if (static_cast<int>(m.size()) != n) throw ConfigError("plant.M_link: expected n rows");
      p.M_link.resize(n, n);
      for (int r = 0; r < n; ++r) p.M_link.row(r) = per_joint(m[r], n, "plant.M_link").transpose();
    } else {
      p.M_link = per_joint(m, n, "plant.M_link").asDiagonal();
    }
  }
  if (j.contains("B")) p.B = per_joint(j["B"], n, "plant.B");
  if (j.contains("K")) p.K = per_joint(j["K"], n, "plant.K");
  if (j.contains("g_amp")) p.g_amp = per_joint(j["g_amp"], n, "plant.g_amp");
  if (j.contains("tau_max")) p.tau_max = per_joint(j["tau_max"], n, "plant.tau_max");
  p.validate();
  return p;
}

inline SimConfig parse_sim(const json& j) {
  reject_unknown(j, {"dt_plant", "dt_ctrl", "T_end", "record_decimation"}, "sim");
  SimConfig s;
  if (j.contains("dt_plant")) s.dt_plant = number(j["dt_plant"], "sim.dt_plant");
  if (j.contains("dt_ctrl")) s.dt_ctrl = number(j["dt_ctrl"], "sim.dt_ctrl");
  if (j.contains("T_end")) s.T_end = number(j["T_end"], "sim.T_end");
  if (j.contains("record_decimation")) s.record_decimation = integer(j["record_decimation"], "sim.record_decimation");
  return s;
}

inline GainsConfig parse_gains(const json& j) {
  reject_unknown(j, {"omega_n", "zeta", "gamma_rf", "zeta_f", "dtau_cutoff_hz"}, "gains");
  GainsConfig g;
  if (j.contains("omega_n")) g.omega_n = number(j["omega_n"], "gains.omega_n");
  if (j.contains("zeta")) g.zeta = number(j["zeta"], "gains.zeta");
  if (j.contains("gamma_rf")) g.gamma_rf = number(j["gamma_rf"], "gains.gamma_rf");
  if (j.contains("zeta_f")) g.zeta_f = number(j["zeta_f"], "gains.zeta_f");
  if (j.contains("dtau_cutoff_hz")) g.dtau_cutoff_hz = number(j["dtau_cutoff_hz"], "gains.dtau_cutoff_hz");
  return g;
}

inline void parse_mpc_variant_config(const json& j, MpcConfig& c, const std::string& where) {
  reject_unknown(j, {"N_P", "N_C", "Q_y", "Q_u", "preview", "relinearize", "fast_bounds", "qp_tol", "qp_max_iter"},
                 where);
  if (j.contains("N_P")) c.N_P = integer(j["N_P"], where + ".N_P");
  if (j.contains("N_C")) c.N_C = integer(j["N_C"], where + ".N_C");
  if (j.contains("Q_y")) c.weights.Q_y = vector_of(j["Q_y"], where + ".Q_y");
  if (j.contains("Q_u")) c.weights.Q_u = vector_of(j["Q_u"], where + ".Q_u");
  if (j.contains("preview")) c.preview = j["preview"].get<bool>();
  if (j.contains("relinearize")) c.relinearize = j["relinearize"].get<bool>();
  if (j.contains("fast_bounds")) {
    const auto s = j["fast_bounds"].get<std::string>();
    if (s == "residual") c.fast_bounds = FastBoundRule::residual;
    else if (s == "symmetric") c.fast_bounds = FastBoundRule::symmetric;
    else throw ConfigError(where + ".fast_bounds: expected 'residual' or 'symmetric'");
  }
  if (j.contains("qp_tol")) c.qp.tol = number(j["qp_tol"], where + ".qp_tol");
  if (j.contains("qp_max_iter")) c.qp.max_iter = integer(j["qp_max_iter"], where + ".qp_max_iter");
  c.validate();
}

inline ExternalTorqueEvent parse_impact(const json& j) {
  reject_unknown(j, {"t_start", "duration", "shape", "peak", "joint"}, "scenario.impact");
  ExternalTorqueEvent e = default_impact();
  if (j.contains("t_start")) e.t_start = number(j["t_start"], "impact.t_start");
  if (j.contains("duration")) e.duration = number(j["duration"], "impact.duration");
  if (j.contains("peak")) e.peak = number(j["peak"], "impact.peak");
  if (j.contains("joint")) e.joint = integer(j["joint"], "impact.joint");
  if (j.contains("shape")) {
    const auto s = j["shape"].get<std::string>();
    if (s == "half-sine") e.shape = PulseShape::half_sine;
    else if (s == "rectangular") e.shape = PulseShape::rectangular;
    else throw ConfigError("impact.shape: expected 'half-sine' or 'rectangular'");
  }
  return e;
}

inline SweepGrid parse_sweep(const json& j) {
  reject_unknown(j, {"K", "gamma_rf", "omega_n", "N_P", "N_C"}, "scenario.sweep");
  SweepGrid g;
  if (j.contains("K")) g.K = list_of<double>(j["K"], "sweep.K");
  if (j.contains("gamma_rf")) g.gamma_rf = list_of<double>(j["gamma_rf"], "sweep.gamma_rf");
  if (j.contains("omega_n")) g.omega_n = list_of<double>(j["omega_n"], "sweep.omega_n");
  if (j.contains("N_P")) g.N_P = list_of<int>(j["N_P"], "sweep.N_P");
  if (j.contains("N_C")) g.N_C = list_of<int>(j["N_C"], "sweep.N_C");
  return g;
}

inline void parse_scenario_block(const json& j, ScenarioConfig& c) {
  reject_unknown(j, {"kind", "controller", "q0", "amplitude", "T", "t_step", "f0", "f1", "impact", "seed", "sweep"},
                 "scenario");
  if (j.contains("kind")) c.kind = parse_scenario_kind(j["kind"].get<std::string>());
  if (j.contains("controller")) c.controller = j["controller"].get<std::string>();
  if (j.contains("q0")) c.q0 = number(j["q0"], "scenario.q0");
  if (j.contains("amplitude")) c.amplitude = number(j["amplitude"], "scenario.amplitude");
  if (j.contains("T")) c.T = number(j["T"], "scenario.T");
  if (j.contains("t_step")) c.t_step = number(j["t_step"], "scenario.t_step");
  if (j.contains("f0")) c.f0 = number(j["f0"], "scenario.f0");
  if (j.contains("f1")) c.f1 = number(j["f1"], "scenario.f1");
  if (j.contains("impact")) c.impact = parse_impact(j["impact"]);
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("sweep")) c.sweep = parse_sweep(j["sweep"]);
}

}  // namespace detail

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  try {
    detail::reject_unknown(j, {"plant", "sim", "gains", "mpc", "scenario"}, "config");
    ScenarioConfig c;
    if (j.contains("plant")) c.plant = detail::parse_plant(j["plant"]);
    if (j.contains("sim")) {
      c.sim = detail::parse_sim(j["sim"]);
      c.T_end_explicit = j["sim"].contains("T_end");
    }
    if (j.contains("gains")) c.gains = detail::parse_gains(j["gains"]);
    if (j.contains("mpc")) {
      const auto& m = j["mpc"];
      detail::reject_unknown(m, {"mpc-fast", "mpc-slow", "mpc-full"}, "mpc");
      for (auto it = m.begin(); it != m.end(); ++it)
        detail::parse_mpc_variant_config(it.value(), c.mpc[parse_mpc_variant(it.key())], "mpc." + it.key());
    }
    if (j.contains("scenario")) detail::parse_scenario_block(j["scenario"], c);
    c.resolve();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// Wiring.

inline SpDesign sp_design(const GainsConfig& g) {
  SpDesign d;
  if (g.omega_n) d.omega_n = *g.omega_n;
  if (g.zeta) d.zeta = *g.zeta;
  if (g.gamma_rf) d.gamma_rf = *g.gamma_rf;
  if (g.zeta_f) d.zeta_f = *g.zeta_f;
  return d;
}

inline std::unique_ptr<Controller> make_controller(const ScenarioConfig& c) {
  const PlantParams& p = c.plant;
  const double dt = c.sim.dt_ctrl;
  const GainsConfig& g = c.gains;
  if (c.controller == "motor-pd")
    return std::make_unique<MotorPdController>(p, synthesize_motor_pd_gains(p, g.omega_n.value_or(14.0),
                                                                            g.zeta.value_or(0.7)));
  if (c.controller == "sp")
    return std::make_unique<SpController>(p, synthesize_gains(p, sp_design(g)), dt, g.dtau_cutoff_hz);

  const MpcVariant v = parse_mpc_variant(c.controller);
  MpcConfig cfg = c.mpc.at(v);
  cfg.dtau_cutoff_hz = g.dtau_cutoff_hz;
  switch (v) {
    case MpcVariant::fast: {
      // Outer PD on the link inertia alone: the fast MPC keeps tau close to tau_d.
      const Vec m_bar = mass_matrix(p, Vec::Zero(p.n)).diagonal();
      const auto outer = link_pd_gains(m_bar, g.omega_n.value_or(15.0), g.zeta.value_or(1.0), Vec::Zero(p.n));
      return std::make_unique<MpcFastController>(p, outer, cfg, dt);
    }
    case MpcVariant::slow:
      return std::make_unique<MpcSlowController>(p, synthesize_gains(p, sp_design(g)), cfg, dt);
    case MpcVariant::full:
      return std::make_unique<MpcFullController>(p, cfg, dt);
  }
  throw ConfigError("unreachable controller");
}

inline ReferenceFn make_reference(const ScenarioConfig& c) {
  const int n = c.plant.n;
  const double q0 = c.q0, q1 = c.q0 + c.amplitude;
  // Single-joint generators drive every joint with the same profile.
  auto widen = [n](ReferenceSample s) {
    if (n == 1) return s;
    return ReferenceSample{Vec::Constant(n, s.q_d(0)), Vec::Constant(n, s.dq_d(0)), Vec::Constant(n, s.ddq_d(0))};
  };
  switch (c.kind) {
    case ScenarioKind::step:
      return [=](double t) { return widen(step_reference(q0, q1, c.t_step, t)); };
    case ScenarioKind::smooth_step:
      return [=](double t) {
        if (t < c.t_step) return widen(ReferenceSample::constant(Vec::Constant(1, q0)));
        return widen(septic_trajectory(q0, q1, c.duration(), t - c.t_step));
      };
    case ScenarioKind::chirp:
      return [=](double t) {
        ReferenceSample s = t < c.t_step ? ReferenceSample::constant(Vec::Zero(1))
                                         : chirp_trajectory(c.amplitude, c.f0, c.f1, c.duration(), t - c.t_step);
        s.q_d.array() += q0;
        return widen(s);
      };
    case ScenarioKind::impact:
    case ScenarioKind::hold:
      return [=](double) { return ReferenceSample::constant(Vec::Constant(n, q0)); };
  }
  throw ConfigError("unreachable scenario kind");
}

inline std::vector<ExternalTorqueEvent> make_events(const ScenarioConfig& c) {
  if (c.kind == ScenarioKind::impact) return {c.impact};
  return {};
}

/// Static equilibrium at q0: theta deflected so that K (theta - q) = g(q).
inline FullState initial_state(const ScenarioConfig& c) {
  FullState s = FullState::zero(c.plant.n);
  s.q.setConstant(c.q0);
  s.theta = s.q + gravity_torque(c.plant, s.q).cwiseQuotient(c.plant.K);
  return s;
}

// ---------------------------------------------------------------------------
// Metrics.

inline double rmse(const std::vector<double>& x, const std::vector<double>& x_ref) {
  if (x.empty()) throw Error("rmse: empty log");
  if (x.size() != x_ref.size()) throw DimensionError("rmse: column lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - x_ref[i]) * (x[i] - x_ref[i]);
  return std::sqrt(s / static_cast<double>(x.size()));
}

inline double rmse(const TraceLog& log, const std::string& column, const std::string& ref_column) {
  auto col = [&](const std::string& name) -> const std::vector<double>& {
    static const std::map<std::string, std::vector<double> TraceLog::*> cols{
        {"t", &TraceLog::t},           {"q", &TraceLog::q},
        {"dq", &TraceLog::dq},         {"theta", &TraceLog::theta},
        {"dtheta", &TraceLog::dtheta}, {"tau", &TraceLog::tau},
        {"tau_m", &TraceLog::tau_m},   {"tau_m_slow", &TraceLog::tau_m_slow},
        {"tau_m_fast", &TraceLog::tau_m_fast}, {"q_d", &TraceLog::q_d},
        {"dq_d", &TraceLog::dq_d},     {"tau_ext", &TraceLog::tau_ext}};
    const auto it = cols.find(name);
    if (it == cols.end()) throw ConfigError("rmse: unknown column '" + name + "'");
    return log.*(it->second);
  };
  return rmse(col(column), col(ref_column));
}

struct Metrics {
  double pos_rmse = 0.0;
  double vel_rmse = 0.0;
  double max_tau = 0.0;  // max |tau_m| applied
  double settle_time = 0.0;  // 2% band; +inf if never settled
  bool safety_stop = false;
  int saturation_count = 0;  // control cycles with a command at or beyond the limit
};

inline Metrics compute_metrics(const TraceLog& log, double amplitude, double tau_max = 0.0) {
  Metrics m;
  m.pos_rmse = rmse(log.q, log.q_d);
  m.vel_rmse = rmse(log.dq, log.dq_d);
  for (double v : log.tau_m) m.max_tau = std::max(m.max_tau, std::abs(v));
  const double band = std::max(0.02 * std::abs(amplitude), 1e-9);
  m.settle_time = 0.0;
  for (std::size_t i = log.size(); i-- > 0;) {
    if (std::abs(log.q[i] - log.q_d[i]) > band) {
      m.settle_time = i + 1 < log.size() ? log.t[i + 1] : std::numeric_limits<double>::infinity();
      break;
    }
  }
  m.safety_stop = log.safety_stop();
  if (tau_max > 0.0)
    for (const auto& c : log.cycles) m.saturation_count += std::abs(c.command) >= tau_max;
  return m;
}

inline void print_metrics(std::ostream& os, const Metrics& m) {
  os << "pos_rmse=" << m.pos_rmse << " vel_rmse=" << m.vel_rmse << " max_tau=" << m.max_tau << '\n'
     << "settle_time=" << m.settle_time << '\n'
     << "saturation_cycles=" << m.saturation_count << '\n'
     << "safety_stop=" << (m.safety_stop ? 1 : 0) << '\n';
}

struct ScenarioResult {
  TraceLog log;
  Metrics metrics;
};

inline ScenarioResult run_scenario(const ScenarioConfig& c, const ClosedLoopOptions& opts = {}) {
  c.validate();
  auto controller = make_controller(c);
  ScenarioResult r;
  try {
    r.log = run_closed_loop(c.plant, *controller, make_reference(c), make_events(c), c.sim, initial_state(c), opts);
  } catch (const DivergedRun& e) {
    r.log = e.log();
  }
  if (r.log.size() == 0) throw Error("run_scenario: nothing logged");
  r.metrics = compute_metrics(r.log, c.amplitude, c.plant.tau_max(opts.log_joint));
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepCell {
  double axis1 = 0.0, axis2 = 0.0;
  std::string axis3;
  double metric = 0.0;
  std::string flag;
};

struct SweepResult {
  std::string axis1_name, axis2_name, axis3_name;
  std::vector<SweepCell> cells;

  static const char* csv_header() { return "axis1,axis2,axis3,metric,flag"; }

  void write_csv(std::ostream& os) const {
    os << csv_header() << '\n';
    std::string line;
    for (const auto& c : cells) {
      line.clear();
      detail::append_number(line, c.axis1);
      line.push_back(',');
      detail::append_number(line, c.axis2);
      line += ',' + c.axis3 + ',';
      detail::append_number(line, c.metric);
      line += ',' + c.flag + '\n';
      os << line;
    }
  }
};

namespace detail {

inline std::string format_axis(double v) {
  std::string s;
  append_number(s, v);
  return s;
}

// Runs job(i) for i in [0, count) on a small thread pool.
template <class Job>
void parallel_for(std::size_t count, Job job, unsigned threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::vector<double> logspace(double lo, double hi, int count) {
  std::vector<double> v(count);
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < count; ++i) v[i] = std::pow(10.0, count == 1 ? a : a + (b - a) * i / (count - 1));
  return v;
}

template <class T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace detail

inline SweepGrid default_sp_validity_grid() {
  SweepGrid g;
  g.K = detail::logspace(10.0, 1e4, 13);
  g.gamma_rf = {1.0, 1.5, 2.0, 3.0, 4.0};
  g.omega_n = {5.0, 10.0, 15.0, 20.0};
  return g;
}

/// Mean |q - q_d| of a 0.26 rad SP step over 5 s per (K, gamma_rf, omega_n).
/// A cell is invalid when the mean error exceeds the step size.
inline SweepResult sp_validity_sweep(const ScenarioConfig& base, std::vector<double> K_grid,
                                     std::vector<double> gamma_grid, std::vector<double> omega_grid,
                                     unsigned threads = 0) {
  if (K_grid.empty() || gamma_grid.empty() || omega_grid.empty())
    throw ConfigError("sp_validity_sweep: grids must be nonempty");
  K_grid = detail::sorted_unique(std::move(K_grid));
  gamma_grid = detail::sorted_unique(std::move(gamma_grid));
  omega_grid = detail::sorted_unique(std::move(omega_grid));

  constexpr double step = 0.26;
  SweepResult res{"K", "gamma_rf", "omega_n", {}};
  const std::size_t total = K_grid.size() * gamma_grid.size() * omega_grid.size();
  res.cells.resize(total);
  detail::parallel_for(total, [&](std::size_t idx) {
    const std::size_t ik = idx / (gamma_grid.size() * omega_grid.size());
    const std::size_t ig = (idx / omega_grid.size()) % gamma_grid.size();
    const std::size_t iw = idx % omega_grid.size();
    ScenarioConfig c = base;
    c.kind = ScenarioKind::step;
    c.controller = "sp";
    c.q0 = 0.0;
    c.amplitude = step;
    c.t_step = 0.0;
    c.sim.T_end = 5.0;
    c.plant.K.setConstant(K_grid[ik]);
    c.gains.gamma_rf = gamma_grid[ig];
    c.gains.omega_n = omega_grid[iw];
    SweepCell& cell = res.cells[idx];
    cell.axis1 = K_grid[ik];
    cell.axis2 = gamma_grid[ig];
    cell.axis3 = detail::format_axis(omega_grid[iw]);
    const ScenarioResult r = run_scenario(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < r.log.size(); ++i) sum += std::abs(r.log.q[i] - r.log.q_d[i]);
    cell.metric = sum / static_cast<double>(r.log.size());
    if (r.metrics.safety_stop) cell.flag = "safety-stop";
    else cell.flag = cell.metric > step || !std::isfinite(cell.metric) ? "invalid" : "valid";
  }, threads);
  return res;
}

inline SweepGrid default_horizon_grid() {
  SweepGrid g;
  g.N_P = {1, 10, 25, 50, 100, 200, 300, 400, 600, 800};
  g.N_C = {1, 2, 4, 8, 16, 32};
  return g;
}

inline double percentile(std::vector<double> v, double pct) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(v.size()))) - 1;
  return v[std::min(k, v.size() - 1)];
}

/// p99 controller compute time on a 2 s step for every (N_P, N_C <= N_P, variant).
/// Models are rebuilt every cycle so the timing includes discretization and
/// condensing. Cells run one at a time; concurrent runs would distort timing.
/// A run stops as soon as more than 1% of the cycles exceeded the budget,
/// since p99 can then no longer fall below it.
inline SweepResult horizon_feasibility_sweep(const ScenarioConfig& base, std::vector<int> NP_grid,
                                             std::vector<int> NC_grid, double budget_s,
                                             std::vector<MpcVariant> variants = {MpcVariant::fast, MpcVariant::slow,
                                                                                 MpcVariant::full}) {
  if (NP_grid.empty() || NC_grid.empty()) throw ConfigError("horizon sweep: grids must be nonempty");
  if (!(budget_s > 0.0)) throw ConfigError("horizon sweep: budget must be > 0");
  NP_grid = detail::sorted_unique(std::move(NP_grid));
  NC_grid = detail::sorted_unique(std::move(NC_grid));
  if (NP_grid.front() < 1 || NC_grid.front() < 1) throw ConfigError("horizon sweep: horizons must be >= 1");

  SweepResult res{"N_P", "N_C", "variant", {}};
  for (const MpcVariant v : variants) {
    for (const int np : NP_grid) {
      for (const int nc : NC_grid) {
        if (nc > np) continue;
        ScenarioConfig c = base;
        c.kind = ScenarioKind::step;
        c.controller = to_string(v);
        c.sim.T_end = 2.0;
        MpcConfig& m = c.mpc[v];
        m.N_P = np;
        m.N_C = nc;
        m.relinearize = true;

        const long cycles = std::lround(c.sim.T_end / c.sim.dt_ctrl);
        const long allowed_over = cycles / 100;
        long over = 0;
        ClosedLoopOptions opts;
        opts.on_cycle = [&](const TraceLog::Cycle& cyc) {
          if (cyc.compute_time >= budget_s) ++over;
          return over <= allowed_over;
        };
        const ScenarioResult r = run_scenario(c, opts);
        std::vector<double> times;
        times.reserve(r.log.cycles.size());
        for (const auto& cyc : r.log.cycles) times.push_back(cyc.compute_time);

        SweepCell cell;
        cell.axis1 = np;
        cell.axis2 = nc;
        cell.axis3 = to_string(v);
        cell.metric = percentile(times, 99.0);
        if (over > allowed_over) {
          cell.flag = "infeasible";
        } else if (r.metrics.safety_stop) {
          cell.flag = "safety-stop";
        } else {
          cell.flag = cell.metric < budget_s ? "feasible" : "infeasible";
        }
        res.cells.push_back(std::move(cell));
      }
    }
  }
  return res;
}

}  // namespace fjmpc
