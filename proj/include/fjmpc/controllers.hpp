#pragma once

// Controller interface plus the classical joint controllers: motor-side PD and
// the singular-perturbation torque controller with a link-side PD outer loop.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>

#include "fjmpc/model.hpp"
#include "fjmpc/sp_core.hpp"

namespace fjmpc {

struct ReferenceSample {
  Vec q_d, dq_d, ddq_d;

  static ReferenceSample constant(const Vec& q_d) {
    return {q_d, Vec::Zero(q_d.size()), Vec::Zero(q_d.size())};
  }
};

using ReferenceFn = std::function<ReferenceSample(double t)>;

struct ControllerDiagnostics {
  Vec tau_slow;  // quasi-steady joint torque used for the split (empty if none)
  Vec tau_fast;  // tau - tau_slow
  int qp_iterations = 0;
  double qp_cost = 0.0;
};

struct ControllerOutput {
  Vec tau_m_slow;
  Vec tau_m_fast;
  ControllerDiagnostics diagnostics;

  Vec total() const { return tau_m_slow + tau_m_fast; }
};

/// A controller is called once per control period with the measured full
/// state. The reference function may be queried at future times for preview.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void reset() = 0;
  virtual ControllerOutput update(double t, const FullState& state, const ReferenceFn& reference) = 0;
};

// ---------------------------------------------------------------------------
// Filtered torque differentiation.

struct DtauFilterState {
  Vec prev_tau;
  Vec dtau;

  static DtauFilterState zero(int n) { return {Vec::Zero(n), Vec::Zero(n)}; }
};

/// First-order low-pass on the backward difference:
///   d_k = (1 - a) d_{k-1} + a (tau_k - tau_{k-1}) / dt,  a = w dt / (1 + w dt),  w = 2 pi f_cut.
inline std::pair<Vec, DtauFilterState> filtered_dtau(const Vec& tau_now, const DtauFilterState& s, double dt,
                                                     double f_cut) {
  if (!(f_cut > 0.0) || !(dt > 0.0)) throw ConfigError("filtered_dtau: dt and f_cut must be > 0");
  detail::require_size(s.prev_tau.size(), tau_now.size(), "filter.prev_tau");
  const double wdt = dt * 2.0 * std::numbers::pi * f_cut;
  const double alpha = wdt / (1.0 + wdt);
  DtauFilterState next;
  next.dtau = (1.0 - alpha) * s.dtau + alpha * (tau_now - s.prev_tau) / dt;
  next.prev_tau = tau_now;
  return {next.dtau, next};
}

/// Stateful wrapper used inside controllers. The first sample seeds the
/// previous-torque memory so a controller started mid-deflection sees no spike.
class DtauFilter {
 public:
  DtauFilter(double dt, double f_cut) : dt_(dt), f_cut_(f_cut) {}

  Vec operator()(const Vec& tau) {
    if (!primed_) {
      state_ = {tau, Vec::Zero(tau.size())};
      primed_ = true;
      return state_.dtau;
    }
    auto [d, next] = filtered_dtau(tau, state_, dt_, f_cut_);
    state_ = std::move(next);
    return d;
  }

  void reset() { primed_ = false; }

 private:
  double dt_, f_cut_;
  bool primed_ = false;
  DtauFilterState state_;
};

// ---------------------------------------------------------------------------
// Control laws.

/// Motor-side PD towards theta_d = q_d + K^-1 g(q_d), with gravity feedforward.
inline ControllerOutput motor_pd(const PlantParams& p, const FullState& s, const ReferenceSample& ref,
                                 const MotorPdGains& gains) {
  const Vec g_d = gravity_torque(p, ref.q_d);
  const Vec theta_d = ref.q_d + g_d.cwiseQuotient(p.K);
  ControllerOutput out;
  out.tau_m_slow = g_d + gains.K_p.cwiseProduct(theta_d - s.theta) + gains.K_d.cwiseProduct(ref.dq_d - s.dtheta);
  out.tau_m_fast = Vec::Zero(p.n);
  return out;
}

/// Link-side PD with acceleration feedforward through the apparent inertia M + B_d.
inline Vec link_pd_torque(const PlantParams& p, const FullState& s, const ReferenceSample& ref,
                          const LinkPdGains& gains) {
  return gravity_torque(p, s.q) + (mass_matrix(p, s.q) + Mat(gains.B_d.asDiagonal())) * ref.ddq_d -
         gains.K_q.cwiseProduct(s.q - ref.q_d) - gains.D_q.cwiseProduct(s.dq - ref.dq_d);
}

/// Linear part of slow_torque: (M^-1 + B^-1)^-1 B^-1.
inline Mat slow_torque_gain(const PlantParams& p, const Vec& q) {
  if (!p.inertia && p.n == 1) {
    return Mat::Constant(1, 1, p.M_link(0, 0) / (p.M_link(0, 0) + p.B(0)));
  }
  const Mat M_inv = mass_matrix(p, q).inverse();
  const Mat B_inv = p.B.cwiseInverse().asDiagonal();
  return (M_inv + B_inv).inverse() * B_inv;
}

/// tau_m = tau_d + K_T (tau_d - tau) - eps K_S dtau, reported as its slow and
/// fast components. The quasi-steady torque tau_slow is the fixed point of
///   tau_slow = slow_torque((I + K_T) tau_d - K_T tau_slow).
inline ControllerOutput sp_torque_control(const PlantParams& p, const FullState& s, const Vec& tau_d,
                                          const Vec& tau, const Vec& dtau, const SpGains& gains) {
  const Vec zero = Vec::Zero(p.n);
  const Vec tau_slow_free = slow_torque(p, zero, s.q, s.dq);
  const Mat A = slow_torque_gain(p, s.q);
  const Mat KT = gains.K_T.asDiagonal();
  const Mat I = Mat::Identity(p.n, p.n);
  const Vec rhs = A * (tau_d + gains.K_T.cwiseProduct(tau_d)) + tau_slow_free;
  const Vec tau_slow = (I + A * KT).lu().solve(rhs);

  ControllerOutput out;
  out.tau_m_slow = tau_d + gains.K_T.cwiseProduct(tau_d - tau_slow);
  out.tau_m_fast = gains.K_T.cwiseProduct(tau_slow - tau) - gains.eps_K_S.cwiseProduct(dtau);
  out.diagnostics.tau_slow = tau_slow;
  out.diagnostics.tau_fast = fast_torque(tau, tau_slow);
  return out;
}

// ---------------------------------------------------------------------------
// Controller objects.

class NullController : public Controller {
 public:
  explicit NullController(int n) : n_(n) {}
  std::string name() const override { return "null"; }
  void reset() override {}
  ControllerOutput update(double, const FullState&, const ReferenceFn&) override {
    return {Vec::Zero(n_), Vec::Zero(n_), {}};
  }

 private:
  int n_;
};

class MotorPdController : public Controller {
 public:
  MotorPdController(PlantParams p, MotorPdGains gains) : p_(std::move(p)), gains_(std::move(gains)) {}
  std::string name() const override { return "motor-pd"; }
  void reset() override {}
  ControllerOutput update(double t, const FullState& s, const ReferenceFn& reference) override {
    return motor_pd(p_, s, reference(t), gains_);
  }
  const MotorPdGains& gains() const { return gains_; }

 private:
  PlantParams p_;
  MotorPdGains gains_;
};

class SpController : public Controller {
 public:
  SpController(PlantParams p, SpGains gains, double dt_ctrl, double f_cut_hz = 100.0)
      : p_(std::move(p)), gains_(std::move(gains)), filter_(dt_ctrl, f_cut_hz) {}
  std::string name() const override { return "sp"; }
  void reset() override { filter_.reset(); }
  ControllerOutput update(double t, const FullState& s, const ReferenceFn& reference) override {
    const Vec tau = joint_torque(p_, s);
    const Vec dtau = filter_(tau);
    const Vec tau_d = link_pd_torque(p_, s, reference(t), gains_.link());
    return sp_torque_control(p_, s, tau_d, tau, dtau, gains_);
  }
  const SpGains& gains() const { return gains_; }

 private:
  PlantParams p_;
  SpGains gains_;
  DtauFilter filter_;
};

}  // namespace fjmpc
