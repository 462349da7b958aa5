#pragma once

// Two-time-scale decomposition of the joint torque and synthesis of the
// singular-perturbation controller gains from design parameters.

#include <cmath>

#include "fjmpc/model.hpp"

namespace fjmpc {

struct SpDesign {
  double omega_n = 15.0;  // outer-loop natural frequency, rad/s
  double zeta = 1.0;      // outer-loop damping ratio
  double gamma_rf = 2.0;  // apparent motor inertia reduction B / B_d
  double zeta_f = 1.0;    // fast torque-loop damping ratio

  void validate() const {
    if (!(omega_n > 0.0)) throw ConfigError("gains: omega_n must be > 0");
    if (!(zeta > 0.0)) throw ConfigError("gains: zeta must be > 0");
    if (!(gamma_rf >= 1.0)) throw ConfigError("gains: gamma_rf must be >= 1");
    if (!(zeta_f > 0.0)) throw ConfigError("gains: zeta_f must be > 0");
  }
};

/// Gains of the link-side PD law tau_d = g + (M + B_d) ddq_d - K_q e - D_q de.
struct LinkPdGains {
  Vec K_q, D_q, B_d;
};

struct SpGains {
  Vec K_q;       // N m/rad
  Vec D_q;       // N m s/rad
  Vec K_T;       // dimensionless
  Vec K_S;       // torque derivative gain, paired with epsilon
  Vec eps_K_S;   // implemented product epsilon * K_S, s
  double epsilon = 1.0;
  Vec B_d;       // shaped motor inertia, kg m^2
  SpDesign design;

  LinkPdGains link() const { return {K_q, D_q, B_d}; }
};

struct MotorPdGains {
  Vec K_p, K_d;
  double omega_n = 14.0;
  double zeta = 0.7;
};

/// epsilon = sqrt(K_eps / K). Joints with different ratios yield the largest.
inline double epsilon_from_stiffness(const Vec& K, const Vec& K_eps) {
  detail::require_size(K_eps.size(), K.size(), "K_eps");
  if ((K.array() <= 0.0).any() || (K_eps.array() <= 0.0).any())
    throw ConfigError("epsilon_from_stiffness: stiffness entries must be positive");
  return (K_eps.array() / K.array()).sqrt().maxCoeff();
}

/// Quasi-steady joint torque for a given slow motor torque:
/// (M^-1 + B^-1)^-1 (B^-1 tau_m_slow + M^-1 n).
inline Vec slow_torque(const PlantParams& p, const Vec& tau_m_slow, const Vec& q, const Vec& dq) {
  detail::require_size(tau_m_slow.size(), p.n, "tau_m_slow");
  const Vec n = nonlinear_torque(p, q, dq);
  if (!p.inertia && p.n == 1) {
    const double m = p.M_link(0, 0), b = p.B(0);
    return Vec::Constant(1, (m * tau_m_slow(0) + b * n(0)) / (m + b));
  }
  const Mat M_inv = mass_matrix(p, q).inverse();
  const Mat B_inv = p.B.cwiseInverse().asDiagonal();
  const Eigen::FullPivLU<Mat> lu(M_inv + B_inv);
  if (!lu.isInvertible()) throw SingularMatrixError("slow_torque: M^-1 + B^-1 is singular");
  return lu.solve(B_inv * tau_m_slow + M_inv * n);
}

inline Vec fast_torque(const Vec& tau, const Vec& tau_slow) {
  detail::require_size(tau_slow.size(), tau.size(), "tau_slow");
  return tau - tau_slow;
}

/// Apparent motor inertia under torque feedback: (I + K_T)^-1 B.
inline Mat reduced_inertia(const Mat& B, const Mat& K_T) {
  const Mat S = Mat::Identity(B.rows(), B.cols()) + K_T;
  const Eigen::FullPivLU<Mat> lu(S);
  if (!lu.isInvertible()) throw SingularMatrixError("reduced_inertia: I + K_T is singular");
  return lu.solve(B);
}

namespace detail {

// Diagonal of M(q) at the operating point q = 0.
inline Vec operating_inertia(const PlantParams& p) { return mass_matrix(p, Vec::Zero(p.n)).diagonal(); }

}  // namespace detail

inline LinkPdGains link_pd_gains(const Vec& inertia, double omega_n, double zeta, const Vec& B_d) {
  if (!(omega_n > 0.0) || !(zeta > 0.0)) throw ConfigError("link_pd_gains: omega_n and zeta must be > 0");
  return {omega_n * omega_n * inertia, 2.0 * zeta * omega_n * inertia, B_d};
}

/// Places the slow closed-loop poles of (M + B_d) q'' = tau_d at (omega_n, zeta)
/// and the fast torque loop at damping zeta_f around
/// omega_f = sqrt(K (M^-1 + B_d^-1)).
inline SpGains synthesize_gains(const PlantParams& p, const SpDesign& d) {
  d.validate();
  const Vec m_bar = detail::operating_inertia(p);

  SpGains g;
  g.design = d;
  g.B_d = p.B / d.gamma_rf;
  g.K_T = Vec::Constant(p.n, d.gamma_rf - 1.0);
  const Vec slow_inertia = m_bar + g.B_d;
  g.K_q = d.omega_n * d.omega_n * slow_inertia;
  g.D_q = 2.0 * d.zeta * d.omega_n * slow_inertia;

  const Vec omega_f = (p.K.array() * (m_bar.array().inverse() + g.B_d.array().inverse())).sqrt();
  g.eps_K_S = (2.0 * d.zeta_f * omega_f.array() * p.B.array() / p.K.array()).matrix();
  g.epsilon = epsilon_from_stiffness(p.K, Vec::Ones(p.n));
  g.K_S = g.eps_K_S / g.epsilon;
  return g;
}

/// Motor-side PD on the rigid equivalent (M + B) q'' = tau_m.
inline MotorPdGains synthesize_motor_pd_gains(const PlantParams& p, double omega_n, double zeta) {
  if (!(omega_n > 0.0) || !(zeta > 0.0)) throw ConfigError("motor-pd: omega_n and zeta must be > 0");
  const Vec rigid = detail::operating_inertia(p) + p.B;
  return {omega_n * omega_n * rigid, 2.0 * zeta * omega_n * rigid, omega_n, zeta};
}

}  // namespace fjmpc
