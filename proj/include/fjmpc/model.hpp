#pragma once

// Flexible-joint plant: link and motor inertias coupled through a linear
// torsional spring per joint.
//
//   M(q) q'' + C(q, q') q' + g(q) = K (theta - q) + tau_ext
//   B theta''            + K (theta - q) = tau_m

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "fjmpc/errors.hpp"

namespace fjmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Optional configuration-dependent inertia. Implementations must return an
/// SPD mass matrix and a Coriolis matrix with Mdot = C + C^T.
class InertiaModel {
 public:
  virtual ~InertiaModel() = default;
  virtual Mat mass(const Vec& q) const = 0;
  virtual Mat coriolis(const Vec& q, const Vec& dq) const = 0;
};

struct PlantParams {
  int n = 1;
  Mat M_link = Mat::Identity(1, 1);  // kg m^2, used when `inertia` is null
  Vec B = Vec::Constant(1, 0.5980);  // motor inertia diagonal, kg m^2
  Vec K = Vec::Constant(1, 362.0);   // joint stiffness diagonal, N m/rad
  Vec g_amp = Vec::Zero(1);          // g_i(q) = g_amp_i sin(q_i), N m
  Vec tau_max = Vec::Constant(1, 100.0);
  std::shared_ptr<const InertiaModel> inertia;

  /// The single-joint testbed: M = 1, B = 0.598, K = 362, +-100 N m.
  static PlantParams canonical() { return PlantParams{}; }

  static PlantParams diagonal(const Vec& m, const Vec& b, const Vec& k, const Vec& g_amp,
                              const Vec& tau_max) {
    PlantParams p;
    p.n = static_cast<int>(m.size());
    p.M_link = m.asDiagonal();
    p.B = b;
    p.K = k;
    p.g_amp = g_amp;
    p.tau_max = tau_max;
    p.validate();
    return p;
  }

  void validate() const {
    if (n < 1) throw ConfigError("plant: n must be >= 1");
    if (M_link.rows() != n || M_link.cols() != n) throw DimensionError("plant: M_link must be n x n");
    detail::require_size(B.size(), n, "plant.B");
    detail::require_size(K.size(), n, "plant.K");
    detail::require_size(g_amp.size(), n, "plant.g_amp");
    detail::require_size(tau_max.size(), n, "plant.tau_max");
    if ((M_link - M_link.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ConfigError("plant: M_link must be symmetric");
    if (M_link.llt().info() != Eigen::Success) throw ConfigError("plant: M_link must be positive definite");
    if ((B.array() <= 0.0).any()) throw ConfigError("plant: B must be positive");
    if ((K.array() <= 0.0).any()) throw ConfigError("plant: K must be positive");
    if ((tau_max.array() <= 0.0).any()) throw ConfigError("plant: tau_max must be positive");
  }
};

struct FullState {
  Vec q, dq, theta, dtheta;

  static FullState zero(int n) { return {Vec::Zero(n), Vec::Zero(n), Vec::Zero(n), Vec::Zero(n)}; }

  int size() const { return static_cast<int>(q.size()); }

  bool finite() const {
    return q.allFinite() && dq.allFinite() && theta.allFinite() && dtheta.allFinite();
  }

  FullState& operator+=(const FullState& o) {
    q += o.q;
    dq += o.dq;
    theta += o.theta;
    dtheta += o.dtheta;
    return *this;
  }
  friend FullState operator+(FullState a, const FullState& b) { return a += b; }
  friend FullState operator*(double s, const FullState& a) {
    return {s * a.q, s * a.dq, s * a.theta, s * a.dtheta};
  }
  friend bool operator==(const FullState& a, const FullState& b) {
    return a.q == b.q && a.dq == b.dq && a.theta == b.theta && a.dtheta == b.dtheta;
  }
};

/// Time derivative of a FullState; same layout (q', q'', theta', theta'').
using StateDerivative = FullState;

namespace detail {

inline void check_state(const PlantParams& p, const FullState& s) {
  require_size(s.q.size(), p.n, "state.q");
  require_size(s.dq.size(), p.n, "state.dq");
  require_size(s.theta.size(), p.n, "state.theta");
  require_size(s.dtheta.size(), p.n, "state.dtheta");
}

}  // namespace detail

inline Mat mass_matrix(const PlantParams& p, const Vec& q) {
  detail::require_size(q.size(), p.n, "q");
  if (p.inertia) return p.inertia->mass(q);
  return p.M_link;
}

inline Mat coriolis_matrix(const PlantParams& p, const Vec& q, const Vec& dq) {
  detail::require_size(q.size(), p.n, "q");
  detail::require_size(dq.size(), p.n, "dq");
  if (p.inertia) return p.inertia->coriolis(q, dq);
  // Constant inertia: Mdot = 0 and the chosen factorization is C = 0.
  return Mat::Zero(p.n, p.n);
}

inline Vec gravity_torque(const PlantParams& p, const Vec& q) {
  detail::require_size(q.size(), p.n, "q");
  return p.g_amp.cwiseProduct(q.array().sin().matrix());
}

/// n = C(q, dq) dq + g(q)
inline Vec nonlinear_torque(const PlantParams& p, const Vec& q, const Vec& dq) {
  return coriolis_matrix(p, q, dq) * dq + gravity_torque(p, q);
}

/// Elastic torque tau = K (theta - q).
inline Vec joint_torque(const PlantParams& p, const FullState& s) {
  detail::check_state(p, s);
  return p.K.cwiseProduct(s.theta - s.q);
}

inline double total_energy(const PlantParams& p, const FullState& s) {
  detail::check_state(p, s);
  const Vec defl = s.theta - s.q;
  const double kinetic_link = 0.5 * s.dq.dot(mass_matrix(p, s.q) * s.dq);
  const double kinetic_motor = 0.5 * s.dtheta.dot(p.B.cwiseProduct(s.dtheta));
  const double elastic = 0.5 * defl.dot(p.K.cwiseProduct(defl));
  const double gravity = p.g_amp.dot((1.0 - s.q.array().cos()).matrix());
  return kinetic_link + kinetic_motor + elastic + gravity;
}

inline StateDerivative dynamics_rhs(const PlantParams& p, const FullState& s, const Vec& tau_m,
                                    const Vec& tau_ext) {
  detail::check_state(p, s);
  detail::require_size(tau_m.size(), p.n, "tau_m");
  detail::require_size(tau_ext.size(), p.n, "tau_ext");
  const Vec tau = p.K.cwiseProduct(s.theta - s.q);
  const Vec link_force = tau + tau_ext - nonlinear_torque(p, s.q, s.dq);

  StateDerivative d;
  d.q = s.dq;
  d.theta = s.dtheta;
  d.dtheta = (tau_m - tau).cwiseQuotient(p.B);
  if (!p.inertia && p.n == 1) {
    d.dq = link_force / p.M_link(0, 0);
    return d;
  }
  const Eigen::LLT<Mat> llt(mass_matrix(p, s.q));
  if (llt.info() != Eigen::Success) throw SingularMatrixError("dynamics_rhs: M(q) is not positive definite");
  d.dq = llt.solve(link_force);
  return d;
}

}  // namespace fjmpc
