#pragma once

// Linear prediction models for the three MPC structures, their exact ZOH
// discretization, condensing into y_hat = C_hat z + D_hat u_hat, and the
// box-constrained QP solved each control cycle.

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fjmpc/controllers.hpp"
#include "fjmpc/model.hpp"
#include "fjmpc/qp.hpp"
#include "fjmpc/sp_core.hpp"

namespace fjmpc {

struct LinearModel {
  Mat A, E, C, D;
  std::vector<std::string> state_labels, output_labels;

  int states() const { return static_cast<int>(A.rows()); }
  int inputs() const { return static_cast<int>(E.cols()); }
  int outputs() const { return static_cast<int>(C.rows()); }

  void check() const {
    const long m = A.rows(), p = E.cols(), r = C.rows();
    if (A.cols() != m || E.rows() != m || C.cols() != m || D.rows() != r || D.cols() != p)
      throw DimensionError("LinearModel: inconsistent A/E/C/D dimensions");
  }

  friend bool operator==(const LinearModel& a, const LinearModel& b) {
    return a.A == b.A && a.E == b.E && a.C == b.C && a.D == b.D;
  }
};

struct DiscreteModel {
  Mat Ad, Ed;
  double dt = 0.0;
  LinearModel source;
};

struct PredictionOperator {
  Mat C_hat;  // (r N_P) x m
  Mat D_hat;  // (r N_P) x (p N_C)
  int N_P = 1, N_C = 1;
  int r = 0, p = 0;
};

struct MpcWeights {
  Vec Q_y;  // per output, repeated over N_P
  Vec Q_u;  // per input, repeated over N_C
};

// ---------------------------------------------------------------------------
// Model builders.

/// Boundary-layer torque dynamics, states [tau_fast, dtau_fast], input tau_m_fast.
inline LinearModel build_fast_model(const PlantParams& p, const FullState& s) {
  const int n = p.n;
  const Mat M_inv = mass_matrix(p, s.q).inverse();
  const Mat B_inv = p.B.cwiseInverse().asDiagonal();
  const Mat Kd = p.K.asDiagonal();
  LinearModel m;
  m.A = Mat::Zero(2 * n, 2 * n);
  m.A.topRightCorner(n, n) = Mat::Identity(n, n);
  m.A.bottomLeftCorner(n, n) = -Kd * (M_inv + B_inv);
  m.E = Mat::Zero(2 * n, n);
  m.E.bottomRows(n) = Kd * B_inv;
  m.C = Mat::Identity(2 * n, 2 * n);
  m.D = Mat::Zero(2 * n, n);
  m.state_labels = {"tau_fast", "dtau_fast"};
  m.output_labels = m.state_labels;
  return m;
}

/// Rigid-equivalent link dynamics (gravity compensated), states [q, dq], input tau_m_slow.
inline LinearModel build_slow_model(const PlantParams& p, const FullState& s) {
  const int n = p.n;
  const Mat rigid_inv = (mass_matrix(p, s.q) + Mat(p.B.asDiagonal())).inverse();
  LinearModel m;
  m.A = Mat::Zero(2 * n, 2 * n);
  m.A.topRightCorner(n, n) = Mat::Identity(n, n);
  m.A.bottomRightCorner(n, n) = -rigid_inv * coriolis_matrix(p, s.q, s.dq);
  m.E = Mat::Zero(2 * n, n);
  m.E.bottomRows(n) = rigid_inv;
  m.C = Mat::Identity(2 * n, 2 * n);
  m.D = Mat::Zero(2 * n, n);
  m.state_labels = {"q", "dq"};
  m.output_labels = m.state_labels;
  return m;
}

/// Complete flexible-joint model, states [q, dq, theta, dtheta], outputs [q, dq, dtheta].
inline LinearModel build_full_model(const PlantParams& p, const FullState& s) {
  const int n = p.n;
  const Mat M_inv = mass_matrix(p, s.q).inverse();
  const Mat B_inv = p.B.cwiseInverse().asDiagonal();
  const Mat Kd = p.K.asDiagonal();
  const Mat I = Mat::Identity(n, n);
  LinearModel m;
  m.A = Mat::Zero(4 * n, 4 * n);
  m.A.block(0, n, n, n) = I;
  m.A.block(n, 0, n, n) = -M_inv * Kd;
  m.A.block(n, n, n, n) = -M_inv * coriolis_matrix(p, s.q, s.dq);
  m.A.block(n, 2 * n, n, n) = M_inv * Kd;
  m.A.block(2 * n, 3 * n, n, n) = I;
  m.A.block(3 * n, 0, n, n) = B_inv * Kd;
  m.A.block(3 * n, 2 * n, n, n) = -B_inv * Kd;
  m.E = Mat::Zero(4 * n, n);
  m.E.bottomRows(n) = B_inv;
  m.C = Mat::Zero(3 * n, 4 * n);
  m.C.block(0, 0, n, n) = I;
  m.C.block(n, n, n, n) = I;
  m.C.block(2 * n, 3 * n, n, n) = I;
  m.D = Mat::Zero(3 * n, n);
  m.state_labels = {"q", "dq", "theta", "dtheta"};
  m.output_labels = {"q", "dq", "dtheta"};
  return m;
}

// ---------------------------------------------------------------------------
// Discretization and condensing.

/// Exact ZOH via the augmented exponential exp([[A, E], [0, 0]] dt).
inline DiscreteModel discretize_zoh(const LinearModel& model, double dt) {
  model.check();
  if (!(dt > 0.0)) throw ConfigError("discretize_zoh: dt must be > 0");
  const int m = model.states(), p = model.inputs();
  Mat aug = Mat::Zero(m + p, m + p);
  aug.topLeftCorner(m, m) = model.A * dt;
  aug.topRightCorner(m, p) = model.E * dt;
  const Mat phi = aug.exp();
  DiscreteModel d;
  d.Ad = phi.topLeftCorner(m, m);
  d.Ed = phi.topRightCorner(m, p);
  d.dt = dt;
  d.source = model;
  if (!d.Ad.allFinite() || !d.Ed.allFinite()) throw Error("discretize_zoh: non-finite result");
  return d;
}

/// Stacks y_{k+1..k+N_P}; inputs are free for N_C moves and held afterwards.
inline PredictionOperator condense(const DiscreteModel& dm, int N_P, int N_C) {
  if (N_C < 1 || N_P < 1 || N_C > N_P) throw ConfigError("condense: need 1 <= N_C <= N_P");
  const LinearModel& src = dm.source;
  const int m = src.states(), p = src.inputs(), r = src.outputs();

  PredictionOperator po;
  po.N_P = N_P;
  po.N_C = N_C;
  po.r = r;
  po.p = p;
  po.C_hat.resize(r * N_P, m);
  po.D_hat = Mat::Zero(r * N_P, p * N_C);

  // markov[k] = C Ad^k Ed
  std::vector<Mat> markov;
  markov.reserve(N_P);
  Mat CA = src.C;  // C Ad^k
  for (int k = 0; k < N_P; ++k) {
    markov.push_back(CA * dm.Ed);
    CA = CA * dm.Ad;
    po.C_hat.middleRows(r * k, r) = CA;
  }

  for (int i = 1; i <= N_P; ++i) {
    Mat tail = Mat::Zero(r, p);
    for (int j = 1; j <= i; ++j) {
      const Mat& G = markov[i - j];
      if (j < N_C) {
        po.D_hat.block(r * (i - 1), p * (j - 1), r, p) = G;
      } else {
        tail += G;
      }
    }
    po.D_hat.block(r * (i - 1), p * (N_C - 1), r, p) += tail;
    if (src.D.size() > 0 && !src.D.isZero()) {
      const int move = std::min(i, N_C - 1);
      po.D_hat.block(r * (i - 1), p * move, r, p) += src.D;
    }
  }
  return po;
}

/// Condensed QP for one cycle. Bounds are per input and repeated over N_C.
inline BoxQp assemble_qp(const PredictionOperator& po, const MpcWeights& w, const Vec& z_k, const Vec& y_ref,
                         const Vec& u_lo, const Vec& u_hi) {
  detail::require_size(w.Q_y.size(), po.r, "Q_y");
  detail::require_size(w.Q_u.size(), po.p, "Q_u");
  detail::require_size(z_k.size(), po.C_hat.cols(), "z_k");
  detail::require_size(y_ref.size(), po.r * po.N_P, "y_ref stack");
  detail::require_size(u_lo.size(), po.p, "u_lo");
  detail::require_size(u_hi.size(), po.p, "u_hi");
  if ((w.Q_y.array() < 0.0).any() || (w.Q_u.array() < 0.0).any())
    throw ConfigError("assemble_qp: weights must be nonnegative");

  const Vec qy = w.Q_y.replicate(po.N_P, 1);
  const Vec qu = w.Q_u.replicate(po.N_C, 1);
  const Mat WD = qy.asDiagonal() * po.D_hat;
  BoxQp qp;
  qp.H = po.D_hat.transpose() * WD;
  qp.H.diagonal() += qu;
  qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();
  qp.f = WD.transpose() * (po.C_hat * z_k - y_ref);
  qp.lb = u_lo.replicate(po.N_C, 1);
  qp.ub = u_hi.replicate(po.N_C, 1);
  return qp;
}

inline BoxQp assemble_qp(const PredictionOperator& po, const MpcWeights& w, const Vec& z_k, const Vec& y_ref,
                         const Vec& tau_max) {
  return assemble_qp(po, w, z_k, y_ref, -tau_max, tau_max);
}

// ---------------------------------------------------------------------------
// MPC controllers.

enum class MpcVariant { fast, slow, full };

inline const char* to_string(MpcVariant v) {
  switch (v) {
    case MpcVariant::fast: return "mpc-fast";
    case MpcVariant::slow: return "mpc-slow";
    case MpcVariant::full: return "mpc-full";
  }
  return "?";
}

/// How MPC-fast splits the torque limit between the slow command and the fast
/// move. residual: the fast move may use whatever room the slow command leaves
/// on each side, [-tau_max - tau_m_slow, tau_max - tau_m_slow] widened to
/// contain 0. symmetric: +-(tau_max - |tau_m_slow|), clamped at 0.
enum class FastBoundRule { residual, symmetric };

struct MpcConfig {
  int N_P = 20;
  int N_C = 4;
  MpcWeights weights;
  bool preview = true;      // query future reference samples over the horizon
  bool relinearize = false; // rebuild discretization/condensing every cycle even if the model is unchanged
  QpOptions qp;
  double dtau_cutoff_hz = 100.0;
  FastBoundRule fast_bounds = FastBoundRule::residual;

  /// Defaults per variant. Weights are the experiment weights; horizons are the
  /// best smooth-step tracking on N_P in {10..100}, N_C in {1..4} at 1 ms.
  static MpcConfig defaults(MpcVariant v) {
    MpcConfig c;
    switch (v) {
      case MpcVariant::fast:
        c.N_P = 100;
        c.N_C = 2;
        c.weights = {Vec{{1.0, 5e-3}}, Vec{{1.3}}};
        break;
      case MpcVariant::slow:
        c.N_P = 100;
        c.N_C = 1;
        c.weights = {Vec{{5.0, 1e-2}}, Vec{{1e-5}}};
        break;
      case MpcVariant::full:
        c.N_P = 60;
        c.N_C = 1;
        c.weights = {Vec{{60.0, 2e-2, 5e-4}}, Vec{{2e-6}}};
        break;
    }
    return c;
  }

  void validate() const {
    if (N_C < 1 || N_P < 1 || N_C > N_P) throw ConfigError("mpc: need 1 <= N_C <= N_P");
    if ((weights.Q_y.array() < 0.0).any() || (weights.Q_u.array() < 0.0).any())
      throw ConfigError("mpc: weights must be nonnegative");
  }
};

/// Shared machinery: per-cycle model build with cached discretization and
/// condensed Hessian, warm-started QP.
class MpcController : public Controller {
 public:
  MpcController(PlantParams p, MpcConfig cfg, double dt_ctrl)
      : p_(std::move(p)), cfg_(std::move(cfg)), dt_(dt_ctrl), filter_(dt_ctrl, cfg_.dtau_cutoff_hz) {
    cfg_.validate();
  }

  void reset() override {
    filter_.reset();
    warm_.reset();
    cached_.reset();
  }

  const MpcConfig& config() const { return cfg_; }
  const PlantParams& plant() const { return p_; }

 protected:
  struct Prepared {
    LinearModel model;
    PredictionOperator po;
  };

  const Prepared& prepare(const LinearModel& model) {
    if (!cached_ || cfg_.relinearize || !(cached_->model == model)) {
      detail::require_size(cfg_.weights.Q_y.size(), model.outputs(), "mpc Q_y (outputs)");
      detail::require_size(cfg_.weights.Q_u.size(), model.inputs(), "mpc Q_u (inputs)");
      cached_ = Prepared{model, condense(discretize_zoh(model, dt_), cfg_.N_P, cfg_.N_C)};
      warm_.reset();
    }
    return *cached_;
  }

  /// Solves the cycle QP and returns the first move.
  Vec solve_first_move(const PredictionOperator& po, const Vec& z, const Vec& y_ref, const Vec& lo, const Vec& hi,
                       ControllerDiagnostics& diag) {
    const BoxQp qp = assemble_qp(po, cfg_.weights, z, y_ref, lo, hi);
    const QpSolution sol = solve_box_qp(qp, cfg_.qp, warm_);
    if (sol.status == QpStatus::infeasible_bounds || !sol.u_star.allFinite())
      throw ControllerInfeasible(name() + ": QP " + to_string(sol.status));
    diag.qp_iterations = sol.iterations;
    diag.qp_cost = sol.cost;
    // Shift the move sequence for the next warm start.
    Vec shifted = sol.u_star;
    const long p = po.p;
    if (po.N_C > 1) shifted.head(p * (po.N_C - 1)) = sol.u_star.tail(p * (po.N_C - 1));
    warm_ = shifted;
    return sol.u_star.head(p);
  }

  Vec clamp_torque(const Vec& tau_m) const { return tau_m.cwiseMax(-p_.tau_max).cwiseMin(p_.tau_max); }

  std::vector<ReferenceSample> reference_window(double t, const ReferenceFn& reference) const {
    std::vector<ReferenceSample> out;
    out.reserve(cfg_.N_P);
    const ReferenceSample now = reference(t);
    for (int i = 1; i <= cfg_.N_P; ++i) out.push_back(cfg_.preview ? reference(t + i * dt_) : now);
    return out;
  }

  PlantParams p_;
  MpcConfig cfg_;
  double dt_;
  DtauFilter filter_;
  std::optional<Vec> warm_;
  std::optional<Prepared> cached_;
};

inline std::pair<Vec, Vec> fast_move_bounds(const Vec& tau_max, const Vec& tau_m_slow, FastBoundRule rule) {
  detail::require_size(tau_m_slow.size(), tau_max.size(), "tau_m_slow");
  if (rule == FastBoundRule::symmetric) {
    const Vec budget = (tau_max - tau_m_slow.cwiseAbs()).cwiseMax(0.0);
    return {-budget, budget};
  }
  return {(-tau_max - tau_m_slow).cwiseMin(0.0), (tau_max - tau_m_slow).cwiseMax(0.0)};
}

/// MPC on the boundary-layer torque dynamics beneath a link-side PD loop.
class MpcFastController : public MpcController {
 public:
  MpcFastController(PlantParams p, LinkPdGains outer, MpcConfig cfg, double dt_ctrl)
      : MpcController(std::move(p), std::move(cfg), dt_ctrl), outer_(std::move(outer)) {}

  std::string name() const override { return "mpc-fast"; }

  ControllerOutput update(double t, const FullState& s, const ReferenceFn& reference) override {
    const int n = p_.n;
    const Vec tau = joint_torque(p_, s);
    const Vec tau_d = link_pd_torque(p_, s, reference(t), outer_);

    // Slow motor torque whose quasi-steady joint torque equals tau_d.
    const Mat M_inv = mass_matrix(p_, s.q).inverse();
    const Mat B = p_.B.asDiagonal();
    const Vec n_vec = nonlinear_torque(p_, s.q, s.dq);
    ControllerOutput out;
    const Vec tau_m_slow = (B * M_inv + Mat::Identity(n, n)) * tau_d - B * M_inv * n_vec;
    const Vec tau_slow = slow_torque(p_, tau_m_slow, s.q, s.dq);

    const Vec tau_fast = fast_torque(tau, tau_slow);
    Vec z(2 * n);
    z << tau_fast, filter_(tau_fast);
    const Prepared& prep = prepare(build_fast_model(p_, s));
    const auto [lo, hi] = fast_move_bounds(p_.tau_max, tau_m_slow, cfg_.fast_bounds);
    const Vec move = solve_first_move(prep.po, z, Vec::Zero(prep.po.r * prep.po.N_P), lo, hi, out.diagnostics);
    // A slow demand beyond the limit is reported saturated; the move already
    // points back into the admissible range.
    out.tau_m_slow = clamp_torque(tau_m_slow);
    out.tau_m_fast = clamp_torque(tau_m_slow + move) - out.tau_m_slow;
    // a + (b - a) can round one ulp past b; pull the fast part in when it does.
    for (int i = 0; i < n; ++i)
      while (std::abs(out.tau_m_slow(i) + out.tau_m_fast(i)) > p_.tau_max(i))
        out.tau_m_fast(i) = std::nextafter(out.tau_m_fast(i), 0.0);
    out.diagnostics.tau_slow = tau_slow;
    out.diagnostics.tau_fast = tau_fast;
    return out;
  }

 private:
  LinkPdGains outer_;
};

/// MPC on the rigid-equivalent link model; the fast SP torque law stays inside.
class MpcSlowController : public MpcController {
 public:
  MpcSlowController(PlantParams p, SpGains inner, MpcConfig cfg, double dt_ctrl)
      : MpcController(std::move(p), std::move(cfg), dt_ctrl), inner_(std::move(inner)) {}

  std::string name() const override { return "mpc-slow"; }

  ControllerOutput update(double t, const FullState& s, const ReferenceFn& reference) override {
    const int n = p_.n;
    const Vec tau = joint_torque(p_, s);
    const Vec dtau = filter_(tau);

    const Prepared& prep = prepare(build_slow_model(p_, s));
    Vec z(2 * n);
    z << s.q, s.dq;
    const auto window = reference_window(t, reference);
    Vec y_ref(2 * n * cfg_.N_P);
    for (int i = 0; i < cfg_.N_P; ++i) y_ref.segment(2 * n * i, 2 * n) << window[i].q_d, window[i].dq_d;

    ControllerOutput out;
    const Vec move = solve_first_move(prep.po, z, y_ref, -p_.tau_max, p_.tau_max, out.diagnostics);
    out.tau_m_slow = clamp_torque(gravity_torque(p_, s.q) + move);
    const Vec tau_slow = slow_torque(p_, out.tau_m_slow, s.q, s.dq);
    out.tau_m_fast = inner_.K_T.cwiseProduct(tau_slow - tau) - inner_.eps_K_S.cwiseProduct(dtau);
    out.diagnostics.tau_slow = tau_slow;
    out.diagnostics.tau_fast = fast_torque(tau, tau_slow);
    return out;
  }

 private:
  SpGains inner_;
};

/// MPC on the complete flexible-joint model; the command is not split.
class MpcFullController : public MpcController {
 public:
  MpcFullController(PlantParams p, MpcConfig cfg, double dt_ctrl)
      : MpcController(std::move(p), std::move(cfg), dt_ctrl) {}

  std::string name() const override { return "mpc-full"; }

  ControllerOutput update(double t, const FullState& s, const ReferenceFn& reference) override {
    const int n = p_.n;
    const Prepared& prep = prepare(build_full_model(p_, s));
    Vec z(4 * n);
    // The model has no gravity; measure theta from the gravity-loaded static
    // deflection so the feedforward g(q) and the spring cancel in prediction.
    z << s.q, s.dq, s.theta - gravity_torque(p_, s.q).cwiseQuotient(p_.K), s.dtheta;
    const auto window = reference_window(t, reference);
    Vec y_ref(3 * n * cfg_.N_P);
    for (int i = 0; i < cfg_.N_P; ++i)
      y_ref.segment(3 * n * i, 3 * n) << window[i].q_d, window[i].dq_d, window[i].dq_d;

    ControllerOutput out;
    const Vec move = solve_first_move(prep.po, z, y_ref, -p_.tau_max, p_.tau_max, out.diagnostics);
    out.tau_m_slow = clamp_torque(gravity_torque(p_, s.q) + move);
    out.tau_m_fast = Vec::Zero(n);
    return out;
  }
};

}  // namespace fjmpc
