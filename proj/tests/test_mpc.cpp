#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "fjmpc/mpc.hpp"
#include "oracles.hpp"

using namespace fjmpc;

namespace {

ReferenceFn hold(double q) {
  return [q](double) { return ReferenceSample::constant(Vec::Constant(1, q)); };
}

LinearModel integrator() {
  LinearModel m;
  m.A = Mat::Zero(1, 1);
  m.E = Mat::Ones(1, 1);
  m.C = Mat::Ones(1, 1);
  m.D = Mat::Zero(1, 1);
  return m;
}

}  // namespace

TEST(FastModel, EigenvaluesAreTheJointMode) {
  const auto m = build_fast_model(PlantParams::canonical(), FullState::zero(1));
  const Eigen::VectorXcd ev = m.A.eigenvalues();
  const double w = std::sqrt(362.0 * (1.0 + 1.0 / 0.598));
  EXPECT_NEAR(w, 31.102, 1e-3);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(ev(i).real(), 0.0, 1e-9);
    EXPECT_NEAR(std::abs(ev(i).imag()), w, 1e-9);
  }
  EXPECT_NEAR(m.E(1, 0), 362.0 / 0.598, 1e-9);
}

TEST(FullModel, ShapeAndOutputs) {
  const auto m = build_full_model(PlantParams::canonical(), FullState::zero(1));
  EXPECT_EQ(m.states(), 4);
  EXPECT_EQ(m.outputs(), 3);
  EXPECT_NEAR(m.A(1, 0), -362.0, 1e-12);
  EXPECT_NEAR(m.A(3, 2), -362.0 / 0.598, 1e-9);
  EXPECT_NEAR(m.E(3, 0), 1.0 / 0.598, 1e-12);
}

TEST(Zoh, HarmonicOscillatorClosedForm) {
  const double w = 31.102;
  LinearModel m;
  m.A = Mat{{0.0, 1.0}, {-w * w, 0.0}};
  m.E = Mat{{0.0}, {1.0}};
  m.C = Mat::Identity(2, 2);
  m.D = Mat::Zero(2, 1);
  for (double dt : {1e-4, 1e-3, 1e-2}) {
    const auto d = discretize_zoh(m, dt);
    const auto [Ad, Ed] = oracle::oscillator_zoh(w, dt);
    EXPECT_LT((d.Ad - Ad).cwiseAbs().maxCoeff(), 1e-10) << dt;
    EXPECT_LT((d.Ed - Ed).cwiseAbs().maxCoeff(), 1e-10) << dt;
  }
}

TEST(Zoh, RejectsBadStep) { EXPECT_THROW(discretize_zoh(integrator(), 0.0), ConfigError); }

TEST(Condense, SingleStep) {
  const auto dm = discretize_zoh(integrator(), 0.1);
  const auto po = condense(dm, 1, 1);
  EXPECT_NEAR(po.C_hat(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(po.D_hat(0, 0), 0.1, 1e-15);
}

TEST(Condense, BlockedMoveAccumulates) {
  const auto dm = discretize_zoh(integrator(), 0.1);
  auto po = condense(dm, 2, 1);
  EXPECT_NEAR(po.D_hat(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(po.D_hat(1, 0), 0.2, 1e-15);
  po = condense(dm, 2, 2);
  EXPECT_NEAR(po.D_hat(1, 0), 0.1, 1e-15);
  EXPECT_NEAR(po.D_hat(1, 1), 0.1, 1e-15);
  EXPECT_EQ(po.D_hat(0, 1), 0.0);
  EXPECT_THROW(condense(dm, 2, 3), ConfigError);
}

TEST(Condense, MatchesForwardSimulation) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> horizon(1, 20);
  std::normal_distribution<double> n01;
  auto p = PlantParams::canonical();
  p.g_amp(0) = 4.0;
  FullState s = FullState::zero(1);
  s.q(0) = 0.3;
  s.dq(0) = 0.5;
  const std::vector<LinearModel> models{build_fast_model(p, s), build_slow_model(p, s), build_full_model(p, s)};
  for (const auto& m : models) {
    const auto dm = discretize_zoh(m, 1e-3);
    for (int trial = 0; trial < 20; ++trial) {
      const int N_P = horizon(rng);
      const int N_C = std::uniform_int_distribution<int>(1, N_P)(rng);
      const auto po = condense(dm, N_P, N_C);
      Vec z(m.states()), u(m.inputs() * N_C);
      for (auto& v : z) v = n01(rng);
      for (auto& v : u) v = 10.0 * n01(rng);
      const Vec expect = oracle::simulate_outputs(dm, z, u, N_P, N_C);
      const Vec got = po.C_hat * z + po.D_hat * u;
      EXPECT_LT((got - expect).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + expect.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(AssembleQp, ZeroStateZeroReferenceGivesZeroLinearTerm) {
  const auto po = condense(discretize_zoh(integrator(), 0.1), 5, 2);
  const auto qp = assemble_qp(po, {Vec::Ones(1), Vec::Constant(1, 0.1)}, Vec::Zero(1), Vec::Zero(5),
                              Vec::Constant(1, 1.0));
  EXPECT_EQ(qp.f, Vec::Zero(2));
  EXPECT_EQ(solve_box_qp(qp).u_star, Vec::Zero(2));
}

TEST(AssembleQp, ReachableReferenceIsTrackedExactly) {
  const auto p = PlantParams::canonical();
  const auto po = condense(discretize_zoh(build_slow_model(p, FullState::zero(1)), 1e-3), 10, 3);
  const Vec z{{0.1, -0.2}}, u0{{3.0, -1.0, 2.0}};
  const Vec y_ref = po.C_hat * z + po.D_hat * u0;
  const auto qp = assemble_qp(po, {Vec{{1.0, 0.5}}, Vec::Zero(1)}, z, y_ref, Vec::Constant(1, 100.0));
  // Least-squares oracle: D_hat has full column rank.
  const Vec ls = po.D_hat.colPivHouseholderQr().solve(y_ref - po.C_hat * z);
  EXPECT_LT((ls - u0).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((solve_box_qp(qp).u_star - u0).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(AssembleQp, DefaultWeightsGivePositiveDefiniteHessian) {
  const auto p = PlantParams::canonical();
  const FullState s = FullState::zero(1);
  const std::vector<std::pair<MpcVariant, LinearModel>> cases{{MpcVariant::fast, build_fast_model(p, s)},
                                                              {MpcVariant::slow, build_slow_model(p, s)},
                                                              {MpcVariant::full, build_full_model(p, s)}};
  for (const auto& [v, m] : cases) {
    const auto cfg = MpcConfig::defaults(v);
    const auto po = condense(discretize_zoh(m, 1e-3), cfg.N_P, cfg.N_C);
    const auto qp = assemble_qp(po, cfg.weights, Vec::Zero(m.states()), Vec::Zero(po.r * po.N_P), p.tau_max);
    const Eigen::SelfAdjointEigenSolver<Mat> es(qp.H);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0) << to_string(v);
  }
}

TEST(AssembleQp, RejectsNegativeWeights) {
  const auto po = condense(discretize_zoh(integrator(), 0.1), 2, 1);
  EXPECT_THROW(assemble_qp(po, {Vec::Constant(1, -1.0), Vec::Zero(1)}, Vec::Zero(1), Vec::Zero(2), Vec::Ones(1)),
               ConfigError);
}

TEST(FastBounds, ResidualAndSymmetricRules) {
  const Vec tmax = Vec::Constant(1, 100.0);
  auto [lo, hi] = fast_move_bounds(tmax, Vec::Constant(1, 30.0), FastBoundRule::residual);
  EXPECT_EQ(lo(0), -130.0);
  EXPECT_EQ(hi(0), 70.0);
  std::tie(lo, hi) = fast_move_bounds(tmax, Vec::Constant(1, 30.0), FastBoundRule::symmetric);
  EXPECT_EQ(lo(0), -70.0);
  EXPECT_EQ(hi(0), 70.0);
  // Slow command at or beyond the limit leaves no room upwards.
  std::tie(lo, hi) = fast_move_bounds(tmax, Vec::Constant(1, 120.0), FastBoundRule::residual);
  EXPECT_EQ(hi(0), 0.0);
  EXPECT_EQ(lo(0), -220.0);
  std::tie(lo, hi) = fast_move_bounds(tmax, Vec::Constant(1, 120.0), FastBoundRule::symmetric);
  EXPECT_EQ(lo(0), 0.0);
  EXPECT_EQ(hi(0), 0.0);
}

TEST(MpcFast, ZeroErrorGivesZeroCommand) {
  const auto p = PlantParams::canonical();
  MpcFastController c(p, link_pd_gains(Vec::Ones(1), 15.0, 1.0, Vec::Zero(1)),
                      MpcConfig::defaults(MpcVariant::fast), 1e-3);
  const auto out = c.update(0.0, FullState::zero(1), hold(0.0));
  EXPECT_EQ(out.tau_m_slow(0), 0.0);
  EXPECT_NEAR(out.tau_m_fast(0), 0.0, 1e-12);
}

TEST(MpcFast, OpposesPositiveFastTorque) {
  const auto p = PlantParams::canonical();
  MpcFastController c(p, link_pd_gains(Vec::Ones(1), 15.0, 1.0, Vec::Zero(1)),
                      MpcConfig::defaults(MpcVariant::fast), 1e-3);
  FullState s = FullState::zero(1);
  s.theta(0) = 0.01;  // tau = 3.62, tau_slow = 0
  const auto out = c.update(0.0, s, hold(0.0));
  EXPECT_NEAR(out.diagnostics.tau_fast(0), 3.62, 1e-12);
  EXPECT_LT(out.tau_m_fast(0), 0.0);
}

TEST(MpcSlow, OnReferenceMoveIsGravityOnly) {
  auto p = PlantParams::canonical();
  p.g_amp(0) = 3.0;
  MpcSlowController c(p, synthesize_gains(p, {15.0, 1.0, 2.0, 1.0}), MpcConfig::defaults(MpcVariant::slow), 1e-3);
  FullState s = FullState::zero(1);
  s.q(0) = 0.2;
  s.theta(0) = 0.2 + 3.0 * std::sin(0.2) / 362.0;
  const auto out = c.update(0.0, s, hold(0.2));
  EXPECT_NEAR(out.tau_m_slow(0), 3.0 * std::sin(0.2), 1e-9);
}

TEST(MpcSlow, MatchesScalarLeastSquaresOracle) {
  // With N_C = 1 the cost is a scalar quadratic in the held move u:
  //   sum_i w (c_i + d_i u - r)^2 + q_u u^2,  d_i, c_i from the double integrator.
  const auto p = PlantParams::canonical();
  MpcConfig cfg = MpcConfig::defaults(MpcVariant::slow);
  cfg.N_P = 8;
  cfg.N_C = 1;
  cfg.preview = false;
  MpcSlowController c(p, synthesize_gains(p, {15.0, 1.0, 2.0, 1.0}), cfg, 1e-3);
  FullState s = FullState::zero(1);
  s.q(0) = 0.01;
  s.dq(0) = -0.3;
  s.theta(0) = 0.01;
  const auto out = c.update(0.0, s, hold(0.02));

  const double dt = 1e-3, m = 1.598, wq = 5.0, wv = 1e-2, qu = 1e-5;
  double num = 0.0, den = qu;
  for (int i = 1; i <= cfg.N_P; ++i) {
    const double t = i * dt;
    const double cq = 0.01 - 0.3 * t, cv = -0.3;
    const double dq_ = t * t / (2.0 * m), dv = t / m;
    num += wq * dq_ * (cq - 0.02) + wv * dv * cv;
    den += wq * dq_ * dq_ + wv * dv * dv;
  }
  const double u = std::clamp(-num / den, -100.0, 100.0);
  EXPECT_NEAR(out.tau_m_slow(0), u, 1e-6 * (1.0 + std::abs(u)));
}

TEST(MpcFull, EquilibriumGivesZeroMove) {
  const auto p = PlantParams::canonical();
  MpcFullController c(p, MpcConfig::defaults(MpcVariant::full), 1e-3);
  const auto out = c.update(0.0, FullState::zero(1), hold(0.0));
  EXPECT_EQ(out.tau_m_slow(0), 0.0);
  EXPECT_EQ(out.tau_m_fast(0), 0.0);
}

TEST(MpcFull, RelinearizingAConstantModelChangesNothing) {
  const auto p = PlantParams::canonical();
  MpcConfig a = MpcConfig::defaults(MpcVariant::full), b = a;
  b.relinearize = true;
  MpcFullController ca(p, a, 1e-3), cb(p, b, 1e-3);
  FullState s = FullState::zero(1);
  for (int k = 0; k < 5; ++k) {
    s.q(0) = 0.01 * k;
    s.theta(0) = 0.012 * k;
    const auto oa = ca.update(k * 1e-3, s, hold(0.26));
    const auto ob = cb.update(k * 1e-3, s, hold(0.26));
    EXPECT_NEAR(oa.tau_m_slow(0), ob.tau_m_slow(0), 1e-8 * (1.0 + std::abs(oa.tau_m_slow(0))));
  }
}

TEST(MpcConfig, ValidatesHorizons) {
  MpcConfig c = MpcConfig::defaults(MpcVariant::fast);
  c.N_C = c.N_P + 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MpcConfig::defaults(MpcVariant::fast);
  c.weights.Q_u(0) = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
