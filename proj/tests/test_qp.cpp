#include <gtest/gtest.h>

#include <random>

#include "fjmpc/qp.hpp"
#include "oracles.hpp"

using namespace fjmpc;

using oracle::random_box_qp;

TEST(BoxQp, RandomProblemsMatchEnumeration) {
  std::mt19937 rng(20240611);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const BoxQp qp = random_box_qp(rng, size(rng));
    const auto sol = solve_box_qp(qp);
    ASSERT_EQ(sol.status, QpStatus::optimal) << "trial " << trial;
    EXPECT_TRUE((sol.u_star.array() >= qp.lb.array()).all());
    EXPECT_TRUE((sol.u_star.array() <= qp.ub.array()).all());
    const double best = qp.cost(oracle::enumerate_box_qp(qp));
    EXPECT_LT(std::abs(sol.cost - best), 1e-8 * (1.0 + std::abs(best))) << "trial " << trial;
  }
}

TEST(BoxQp, UnconstrainedMatchesLinearSolve) {
  std::mt19937 rng(7);
  for (int p : {1, 3, 8}) {
    BoxQp qp = random_box_qp(rng, p);
    qp.lb = Vec::Constant(p, -1e6);
    qp.ub = Vec::Constant(p, 1e6);
    const Vec exact = qp.H.ldlt().solve(-qp.f);
    const auto sol = solve_box_qp(qp);
    EXPECT_LT((sol.u_star - exact).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(sol.kkt_residual, 1e-8);
  }
}

TEST(BoxQp, ScalarClampExamples) {
  BoxQp qp{Mat::Constant(1, 1, 2.0), Vec::Constant(1, -10.0), Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
  EXPECT_EQ(solve_box_qp(qp).u_star(0), 1.0);
  qp.f(0) = 1.0;
  EXPECT_NEAR(solve_box_qp(qp).u_star(0), -0.5, 1e-15);
}

TEST(BoxQp, KktResidualExamples) {
  const BoxQp qp{Mat::Identity(2, 2), Vec{{-2.0, 0.5}}, Vec{{-1.0, -1.0}}, Vec{{1.0, 1.0}}};
  EXPECT_EQ(kkt_residual(qp, Vec{{1.0, -0.5}}), 0.0);
  EXPECT_NEAR(kkt_residual(qp, Vec{{0.0, -0.5}}), 2.0, 1e-15);
  EXPECT_NEAR(kkt_residual(qp, Vec{{1.0, -1.0}}), 0.5, 1e-15);
  EXPECT_THROW(kkt_residual(qp, Vec{{2.0, 0.0}}), Error);
}

TEST(BoxQp, InfeasibleBoundsReported) {
  const BoxQp qp{Mat::Identity(1, 1), Vec::Zero(1), Vec::Constant(1, 1.0), Vec::Constant(1, 0.0)};
  EXPECT_EQ(solve_box_qp(qp).status, QpStatus::infeasible_bounds);
}

TEST(BoxQp, DimensionMismatchThrows) {
  const BoxQp qp{Mat::Identity(2, 2), Vec::Zero(1), Vec::Zero(1), Vec::Zero(1)};
  EXPECT_THROW(solve_box_qp(qp), DimensionError);
}

TEST(BoxQp, DescentCheckHoldsOnRandomProblems) {
  std::mt19937 rng(99);
  QpOptions opt;
  opt.check_descent = true;
  for (int trial = 0; trial < 200; ++trial) EXPECT_NO_THROW(solve_box_qp(random_box_qp(rng, 12), opt));
}

TEST(BoxQp, WarmStartReachesSameOptimum) {
  std::mt19937 rng(3);
  const BoxQp qp = random_box_qp(rng, 10);
  const auto cold = solve_box_qp(qp);
  const auto warm = solve_box_qp(qp, {}, Vec::Constant(10, 5.0));
  EXPECT_NEAR(cold.cost, warm.cost, 1e-10 * (1.0 + std::abs(cold.cost)));
}

TEST(BoxQp, JsonRoundTrip) {
  std::mt19937 rng(11);
  const BoxQp qp = random_box_qp(rng, 4);
  const BoxQp back = box_qp_from_json(nlohmann::json::parse(to_json(qp).dump()));
  EXPECT_EQ(back.H, qp.H);
  EXPECT_EQ(back.f, qp.f);
  EXPECT_EQ(back.lb, qp.lb);
  EXPECT_EQ(back.ub, qp.ub);
}
