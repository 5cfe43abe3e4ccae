#include <gtest/gtest.h>

#include <random>

#include "nca/qp.hpp"
#include "oracles.hpp"

namespace nca::qp {
namespace {

Problem min_norm_problem(int d) {
  Problem prob;
  prob.H = 2.0 * Matrix::Identity(d, d);
  prob.c = Vector::Zero(d);
  return prob;
}

TEST(Qp, SymmetricProjectionOntoLine) {
  Problem prob = min_norm_problem(2);
  prob.A_eq = Matrix::Ones(1, 2);
  prob.b_eq = Vector::Constant(1, 2.0);
  prob.lb = Vector::Constant(2, -10.0);
  prob.ub = Vector::Constant(2, 10.0);
  prob.validate();
  const Solution sol = Solver().solve(prob);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.z[0], 1.0, 1e-12);
  EXPECT_NEAR(sol.z[1], 1.0, 1e-12);
  EXPECT_LE(sol.kkt_residual, 1e-8);
}

TEST(Qp, EqualityOutsideBoxIsInfeasible) {
  Problem prob = min_norm_problem(2);
  prob.A_eq = Matrix::Zero(1, 2);
  prob.A_eq(0, 0) = 1.0;
  prob.b_eq = Vector::Constant(1, 5.0);
  prob.lb = Vector::Zero(2);
  prob.ub = Vector::Ones(2);
  EXPECT_EQ(Solver().solve(prob).status, Status::Infeasible);
}

TEST(Qp, LooseBoxMatchesDenseKktSolve) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    Problem prob = oracle::random_box_qp(5, 3, 1.0, rng);
    prob.lb.array() -= 1e4;
    prob.ub.array() += 1e4;
    const Vector expected = oracle::kkt_linear_solve(prob);
    ASSERT_TRUE((expected.array() > prob.lb.array()).all() && (expected.array() < prob.ub.array()).all());
    const Solution sol = Solver().solve(prob);
    ASSERT_EQ(sol.status, Status::Optimal);
    EXPECT_LE((sol.z - expected).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Qp, TightBoxesMatchEnumeration) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Problem prob = oracle::random_box_qp(5, 3, 0.5, rng);
    const auto best = oracle::enumerate_box_qp(prob);
    ASSERT_TRUE(best.has_value());
    const Solution sol = Solver().solve(prob);
    ASSERT_EQ(sol.status, Status::Optimal) << "trial " << trial;
    EXPECT_NEAR(sol.objective, *best, 1e-7) << "trial " << trial;
    const KktReport kkt = kkt_report(prob, sol);
    EXPECT_LE(kkt.max(), 1e-8);
    EXPECT_LE(kkt.equality, 1e-9);
    EXPECT_LE(kkt.bounds, 1e-12);
  }
}

TEST(Qp, WarmStartGivesSameObjective) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Solver solver;
  for (int trial = 0; trial < 50; ++trial) {
    Problem prob = oracle::random_box_qp(5, 3, 0.5, rng);
    const Solution cold = solver.solve(prob);
    Vector guess(5);
    for (int i = 0; i < 5; ++i) guess[i] = 2.0 * unit(rng);
    const Solution warm = solver.solve(prob, guess);
    const Solution hot = solver.solve(prob, cold.z);
    ASSERT_EQ(cold.status, Status::Optimal);
    ASSERT_EQ(warm.status, Status::Optimal);
    EXPECT_NEAR(cold.objective, warm.objective, 1e-9);
    EXPECT_NEAR(cold.objective, hot.objective, 1e-9);
  }
}

TEST(Qp, ScalingObjectiveLeavesMinimizer) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Problem prob = oracle::random_box_qp(5, 3, 0.5, rng);
    Problem scaled = prob;
    scaled.H *= 37.5;
    scaled.c *= 37.5;
    const Solution a = Solver().solve(prob);
    const Solution b = Solver().solve(scaled);
    EXPECT_LE((a.z - b.z).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Qp, SingularHessianWithLinearCost) {
  // LP-like: minimize z1 + z2 over z1 - z2 = 0.5, 0 <= z <= 1 -> (0.5, 0).
  Problem prob;
  prob.H = Matrix::Zero(2, 2);
  prob.c = Vector::Ones(2);
  prob.A_eq = Matrix(1, 2);
  prob.A_eq << 1.0, -1.0;
  prob.b_eq = Vector::Constant(1, 0.5);
  prob.lb = Vector::Zero(2);
  prob.ub = Vector::Ones(2);
  const Solution sol = Solver().solve(prob);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.z[0], 0.5, 1e-9);
  EXPECT_NEAR(sol.z[1], 0.0, 1e-12);
  EXPECT_LE(kkt_report(prob, sol).max(), 1e-8);
}

TEST(Qp, NoEqualitiesClampsUnconstrainedMinimizer) {
  Problem prob = min_norm_problem(3);
  prob.c = Vector(3);
  prob.c << -4.0, 1.0, 0.0;  // unconstrained minimizer (2, -0.5, 0)
  prob.A_eq = Matrix(0, 3);
  prob.b_eq = Vector(0);
  prob.lb = Vector::Constant(3, -0.25);
  prob.ub = Vector::Constant(3, 1.0);
  const Solution sol = Solver().solve(prob);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.z[0], 1.0, 1e-12);
  EXPECT_NEAR(sol.z[1], -0.25, 1e-12);
  EXPECT_NEAR(sol.z[2], 0.0, 1e-12);
  EXPECT_GT(sol.mu_bounds[1], 0.0);
  EXPECT_LT(sol.mu_bounds[0], 0.0);
}

TEST(Qp, MaxIterReported) {
  std::mt19937_64 rng(37);
  Problem prob = oracle::random_box_qp(5, 3, 0.5, rng);
  Options opts;
  opts.max_iterations = 1;
  Vector far = Vector::Constant(5, 10.0);
  const Solution sol = Solver(opts).solve(prob, far);
  EXPECT_EQ(sol.status, Status::MaxIter);
}

TEST(Qp, ValidateRejectsIndefiniteHessian) {
  Problem prob = min_norm_problem(2);
  prob.H(1, 1) = -1.0;
  prob.A_eq = Matrix(0, 2);
  prob.b_eq = Vector(0);
  prob.lb = Vector::Zero(2);
  prob.ub = Vector::Ones(2);
  EXPECT_THROW(prob.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace nca::qp
