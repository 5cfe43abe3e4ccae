#include <gtest/gtest.h>

#include <random>

#include "nca/alloc.hpp"
#include "nca/nlp.hpp"
#include "oracles.hpp"

namespace nca {
namespace {

const VehicleParams kP{};

nlp::Problem box_problem(double theta, const Vec3& mu) {
  const InputBounds b = InputBounds::defaults(kP);
  return make_nca_problem(theta, mu, b.lower, b.upper, b, kP);
}

TEST(Nlp, HoverDemandBeatsTrimCost) {
  const Vec3 mu(0.0, kP.gravity, 0.0);
  const nlp::Problem prob = box_problem(0.0, mu);
  const TrimPoint trim = trim_point(kP);
  nlp::Solver solver;
  const nlp::Solution sol = solver.solve(prob, trim.input);
  ASSERT_EQ(sol.status, nlp::Status::Converged);
  EXPECT_LE(sol.eq_residual_norm, 1e-6);
  EXPECT_LE(sol.objective_value, prob.objective(trim.input) + 1e-12);

  const nlp::Solution best = solver.solve_multistart(prob, trim.input, 64, 11);
  ASSERT_EQ(best.status, nlp::Status::Converged);
  EXPECT_NEAR(sol.objective_value, best.objective_value, 1e-6);
}

TEST(Nlp, ZeroDemandGivesZeroInput) {
  const nlp::Problem prob = box_problem(0.0, Vec3::Zero());
  nlp::Solver solver;
  const nlp::Solution sol = solver.solve(prob, trim_point(kP).input);
  ASSERT_EQ(sol.status, nlp::Status::Converged);
  EXPECT_LE(sol.objective_value, 1e-10);
  EXPECT_LE(sol.u_star.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Nlp, UnattainableVerticalDemandIsInfeasible) {
  const nlp::Problem prob = box_problem(0.0, Vec3(0.0, 4.0 * kP.gravity, 0.0));
  nlp::Solver solver;
  const nlp::Solution sol = solver.solve(prob, trim_point(kP).input);
  EXPECT_EQ(sol.status, nlp::Status::Infeasible);
  const nlp::Solution multi = solver.solve_multistart(prob, trim_point(kP).input, 4, 3);
  EXPECT_EQ(multi.status, nlp::Status::Infeasible);
}

TEST(Nlp, ConstructiveFeasibility) {
  const InputBounds b = InputBounds::defaults(kP);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> theta_dist(-0.8, 0.8);
  nlp::Solver solver;
  for (int k = 0; k < 200; ++k) {
    const double theta = theta_dist(rng);
    const ControlInput u0 = oracle::random_input(b, rng);
    const nlp::Problem prob = box_problem(theta, reduced_g(theta, u0, kP));
    const nlp::Solution sol = solver.solve(prob, trim_point(kP).input);
    ASSERT_EQ(sol.status, nlp::Status::Converged) << "instance " << k;
    EXPECT_LE(sol.eq_residual_norm, prob.eq_tolerance);
    EXPECT_TRUE(((sol.u_star - b.lower).array() >= 0.0).all());
    EXPECT_TRUE(((b.upper - sol.u_star).array() >= 0.0).all());
    EXPECT_LE(sol.objective_value, prob.objective(u0) + 1e-8) << "instance " << k;
  }
}

TEST(Nlp, KktStationarityAtConvergence) {
  const InputBounds b = InputBounds::defaults(kP);
  std::mt19937_64 rng(21);
  nlp::Solver solver;
  for (int k = 0; k < 50; ++k) {
    const ControlInput u0 = oracle::random_input(b, rng);
    const nlp::Problem prob = box_problem(0.3, reduced_g(0.3, u0, kP));
    const nlp::Solution sol = solver.solve(prob, u0);
    ASSERT_EQ(sol.status, nlp::Status::Converged);
    EXPECT_LE(sol.kkt_stationarity, 1e-6);
  }
}

TEST(Nlp, MeritNonIncreasingOnAcceptedSteps) {
  nlp::Options opts;
  opts.record_trace = true;
  nlp::Solver solver(opts);
  const InputBounds b = InputBounds::defaults(kP);
  std::mt19937_64 rng(8);
  for (int k = 0; k < 50; ++k) {
    const ControlInput u0 = oracle::random_input(b, rng);
    const ControlInput guess = oracle::random_input(b, rng);
    const nlp::Solution sol = solver.solve(box_problem(-0.2, reduced_g(-0.2, u0, kP)), guess);
    for (const auto& [before, after] : sol.merit_trace) EXPECT_LE(after, before + 1e-12);
  }
}

TEST(Nlp, MultistartNoWorseThanSingleAndDeterministic) {
  const InputBounds b = InputBounds::defaults(kP);
  std::mt19937_64 rng(13);
  nlp::Solver solver;
  for (int k = 0; k < 20; ++k) {
    const ControlInput u0 = oracle::random_input(b, rng);
    const nlp::Problem prob = box_problem(0.5, reduced_g(0.5, u0, kP));
    const ControlInput warm = trim_point(kP).input;
    const nlp::Solution single = solver.solve(prob, warm);
    const nlp::Solution multi = solver.solve_multistart(prob, warm, 8, 99);
    const nlp::Solution again = solver.solve_multistart(prob, warm, 8, 99);
    ASSERT_EQ(multi.status, nlp::Status::Converged);
    if (single.status == nlp::Status::Converged) {
      EXPECT_LE(multi.objective_value, single.objective_value);
    }
    EXPECT_EQ(multi.u_star, again.u_star);
    EXPECT_EQ(multi.objective_value, again.objective_value);
  }
}

TEST(Nlp, MultistartDispersionIsSmall) {
  const InputBounds b = InputBounds::defaults(kP);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> theta_dist(-0.78, 0.78);
  nlp::Solver solver;
  int agree = 0;
  const int instances = 100;
  for (int k = 0; k < instances; ++k) {
    const double theta = theta_dist(rng);
    const ControlInput u0 = oracle::random_input(b, rng);
    const nlp::Problem prob = box_problem(theta, reduced_g(theta, u0, kP));
    const ControlInput warm = trim_point(kP).input;
    const nlp::Solution s64 = solver.solve_multistart(prob, warm, 64, 1000 + k);
    const nlp::Solution s512 = solver.solve_multistart(prob, warm, 512, 5000 + k);
    if (std::abs(s64.objective_value - s512.objective_value) <= 1e-6) ++agree;
  }
  EXPECT_GE(agree, 95);
}

TEST(Nlp, LatinHypercubeStratifies) {
  const nlp::Vector lb = nlp::Vector::Constant(3, -1.0);
  const nlp::Vector ub = nlp::Vector::Constant(3, 3.0);
  const auto pts = nlp::latin_hypercube(lb, ub, 16, 4);
  ASSERT_EQ(pts.size(), 16u);
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<int> hits(16, 0);
    for (const auto& x : pts) {
      const int bin = static_cast<int>((x[axis] - lb[axis]) / (ub[axis] - lb[axis]) * 16.0);
      ASSERT_GE(bin, 0);
      ASSERT_LT(bin, 16);
      ++hits[bin];
    }
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  EXPECT_EQ(pts, nlp::latin_hypercube(lb, ub, 16, 4));
}

TEST(Nlp, ValidateRejectsBadShapes) {
  nlp::Problem prob = box_problem(0.0, Vec3::Zero());
  prob.lb[0] = prob.ub[0] + 1.0;
  EXPECT_THROW(prob.validate(), std::invalid_argument);
  prob = box_problem(0.0, Vec3::Zero());
  prob.eq_tolerance = 0.0;
  EXPECT_THROW(prob.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace nca
