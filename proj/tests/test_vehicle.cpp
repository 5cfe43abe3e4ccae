#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "nca/vehicle.hpp"
#include "oracles.hpp"

namespace nca {
namespace {

const VehicleParams kParams{};

ControlInput trim_input() { return trim_point(kParams).input; }

TEST(Vehicle, TrimIsExactEquilibrium) {
  const TrimPoint trim = trim_point(kParams);
  const Vec4 xdot = full_dynamics(trim.state, trim.input, kParams);
  EXPECT_EQ(xdot.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(trim.input[kT1], 4.905);
  EXPECT_TRUE(InputBounds::defaults(kParams).contains(trim.input));
  const InputBounds b = InputBounds::defaults(kParams);
  EXPECT_TRUE(((trim.input - b.lower).array() > 0.0).head<3>().all());
  EXPECT_TRUE(((b.upper - trim.input).array() > 0.0).all());
}

TEST(Vehicle, FreeFall) {
  const Vec4 xdot = full_dynamics(FullState{}, ControlInput::Zero(), kParams);
  EXPECT_EQ(xdot, Vec4(0.0, -kParams.gravity, 0.0, 0.0));
}

TEST(Vehicle, PitchedHoverThrustRotates) {
  FullState x;
  x.theta = 0.2;
  const double g = kParams.gravity;
  const Vec4 xdot = full_dynamics(x, trim_input(), kParams);
  EXPECT_NEAR(xdot[0], -g * std::sin(0.2), 1e-14);
  EXPECT_NEAR(xdot[1], g * std::cos(0.2) - g, 1e-14);
  EXPECT_NEAR(xdot[2], 0.0, 1e-14);
  EXPECT_EQ(xdot[3], 0.0);
}

TEST(Vehicle, RowFourIsAngularRate) {
  FullState x{0.3, -0.1, 0.7, 0.1};
  EXPECT_EQ(full_dynamics(x, trim_input(), kParams)[3], 0.7);
}

TEST(Vehicle, ReducedGExamples) {
  const double g = kParams.gravity;
  const GeneralizedInput hover = reduced_g(0.0, trim_input(), kParams);
  EXPECT_NEAR(hover[0], 0.0, 1e-15);
  EXPECT_NEAR(hover[1], g, 1e-14);
  EXPECT_NEAR(hover[2], 0.0, 1e-15);

  EXPECT_EQ(reduced_g(0.0, ControlInput::Zero(), kParams), GeneralizedInput::Zero());

  ControlInput tilted = trim_input();
  tilted[kPhi1] = std::numbers::pi / 6;
  tilted[kPhi2] = -std::numbers::pi / 6;
  const GeneralizedInput mu = reduced_g(0.0, tilted, kParams);
  EXPECT_NEAR(mu[0], 0.0, 1e-14);
  EXPECT_NEAR(mu[1], (g / 3.0) * (1.0 + std::sqrt(3.0)), 1e-13);
  EXPECT_NEAR(mu[2], 0.0, 1e-13);
}

TEST(Vehicle, ReducedGMatchesFullDynamics) {
  std::mt19937_64 rng(11);
  const InputBounds b = InputBounds::defaults(kParams);
  std::uniform_real_distribution<double> state(-3.0, 3.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 4, std::numbers::pi / 4);
  for (int k = 0; k < 1000; ++k) {
    FullState x{state(rng), state(rng), state(rng), angle(rng)};
    const ControlInput u = oracle::random_input(b, rng);
    const Vec4 xdot = full_dynamics(x, u, kParams);
    const Vec3 diff = xdot.head<3>() - reduced_drift(kParams) - reduced_g(x.theta, u, kParams);
    ASSERT_LE(diff.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Vehicle, JacobianAtTrimByHand) {
  const double m = kParams.mass, g = kParams.gravity;
  const double k = kParams.arm / kParams.inertia_y;
  const Mat35 b0 = reduced_g_jacobian(0.0, trim_input(), kParams);
  Mat35 expected;
  expected << 0, 0, 0, -g / 3, -g / 3,
      1 / m, 1 / m, 1 / m, 0, 0,
      -k, k, 0, 0, 0;
  EXPECT_LE((b0 - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Vehicle, ZeroThrustTiltHasNoEffect) {
  ControlInput u = trim_input();
  u[kT1] = u[kT2] = 0.0;
  u[kPhi1] = 0.4;
  u[kPhi2] = -0.7;
  for (double theta : {-0.5, 0.0, 0.9}) {
    const Mat35 b0 = reduced_g_jacobian(theta, u, kParams);
    EXPECT_EQ(b0.col(kPhi1).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(b0.col(kPhi2).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Vehicle, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const InputBounds b = InputBounds::defaults(kParams);
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 4, std::numbers::pi / 4);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double theta = k == 0 ? 0.3 : angle(rng);
    const ControlInput u = oracle::random_input(b, rng);
    auto g = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return reduced_g(theta, ControlInput(v), kParams);
    };
    const Eigen::MatrixXd fd = oracle::fd_jacobian(g, u, 1e-3);
    worst = std::max(worst, oracle::max_relative_error(reduced_g_jacobian(theta, u, kParams), fd));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Vehicle, WeightedHessianMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const InputBounds b = InputBounds::defaults(kParams);
  for (int k = 0; k < 200; ++k) {
    const double theta = 0.6 * std::uniform_real_distribution<double>(-1, 1)(rng);
    const ControlInput u = oracle::random_input(b, rng);
    const Vec3 w(0.3, -1.2, 0.05);
    auto grad = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return reduced_g_jacobian(theta, ControlInput(v), kParams).transpose() * w;
    };
    const Eigen::MatrixXd fd = oracle::fd_jacobian(grad, u, 1e-3);
    EXPECT_LE(oracle::max_relative_error(reduced_g_weighted_hessian(theta, u, w, kParams), fd), 1e-6);
  }
}

TEST(Vehicle, MomentChannelIndependentOfAttitude) {
  std::mt19937_64 rng(9);
  const InputBounds b = InputBounds::defaults(kParams);
  for (int k = 0; k < 100; ++k) {
    const ControlInput u = oracle::random_input(b, rng);
    const double base = reduced_g(0.0, u, kParams)[2];
    for (double theta : {-0.7, 0.1, 0.5}) EXPECT_EQ(reduced_g(theta, u, kParams)[2], base);
  }
}

TEST(Vehicle, ValidationRejectsBadParameters) {
  VehicleParams p;
  p.mass = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  InputBounds b = InputBounds::defaults(kParams);
  b.lower[kT1] = 100.0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  EXPECT_NO_THROW(InputBounds::defaults(kParams).validate());
}

TEST(Vehicle, NormalizationScale) {
  const ControlInput s = InputBounds::defaults(kParams).scale();
  EXPECT_DOUBLE_EQ(s[kT1], kParams.mass * kParams.gravity);
  EXPECT_DOUBLE_EQ(s[kPhi2], std::numbers::pi / 3);
}

}  // namespace
}  // namespace nca
