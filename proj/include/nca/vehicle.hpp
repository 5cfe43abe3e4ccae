#pragma once

// Planar bi-tilt tricopter: two tilting side rotors and one fixed centre rotor.
// The state is [v_x, v_z, theta_dot, theta]; the input is [T1, T2, T3, phi1, phi2].

#include <Eigen/Dense>

#include <optional>

namespace nca {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat35 = Eigen::Matrix<double, 3, 5>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// Actuator vector u = [T1, T2, T3, phi1, phi2] (N, N, N, rad, rad).
using ControlInput = Vec5;

/// Reduced (feedback-linearized) state x_r = [v_x, v_z, theta_dot].
using ReducedState = Vec3;

/// Generalized input mu = g_r(theta, u): control-produced accelerations
/// [a_x (m/s^2), a_z (m/s^2), theta_ddot (rad/s^2)].
using GeneralizedInput = Vec3;

enum InputIndex : int { kT1 = 0, kT2 = 1, kT3 = 2, kPhi1 = 3, kPhi2 = 4 };
inline constexpr int kNumInputs = 5;
inline constexpr int kNumChannels = 3;

struct VehicleParams {
  double mass = 1.5;       // kg
  double inertia_y = 0.03; // kg m^2
  double arm = 0.25;       // m
  double gravity = 9.81;   // m/s^2

  /// Throws std::invalid_argument unless every parameter is positive and finite.
  void validate() const;
};

struct FullState {
  double vx = 0.0;
  double vz = 0.0;
  double theta_dot = 0.0;
  double theta = 0.0;

  Vec4 vec() const { return {vx, vz, theta_dot, theta}; }
  ReducedState reduced() const { return {vx, vz, theta_dot}; }
  static FullState from(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }
  bool finite() const { return vec().allFinite(); }
};

struct InputBounds {
  ControlInput lower;
  ControlInput upper;
  // Per-component |u_dot| limit; nullopt disables rate limiting.
  std::optional<ControlInput> rate_max;

  /// 0 <= T_i <= m g, |phi_i| <= 60 deg, no rate limit.
  static InputBounds defaults(const VehicleParams& p);

  void validate() const;
  bool contains(const ControlInput& u, double tol = 0.0) const;
  ControlInput clamp(const ControlInput& u) const;

  /// Per-component scale max(|lb_i|, |ub_i|) used to normalize inputs to [-1, 1].
  ControlInput scale() const;
};

/// f(x) + g(x, u), the full right-hand side.
Vec4 full_dynamics(const FullState& x, const ControlInput& u, const VehicleParams& p);

/// Drift of the reduced channels, f_r = [0, -g, 0].
Vec3 reduced_drift(const VehicleParams& p);

/// Actuator map g_r(theta, u), rows 1-3 of the input term.
GeneralizedInput reduced_g(double theta, const ControlInput& u, const VehicleParams& p);

/// Analytic effectiveness matrix dg_r/du.
Mat35 reduced_g_jacobian(double theta, const ControlInput& u, const VehicleParams& p);

/// sum_j w_j * d^2 g_r,j / du^2. Used as the constraint-curvature term of the
/// SQP Lagrangian Hessian.
Mat5 reduced_g_weighted_hessian(double theta, const ControlInput& u, const Vec3& weights,
                                const VehicleParams& p);

struct TrimPoint {
  FullState state;
  ControlInput input;
};

/// Hover with each rotor carrying a third of the weight.
TrimPoint trim_point(const VehicleParams& p);

}  // namespace nca
