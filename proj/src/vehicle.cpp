#include "nca/vehicle.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nca {

void VehicleParams::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(mass) || !positive(inertia_y) || !positive(arm) || !positive(gravity)) {
    throw std::invalid_argument("vehicle parameters must be positive and finite");
  }
}

InputBounds InputBounds::defaults(const VehicleParams& p) {
  const double weight = p.mass * p.gravity;
  const double tilt = std::numbers::pi / 3.0;
  InputBounds b;
  b.lower << 0.0, 0.0, 0.0, -tilt, -tilt;
  b.upper << weight, weight, weight, tilt, tilt;
  return b;
}

void InputBounds::validate() const {
  if (!lower.allFinite() || !upper.allFinite()) {
    throw std::invalid_argument("input bounds must be finite");
  }
  if ((lower.array() > upper.array()).any()) {
    throw std::invalid_argument("input lower bound exceeds upper bound");
  }
  if (rate_max && (rate_max->array() <= 0.0).any()) {
    throw std::invalid_argument("rate limits must be positive");
  }
}

bool InputBounds::contains(const ControlInput& u, double tol) const {
  return (u.array() >= lower.array() - tol).all() && (u.array() <= upper.array() + tol).all();
}

ControlInput InputBounds::clamp(const ControlInput& u) const {
  return u.cwiseMax(lower).cwiseMin(upper);
}

ControlInput InputBounds::scale() const {
  ControlInput s = lower.cwiseAbs().cwiseMax(upper.cwiseAbs());
  for (int i = 0; i < kNumInputs; ++i) {
    if (s[i] == 0.0) s[i] = 1.0;
  }
  return s;
}

Vec3 reduced_drift(const VehicleParams& p) { return {0.0, -p.gravity, 0.0}; }

GeneralizedInput reduced_g(double theta, const ControlInput& u, const VehicleParams& p) {
  const double t1 = u[kT1], t2 = u[kT2], t3 = u[kT3];
  const double a1 = theta + u[kPhi1];
  const double a2 = theta + u[kPhi2];
  GeneralizedInput mu;
  mu[0] = -(t3 * std::sin(theta) + t1 * std::sin(a1) + t2 * std::sin(a2)) / p.mass;
  mu[1] = (t3 * std::cos(theta) + t1 * std::cos(a1) + t2 * std::cos(a2)) / p.mass;
  // The moment arm sees only the tilt relative to the body, so theta drops out.
  mu[2] = (p.arm / p.inertia_y) * (-t1 * std::cos(u[kPhi1]) + t2 * std::cos(u[kPhi2]));
  return mu;
}

Vec4 full_dynamics(const FullState& x, const ControlInput& u, const VehicleParams& p) {
  const GeneralizedInput g = reduced_g(x.theta, u, p);
  return {g[0], g[1] - p.gravity, g[2], x.theta_dot};
}

Mat35 reduced_g_jacobian(double theta, const ControlInput& u, const VehicleParams& p) {
  const double t1 = u[kT1], t2 = u[kT2];
  const double a1 = theta + u[kPhi1];
  const double a2 = theta + u[kPhi2];
  const double inv_m = 1.0 / p.mass;
  const double k = p.arm / p.inertia_y;
  const double s1 = std::sin(a1), c1 = std::cos(a1);
  const double s2 = std::sin(a2), c2 = std::cos(a2);

  Mat35 b;
  b(0, kT1) = -inv_m * s1;
  b(0, kT2) = -inv_m * s2;
  b(0, kT3) = -inv_m * std::sin(theta);
  b(0, kPhi1) = -inv_m * t1 * c1;
  b(0, kPhi2) = -inv_m * t2 * c2;

  b(1, kT1) = inv_m * c1;
  b(1, kT2) = inv_m * c2;
  b(1, kT3) = inv_m * std::cos(theta);
  b(1, kPhi1) = -inv_m * t1 * s1;
  b(1, kPhi2) = -inv_m * t2 * s2;

  b(2, kT1) = -k * std::cos(u[kPhi1]);
  b(2, kT2) = k * std::cos(u[kPhi2]);
  b(2, kT3) = 0.0;
  b(2, kPhi1) = k * t1 * std::sin(u[kPhi1]);
  b(2, kPhi2) = -k * t2 * std::sin(u[kPhi2]);
  return b;
}

Mat5 reduced_g_weighted_hessian(double theta, const ControlInput& u, const Vec3& w,
                                const VehicleParams& p) {
  const double t1 = u[kT1], t2 = u[kT2];
  const double a1 = theta + u[kPhi1];
  const double a2 = theta + u[kPhi2];
  const double inv_m = 1.0 / p.mass;
  const double k = p.arm / p.inertia_y;
  const double s1 = std::sin(a1), c1 = std::cos(a1);
  const double s2 = std::sin(a2), c2 = std::cos(a2);
  const double sp1 = std::sin(u[kPhi1]), cp1 = std::cos(u[kPhi1]);
  const double sp2 = std::sin(u[kPhi2]), cp2 = std::cos(u[kPhi2]);

  // Only the (T_i, phi_i) and (phi_i, phi_i) entries are nonzero.
  const double h_t1_p1 = w[0] * (-inv_m * c1) + w[1] * (-inv_m * s1) + w[2] * (k * sp1);
  const double h_p1_p1 = w[0] * (inv_m * t1 * s1) + w[1] * (-inv_m * t1 * c1) + w[2] * (k * t1 * cp1);
  const double h_t2_p2 = w[0] * (-inv_m * c2) + w[1] * (-inv_m * s2) + w[2] * (-k * sp2);
  const double h_p2_p2 = w[0] * (inv_m * t2 * s2) + w[1] * (-inv_m * t2 * c2) + w[2] * (-k * t2 * cp2);

  Mat5 h = Mat5::Zero();
  h(kT1, kPhi1) = h(kPhi1, kT1) = h_t1_p1;
  h(kPhi1, kPhi1) = h_p1_p1;
  h(kT2, kPhi2) = h(kPhi2, kT2) = h_t2_p2;
  h(kPhi2, kPhi2) = h_p2_p2;
  return h;
}

TrimPoint trim_point(const VehicleParams& p) {
  const double third = p.mass * p.gravity / 3.0;
  TrimPoint trim;
  trim.input << third, third, third, 0.0, 0.0;
  return trim;
}

}  // namespace nca
