#include "nca/control.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace nca {

const char* to_string(XdotSource s) {
  return s == XdotSource::ModelEval ? "model" : "finite-difference";
}

XdotSource parse_xdot_source(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "model" || s == "modeleval") return XdotSource::ModelEval;
  if (s == "finite-difference" || s == "finitedifference" || s == "fd") return XdotSource::FiniteDifference;
  throw std::invalid_argument("unknown xdot source '" + name + "'");
}

void ControllerConfig::validate() const {
  if (!(k_theta > 0.0) || !(k.array() > 0.0).all() || !k.allFinite() || !std::isfinite(k_theta)) {
    throw std::invalid_argument("controller: gains must be positive");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("controller: dt must be positive");
}

bool Command::finite() const { return std::isfinite(vx) && std::isfinite(vz) && std::isfinite(theta); }

double angle_loop(double theta, double theta_cmd, const ControllerConfig& cfg) {
  return -cfg.k_theta * (theta - theta_cmd);
}

Vec3 virtual_control(const ReducedState& x_r, const ReducedState& x_rc, const ControllerConfig& cfg) {
  return -cfg.k.cwiseProduct(x_r - x_rc);
}

Vec3 acquire_xdot0(const FullState& x, const ControlInput& u0, XdotSource mode, const VehicleParams& p,
                   const Vec3& disturbance, const std::optional<FullState>& previous, double dt) {
  if (mode == XdotSource::FiniteDifference && previous) return (x.reduced() - previous->reduced()) / dt;
  return full_dynamics(x, u0, p).head<3>() + disturbance;
}

ControlOutput control_step(const FullState& x, const Command& cmd, const ControlInput& u0, const Vec3& xdot0,
                           const ControllerConfig& cfg, const InputBounds& bounds, const VehicleParams& p,
                           Allocator& allocator) {
  ControlOutput out;
  Telemetry& tm = out.telemetry;
  tm.x_rc = ReducedState(cmd.vx, cmd.vz, angle_loop(x.theta, cmd.theta, cfg));
  tm.nu = virtual_control(x.reduced(), tm.x_rc, cfg);
  tm.xdot0 = xdot0;
  tm.mu_des = compute_mu_des(tm.nu, xdot0, x.theta, u0, p);

  AllocationRequest req;
  req.theta0 = x.theta;
  req.mu_des = tm.mu_des;
  req.u0 = u0;
  req.bounds = bounds;
  req.dt = cfg.dt;
  tm.allocation = allocator.allocate(req);
  out.u = tm.allocation.u;
  return out;
}

Controller::Controller(ControllerConfig cfg, InputBounds bounds, VehicleParams p,
                       std::unique_ptr<Allocator> allocator)
    : cfg_(cfg), bounds_(std::move(bounds)), params_(p), allocator_(std::move(allocator)) {
  cfg_.validate();
  if (!allocator_) throw std::invalid_argument("controller: allocator required");
}

ControlOutput Controller::step(const FullState& x, const Command& cmd, const ControlInput& u0,
                               const Vec3& disturbance) {
  const Vec3 xdot0 = acquire_xdot0(x, u0, cfg_.xdot_source, params_, disturbance, previous_, cfg_.dt);
  previous_ = x;
  return control_step(x, cmd, u0, xdot0, cfg_, bounds_, params_, *allocator_);
}

void Controller::reset() {
  previous_.reset();
  allocator_->reset();
}

}  // namespace nca
