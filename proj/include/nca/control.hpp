#pragma once

// Cascaded tracking controller: proportional angle loop feeding a pitch-rate
// command to the inner virtual-control law on [v_x, v_z, theta_dot], then the
// allocation backend.

#include <optional>

#include "nca/alloc.hpp"
#include "nca/vehicle.hpp"

namespace nca {

enum class XdotSource { ModelEval, FiniteDifference };

const char* to_string(XdotSource s);
XdotSource parse_xdot_source(const std::string& name);

struct ControllerConfig {
  double k_theta = 1.0 / 0.3;
  Vec3 k{1.0 / 0.3, 1.0 / 0.4, 1.0 / 0.03};  // [v_x, v_z, theta_dot]
  Backend backend = Backend::NLP;
  double dt = 0.01;
  XdotSource xdot_source = XdotSource::ModelEval;

  void validate() const;
  /// K_theta_dot / K_theta; 10 under the defaults.
  double bandwidth_ratio() const { return k[2] / k_theta; }
};

struct Command {
  double vx = 0.0;
  double vz = 0.0;
  double theta = 0.0;

  bool finite() const;
};

/// theta_dot_c = -K_theta (theta - theta_c).
double angle_loop(double theta, double theta_cmd, const ControllerConfig& cfg);

/// nu = -K (x_r - x_rc).
Vec3 virtual_control(const ReducedState& x_r, const ReducedState& x_rc, const ControllerConfig& cfg);

/// ModelEval: rows 1-3 of the true dynamics at (x, u0) plus the disturbance.
/// FiniteDifference: (x_r - previous x_r) / dt; falls back to ModelEval on the
/// first sample when there is no previous state.
Vec3 acquire_xdot0(const FullState& x, const ControlInput& u0, XdotSource mode, const VehicleParams& p,
                   const Vec3& disturbance = Vec3::Zero(), const std::optional<FullState>& previous = std::nullopt,
                   double dt = 0.01);

struct Telemetry {
  ReducedState x_rc = ReducedState::Zero();
  Vec3 nu = Vec3::Zero();
  Vec3 xdot0 = Vec3::Zero();
  GeneralizedInput mu_des = GeneralizedInput::Zero();
  AllocationResult allocation;
};

struct ControlOutput {
  ControlInput u = ControlInput::Zero();
  Telemetry telemetry;
};

/// One sample of the cascade with an externally acquired xdot0.
ControlOutput control_step(const FullState& x, const Command& cmd, const ControlInput& u0, const Vec3& xdot0,
                           const ControllerConfig& cfg, const InputBounds& bounds, const VehicleParams& p,
                           Allocator& allocator);

/// Controller bound to one simulation: owns the derivative-source memory.
class Controller {
 public:
  Controller(ControllerConfig cfg, InputBounds bounds, VehicleParams p, std::unique_ptr<Allocator> allocator);

  ControlOutput step(const FullState& x, const Command& cmd, const ControlInput& u0,
                     const Vec3& disturbance = Vec3::Zero());
  void reset();

  const ControllerConfig& config() const { return cfg_; }
  Allocator& allocator() { return *allocator_; }

 private:
  ControllerConfig cfg_;
  InputBounds bounds_;
  VehicleParams params_;
  std::unique_ptr<Allocator> allocator_;
  std::optional<FullState> previous_;
};

}  // namespace nca
