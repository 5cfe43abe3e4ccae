#pragma once

// Closed-loop simulation: RK4 plant integration at a fine step, controller
// sampled with zero-order hold, per-sample log.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nca/control.hpp"

namespace nca::sim {

enum class Trajectory { SingleStep, TripleDoublet, Custom };

const char* to_string(Trajectory t);
Trajectory parse_trajectory(const std::string& name);

/// Custom schedule entry: cmd holds from t_start until the next entry.
struct CommandSegment {
  double t_start = 0.0;
  Command cmd;
};

/// Piecewise-constant additive acceleration on [v_x, v_z, theta_dot].
struct DisturbanceSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  Vec3 value = Vec3::Zero();
};

struct SimConfig {
  double duration = 15.0;
  double control_dt = 0.01;
  int substeps = 10;
  Trajectory trajectory = Trajectory::TripleDoublet;
  std::vector<CommandSegment> custom;  // Custom only, sorted by t_start
  std::vector<DisturbanceSegment> disturbance;
  std::uint64_t rng_seed = 1;
  double abort_threshold = 1e6;

  void validate() const;
  int samples() const;  // records including t = 0
  Vec3 disturbance_at(double t) const;
};

/// Commanded [v_x, v_z, theta] at time t.
Command reference(Trajectory traj, double t);
Command reference(const SimConfig& cfg, double t);

template <class F, class Y>
Y rk4_step(const F& f, const Y& y, double h) {
  const Y k1 = f(y);
  const Y k2 = f(Y(y + 0.5 * h * k1));
  const Y k3 = f(Y(y + 0.5 * h * k2));
  const Y k4 = f(Y(y + h * k3));
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// One RK4 step of the full dynamics with u and the disturbance held.
FullState integrate_step(const FullState& x, const ControlInput& u, double dt_sub, const VehicleParams& p,
                         const Vec3& disturbance = Vec3::Zero());

struct SimRecord {
  double t = 0.0;
  FullState x;
  Command cmd;
  Vec3 x_rc = Vec3::Zero();  // [v_x,c, v_z,c, theta_dot_c]
  Vec3 nu = Vec3::Zero();
  Vec3 mu_des = Vec3::Zero();
  ControlInput u = ControlInput::Zero();
  Vec4 xdot = Vec4::Zero();       // true derivative at (x, u) plus disturbance
  Vec3 fbl_error = Vec3::Zero();  // xdot_r - nu
  bool relaxed = false;
  Vec3 slack = Vec3::Zero();
  double solve_time = 0.0;
  std::string solver_status;
  Vec3 lin_residual = Vec3::Zero();
};

struct SimLog {
  Backend backend = Backend::NLP;
  Trajectory trajectory = Trajectory::TripleDoublet;
  std::vector<SimRecord> records;
  bool aborted = false;
  double abort_time = 0.0;
  std::string abort_reason;
};

/// Starts at trim; stops early (aborted, partial log kept) when the state
/// leaves the finite envelope.
SimLog run_simulation(const SimConfig& cfg, Controller& controller, const VehicleParams& p);

SimLog run_simulation(const SimConfig& cfg, const ControllerConfig& ccfg, const InputBounds& bounds,
                      const VehicleParams& p, const AllocatorOptions& opts = {},
                      std::shared_ptr<const mlp::Model> model = nullptr);

struct BatchJob {
  SimConfig sim;
  ControllerConfig controller;
};

/// Independent simulations, one per worker; results in job order.
std::vector<SimLog> run_batch(const std::vector<BatchJob>& jobs, const InputBounds& bounds, const VehicleParams& p,
                              const AllocatorOptions& opts = {}, std::shared_ptr<const mlp::Model> model = nullptr,
                              int workers = 0);

struct FblErrorSeries {
  std::vector<double> t;
  std::vector<Vec3> e;
  Vec3 rms = Vec3::Zero();
  double max_abs = 0.0;
};

FblErrorSeries fbl_error_series(const SimLog& log);

/// Per-channel RMS of the feedback-linearization error over [t0, t1).
Vec3 fbl_error_rms(const SimLog& log, double t0, double t1, bool skip_relaxed = false);

/// Per-channel RMS of [v_x - v_x,c, v_z - v_z,c, theta - theta_c] over [t0, t1).
Vec3 tracking_rms(const SimLog& log, double t0, double t1);

/// Least-squares closed-loop gain on one x_rc channel:
/// -sum(e * de/dt) / sum(e^2), e taken against the reference held over each
/// sample. Samples with |e| < min_error or relaxed allocations are skipped.
double fitted_decay_rate(const SimLog& log, int channel, double t0, double t1, double min_error = 1e-6);

struct TimingCell {
  Backend backend = Backend::NLP;
  Trajectory trajectory = Trajectory::TripleDoublet;
  int count = 0;
  double mean_ms = 0.0;
  double sd_ms = 0.0;
  double max_ms = 0.0;

  std::string format() const;  // "mean +- sd [max]"
};

/// One cell per (backend, trajectory) pair present, in first-seen order.
std::vector<TimingCell> timing_summary(const std::vector<SimLog>& logs);
std::string timing_summary_json(const std::vector<TimingCell>& cells, const std::string& hardware_note);

extern const char* const kSimLogSchema;
extern const char* const kSimLogHeader;

std::string simlog_csv(const SimLog& log);
SimLog parse_simlog_csv(const std::string& text);
std::string simlog_metadata_json(const SimLog& log, const SimConfig& cfg, const ControllerConfig& ccfg);

struct SimLogFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nca::sim
