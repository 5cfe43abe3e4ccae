#include "nca/sim.hpp"

#include <nlohmann/json.hpp>
#include <omp.h>
#include <sys/utsname.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nca/io.hpp"

namespace nca::sim {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double mean_square_root(double sum_sq, int n) { return n > 0 ? std::sqrt(sum_sq / n) : 0.0; }

}  // namespace

const char* to_string(Trajectory t) {
  switch (t) {
    case Trajectory::SingleStep:
      return "single-step";
    case Trajectory::TripleDoublet:
      return "triple-doublet";
    case Trajectory::Custom:
      return "custom";
  }
  return "?";
}

Trajectory parse_trajectory(const std::string& name) {
  const std::string s = lower(name);
  if (s == "single-step" || s == "singlestep" || s == "step") return Trajectory::SingleStep;
  if (s == "triple-doublet" || s == "tripledoublet" || s == "doublet") return Trajectory::TripleDoublet;
  if (s == "custom") return Trajectory::Custom;
  throw std::invalid_argument("unknown trajectory '" + name + "'");
}

void SimConfig::validate() const {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw std::invalid_argument("sim: duration must be positive");
  if (!(control_dt > 0.0) || control_dt > duration) throw std::invalid_argument("sim: control_dt out of range");
  if (substeps < 1) throw std::invalid_argument("sim: physics_substeps must be >= 1");
  if (!(abort_threshold > 0.0)) throw std::invalid_argument("sim: abort_threshold must be positive");
  if (trajectory == Trajectory::Custom && custom.empty()) {
    throw std::invalid_argument("sim: custom trajectory needs at least one segment");
  }
  for (std::size_t i = 1; i < custom.size(); ++i) {
    if (custom[i].t_start < custom[i - 1].t_start) throw std::invalid_argument("sim: custom segments unsorted");
  }
  for (const auto& d : disturbance) {
    if (!(d.t_end >= d.t_start) || !d.value.allFinite()) throw std::invalid_argument("sim: bad disturbance segment");
  }
}

int SimConfig::samples() const { return static_cast<int>(std::llround(duration / control_dt)) + 1; }

Vec3 SimConfig::disturbance_at(double t) const {
  Vec3 d = Vec3::Zero();
  for (const auto& seg : disturbance) {
    if (t >= seg.t_start && t < seg.t_end) d += seg.value;
  }
  return d;
}

Command reference(Trajectory traj, double t) {
  Command c;
  if (traj == Trajectory::SingleStep) {
    if (t >= 1.0) c.vx = 3.0;
  } else if (traj == Trajectory::TripleDoublet) {
    if (t >= 1.0 && t < 3.0) c.vx = 2.0;
    else if (t >= 3.0 && t < 5.0) c.vx = -2.0;
    else if (t >= 6.0 && t < 8.0) c.vz = 1.0;
    else if (t >= 8.0 && t < 10.0) c.vz = -1.0;
    else if (t >= 11.0 && t < 12.5) c.theta = 15.0 * kDeg;
    else if (t >= 12.5 && t < 14.0) c.theta = -15.0 * kDeg;
  }
  return c;
}

Command reference(const SimConfig& cfg, double t) {
  if (cfg.trajectory != Trajectory::Custom) return reference(cfg.trajectory, t);
  Command c;
  for (const auto& seg : cfg.custom) {
    if (seg.t_start > t) break;
    c = seg.cmd;
  }
  return c;
}

FullState integrate_step(const FullState& x, const ControlInput& u, double dt_sub, const VehicleParams& p,
                         const Vec3& disturbance) {
  if (!(dt_sub > 0.0)) throw std::invalid_argument("integrate_step: dt_sub must be positive");
  Vec4 d4 = Vec4::Zero();
  d4.head<3>() = disturbance;
  const auto f = [&](const Vec4& y) -> Vec4 { return full_dynamics(FullState::from(y), u, p) + d4; };
  return FullState::from(rk4_step(f, x.vec(), dt_sub));
}

SimLog run_simulation(const SimConfig& cfg, Controller& controller, const VehicleParams& p) {
  cfg.validate();
  if (std::abs(controller.config().dt - cfg.control_dt) > 1e-12) {
    throw std::invalid_argument("sim: controller dt differs from control_dt");
  }
  SimLog log;
  log.backend = controller.allocator().backend();
  log.trajectory = cfg.trajectory;
  const int n = cfg.samples();
  log.records.reserve(static_cast<std::size_t>(n));

  controller.reset();
  const TrimPoint trim = trim_point(p);
  FullState x = trim.state;
  ControlInput u_prev = trim.input;
  const double h = cfg.control_dt / cfg.substeps;

  for (int k = 0; k < n; ++k) {
    const double t = k * cfg.control_dt;
    const Command cmd = reference(cfg, t);
    const Vec3 d = cfg.disturbance_at(t);
    const ControlOutput out = controller.step(x, cmd, u_prev, d);
    const AllocationResult& a = out.telemetry.allocation;

    SimRecord rec;
    rec.t = t;
    rec.x = x;
    rec.cmd = cmd;
    rec.x_rc = out.telemetry.x_rc;
    rec.nu = out.telemetry.nu;
    rec.mu_des = out.telemetry.mu_des;
    rec.u = out.u;
    rec.xdot = full_dynamics(x, out.u, p);
    rec.xdot.head<3>() += d;
    rec.fbl_error = rec.xdot.head<3>() - rec.nu;
    rec.relaxed = a.relaxed;
    rec.slack = a.slack;
    rec.solve_time = a.solve_time;
    rec.solver_status = a.solver_status;
    rec.lin_residual = a.linearization_residual;
    log.records.push_back(std::move(rec));

    if (k + 1 == n) break;
    FullState next = x;
    for (int s = 0; s < cfg.substeps; ++s) next = integrate_step(next, out.u, h, p, d);
    const Vec4 v = next.vec();
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > cfg.abort_threshold) {
      log.aborted = true;
      log.abort_time = (k + 1) * cfg.control_dt;
      log.abort_reason = "NonFiniteState";
      break;
    }
    x = next;
    u_prev = out.u;
  }
  return log;
}

SimLog run_simulation(const SimConfig& cfg, const ControllerConfig& ccfg, const InputBounds& bounds,
                      const VehicleParams& p, const AllocatorOptions& opts, std::shared_ptr<const mlp::Model> model) {
  Controller controller(ccfg, bounds, p, make_allocator(ccfg.backend, p, opts, std::move(model)));
  return run_simulation(cfg, controller, p);
}

std::vector<SimLog> run_batch(const std::vector<BatchJob>& jobs, const InputBounds& bounds, const VehicleParams& p,
                              const AllocatorOptions& opts, std::shared_ptr<const mlp::Model> model, int workers) {
  std::vector<SimLog> logs(jobs.size());
  const int n = static_cast<int>(jobs.size());
  int first_error = -1;
  std::string error;
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers > 0 ? workers : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      logs[i] = run_simulation(jobs[i].sim, jobs[i].controller, bounds, p, opts, model);
    } catch (const std::exception& e) {
#pragma omp critical
      if (first_error < 0 || i < first_error) {
        first_error = i;
        error = e.what();
      }
    }
  }
  if (first_error >= 0) throw std::runtime_error("batch job " + std::to_string(first_error) + ": " + error);
  return logs;
}

FblErrorSeries fbl_error_series(const SimLog& log) {
  FblErrorSeries s;
  Vec3 sq = Vec3::Zero();
  for (const auto& r : log.records) {
    s.t.push_back(r.t);
    s.e.push_back(r.fbl_error);
    sq += r.fbl_error.cwiseAbs2();
    s.max_abs = std::max(s.max_abs, r.fbl_error.cwiseAbs().maxCoeff());
  }
  if (!log.records.empty()) s.rms = (sq / static_cast<double>(log.records.size())).cwiseSqrt();
  return s;
}

Vec3 fbl_error_rms(const SimLog& log, double t0, double t1, bool skip_relaxed) {
  Vec3 sq = Vec3::Zero();
  int n = 0;
  for (const auto& r : log.records) {
    if (r.t < t0 || r.t >= t1 || (skip_relaxed && r.relaxed)) continue;
    sq += r.fbl_error.cwiseAbs2();
    ++n;
  }
  return Vec3(mean_square_root(sq[0], n), mean_square_root(sq[1], n), mean_square_root(sq[2], n));
}

Vec3 tracking_rms(const SimLog& log, double t0, double t1) {
  Vec3 sq = Vec3::Zero();
  int n = 0;
  for (const auto& r : log.records) {
    if (r.t < t0 || r.t >= t1) continue;
    const Vec3 e(r.x.vx - r.cmd.vx, r.x.vz - r.cmd.vz, r.x.theta - r.cmd.theta);
    sq += e.cwiseAbs2();
    ++n;
  }
  return Vec3(mean_square_root(sq[0], n), mean_square_root(sq[1], n), mean_square_root(sq[2], n));
}

double fitted_decay_rate(const SimLog& log, int channel, double t0, double t1, double min_error) {
  if (channel < 0 || channel > 2) throw std::invalid_argument("fitted_decay_rate: channel must be 0..2");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k + 1 < log.records.size(); ++k) {
    const SimRecord& r = log.records[k];
    if (r.t < t0 || r.t >= t1 || r.relaxed) continue;
    const double e = r.x.reduced()[channel] - r.x_rc[channel];
    if (std::abs(e) < min_error) continue;
    const SimRecord& nx = log.records[k + 1];
    const double rate = (nx.x.reduced()[channel] - r.x.reduced()[channel]) / (nx.t - r.t);
    num -= e * rate;
    den += e * e;
  }
  return den > 0.0 ? num / den : 0.0;
}

std::string TimingCell::format() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f [%.3f]", mean_ms, sd_ms, max_ms);
  return buf;
}

std::vector<TimingCell> timing_summary(const std::vector<SimLog>& logs) {
  std::vector<TimingCell> cells;
  std::vector<std::vector<double>> samples;
  for (const SimLog& log : logs) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const TimingCell& c) {
      return c.backend == log.backend && c.trajectory == log.trajectory;
    });
    std::size_t idx = static_cast<std::size_t>(it - cells.begin());
    if (it == cells.end()) {
      cells.push_back({log.backend, log.trajectory});
      samples.emplace_back();
    }
    for (const auto& r : log.records) samples[idx].push_back(r.solve_time * 1e3);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& v = samples[i];
    TimingCell& c = cells[i];
    c.count = static_cast<int>(v.size());
    if (v.empty()) continue;
    double sum = 0.0;
    for (double x : v) sum += x;
    c.mean_ms = sum / v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - c.mean_ms) * (x - c.mean_ms);
    c.sd_ms = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
    c.max_ms = *std::max_element(v.begin(), v.end());
  }
  return cells;
}

namespace {

std::string hardware_description() {
  utsname u{};
  std::string s;
  if (uname(&u) == 0) s = std::string(u.sysname) + " " + u.release + " " + u.machine;
  return s + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

}  // namespace

std::string timing_summary_json(const std::vector<TimingCell>& cells, const std::string& hardware_note) {
  nlohmann::ordered_json j;
  j["schema"] = "nca-timing/1";
  j["unit"] = "ms";
  j["hardware"] = hardware_note.empty() ? hardware_description() : hardware_note;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    j["cells"].push_back({{"backend", to_string(c.backend)},
                          {"trajectory", to_string(c.trajectory)},
                          {"count", c.count},
                          {"mean", c.mean_ms},
                          {"sd", c.sd_ms},
                          {"max", c.max_ms},
                          {"text", c.format()}});
  }
  return j.dump(2) + "\n";
}

const char* const kSimLogSchema = "nca-simlog/1";
const char* const kSimLogHeader =
    "t,vx,vz,theta_dot,theta,vx_cmd,vz_cmd,theta_cmd,vx_ref,vz_ref,theta_dot_ref,nu1,nu2,nu3,mu1,mu2,mu3,"
    "T1,T2,T3,phi1,phi2,xdot_vx,xdot_vz,xdot_theta_dot,xdot_theta,e1,e2,e3,backend,relaxed,slack1,slack2,slack3,"
    "solve_time,lin_res1,lin_res2,lin_res3,solver_status";

namespace {

constexpr int kNumericBefore = 29;  // through e3
constexpr int kColumns = 39;

void put(std::string& out, double v) {
  out += io::format_double(v);
  out += ',';
}

double number(const std::string& s, int line_no, int col) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') {
    throw SimLogFormatError("simlog: line " + std::to_string(line_no) + " column " + std::to_string(col + 1) +
                            " is not a number");
  }
  return v;
}

}  // namespace

std::string simlog_csv(const SimLog& log) {
  std::string out = std::string("# ") + kSimLogSchema + "\n" + kSimLogHeader + "\n";
  for (const auto& r : log.records) {
    put(out, r.t);
    for (int i = 0; i < 4; ++i) put(out, r.x.vec()[i]);
    put(out, r.cmd.vx);
    put(out, r.cmd.vz);
    put(out, r.cmd.theta);
    for (int i = 0; i < 3; ++i) put(out, r.x_rc[i]);
    for (int i = 0; i < 3; ++i) put(out, r.nu[i]);
    for (int i = 0; i < 3; ++i) put(out, r.mu_des[i]);
    for (int i = 0; i < 5; ++i) put(out, r.u[i]);
    for (int i = 0; i < 4; ++i) put(out, r.xdot[i]);
    for (int i = 0; i < 3; ++i) put(out, r.fbl_error[i]);
    out += to_string(log.backend);
    out += ',';
    out += r.relaxed ? "1," : "0,";
    for (int i = 0; i < 3; ++i) put(out, r.slack[i]);
    put(out, r.solve_time);
    for (int i = 0; i < 3; ++i) put(out, r.lin_residual[i]);
    out += r.solver_status;
    out += '\n';
  }
  return out;
}

SimLog parse_simlog_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != std::string("# ") + kSimLogSchema) {
    throw SimLogFormatError("simlog: missing schema line '# " + std::string(kSimLogSchema) + "'");
  }
  if (!std::getline(in, line) || line != kSimLogHeader) throw SimLogFormatError("simlog: header mismatch");
  SimLog log;
  int line_no = 2;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (static_cast<int>(f.size()) != kColumns) {
      throw SimLogFormatError("simlog: line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                              " columns, expected " + std::to_string(kColumns));
    }
    double v[kNumericBefore];
    for (int c = 0; c < kNumericBefore; ++c) v[c] = number(f[c], line_no, c);
    SimRecord r;
    r.t = v[0];
    r.x = FullState::from(Vec4(v[1], v[2], v[3], v[4]));
    r.cmd = {v[5], v[6], v[7]};
    r.x_rc = Vec3(v[8], v[9], v[10]);
    r.nu = Vec3(v[11], v[12], v[13]);
    r.mu_des = Vec3(v[14], v[15], v[16]);
    for (int i = 0; i < 5; ++i) r.u[i] = v[17 + i];
    r.xdot = Vec4(v[22], v[23], v[24], v[25]);
    r.fbl_error = Vec3(v[26], v[27], v[28]);
    const Backend b = parse_backend(f[29]);
    if (first) log.backend = b;
    else if (b != log.backend) throw SimLogFormatError("simlog: mixed backends");
    if (f[30] != "0" && f[30] != "1") throw SimLogFormatError("simlog: relaxed must be 0 or 1");
    r.relaxed = f[30] == "1";
    for (int i = 0; i < 3; ++i) r.slack[i] = number(f[31 + i], line_no, 31 + i);
    r.solve_time = number(f[34], line_no, 34);
    for (int i = 0; i < 3; ++i) r.lin_residual[i] = number(f[35 + i], line_no, 35 + i);
    r.solver_status = f[38];
    if (!first && !(r.t > log.records.back().t)) throw SimLogFormatError("simlog: time stamps not increasing");
    log.records.push_back(std::move(r));
    first = false;
  }
  return log;
}

std::string simlog_metadata_json(const SimLog& log, const SimConfig& cfg, const ControllerConfig& ccfg) {
  nlohmann::ordered_json j;
  j["schema"] = "nca-simlog-meta/1";
  j["backend"] = to_string(log.backend);
  j["trajectory"] = to_string(log.trajectory);
  j["records"] = log.records.size();
  j["aborted"] = log.aborted;
  if (log.aborted) {
    j["abort_time"] = log.abort_time;
    j["abort_reason"] = log.abort_reason;
  }
  j["sim"] = {{"duration", cfg.duration},
              {"control_dt", cfg.control_dt},
              {"physics_substeps", cfg.substeps},
              {"rng_seed", cfg.rng_seed},
              {"abort_threshold", cfg.abort_threshold}};
  auto dist = nlohmann::ordered_json::array();
  for (const auto& d : cfg.disturbance) {
    dist.push_back({{"t_start", d.t_start}, {"t_end", d.t_end}, {"value", {d.value[0], d.value[1], d.value[2]}}});
  }
  j["sim"]["disturbance"] = dist;
  j["controller"] = {{"k_theta", ccfg.k_theta},
                     {"k", {ccfg.k[0], ccfg.k[1], ccfg.k[2]}},
                     {"dt", ccfg.dt},
                     {"xdot_source", to_string(ccfg.xdot_source)}};
  j["hardware"] = hardware_description();
  return j.dump(2) + "\n";
}

}  // namespace nca::sim
