#include "cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "nca/datagen.hpp"
#include "nca/io.hpp"
#include "nca/mlp.hpp"
#include "nca/sim.hpp"

namespace nca::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Logger {
 public:
  Logger(std::ostream& os, bool color) : os_(os), color_(color) {}
  void info(const std::string& msg) { os_ << "nca: " << msg << "\n"; }
  void error(const std::string& msg) {
    if (color_) os_ << "\033[31merror:\033[0m " << msg << "\n";
    else os_ << "error: " << msg << "\n";
  }

 private:
  std::ostream& os_;
  bool color_;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- configuration -------------------------------------------------------

Json load_config(const std::string& path) {
  if (path.empty()) return Json::object();
  const std::string text = io::read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
  return j;
}

void apply_sets(Json& j, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    const std::string value = s.substr(eq + 1);
    try {
      j[key] = Json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      j[key] = value;
    }
  }
}

void check_keys(const Json& j, const std::set<std::string>& allowed) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown field '" + key + "' (expected one of: " + list + ")");
    }
  }
}

template <class T>
T field(const Json& j, const std::string& key, const T& def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + key + "': unexpected " + std::string(j.at(key).type_name()) + " value " +
                      j.at(key).dump());
  }
}

Vec3 vec3_field(const Json& j, const std::string& key, const Vec3& def) {
  const auto v = field<std::vector<double>>(j, key, {def[0], def[1], def[2]});
  if (v.size() != 3) throw ConfigError("field '" + key + "': expected 3 numbers");
  return Vec3(v[0], v[1], v[2]);
}

std::optional<int> resolve_workers(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("NCA_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w > 0) return w;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("NCA_WORKERS must be a positive integer, got '") + env + "'");
  }
  return std::nullopt;
}

datagen::DatagenConfig datagen_config(const Json& j) {
  check_keys(j, {"theta_min", "theta_max", "n_x", "n_s", "rng_seed", "nlp_tolerance", "n_starts", "workers"});
  datagen::DatagenConfig c;
  c.theta_min = field(j, "theta_min", c.theta_min);
  c.theta_max = field(j, "theta_max", c.theta_max);
  c.n_x = field(j, "n_x", c.n_x);
  c.n_s = field(j, "n_s", c.n_s);
  c.rng_seed = field(j, "rng_seed", c.rng_seed);
  c.nlp_tolerance = field(j, "nlp_tolerance", c.nlp_tolerance);
  c.n_starts = field(j, "n_starts", c.n_starts);
  c.workers = field(j, "workers", c.workers);
  c.validate();
  return c;
}

mlp::TrainConfig train_config(const Json& j) {
  check_keys(j, {"hidden_layers", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "epochs",
                 "validation_fraction", "early_stop_patience", "rng_seed"});
  mlp::TrainConfig c;
  c.hidden_layers = field(j, "hidden_layers", c.hidden_layers);
  c.batch_size = field(j, "batch_size", c.batch_size);
  c.learning_rate = field(j, "learning_rate", c.learning_rate);
  c.beta1 = field(j, "beta1", c.beta1);
  c.beta2 = field(j, "beta2", c.beta2);
  c.epsilon = field(j, "epsilon", c.epsilon);
  c.epochs = field(j, "epochs", c.epochs);
  c.validation_fraction = field(j, "validation_fraction", c.validation_fraction);
  c.early_stop_patience = field(j, "early_stop_patience", c.early_stop_patience);
  c.rng_seed = field(j, "rng_seed", c.rng_seed);
  c.validate();
  return c;
}

struct SimSettings {
  sim::SimConfig sim;
  ControllerConfig controller;
  AllocatorOptions alloc;
};

SimSettings sim_settings(const Json& j) {
  check_keys(j, {"duration", "control_dt", "physics_substeps", "rng_seed", "abort_threshold", "disturbance", "custom",
                 "k_theta", "k", "xdot_source", "relax_channel_weight", "relax_penalty", "eq_tolerance"});
  SimSettings s;
  s.sim.duration = field(j, "duration", s.sim.duration);
  s.sim.control_dt = field(j, "control_dt", s.sim.control_dt);
  s.sim.substeps = field(j, "physics_substeps", s.sim.substeps);
  s.sim.rng_seed = field(j, "rng_seed", s.sim.rng_seed);
  s.sim.abort_threshold = field(j, "abort_threshold", s.sim.abort_threshold);
  if (j.contains("disturbance")) {
    if (!j["disturbance"].is_array()) throw ConfigError("field 'disturbance': expected an array");
    for (const auto& d : j["disturbance"]) {
      sim::DisturbanceSegment seg;
      seg.t_start = field(d, "t_start", 0.0);
      seg.t_end = field(d, "t_end", s.sim.duration);
      seg.value = vec3_field(d, "value", Vec3::Zero());
      s.sim.disturbance.push_back(seg);
    }
  }
  if (j.contains("custom")) {
    if (!j["custom"].is_array()) throw ConfigError("field 'custom': expected an array");
    for (const auto& c : j["custom"]) {
      sim::CommandSegment seg;
      seg.t_start = field(c, "t_start", 0.0);
      seg.cmd = {field(c, "vx", 0.0), field(c, "vz", 0.0), field(c, "theta", 0.0)};
      s.sim.custom.push_back(seg);
    }
  }
  s.controller.k_theta = field(j, "k_theta", s.controller.k_theta);
  s.controller.k = vec3_field(j, "k", s.controller.k);
  s.controller.xdot_source = parse_xdot_source(field<std::string>(j, "xdot_source", "model"));
  s.controller.dt = s.sim.control_dt;
  s.alloc.relax.channel_weight = vec3_field(j, "relax_channel_weight", s.alloc.relax.channel_weight);
  s.alloc.relax.penalty = field(j, "relax_penalty", s.alloc.relax.penalty);
  s.alloc.eq_tolerance = field(j, "eq_tolerance", s.alloc.eq_tolerance);
  s.controller.validate();
  return s;
}

Json sim_settings_json(const SimSettings& s) {
  Json j;
  j["duration"] = s.sim.duration;
  j["control_dt"] = s.sim.control_dt;
  j["physics_substeps"] = s.sim.substeps;
  j["rng_seed"] = s.sim.rng_seed;
  j["abort_threshold"] = s.sim.abort_threshold;
  j["disturbance"] = Json::array();
  for (const auto& d : s.sim.disturbance) {
    j["disturbance"].push_back({{"t_start", d.t_start}, {"t_end", d.t_end}, {"value", {d.value[0], d.value[1], d.value[2]}}});
  }
  j["custom"] = Json::array();
  for (const auto& c : s.sim.custom) {
    j["custom"].push_back({{"t_start", c.t_start}, {"vx", c.cmd.vx}, {"vz", c.cmd.vz}, {"theta", c.cmd.theta}});
  }
  j["k_theta"] = s.controller.k_theta;
  j["k"] = {s.controller.k[0], s.controller.k[1], s.controller.k[2]};
  j["xdot_source"] = to_string(s.controller.xdot_source);
  const Vec3& w = s.alloc.relax.channel_weight;
  j["relax_channel_weight"] = {w[0], w[1], w[2]};
  j["relax_penalty"] = s.alloc.relax.penalty;
  j["eq_tolerance"] = s.alloc.eq_tolerance;
  return j;
}

// ---- staged output -------------------------------------------------------

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  Json config = Json::object();
  Json seeds = Json::object();
  std::vector<std::string> inputs;
  std::string started = utc_now();
};

/// Artifacts go to a sibling temp directory that is renamed into place only
/// after the manifest is written; on failure nothing appears at the target.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path target) : target_(std::move(target)) {
    if (target_.empty()) throw UsageError("--out is required");
    target_ = fs::absolute(target_).lexically_normal();
    if (target_.filename().empty()) target_ = target_.parent_path();
    fs::create_directories(target_.parent_path());
    tmp_ = target_.parent_path() / (target_.filename().string() + ".tmp-" + std::to_string(::getpid()));
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  std::string path(const std::string& name) const { return (tmp_ / name).string(); }
  void write(const std::string& name, const std::string& bytes) const {
    fs::create_directories((tmp_ / name).parent_path());
    io::write_file(path(name), bytes);
  }
  const fs::path& target() const { return target_; }

  void commit(const Manifest& m) {
    Json j;
    j["schema"] = "nca-manifest/1";
    j["tool"] = "nca";
    j["version"] = kVersion;
    j["command"] = m.command;
    j["argv"] = m.argv;
    j["config_path"] = m.config_path;
    j["config"] = m.config;
    j["seeds"] = m.seeds;
    j["inputs"] = Json::array();
    for (const auto& in : m.inputs) j["inputs"].push_back({{"path", in}, {"sha256", io::sha256_file(in)}});
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(tmp_)) {
      if (e.is_regular_file()) names.push_back(fs::relative(e.path(), tmp_).generic_string());
    }
    std::sort(names.begin(), names.end());
    j["outputs"] = Json::array();
    for (const auto& n : names) j["outputs"].push_back({{"path", n}, {"sha256", io::sha256_file(path(n))}});
    j["started_utc"] = m.started;
    j["finished_utc"] = utc_now();
    io::write_file(path("manifest.json"), j.dump(2) + "\n");

    fs::path old;
    if (fs::exists(target_)) {
      old = target_.parent_path() / (target_.filename().string() + ".old-" + std::to_string(::getpid()));
      fs::remove_all(old);
      fs::rename(target_, old);
    }
    fs::rename(tmp_, target_);
    committed_ = true;
    if (!old.empty()) fs::remove_all(old);
  }

 private:
  fs::path target_;
  fs::path tmp_;
  bool committed_ = false;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string vec_str(const Vec3& v) { return "[" + fmt(v[0], 4) + ", " + fmt(v[1], 4) + ", " + fmt(v[2], 4) + "]"; }

// ---- subcommands ---------------------------------------------------------

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  int workers = 0;
};

int cmd_datagen(const Common& c, const std::vector<std::string>& argv, std::ostream& out, Logger& log) {
  Json j = load_config(c.config);
  apply_sets(j, c.sets);
  datagen::DatagenConfig cfg = datagen_config(j);
  if (auto w = resolve_workers(c.workers)) cfg.workers = *w;
  StagedOutput stage(c.out);

  const VehicleParams p;
  const InputBounds bounds = InputBounds::defaults(p);
  log.info("datagen: n_x=" + std::to_string(cfg.n_x) + " n_s=" + std::to_string(cfg.n_s) +
           " seed=" + std::to_string(cfg.rng_seed));
  const datagen::DatagenResult r = datagen::generate(cfg, bounds, p);
  datagen::save_dataset(r, cfg, stage.path("dataset.csv"), stage.path("dataset.meta.json"));
  stage.write("config.json", datagen::config_json(cfg));

  Manifest m;
  m.command = "datagen";
  m.argv = argv;
  m.config_path = c.config;
  m.config = Json::parse(datagen::config_json(cfg));
  m.seeds = {{"rng_seed", cfg.rng_seed}};
  stage.commit(m);

  out << "N_init " << r.stats.n_init << "\n"
      << "N " << r.stats.n_kept << "\n"
      << "acceptance_rate " << fmt(r.stats.acceptance_rate()) << "\n"
      << "coverage_min_ratio " << fmt(r.coverage.min_ratio) << (r.coverage.pass ? " pass" : " FAIL") << "\n"
      << "variation_p95 " << fmt(r.variation.p95) << "\n"
      << "dataset_sha256 " << io::sha256_file((stage.target() / "dataset.csv").string()) << "\n";
  return kOk;
}

int cmd_train(const Common& c, const std::string& dataset, bool quiet, const std::vector<std::string>& argv,
              std::ostream& out, Logger& log) {
  Json j = load_config(c.config);
  apply_sets(j, c.sets);
  const mlp::TrainConfig cfg = train_config(j);
  if (auto w = resolve_workers(c.workers)) omp_set_num_threads(*w);
  const Dataset data = datagen::load_dataset(dataset);
  StagedOutput stage(c.out);

  log.info("train: " + std::to_string(data.size()) + " rows, seed " + std::to_string(cfg.rng_seed));
  const auto t0 = std::chrono::steady_clock::now();
  const mlp::Model model = mlp::train(data, cfg, [&](int epoch, double tl, double vl) {
    if (quiet) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.info("epoch " + std::to_string(epoch + 1) + " train " + fmt(tl) + " val " + fmt(vl) + " (" + fmt(s, 4) +
             " s)");
  });
  mlp::save_model(model, stage.path("model.json"));
  stage.write("config.json", mlp::train_config_json(cfg));

  Manifest m;
  m.command = "train";
  m.argv = argv;
  m.config_path = c.config;
  m.config = Json::parse(mlp::train_config_json(cfg));
  m.seeds = {{"rng_seed", cfg.rng_seed}};
  m.inputs = {dataset};
  stage.commit(m);

  const auto& meta = model.meta();
  out << "epochs_run " << meta.epochs_run << "\n"
      << "best_epoch " << meta.best_epoch + 1 << "\n"
      << "final_train_loss " << fmt(meta.final_train_loss) << "\n"
      << "best_validation_loss " << fmt(meta.best_validation_loss) << "\n"
      << "model_sha256 " << io::sha256_file((stage.target() / "model.json").string()) << "\n";
  return kOk;
}

std::shared_ptr<const mlp::Model> maybe_model(const std::vector<Backend>& methods, const std::string& path) {
  const bool need = std::find(methods.begin(), methods.end(), Backend::NN) != methods.end();
  if (!need) return nullptr;
  if (path.empty()) throw UsageError("method nn requires --model");
  return std::make_shared<const mlp::Model>(mlp::load_model(path));
}

int cmd_simulate(const Common& c, const std::string& method, const std::string& traj, const std::string& model_path,
                 const std::vector<std::string>& argv, std::ostream& out, Logger& log) {
  const Backend backend = parse_backend(method);
  Json j = load_config(c.config);
  apply_sets(j, c.sets);
  SimSettings s = sim_settings(j);
  s.sim.trajectory = sim::parse_trajectory(traj);
  s.controller.backend = backend;
  s.sim.validate();
  const auto model = maybe_model({backend}, model_path);
  StagedOutput stage(c.out);

  const VehicleParams p;
  const sim::SimLog simlog = sim::run_simulation(s.sim, s.controller, InputBounds::defaults(p), p, s.alloc, model);
  stage.write("simlog.csv", sim::simlog_csv(simlog));
  stage.write("simlog.meta.json", sim::simlog_metadata_json(simlog, s.sim, s.controller));
  stage.write("config.json", sim_settings_json(s).dump(2) + "\n");

  Manifest m;
  m.command = "simulate";
  m.argv = argv;
  m.config_path = c.config;
  m.config = sim_settings_json(s);
  m.config["method"] = to_string(backend);
  m.config["trajectory"] = sim::to_string(s.sim.trajectory);
  m.seeds = {{"rng_seed", s.sim.rng_seed}};
  if (model) m.inputs = {model_path};
  stage.commit(m);

  const auto series = sim::fbl_error_series(simlog);
  const double t_end = simlog.records.empty() ? 0.0 : simlog.records.back().t + s.sim.control_dt;
  int relaxed = 0;
  for (const auto& r : simlog.records) relaxed += r.relaxed;
  out << "records " << simlog.records.size() << "\n"
      << "relaxed_samples " << relaxed << "\n"
      << "tracking_rms " << vec_str(sim::tracking_rms(simlog, 0.0, t_end)) << "\n"
      << "fbl_error_rms " << vec_str(series.rms) << "\n"
      << "fbl_error_max " << fmt(series.max_abs) << "\n";
  for (double t0 = 0.0; t0 < t_end - 1e-9; t0 += 1.0) {
    out << "fbl_error_rms[" << fmt(t0, 3) << "," << fmt(t0 + 1.0, 3) << ") "
        << vec_str(sim::fbl_error_rms(simlog, t0, t0 + 1.0)) << "\n";
  }
  if (simlog.aborted) {
    log.error("simulation aborted at t=" + fmt(simlog.abort_time) + " (" + simlog.abort_reason +
              "); partial log written to " + stage.target().string());
    return kRuntimeAbort;
  }
  return kOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) v.push_back(item);
  }
  return v;
}

int cmd_bench(const Common& c, const std::string& methods_arg, const std::string& trajs_arg, int repeats,
              const std::string& model_path, const std::vector<std::string>& argv, std::ostream& out, Logger& log) {
  if (repeats < 1) throw UsageError("--repeats must be >= 1");
  std::vector<Backend> methods;
  for (const auto& m : split_list(methods_arg)) methods.push_back(parse_backend(m));
  std::vector<sim::Trajectory> trajs;
  for (const auto& t : split_list(trajs_arg)) trajs.push_back(sim::parse_trajectory(t));
  if (methods.empty() || trajs.empty()) throw UsageError("--methods and --trajs must be non-empty");
  Json j = load_config(c.config);
  apply_sets(j, c.sets);
  const SimSettings s = sim_settings(j);
  const auto model = maybe_model(methods, model_path);
  const int workers = resolve_workers(c.workers).value_or(1);
  StagedOutput stage(c.out);

  const VehicleParams p;
  const InputBounds bounds = InputBounds::defaults(p);
  std::vector<sim::BatchJob> warmup, jobs;
  for (Backend b : methods) {
    sim::BatchJob job{s.sim, s.controller};
    job.controller.backend = b;
    job.sim.trajectory = trajs.front();
    warmup.push_back(job);
    for (auto t : trajs) {
      job.sim.trajectory = t;
      for (int r = 0; r < repeats; ++r) jobs.push_back(job);
    }
  }
  log.info("bench: warm-up " + std::to_string(warmup.size()) + " runs, measured " + std::to_string(jobs.size()) +
           " runs on " + std::to_string(workers) + " worker(s)");
  sim::run_batch(warmup, bounds, p, s.alloc, model, workers);
  const auto logs = sim::run_batch(jobs, bounds, p, s.alloc, model, workers);

  std::string raw = "backend,trajectory,repeat,t,solve_time,relaxed,solver_status\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& lg = logs[i];
    const std::string prefix = std::string(to_string(lg.backend)) + "," + sim::to_string(lg.trajectory) + "," +
                               std::to_string(i % static_cast<std::size_t>(repeats)) + ",";
    for (const auto& r : lg.records) {
      raw += prefix + io::format_double(r.t) + "," + io::format_double(r.solve_time) + "," +
             (r.relaxed ? "1," : "0,") + r.solver_status + "\n";
    }
  }
  const auto cells = sim::timing_summary(logs);
  stage.write("timings.csv", raw);
  stage.write("timing.json", sim::timing_summary_json(cells, ""));
  stage.write("config.json", sim_settings_json(s).dump(2) + "\n");

  Manifest m;
  m.command = "bench";
  m.argv = argv;
  m.config_path = c.config;
  m.config = sim_settings_json(s);
  m.config["methods"] = split_list(methods_arg);
  m.config["trajectories"] = split_list(trajs_arg);
  m.config["repeats"] = repeats;
  m.seeds = {{"rng_seed", s.sim.rng_seed}};
  if (model) m.inputs = {model_path};
  stage.commit(m);

  out << std::left << std::setw(8) << "backend";
  for (auto t : trajs) out << std::setw(34) << sim::to_string(t);
  out << "\n";
  for (Backend b : methods) {
    out << std::setw(8) << to_string(b);
    for (auto t : trajs) {
      for (const auto& cell : cells) {
        if (cell.backend == b && cell.trajectory == t) out << std::setw(34) << (cell.format() + " ms");
      }
    }
    out << "\n";
  }
  return kOk;
}

struct Window {
  std::string name;
  double t0, t1;
};

std::vector<Window> windows_for(sim::Trajectory t, double duration) {
  std::vector<Window> w{{"all", 0.0, duration + 1.0}};
  if (t == sim::Trajectory::SingleStep) {
    w.push_back({"pre-step", 0.0, 1.0});
    w.push_back({"step", 1.0, duration + 1.0});
  } else if (t == sim::Trajectory::TripleDoublet) {
    w.push_back({"vx-doublet", 1.0, 5.0});
    w.push_back({"vz-doublet", 6.0, 10.0});
    w.push_back({"theta-doublet", 11.0, 14.0});
  }
  return w;
}

Json vec_json(const Vec3& v) { return Json::array({v[0], v[1], v[2]}); }

int cmd_compare(const Common& c, const std::vector<std::string>& dirs, const std::vector<std::string>& argv,
                std::ostream& out) {
  if (dirs.size() < 2) throw UsageError("compare needs at least two log directories");
  std::vector<sim::SimLog> logs;
  std::vector<std::string> csvs;
  std::optional<sim::Trajectory> traj;
  for (const auto& d : dirs) {
    const fs::path dir(d);
    const std::string csv = (dir / "simlog.csv").string();
    const Json meta = Json::parse(io::read_file((dir / "simlog.meta.json").string()));
    const sim::Trajectory t = sim::parse_trajectory(meta.at("trajectory").get<std::string>());
    if (traj && *traj != t) throw UsageError("trajectory mismatch: " + d + " is " + sim::to_string(t));
    traj = t;
    sim::SimLog lg = sim::parse_simlog_csv(io::read_file(csv));
    lg.trajectory = t;
    lg.aborted = meta.value("aborted", false);
    logs.push_back(std::move(lg));
    csvs.push_back(csv);
  }
  StagedOutput stage(c.out);

  double duration = 0.0;
  for (const auto& lg : logs) {
    if (!lg.records.empty()) duration = std::max(duration, lg.records.back().t);
  }
  const auto windows = windows_for(*traj, duration);
  Json report;
  report["schema"] = "nca-compare/1";
  report["trajectory"] = sim::to_string(*traj);
  report["reference"] = to_string(logs.front().backend);
  report["logs"] = Json::array();
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& lg = logs[i];
    const std::string bundle_name =
        "logs/" + std::to_string(i) + "-" + to_string(lg.backend) + "-" + sim::to_string(lg.trajectory) + ".csv";
    stage.write(bundle_name, io::read_file(csvs[i]));
    Json entry;
    entry["source"] = dirs[i];
    entry["bundle"] = bundle_name;
    entry["backend"] = to_string(lg.backend);
    entry["records"] = lg.records.size();
    entry["aborted"] = lg.aborted;
    int relaxed = 0;
    for (const auto& r : lg.records) relaxed += r.relaxed;
    entry["relaxed_samples"] = relaxed;
    for (const auto& w : windows) {
      const Vec3 trk = sim::tracking_rms(lg, w.t0, w.t1);
      const Vec3 fbl = sim::fbl_error_rms(lg, w.t0, w.t1);
      const Vec3 trk_ref = sim::tracking_rms(logs.front(), w.t0, w.t1);
      const Vec3 fbl_ref = sim::fbl_error_rms(logs.front(), w.t0, w.t1);
      Json wj;
      wj["t0"] = w.t0;
      wj["t1"] = std::min(w.t1, duration);
      wj["tracking_rms"] = vec_json(trk);
      wj["fbl_error_rms"] = vec_json(fbl);
      wj["tracking_rms_ratio"] = trk_ref.norm() > 0.0 ? trk.norm() / trk_ref.norm() : 0.0;
      wj["fbl_error_rms_ratio"] = fbl_ref.norm() > 0.0 ? fbl.norm() / fbl_ref.norm() : 0.0;
      entry["windows"][w.name] = wj;
      out << std::left << std::setw(6) << to_string(lg.backend) << std::setw(15) << w.name << " tracking "
          << vec_str(trk) << " (x" << fmt(wj["tracking_rms_ratio"].get<double>(), 4) << ")  fbl "
          << vec_str(fbl) << " (x" << fmt(wj["fbl_error_rms_ratio"].get<double>(), 4) << ")\n";
    }
    report["logs"].push_back(entry);
  }
  stage.write("report.json", report.dump(2) + "\n");

  Manifest m;
  m.command = "compare";
  m.argv = argv;
  m.inputs = csvs;
  stage.commit(m);
  return kOk;
}

bool use_color(const std::ostream& err) {
  return std::getenv("NO_COLOR") == nullptr && &err == &std::cerr && ::isatty(STDERR_FILENO);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Logger log(err, use_color(err));
  CLI::App app{"Control allocation experiments for a bi-tilt tricopter", "nca"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("--config", common.config, "JSON config file");
      sub->add_option("--set", common.sets, "override a config field (key=value, repeatable)");
    }
    sub->add_option("--out", common.out, "output directory (replaced atomically)")->required();
    sub->add_option("--workers", common.workers, "worker threads (env NCA_WORKERS)");
  };

  auto* datagen_cmd = app.add_subcommand("datagen", "generate a labelled training dataset");
  add_common(datagen_cmd, true);

  std::string dataset;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train the network allocator");
  add_common(train_cmd, true);
  train_cmd->add_option("--dataset", dataset, "dataset CSV")->required();
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch progress");

  std::string method, traj = "single-step", model_path;
  auto* sim_cmd = app.add_subcommand("simulate", "run one closed-loop simulation");
  add_common(sim_cmd, true);
  sim_cmd->add_option("--method", method, "lca | nlp | nn")->required();
  sim_cmd->add_option("--traj", traj, "single-step | triple-doublet | custom");
  sim_cmd->add_option("--model", model_path, "trained model (nn only)");

  std::string methods = "lca,nlp,nn", trajs = "single-step,triple-doublet";
  int repeats = 1;
  auto* bench_cmd = app.add_subcommand("bench", "allocator timing sweep");
  add_common(bench_cmd, true);
  bench_cmd->add_option("--methods", methods, "comma-separated backends");
  bench_cmd->add_option("--trajs", trajs, "comma-separated trajectories");
  bench_cmd->add_option("--repeats", repeats, "runs per cell");
  bench_cmd->add_option("--model", model_path, "trained model (needed for nn)");

  std::vector<std::string> dirs;
  auto* compare_cmd = app.add_subcommand("compare", "compare simulation logs");
  add_common(compare_cmd, false);
  compare_cmd->add_option("logs", dirs, "simulate output directories")->required();

  std::vector<std::string> argv_store{"nca"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (datagen_cmd->parsed()) return cmd_datagen(common, args, out, log);
    if (train_cmd->parsed()) return cmd_train(common, dataset, quiet, args, out, log);
    if (sim_cmd->parsed()) return cmd_simulate(common, method, traj, model_path, args, out, log);
    if (bench_cmd->parsed()) return cmd_bench(common, methods, trajs, repeats, model_path, args, out, log);
    if (compare_cmd->parsed()) return cmd_compare(common, dirs, args, out);
  } catch (const UsageError& e) {
    log.error(e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    log.error(std::string("config: ") + e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    log.error(e.what());
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    log.error(std::string("json: ") + e.what());
    return kIo;
  } catch (const io::IoError& e) {
    log.error(e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    log.error(e.what());
    return kIo;
  } catch (const datagen::DatasetFormatError& e) {
    log.error(e.what());
    return kIo;
  } catch (const sim::SimLogFormatError& e) {
    log.error(e.what());
    return kIo;
  } catch (const mlp::CorruptFile& e) {
    log.error(e.what());
    return kIo;
  } catch (const mlp::SchemaMismatch& e) {
    log.error(e.what());
    return kIo;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kRuntimeAbort;
  }
  return kUsage;
}

}  // namespace nca::cli
