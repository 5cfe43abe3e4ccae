#include "nca/datagen.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nca/alloc.hpp"
#include "nca/io.hpp"
#include "nca/nlp.hpp"

namespace nca::datagen {
namespace {

constexpr const char* kCsvSchema = "nca-dataset/1";
constexpr const char* kMetaSchema = "nca-dataset-meta/1";
constexpr const char* kHeader = "theta,mu1,mu2,mu3,T1,T2,T3,phi1,phi2,residual";

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Per-dimension spread of the generators; the LP runs in these units.
Eigen::VectorXd generator_scale(const std::vector<Point>& gens, int dim) {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(dim, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (const Point& g : gens) {
    lo = lo.cwiseMin(g);
    hi = hi.cwiseMax(g);
  }
  Eigen::VectorXd s = hi - lo;
  for (int i = 0; i < dim; ++i) {
    if (!(s[i] > 1e-12)) s[i] = 1.0;
  }
  return s;
}

struct Label {
  bool kept = false;
  ControlInput u = ControlInput::Zero();
  double residual = 0.0;
};

Label label_one(const Point& pt, std::size_t index, const DatagenConfig& cfg, const InputBounds& bounds,
                const VehicleParams& p, nlp::Solver& solver) {
  const double theta = pt[0];
  const Vec3 mu = pt.tail<3>();
  const nlp::Problem prob = make_nca_problem(theta, mu, bounds.lower, bounds.upper, bounds, p, cfg.nlp_tolerance);
  const std::uint64_t seed = splitmix64(cfg.rng_seed ^ splitmix64(static_cast<std::uint64_t>(index)));
  const nlp::Solution sol = solver.solve_multistart(prob, trim_point(p).input, cfg.n_starts, seed);
  Label out;
  if (sol.status != nlp::Status::Converged) return out;
  out.u = sol.u_star;
  out.residual = (reduced_g(theta, out.u, p) - mu).cwiseAbs().maxCoeff();
  out.kept = out.residual <= cfg.nlp_tolerance && bounds.contains(out.u);
  return out;
}

Dataset assemble(const std::vector<Point>& points, const std::vector<Label>& labels, const DatagenConfig& cfg,
                 LabelStats* stats) {
  std::size_t kept = 0;
  for (const Label& l : labels) kept += l.kept ? 1 : 0;
  if (stats) {
    stats->n_init = points.size();
    stats->n_kept = kept;
  }
  if (kept == 0) {
    throw EmptyDataset("datagen: none of " + std::to_string(points.size()) +
                       " points could be labelled; the sampling region is mis-specified");
  }
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(kept), 4);
  d.Y.resize(static_cast<Eigen::Index>(kept), kNumInputs);
  d.residuals.resize(static_cast<Eigen::Index>(kept));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!labels[i].kept) continue;
    d.X.row(row) = points[i].transpose();
    d.Y.row(row) = labels[i].u.transpose();
    d.residuals[row] = labels[i].residual;
    ++row;
  }
  d.norm = NormStats::from(d.X, d.Y);
  d.seed = cfg.rng_seed;
  d.config_hash = io::sha256_hex(config_json(cfg));
  return d;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

void DatagenConfig::validate() const {
  if (n_x < 2) throw std::invalid_argument("datagen: n_x must be >= 2");
  if (n_s < 0) throw std::invalid_argument("datagen: n_s must be >= 0");
  if (!(theta_max > theta_min)) throw std::invalid_argument("datagen: theta_range is empty");
  if (!(nlp_tolerance > 0.0)) throw std::invalid_argument("datagen: nlp_tolerance must be positive");
  if (n_starts < 1) throw std::invalid_argument("datagen: n_starts must be >= 1");
  if (workers < 0) throw std::invalid_argument("datagen: workers must be >= 0");
}

std::vector<double> DatagenConfig::theta_grid() const {
  std::vector<double> grid(static_cast<std::size_t>(n_x));
  for (int i = 0; i < n_x; ++i) grid[i] = theta_min + (theta_max - theta_min) * i / (n_x - 1);
  return grid;
}

std::vector<Point> build_candidate_points(const DatagenConfig& cfg, const InputBounds& bounds,
                                          const VehicleParams& p) {
  cfg.validate();
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(cfg.n_x) << kNumInputs);
  for (double theta : cfg.theta_grid()) {
    for (int mask = 0; mask < (1 << kNumInputs); ++mask) {
      ControlInput vertex;
      for (int i = 0; i < kNumInputs; ++i) vertex[i] = (mask >> i) & 1 ? bounds.upper[i] : bounds.lower[i];
      Point pt(4);
      pt << theta, reduced_g(theta, vertex, p);
      out.push_back(std::move(pt));
    }
  }
  return out;
}

HullRegion::HullRegion(std::vector<Point> generators) : generators_(std::move(generators)) {
  if (generators_.empty()) throw DegenerateRegion("hull: no generators");
  dim_ = static_cast<int>(generators_.front().size());
  for (const Point& g : generators_) {
    if (g.size() != dim_) throw std::invalid_argument("hull: generators differ in dimension");
  }
  const Eigen::VectorXd s = generator_scale(generators_, dim_);
  Eigen::MatrixXd diffs(static_cast<Eigen::Index>(generators_.size()), dim_);
  for (std::size_t i = 0; i < generators_.size(); ++i) {
    diffs.row(static_cast<Eigen::Index>(i)) = (generators_[i] - generators_[0]).cwiseQuotient(s).transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(diffs);
  qr.setThreshold(1e-10);
  affine_rank_ = static_cast<int>(qr.rank());
}

Point HullRegion::centroid() const {
  Point c = Point::Zero(dim_);
  for (const Point& g : generators_) c += g;
  return c / static_cast<double>(generators_.size());
}

Membership hull_membership(const HullRegion& region, const Point& x, double tol) {
  if (region.affine_rank() < region.dim()) {
    throw DegenerateRegion("hull: generators span only " + std::to_string(region.affine_rank()) +
                           " of " + std::to_string(region.dim()) + " dimensions; widen the grid");
  }
  if (x.size() != region.dim()) throw std::invalid_argument("hull: point dimension mismatch");
  const auto& gens = region.generators();
  const int n = static_cast<int>(gens.size());
  const int m = region.dim() + 1;
  const Eigen::VectorXd s = generator_scale(gens, region.dim());
  const Eigen::VectorXd origin = gens.front();

  // Tableau rows 0..m-1 are constraints, row m holds phase-I reduced costs.
  // Columns: n generator weights, m artificials, right-hand side.
  const int cols = n + m + 1;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, cols);
  for (int j = 0; j < n; ++j) {
    t.block(0, j, m - 1, 1) = (gens[j] - origin).cwiseQuotient(s);
    t(m - 1, j) = 1.0;
  }
  t.block(0, cols - 1, m - 1, 1) = (x - origin).cwiseQuotient(s);
  t(m - 1, cols - 1) = 1.0;
  for (int i = 0; i < m; ++i) {
    if (t(i, cols - 1) < 0.0) t.row(i) *= -1.0;
    t(i, n + i) = 1.0;
  }
  for (int j = 0; j < n; ++j) t(m, j) = -t.col(j).head(m).sum();
  t(m, cols - 1) = -t.col(cols - 1).head(m).sum();

  std::vector<int> basis(static_cast<std::size_t>(m));
  std::iota(basis.begin(), basis.end(), n);
  constexpr double kPivotTol = 1e-12;
  const int max_pivots = 50 * (n + m);
  for (int it = 0; it < max_pivots; ++it) {
    // Bland's rule: lowest-index improving column, lowest-index basic row on ties.
    int enter = -1;
    for (int j = 0; j < n + m; ++j) {
      if (t(m, j) < -kPivotTol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;
    int leave = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      if (t(i, enter) > kPivotTol) {
        const double ratio = t(i, cols - 1) / t(i, enter);
        if (ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && basis[i] < basis[leave])) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) break;  // unbounded direction; cannot happen for phase I
    t.row(leave) /= t(leave, enter);
    for (int i = 0; i <= m; ++i) {
      if (i != leave && t(i, enter) != 0.0) t.row(i) -= t(i, enter) * t.row(leave);
    }
    basis[leave] = enter;
  }

  Membership out;
  const double infeasibility = -t(m, cols - 1);
  out.inside = infeasibility <= tol;
  if (out.inside) {
    out.weights = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < m; ++i) {
      if (basis[i] < n) out.weights[basis[i]] = std::max(0.0, t(i, cols - 1));
    }
  }
  return out;
}

std::vector<Point> sample_region(const HullRegion& region, int n_s, std::uint64_t seed) {
  std::vector<Point> out;
  if (n_s <= 0) return out;
  out.reserve(static_cast<std::size_t>(n_s));
  std::mt19937_64 rng(seed);
  const auto& gens = region.generators();
  const int n = static_cast<int>(gens.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int s = 0; s < n_s; ++s) {
    const int k = std::min(n, 5 + static_cast<int>(rng() % 4));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(n - i));
      std::swap(idx[i], idx[j]);
    }
    Eigen::VectorXd w(k);
    for (int i = 0; i < k; ++i) w[i] = -std::log1p(-unit_uniform(rng));
    w /= w.sum();
    Point pt = Point::Zero(region.dim());
    for (int i = 0; i < k; ++i) pt += w[i] * gens[idx[i]];
    out.push_back(std::move(pt));
  }
  return out;
}

Dataset label_dataset(const std::vector<Point>& points, const DatagenConfig& cfg, const InputBounds& bounds,
                      const VehicleParams& p, LabelStats* stats) {
  cfg.validate();
  std::vector<Label> labels(points.size());
  const long n = static_cast<long>(points.size());
  const int threads = cfg.workers > 0 ? cfg.workers : omp_get_max_threads();
#pragma omp parallel num_threads(threads)
  {
    nlp::Solver solver;
#pragma omp for schedule(dynamic, 16)
    for (long i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] =
          label_one(points[static_cast<std::size_t>(i)], static_cast<std::size_t>(i), cfg, bounds, p, solver);
    }
  }
  return assemble(points, labels, cfg, stats);
}

Dataset label_dataset_serial(const std::vector<Point>& points, const DatagenConfig& cfg,
                             const InputBounds& bounds, const VehicleParams& p, LabelStats* stats) {
  cfg.validate();
  std::vector<Label> labels(points.size());
  nlp::Solver solver;
  for (std::size_t i = 0; i < points.size(); ++i) labels[i] = label_one(points[i], i, cfg, bounds, p, solver);
  return assemble(points, labels, cfg, stats);
}

VariationStats nearest_neighbour_variation(const Dataset& data, int probes) {
  VariationStats out;
  const Eigen::Index n = data.size();
  if (n < 2 || probes <= 0) return out;
  const NormStats& ns = data.norm.empty() ? NormStats::from(data.X, data.Y) : data.norm;
  Eigen::MatrixXd xn = (data.X.rowwise() - ns.input_mean.transpose()).array().rowwise() /
                       ns.input_std.transpose().array();
  Eigen::MatrixXd yn = (data.Y.rowwise() - ns.output_mean.transpose()).array().rowwise() /
                       ns.output_std.transpose().array();
  const Eigen::Index count = std::min<Eigen::Index>(probes, n);
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index k = 0; k < count; ++k) {
    const Eigen::Index i = k * n / count;
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index nearest = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (xn.row(j) - xn.row(i)).squaredNorm();
      if (d > 0.0 && d < best) {
        best = d;
        nearest = j;
      }
    }
    if (nearest < 0) continue;
    ratios.push_back((yn.row(nearest) - yn.row(i)).norm() / std::sqrt(best));
  }
  if (ratios.empty()) return out;
  std::sort(ratios.begin(), ratios.end());
  out.probes = static_cast<int>(ratios.size());
  out.median = ratios[ratios.size() / 2];
  out.p95 = ratios[std::min(ratios.size() - 1, ratios.size() * 95 / 100)];
  out.max = ratios.back();
  return out;
}

CoverageReport coverage_check(const Dataset& data, const DatagenConfig& cfg, const InputBounds& bounds,
                              const VehicleParams& p) {
  CoverageReport out;
  out.min_ratio = std::numeric_limits<double>::infinity();
  const std::vector<double> grid = cfg.theta_grid();
  const double half = 0.5 * (cfg.theta_max - cfg.theta_min) / (cfg.n_x - 1);
  const std::vector<Point> candidates = build_candidate_points(cfg, bounds, p);
  constexpr int kVertices = 1 << kNumInputs;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    Vec3 centroid = Vec3::Zero();
    for (int v = 0; v < kVertices; ++v) centroid += candidates[gi * kVertices + v].tail<3>();
    centroid /= kVertices;
    for (int v = 0; v < kVertices; ++v) {
      const Vec3 dir = Vec3(candidates[gi * kVertices + v].tail<3>()) - centroid;
      const double len = dir.norm();
      if (len < 1e-9) continue;
      double reach = -std::numeric_limits<double>::infinity();
      for (Eigen::Index r = 0; r < data.size(); ++r) {
        if (std::abs(data.X(r, 0) - grid[gi]) > half) continue;
        reach = std::max(reach, (Vec3(data.X.row(r).tail<3>().transpose()) - centroid).dot(dir) / (len * len));
      }
      out.min_ratio = std::min(out.min_ratio, reach);
    }
  }
  out.pass = out.min_ratio >= 0.9;
  return out;
}

DatagenResult generate(const DatagenConfig& cfg, const InputBounds& bounds, const VehicleParams& p) {
  cfg.validate();
  std::vector<Point> generators = build_candidate_points(cfg, bounds, p);
  const HullRegion region(generators);
  std::vector<Point> points = sample_region(region, cfg.n_s, cfg.rng_seed);
  points.insert(points.end(), generators.begin(), generators.end());
  DatagenResult result;
  result.dataset = label_dataset(points, cfg, bounds, p, &result.stats);
  result.variation = nearest_neighbour_variation(result.dataset);
  result.coverage = coverage_check(result.dataset, cfg, bounds, p);
  return result;
}

std::string config_json(const DatagenConfig& cfg) {
  // workers is excluded: it cannot change the output.
  const nlohmann::json j = {{"theta_min", cfg.theta_min}, {"theta_max", cfg.theta_max},
                            {"n_x", cfg.n_x},             {"n_s", cfg.n_s},
                            {"rng_seed", cfg.rng_seed},   {"nlp_tolerance", cfg.nlp_tolerance},
                            {"n_starts", cfg.n_starts}};
  return j.dump();
}

DatagenConfig config_from_json(const std::string& text) {
  DatagenConfig cfg;
  const nlohmann::json j = nlohmann::json::parse(text);
  cfg.theta_min = j.value("theta_min", cfg.theta_min);
  cfg.theta_max = j.value("theta_max", cfg.theta_max);
  cfg.n_x = j.value("n_x", cfg.n_x);
  cfg.n_s = j.value("n_s", cfg.n_s);
  cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
  cfg.nlp_tolerance = j.value("nlp_tolerance", cfg.nlp_tolerance);
  cfg.n_starts = j.value("n_starts", cfg.n_starts);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.validate();
  return cfg;
}

std::string dataset_csv(const Dataset& data) {
  std::string out = std::string("# ") + kCsvSchema + "\n" + kHeader + "\n";
  out.reserve(out.size() + static_cast<std::size_t>(data.size()) * 240);
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    for (int c = 0; c < 4; ++c) out += io::format_double(data.X(r, c)) + ",";
    for (int c = 0; c < kNumInputs; ++c) out += io::format_double(data.Y(r, c)) + ",";
    out += io::format_double(data.residuals.size() ? data.residuals[r] : 0.0);
    out += "\n";
  }
  return out;
}

Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != std::string("# ") + kCsvSchema) {
    throw DatasetFormatError("dataset: missing schema line '# " + std::string(kCsvSchema) + "'");
  }
  if (!std::getline(in, line) || line != kHeader) {
    throw DatasetFormatError("dataset: header does not match '" + std::string(kHeader) + "'");
  }
  std::vector<std::array<double, 10>> rows;
  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<double, 10> row{};
    const char* s = line.c_str();
    for (int c = 0; c < 10; ++c) {
      char* end = nullptr;
      row[c] = std::strtod(s, &end);
      if (end == s || (c < 9 && *end != ',') || (c == 9 && *end != '\0')) {
        throw DatasetFormatError("dataset: line " + std::to_string(line_no) + " column " + std::to_string(c + 1) +
                                 " is not a number");
      }
      s = end + 1;
    }
    rows.push_back(row);
  }
  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  d.X.resize(n, 4);
  d.Y.resize(n, kNumInputs);
  d.residuals.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int c = 0; c < 4; ++c) d.X(r, c) = rows[r][c];
    for (int c = 0; c < kNumInputs; ++c) d.Y(r, c) = rows[r][4 + c];
    d.residuals[r] = rows[r][9];
  }
  if (n > 0) d.norm = NormStats::from(d.X, d.Y);
  return d;
}

std::string dataset_metadata_json(const DatagenResult& result, const DatagenConfig& cfg) {
  const Dataset& d = result.dataset;
  nlohmann::json j;
  j["schema"] = kMetaSchema;
  j["config"] = nlohmann::json::parse(config_json(cfg));
  j["config_hash"] = d.config_hash;
  j["seed"] = cfg.rng_seed;
  j["n_init"] = result.stats.n_init;
  j["n"] = result.stats.n_kept;
  j["acceptance_rate"] = result.stats.acceptance_rate();
  j["norm_stats"] = {{"input_mean", vec_json(d.norm.input_mean)},
                     {"input_std", vec_json(d.norm.input_std)},
                     {"output_mean", vec_json(d.norm.output_mean)},
                     {"output_std", vec_json(d.norm.output_std)}};
  j["max_residual"] = d.residuals.size() ? d.residuals.maxCoeff() : 0.0;
  j["nearest_neighbour_variation"] = {{"probes", result.variation.probes},
                                      {"median", result.variation.median},
                                      {"p95", result.variation.p95},
                                      {"max", result.variation.max}};
  j["coverage"] = {{"min_ratio", result.coverage.min_ratio}, {"pass", result.coverage.pass}};
  return j.dump(2) + "\n";
}

void save_dataset(const DatagenResult& result, const DatagenConfig& cfg, const std::string& csv_path,
                  const std::string& meta_path) {
  io::write_file(csv_path, dataset_csv(result.dataset));
  io::write_file(meta_path, dataset_metadata_json(result, cfg));
}

Dataset load_dataset(const std::string& csv_path) { return parse_dataset_csv(io::read_file(csv_path)); }

}  // namespace nca::datagen
