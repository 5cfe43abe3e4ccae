#pragma once

// Offline training-data pipeline: grid theta, push the input-box vertices
// through g_r, take the convex hull of those points as the sampling region,
// sample inside it, and label every sample with a multi-start NLP solve.
//
// The hull is kept implicitly as its generator points. Membership is a
// feasibility LP over convex weights; sampling draws explicit convex
// combinations.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nca/dataset.hpp"
#include "nca/vehicle.hpp"

namespace nca::datagen {

struct DegenerateRegion : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DatasetFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatagenConfig {
  double theta_min = -0.7853981633974483;  // -45 deg
  double theta_max = 0.7853981633974483;
  int n_x = 25;
  int n_s = 121000;
  std::uint64_t rng_seed = 1;
  double nlp_tolerance = 1e-6;
  int n_starts = 8;
  int workers = 0;  // 0: OpenMP default

  void validate() const;
  std::vector<double> theta_grid() const;
};

using Point = Eigen::VectorXd;

/// n_x * 2^5 points [theta_i, g_r(theta_i, vertex_j)].
std::vector<Point> build_candidate_points(const DatagenConfig& cfg, const InputBounds& bounds,
                                          const VehicleParams& p);

class HullRegion {
 public:
  /// All generators must share one dimension.
  explicit HullRegion(std::vector<Point> generators);

  int dim() const { return dim_; }
  int affine_rank() const { return affine_rank_; }
  const std::vector<Point>& generators() const { return generators_; }
  Point centroid() const;

 private:
  std::vector<Point> generators_;
  int dim_ = 0;
  int affine_rank_ = 0;
};

struct Membership {
  bool inside = false;
  Eigen::VectorXd weights;  // convex weights over the generators when inside
};

/// Phase-I simplex on {w >= 0, sum w = 1, G w = x}. Throws DegenerateRegion
/// when the generators do not span the full dimension.
Membership hull_membership(const HullRegion& region, const Point& x, double tol = 1e-9);

/// n_s convex combinations of 5..8 random generators with normalized
/// exponential weights.
std::vector<Point> sample_region(const HullRegion& region, int n_s, std::uint64_t seed);

struct LabelStats {
  std::size_t n_init = 0;
  std::size_t n_kept = 0;
  double acceptance_rate() const { return n_init ? double(n_kept) / double(n_init) : 0.0; }
};

/// Labels points [theta, mu] in parallel, each with a private solver and a
/// seed derived from (rng_seed, index); rows are kept in index order.
Dataset label_dataset(const std::vector<Point>& points, const DatagenConfig& cfg, const InputBounds& bounds,
                      const VehicleParams& p, LabelStats* stats = nullptr);

/// Single-threaded reference with identical output.
Dataset label_dataset_serial(const std::vector<Point>& points, const DatagenConfig& cfg,
                             const InputBounds& bounds, const VehicleParams& p, LabelStats* stats = nullptr);

struct VariationStats {
  int probes = 0;
  double median = 0.0;  // ||dy|| / ||dx|| to the nearest neighbour, normalized units
  double p95 = 0.0;
  double max = 0.0;
};

/// Nearest-neighbour output variation on evenly spaced probe rows; large
/// ratios flag jumps in the labelled map.
VariationStats nearest_neighbour_variation(const Dataset& data, int probes = 1000);

struct CoverageReport {
  double min_ratio = 0.0;  // worst reach toward a vertex image, 1 = full reach
  bool pass = false;
};

/// For each grid theta and each vertex image, how far retained rows near that
/// theta reach from the centroid toward the image (pass: >= 0.9).
CoverageReport coverage_check(const Dataset& data, const DatagenConfig& cfg, const InputBounds& bounds,
                              const VehicleParams& p);

struct DatagenResult {
  Dataset dataset;
  LabelStats stats;
  VariationStats variation;
  CoverageReport coverage;
};

/// Candidates, region, samples (plus the generators), labels.
DatagenResult generate(const DatagenConfig& cfg, const InputBounds& bounds, const VehicleParams& p);

std::string config_json(const DatagenConfig& cfg);
DatagenConfig config_from_json(const std::string& text);

/// CSV with a schema comment line and a header row, %.17g values.
std::string dataset_csv(const Dataset& data);
Dataset parse_dataset_csv(const std::string& text);

/// Sidecar metadata: config, seed, counts, norm statistics.
std::string dataset_metadata_json(const DatagenResult& result, const DatagenConfig& cfg);

void save_dataset(const DatagenResult& result, const DatagenConfig& cfg, const std::string& csv_path,
                  const std::string& meta_path);
Dataset load_dataset(const std::string& csv_path);

}  // namespace nca::datagen
