#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace nca {

/// Per-column z-score statistics.
struct NormStats {
  Eigen::VectorXd input_mean, input_std;
  Eigen::VectorXd output_mean, output_std;

  /// Column means and standard deviations; zero deviations become 1.
  static NormStats from(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
  bool empty() const { return input_mean.size() == 0; }
};

/// Labeled pairs [theta0, mu_des] -> u*, one sample per row.
struct Dataset {
  Eigen::MatrixXd X;          // N x 4
  Eigen::MatrixXd Y;          // N x 5
  Eigen::VectorXd residuals;  // N, infinity norm of g_r(theta, u*) - mu
  NormStats norm;
  std::string config_hash;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return X.rows(); }
};

}  // namespace nca
