#pragma once

// Small dense NLP of the form
//
//   minimize    J(u) = s(u)' W s(u) + c' s(u),   s(u) = u ./ scale
//   subject to  r(u) = 0  (r: R^n -> R^p),  lb <= u <= ub
//
// solved by SQP with an l1 merit function and backtracking line search. Each
// subproblem goes to qp::Solver; when the linearized equality cannot be met
// inside the box the subproblem turns elastic (l1-penalized slack).

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "nca/qp.hpp"

namespace nca::nlp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Residual {
  Vector value;     // r(u), length p
  Matrix jacobian;  // dr/du, p x n
};

struct Problem {
  Matrix weight;  // W, n x n symmetric PSD, acting on normalized inputs
  Vector linear;  // c, n (may be empty = zero)
  Vector scale;   // n, positive; normalization u_i / scale_i
  Vector lb, ub;  // n
  double eq_tolerance = 1e-6;

  // Per-channel magnitude of r used to normalize elastic penalties; empty = 1.
  Vector residual_scale;

  std::function<Residual(const Vector& u)> residual;
  // Optional sum_j lambda_j d^2 r_j / du^2 (n x n). Without it the SQP uses
  // the objective Hessian only.
  std::function<Matrix(const Vector& u, const Vector& lambda)> curvature;

  int dim() const { return static_cast<int>(lb.size()); }
  double objective(const Vector& u) const;
  /// Throws std::invalid_argument on inconsistent shapes, lb > ub or
  /// non-positive tolerance/scale.
  void validate() const;
};

enum class Status { Converged, Infeasible, MaxIter };

const char* to_string(Status s);

struct Solution {
  Vector u_star;
  double objective_value = 0.0;
  double eq_residual_norm = 0.0;  // infinity norm of r(u_star)
  Vector lambda;                  // equality multipliers of the last subproblem
  Status status = Status::MaxIter;
  int iterations = 0;
  double solve_time = 0.0;        // seconds
  double kkt_stationarity = 0.0;

  // Merit before / after each accepted step, both at the penalty in force
  // for that step.
  std::vector<std::pair<double, double>> merit_trace;
};

struct Options {
  int max_iterations = 100;
  double step_tol = 1e-10;
  double kkt_tol = 1e-6;
  double elastic_penalty = 1e4;
  double armijo = 1e-4;
  double min_step = 1e-10;
  double hessian_floor = 1e-6;
  bool record_trace = false;
};

/// One instance per thread; holds the QP workspace.
class Solver {
 public:
  explicit Solver(Options opts = {}) : opts_(opts) {}

  Solution solve(const Problem& prob, const Vector& initial_guess);

  /// Best converged result over the warm start followed by n_starts
  /// Latin-hypercube starts in the box. Deterministic for a fixed seed.
  Solution solve_multistart(const Problem& prob, const Vector& warm_start, int n_starts,
                            std::uint64_t rng_seed);

  const Options& options() const { return opts_; }

 private:
  Options opts_;
  qp::Solver qp_;
};

/// n points of a Latin hypercube over [lb, ub]; one stratum per point and axis.
std::vector<Vector> latin_hypercube(const Vector& lb, const Vector& ub, int n, std::uint64_t seed);

}  // namespace nca::nlp
