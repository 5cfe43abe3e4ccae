#pragma once

// Dense convex QP with linear equalities and box bounds:
//
//   minimize    0.5 z'Hz + c'z
//   subject to  A z = b,  lb <= z <= ub
//
// Solved by a primal active-set method. A phase-1 problem (minimize the
// equality residual over the box) supplies the initial feasible point and
// certifies infeasibility when no such point exists.

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace nca::qp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Problem {
  Matrix H;      // d x d, symmetric PSD
  Vector c;      // d
  Matrix A_eq;   // p x d
  Vector b_eq;   // p
  Vector lb, ub; // d, may hold +-infinity

  int dim() const { return static_cast<int>(c.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }

  /// Throws std::invalid_argument on shape mismatch, asymmetric or indefinite H,
  /// lb > ub, or p > d.
  void validate() const;
  double objective(const Vector& z) const { return 0.5 * z.dot(H * z) + c.dot(z); }
};

enum class Status { Optimal, Infeasible, MaxIter };

const char* to_string(Status s);

struct Solution {
  Vector z;
  Vector lambda_eq;  // H z + c - A' lambda - mu = 0
  Vector mu_bounds;  // >= 0 on active lower bounds, <= 0 on active upper bounds
  Status status = Status::MaxIter;
  int iterations = 0;
  double kkt_residual = 0.0;
  double objective = 0.0;
};

struct Options {
  int max_iterations = 200;
  double regularization = 1e-10;  // added to H on the reduced space
  double feasibility_tol = 1e-9;  // absolute, scaled by max(1, |b|_inf)
  double step_tol = 1e-12;
  double multiplier_tol = 1e-10;
};

/// Independent KKT residual check: max of stationarity, primal equality and
/// bound violation, multiplier sign violation and complementary slackness.
struct KktReport {
  double stationarity = 0.0;
  double equality = 0.0;
  double bounds = 0.0;
  double dual_sign = 0.0;
  double complementarity = 0.0;
  double max() const;
};

KktReport kkt_report(const Problem& prob, const Solution& sol);

/// Holds per-solve workspace; one instance per thread.
class Solver {
 public:
  explicit Solver(Options opts = {}) : opts_(opts) {}

  Solution solve(const Problem& prob, const std::optional<Vector>& warm_start = std::nullopt);

  const Options& options() const { return opts_; }

 private:
  struct ActiveSetResult {
    Vector z;
    std::vector<int> working;  // +1 at upper, -1 at lower, 0 free
    Vector lambda;
    Vector mu;
    bool converged = false;
    int iterations = 0;
  };

  // Runs the active-set iteration from a feasible z.
  ActiveSetResult iterate(const Problem& prob, Vector z, std::vector<int> working, int budget);

  // Finds a point of {A z = b, lb <= z <= ub} or reports the least residual.
  bool phase_one(const Problem& prob, const Vector& start, Vector& z, std::vector<int>& working,
                 int& iterations);

  Options opts_;
};

}  // namespace nca::qp
