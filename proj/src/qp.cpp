#include "nca/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nca::qp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> indices_where(const std::vector<int>& working, bool free) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(working.size()); ++i) {
    if ((working[i] == 0) == free) out.push_back(i);
  }
  return out;
}

Matrix select_columns(const Matrix& a, const std::vector<int>& cols) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = a.col(cols[j]);
  return out;
}

// Orthonormal basis of null(a); a is p x n.
Matrix null_space(const Matrix& a) {
  const Eigen::Index n = a.cols();
  if (n == 0) return Matrix(0, 0);
  if (a.rows() == 0) return Matrix::Identity(n, n);
  Eigen::ColPivHouseholderQR<Matrix> qr(a.transpose());
  qr.setThreshold(1e-12);
  const Eigen::Index rank = qr.rank();
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - rank);
}

// Least-squares lambda from the free-variable rows of the stationarity system.
Vector equality_multipliers(const Matrix& a_free, const Vector& g_free, Eigen::Index p) {
  if (p == 0) return Vector(0);
  if (a_free.cols() == 0) return Vector::Zero(p);
  return a_free.transpose().completeOrthogonalDecomposition().solve(g_free);
}

}  // namespace

const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::MaxIter: return "MaxIter";
  }
  return "?";
}

void Problem::validate() const {
  const Eigen::Index d = c.size();
  if (H.rows() != d || H.cols() != d || lb.size() != d || ub.size() != d) {
    throw std::invalid_argument("qp: dimension mismatch");
  }
  if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != d)) {
    throw std::invalid_argument("qp: equality dimension mismatch");
  }
  if (b_eq.size() > d) throw std::invalid_argument("qp: more equalities than variables");
  if ((lb.array() > ub.array()).any()) throw std::invalid_argument("qp: lb > ub");
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if (d > 0 && (H - H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("qp: H not symmetric");
  }
  if (d > 0) {
    // PSD probe: Cholesky of H + shift must succeed for a small shift.
    const Matrix shifted = H + 1e-9 * scale * Matrix::Identity(d, d);
    if (Eigen::LLT<Matrix>(shifted).info() != Eigen::Success) {
      throw std::invalid_argument("qp: H not positive semidefinite");
    }
  }
}

double KktReport::max() const {
  return std::max({stationarity, equality, bounds, dual_sign, complementarity});
}

KktReport kkt_report(const Problem& prob, const Solution& sol) {
  KktReport r;
  const Vector& z = sol.z;
  Vector station = prob.H * z + prob.c - sol.mu_bounds;
  if (prob.num_eq() > 0) {
    station -= prob.A_eq.transpose() * sol.lambda_eq;
    r.equality = (prob.A_eq * z - prob.b_eq).cwiseAbs().maxCoeff();
  }
  r.stationarity = station.size() ? station.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < prob.dim(); ++i) {
    r.bounds = std::max({r.bounds, prob.lb[i] - z[i], z[i] - prob.ub[i]});
    const double mu = sol.mu_bounds[i];
    if (mu > 0.0) {
      if (std::isinf(prob.lb[i])) r.dual_sign = std::max(r.dual_sign, mu);
      else r.complementarity = std::max(r.complementarity, mu * std::abs(z[i] - prob.lb[i]));
    } else if (mu < 0.0) {
      if (std::isinf(prob.ub[i])) r.dual_sign = std::max(r.dual_sign, -mu);
      else r.complementarity = std::max(r.complementarity, -mu * std::abs(prob.ub[i] - z[i]));
    }
  }
  return r;
}

Solver::ActiveSetResult Solver::iterate(const Problem& prob, Vector z, std::vector<int> working,
                                        int budget) {
  const int d = prob.dim();
  const Eigen::Index p = prob.num_eq();
  ActiveSetResult res;

  for (int it = 0; it < budget; ++it) {
    res.iterations = it + 1;
    const Vector g = prob.H * z + prob.c;
    const std::vector<int> free = indices_where(working, true);
    const Matrix a_free = p ? select_columns(prob.A_eq, free) : Matrix(0, static_cast<Eigen::Index>(free.size()));

    Vector step = Vector::Zero(d);
    if (!free.empty()) {
      const Matrix basis = null_space(a_free);
      if (basis.cols() > 0) {
        Matrix h_free(free.size(), free.size());
        Vector g_free(free.size());
        for (std::size_t a = 0; a < free.size(); ++a) {
          g_free[a] = g[free[a]];
          for (std::size_t b = 0; b < free.size(); ++b) h_free(a, b) = prob.H(free[a], free[b]);
        }
        Matrix reduced = basis.transpose() * h_free * basis;
        reduced.diagonal().array() += opts_.regularization;
        const Vector y = reduced.ldlt().solve(-basis.transpose() * g_free);
        const Vector step_free = basis * y;
        for (std::size_t a = 0; a < free.size(); ++a) step[free[a]] = step_free[a];
      }
    }

    const double z_scale = 1.0 + (z.size() ? z.cwiseAbs().maxCoeff() : 0.0);
    if (step.size() == 0 || step.cwiseAbs().maxCoeff() <= opts_.step_tol * z_scale) {
      Vector g_free(free.size());
      for (std::size_t a = 0; a < free.size(); ++a) g_free[a] = g[free[a]];
      const Vector lambda = equality_multipliers(a_free, g_free, p);
      Vector mu = Vector::Zero(d);
      const Vector eq_part = p ? Vector(prob.A_eq.transpose() * lambda) : Vector::Zero(d);
      const double tol = opts_.multiplier_tol * std::max(1.0, g.cwiseAbs().maxCoeff());
      int release = -1;
      double worst = tol;
      for (int i = 0; i < d; ++i) {
        if (working[i] == 0) continue;
        mu[i] = g[i] - eq_part[i];
        if (prob.lb[i] == prob.ub[i]) continue;  // fixed variables are never released
        const double violation = working[i] < 0 ? -mu[i] : mu[i];
        if (violation > worst) {
          worst = violation;
          release = i;
        }
      }
      if (release < 0) {
        res.z = std::move(z);
        res.working = std::move(working);
        res.lambda = lambda;
        res.mu = mu;
        res.converged = true;
        return res;
      }
      working[release] = 0;
      continue;
    }

    double alpha = 1.0;
    int blocking = -1;
    int blocking_side = 0;
    for (int i : indices_where(working, true)) {
      double t = kInf;
      int side = 0;
      if (step[i] < 0.0 && std::isfinite(prob.lb[i])) {
        t = (prob.lb[i] - z[i]) / step[i];
        side = -1;
      } else if (step[i] > 0.0 && std::isfinite(prob.ub[i])) {
        t = (prob.ub[i] - z[i]) / step[i];
        side = +1;
      }
      t = std::max(t, 0.0);
      if (t < alpha) {
        alpha = t;
        blocking = i;
        blocking_side = side;
      }
    }
    z += alpha * step;
    if (blocking >= 0) {
      z[blocking] = blocking_side < 0 ? prob.lb[blocking] : prob.ub[blocking];
      working[blocking] = blocking_side;
    }
  }
  res.z = std::move(z);
  res.working = std::move(working);
  res.lambda = Vector::Zero(p);
  res.mu = Vector::Zero(d);
  return res;
}

bool Solver::phase_one(const Problem& prob, const Vector& start, Vector& z,
                       std::vector<int>& working, int& iterations) {
  const int d = prob.dim();
  const int p = prob.num_eq();
  const Vector z0 = start.cwiseMax(prob.lb).cwiseMin(prob.ub);
  std::vector<int> w0(d, 0);
  for (int i = 0; i < d; ++i) {
    if (z0[i] == prob.lb[i]) w0[i] = -1;
    else if (z0[i] == prob.ub[i]) w0[i] = +1;
  }
  const double tol = opts_.feasibility_tol * std::max(1.0, p ? prob.b_eq.cwiseAbs().maxCoeff() : 0.0);

  if (p == 0) {
    z = z0;
    working = w0;
    return true;
  }

  Vector residual = prob.b_eq - prob.A_eq * z0;
  if (residual.cwiseAbs().maxCoeff() > tol) {
    // min 0.5|s|^2  s.t.  A z + s = b, lb <= z <= ub, s free.
    Problem elastic;
    elastic.H = Matrix::Zero(d + p, d + p);
    elastic.H.bottomRightCorner(p, p).setIdentity();
    elastic.c = Vector::Zero(d + p);
    elastic.A_eq.resize(p, d + p);
    elastic.A_eq << prob.A_eq, Matrix::Identity(p, p);
    elastic.b_eq = prob.b_eq;
    elastic.lb.resize(d + p);
    elastic.ub.resize(d + p);
    elastic.lb << prob.lb, Vector::Constant(p, -kInf);
    elastic.ub << prob.ub, Vector::Constant(p, kInf);

    Vector start1(d + p);
    start1 << z0, residual;
    std::vector<int> w1(w0);
    w1.resize(d + p, 0);
    ActiveSetResult r = iterate(elastic, start1, w1, opts_.max_iterations);
    iterations += r.iterations;
    z = r.z.head(d);
    working.assign(r.working.begin(), r.working.begin() + d);
    if (!r.converged) return false;
  } else {
    z = z0;
    working = w0;
  }

  // Remove the residual left by the elastic solve with a minimum-norm
  // correction on the free variables.
  residual = prob.b_eq - prob.A_eq * z;
  const std::vector<int> free = indices_where(working, true);
  if (!free.empty() && residual.cwiseAbs().maxCoeff() > 0.0) {
    const Matrix a_free = select_columns(prob.A_eq, free);
    const Vector delta = a_free.completeOrthogonalDecomposition().solve(residual);
    for (std::size_t a = 0; a < free.size(); ++a) z[free[a]] += delta[static_cast<Eigen::Index>(a)];
    z = z.cwiseMax(prob.lb).cwiseMin(prob.ub);
  }
  return true;
}

Solution Solver::solve(const Problem& prob, const std::optional<Vector>& warm_start) {
  const int d = prob.dim();
  const int p = prob.num_eq();
  Solution sol;
  sol.lambda_eq = Vector::Zero(p);
  sol.mu_bounds = Vector::Zero(d);

  Vector start = warm_start ? *warm_start : Vector::Zero(d);
  if (start.size() != d) start = Vector::Zero(d);
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(start[i])) start[i] = 0.0;
  }

  Vector z;
  std::vector<int> working;
  int iterations = 0;
  const bool phase_one_done = phase_one(prob, start, z, working, iterations);
  sol.z = z;
  sol.iterations = iterations;
  if (!phase_one_done) {
    sol.status = Status::MaxIter;
    sol.objective = prob.objective(z);
    return sol;
  }
  const double tol = opts_.feasibility_tol * std::max(1.0, p ? prob.b_eq.cwiseAbs().maxCoeff() : 0.0);
  if (p > 0 && (prob.A_eq * z - prob.b_eq).cwiseAbs().maxCoeff() > tol) {
    sol.status = Status::Infeasible;
    sol.objective = prob.objective(z);
    return sol;
  }

  ActiveSetResult r = iterate(prob, z, working, std::max(1, opts_.max_iterations - iterations));
  sol.z = r.z;
  sol.iterations = iterations + r.iterations;
  sol.objective = prob.objective(r.z);
  if (!r.converged) {
    sol.status = Status::MaxIter;
    return sol;
  }
  sol.lambda_eq = r.lambda;
  sol.mu_bounds = r.mu;
  sol.status = Status::Optimal;
  sol.kkt_residual = kkt_report(prob, sol).max();
  return sol;
}

}  // namespace nca::qp
