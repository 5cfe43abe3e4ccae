#pragma once

// Test-only reference computations. Nothing here calls into the solver code
// paths it is used to check.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "nca/qp.hpp"
#include "nca/vehicle.hpp"

namespace nca::oracle {

/// Fourth-order central-difference Jacobian of f: R^n -> R^m.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-4) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    auto shifted = [&](double k) {
      Eigen::VectorXd xs = x;
      xs[j] += k * h;
      return f(xs);
    };
    jac.col(j) = (-shifted(2) + 8.0 * shifted(1) - 8.0 * shifted(-1) + shifted(-2)) / (12.0 * h);
  }
  return jac;
}

/// Relative error with an absolute floor, as used for derivative checks.
inline double relative_error(double a, double b, double floor = 1e-9) {
  return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

inline double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 double floor = 1e-6) {
  double worst = 0.0;
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double err = std::abs(a(i) - b(i)) / std::max(floor * std::max(1.0, scale),
                                                        std::max(std::abs(a(i)), std::abs(b(i))));
    worst = std::max(worst, err);
  }
  return worst;
}

/// Random admissible input inside the bounds.
template <class Rng>
ControlInput random_input(const InputBounds& b, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ControlInput u;
  for (int i = 0; i < kNumInputs; ++i) u[i] = b.lower[i] + unit(rng) * (b.upper[i] - b.lower[i]);
  return u;
}

/// Direct dense KKT solve of min 0.5 z'Hz + c'z s.t. Az = b (no bounds).
inline Eigen::VectorXd kkt_linear_solve(const qp::Problem& prob) {
  const Eigen::Index d = prob.dim(), p = prob.num_eq();
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + p, d + p);
  kkt.topLeftCorner(d, d) = prob.H;
  kkt.topRightCorner(d, p) = prob.A_eq.transpose();
  kkt.bottomLeftCorner(p, d) = prob.A_eq;
  Eigen::VectorXd rhs(d + p);
  rhs << -prob.c, prob.b_eq;
  return kkt.fullPivLu().solve(rhs).head(d);
}

/// Brute-force box QP: every variable is either at its lower bound, at its
/// upper bound, or free (3^d patterns). For each pattern the equality-
/// constrained problem in the free variables is solved directly; the best
/// primal-feasible candidate is the global optimum for strictly convex H.
inline std::optional<double> enumerate_box_qp(const qp::Problem& prob, double feas_tol = 1e-9) {
  const int d = prob.dim();
  const int p = prob.num_eq();
  int patterns = 1;
  for (int i = 0; i < d; ++i) patterns *= 3;
  std::optional<double> best;
  std::vector<int> state(d);
  for (int code = 0; code < patterns; ++code) {
    int rem = code;
    std::vector<int> free;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < d; ++i) {
      state[i] = rem % 3;
      rem /= 3;
      if (state[i] == 0) z[i] = prob.lb[i];
      else if (state[i] == 1) z[i] = prob.ub[i];
      else free.push_back(i);
    }
    const int nf = static_cast<int>(free.size());
    // [H_ff A_f'; A_f 0] [z_f; -lambda] = [-(c_f + H_fx z_x); b - A_x z_x]
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + p, nf + p);
    Eigen::VectorXd rhs(nf + p);
    const Eigen::VectorXd fixed_grad = prob.H * z + prob.c;
    const Eigen::VectorXd fixed_eq = prob.b_eq - prob.A_eq * z;
    for (int a = 0; a < nf; ++a) {
      for (int b = 0; b < nf; ++b) kkt(a, b) = prob.H(free[a], free[b]);
      for (int k = 0; k < p; ++k) {
        kkt(a, nf + k) = prob.A_eq(k, free[a]);
        kkt(nf + k, a) = prob.A_eq(k, free[a]);
      }
      rhs[a] = -fixed_grad[free[a]];
    }
    for (int k = 0; k < p; ++k) rhs[nf + k] = fixed_eq[k];
    Eigen::VectorXd sol = nf + p > 0 ? Eigen::VectorXd(kkt.fullPivLu().solve(rhs)) : Eigen::VectorXd(0);
    for (int a = 0; a < nf; ++a) z[free[a]] = sol[a];
    if (p > 0 && (prob.A_eq * z - prob.b_eq).cwiseAbs().maxCoeff() > feas_tol) continue;
    if ((z.array() < prob.lb.array() - feas_tol).any() || (z.array() > prob.ub.array() + feas_tol).any()) {
      continue;
    }
    const double obj = prob.objective(z);
    if (!best || obj < *best) best = obj;
  }
  return best;
}

/// Random strictly convex box QP with a feasible equality system: b = A z0
/// for z0 drawn inside the box.
template <class Rng>
qp::Problem random_box_qp(int d, int p, double box_half_width, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  qp::Problem prob;
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  prob.H = m * m.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
  prob.c.resize(d);
  for (int i = 0; i < d; ++i) prob.c[i] = 3.0 * normal(rng);
  prob.A_eq.resize(p, d);
  for (Eigen::Index i = 0; i < prob.A_eq.size(); ++i) prob.A_eq(i) = normal(rng);
  prob.lb.resize(d);
  prob.ub.resize(d);
  Eigen::VectorXd z0(d);
  for (int i = 0; i < d; ++i) {
    const double centre = unit(rng);
    prob.lb[i] = centre - box_half_width;
    prob.ub[i] = centre + box_half_width;
    z0[i] = centre + 0.9 * box_half_width * unit(rng);
  }
  prob.b_eq = prob.A_eq * z0;
  return prob;
}

}  // namespace nca::oracle
