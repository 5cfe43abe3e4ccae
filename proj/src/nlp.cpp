#include "nca/nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace nca::nlp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Problem evaluated in normalized coordinates z = u ./ scale.
class ScaledView {
 public:
  explicit ScaledView(const Problem& prob) : prob_(prob) {
    const int n = prob.dim();
    scale_ = prob.scale;
    lin_ = prob.linear.size() == n ? prob.linear : Vector::Zero(n);
    lbz_ = prob.lb.cwiseQuotient(scale_);
    ubz_ = prob.ub.cwiseQuotient(scale_);
  }

  Vector to_u(const Vector& z) const { return z.cwiseProduct(scale_); }
  Vector to_z(const Vector& u) const { return u.cwiseQuotient(scale_); }

  double objective(const Vector& z) const { return z.dot(prob_.weight * z) + lin_.dot(z); }
  Vector gradient(const Vector& z) const { return 2.0 * (prob_.weight * z) + lin_; }

  Residual residual(const Vector& z) const {
    Residual r = prob_.residual(to_u(z));
    r.jacobian = r.jacobian * scale_.asDiagonal();
    return r;
  }

  Matrix lagrangian_hessian(const Vector& z, const Vector& lambda) const {
    Matrix b = 2.0 * prob_.weight;
    if (prob_.curvature && lambda.size() > 0 && lambda.cwiseAbs().maxCoeff() > 0.0) {
      b -= scale_.asDiagonal() * prob_.curvature(to_u(z), lambda) * scale_.asDiagonal();
    }
    return 0.5 * (b + b.transpose());
  }

  Vector residual_scale(Eigen::Index p) const {
    if (prob_.residual_scale.size() == p) return prob_.residual_scale;
    return Vector::Ones(p);
  }

  const Vector& lbz() const { return lbz_; }
  const Vector& ubz() const { return ubz_; }

 private:
  const Problem& prob_;
  Vector scale_, lin_, lbz_, ubz_;
};

// Eigenvalue-modified Hessian: |lambda_i| floored at a fraction of the spectrum.
Matrix make_positive_definite(const Matrix& b, double floor_ratio) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
  Vector values = eig.eigenvalues().cwiseAbs();
  const double floor = floor_ratio * std::max(1.0, values.maxCoeff());
  values = values.cwiseMax(floor);
  Matrix out = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

double weighted_l1(const Vector& r, const Vector& sigma) {
  return r.cwiseAbs().cwiseQuotient(sigma).sum();
}

}  // namespace

const char* to_string(Status s) {
  switch (s) {
    case Status::Converged: return "Converged";
    case Status::Infeasible: return "Infeasible";
    case Status::MaxIter: return "MaxIter";
  }
  return "?";
}

double Problem::objective(const Vector& u) const {
  const Vector z = u.cwiseQuotient(scale);
  double j = z.dot(weight * z);
  if (linear.size() == z.size()) j += linear.dot(z);
  return j;
}

void Problem::validate() const {
  const Eigen::Index n = lb.size();
  if (ub.size() != n || scale.size() != n || weight.rows() != n || weight.cols() != n) {
    throw std::invalid_argument("nlp: dimension mismatch");
  }
  if (linear.size() != 0 && linear.size() != n) throw std::invalid_argument("nlp: linear term size");
  if ((lb.array() > ub.array()).any()) throw std::invalid_argument("nlp: lb > ub");
  if ((scale.array() <= 0.0).any()) throw std::invalid_argument("nlp: scale must be positive");
  if (!(eq_tolerance > 0.0)) throw std::invalid_argument("nlp: eq_tolerance must be positive");
  if (!residual) throw std::invalid_argument("nlp: residual function missing");
}

Solution Solver::solve(const Problem& prob, const Vector& initial_guess) {
  const auto t0 = std::chrono::steady_clock::now();
  const ScaledView view(prob);
  const int n = prob.dim();

  Solution sol;
  Vector z = view.to_z(prob.lb.cwiseMax(initial_guess).cwiseMin(prob.ub));
  Residual res = view.residual(z);
  const Eigen::Index p = res.value.size();
  const Vector sigma = view.residual_scale(p);
  Vector lambda = Vector::Zero(p);
  double penalty = 1.0;

  auto merit = [&](const Vector& zz, const Vector& rr, double nu) {
    return view.objective(zz) + nu * weighted_l1(rr, sigma);
  };
  auto finish = [&](Status status, int iterations) {
    sol.u_star = view.to_u(z);
    sol.objective_value = view.objective(z);
    sol.eq_residual_norm = p ? res.value.cwiseAbs().maxCoeff() : 0.0;
    sol.lambda = lambda;
    sol.status = status;
    sol.iterations = iterations;
    sol.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sol;
  };

  for (int iter = 0; iter < opts_.max_iterations; ++iter) {
    const Vector grad = view.gradient(z);
    // Range-space curvature rho J'J leaves the equality-constrained step
    // unchanged; only what is still indefinite afterwards gets modified.
    Matrix hess = view.lagrangian_hessian(z, lambda);
    double rho_used = 0.0;
    const Vector w_sigma = sigma.cwiseInverse().cwiseAbs2();
    if (p > 0) {
      const Matrix jtj = res.jacobian.transpose() * w_sigma.asDiagonal() * res.jacobian;
      const double base = std::max(1.0, hess.cwiseAbs().maxCoeff()) / std::max(1e-12, jtj.cwiseAbs().maxCoeff());
      for (double rho = 0.0; rho <= 1e6 * base; rho = rho == 0.0 ? base : 10.0 * rho) {
        const Matrix trial = hess + rho * jtj;
        if (Eigen::SelfAdjointEigenSolver<Matrix>(trial, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() >
            opts_.hessian_floor * std::max(1.0, trial.cwiseAbs().maxCoeff())) {
          hess = trial;
          rho_used = rho;
          break;
        }
      }
    }
    hess = make_positive_definite(hess, opts_.hessian_floor);

    qp::Problem sub;
    sub.H = hess;
    sub.c = grad;
    sub.A_eq = res.jacobian;
    sub.b_eq = -res.value;
    sub.lb = view.lbz() - z;
    sub.ub = view.ubz() - z;
    qp::Solution step = qp_.solve(sub, Vector::Zero(n));

    bool elastic = false;
    Vector lin_slack = Vector::Zero(p);
    if (step.status != qp::Status::Optimal) {
      elastic = true;
      const Eigen::Index m = n + 2 * p;
      qp::Problem el;
      el.H = Matrix::Zero(m, m);
      el.H.topLeftCorner(n, n) = hess;
      el.c.resize(m);
      el.c << grad, opts_.elastic_penalty * sigma.cwiseInverse(), opts_.elastic_penalty * sigma.cwiseInverse();
      el.A_eq.resize(p, m);
      el.A_eq << res.jacobian, Matrix::Identity(p, p), -Matrix::Identity(p, p);
      el.b_eq = -res.value;
      el.lb.resize(m);
      el.ub.resize(m);
      el.lb << sub.lb, Vector::Zero(2 * p);
      el.ub << sub.ub, Vector::Constant(2 * p, kInf);
      Vector warm = Vector::Zero(m);
      warm.segment(n, p) = (-res.value).cwiseMax(0.0);
      warm.segment(n + p, p) = res.value.cwiseMax(0.0);
      const qp::Solution es = qp_.solve(el, warm);
      if (es.status != qp::Status::Optimal) {
        sol.kkt_stationarity = kInf;
        return finish(Status::MaxIter, iter + 1);
      }
      step.z = es.z.head(n);
      step.lambda_eq = es.lambda_eq;
      lin_slack = es.z.segment(n, p) - es.z.segment(n + p, p);
    }
    const Vector& dz = step.z;
    // Multipliers of the unaugmented subproblem.
    lambda = step.lambda_eq;
    if (rho_used > 0.0) lambda -= rho_used * w_sigma.cwiseProduct(res.jacobian * dz);

    // Stationarity of the Lagrangian over components not held at a bound.
    const Vector station = grad - res.jacobian.transpose() * lambda;
    double proj = 0.0;
    for (int i = 0; i < n; ++i) {
      const bool at_lower = z[i] <= view.lbz()[i] + 1e-12 && station[i] > 0.0;
      const bool at_upper = z[i] >= view.ubz()[i] - 1e-12 && station[i] < 0.0;
      if (!at_lower && !at_upper) proj = std::max(proj, std::abs(station[i]));
    }
    sol.kkt_stationarity = proj;

    const double resid_inf = p ? res.value.cwiseAbs().maxCoeff() : 0.0;
    const double step_norm = dz.size() ? dz.cwiseAbs().maxCoeff() : 0.0;
    if (resid_inf <= prob.eq_tolerance && (proj <= opts_.kkt_tol || step_norm <= opts_.step_tol)) {
      return finish(Status::Converged, iter);
    }
    if (step_norm <= opts_.step_tol) {
      return finish(elastic ? Status::Infeasible : Status::MaxIter, iter);
    }

    // Raised whenever the multipliers demand it, relaxed gradually once they
    // no longer do (a penalty left over from an elastic phase stalls the search).
    const double needed = (p ? lambda.cwiseProduct(sigma).cwiseAbs().maxCoeff() : 0.0) + 1e-3;
    if (needed * 1.1 > penalty) {
      penalty = 1.5 * needed;
    } else if (penalty > 10.0 * needed) {
      penalty = std::max(1.5 * needed, 0.5 * penalty);
    }
    const double phi0 = merit(z, res.value, penalty);
    double deriv = grad.dot(dz) - penalty * (weighted_l1(res.value, sigma) - weighted_l1(lin_slack, sigma));
    if (!(deriv < 0.0)) deriv = -dz.dot(hess * dz);

    auto clamp_z = [&](const Vector& v) { return v.cwiseMax(view.lbz()).cwiseMin(view.ubz()); };
    bool accepted = false;
    Vector z_next;
    Residual res_next;
    double phi_next = 0.0;

    z_next = clamp_z(z + dz);
    res_next = view.residual(z_next);
    phi_next = merit(z_next, res_next.value, penalty);
    if (phi_next <= phi0 + opts_.armijo * deriv) {
      accepted = true;
    } else if (p > 0) {
      // Second-order correction for the Maratos effect.
      const Matrix& jac = res.jacobian;
      const Vector corr = -jac.transpose() * (jac * jac.transpose() + 1e-12 * Matrix::Identity(p, p))
                                                 .ldlt()
                                                 .solve(res_next.value);
      const Vector z_soc = clamp_z(z_next + corr);
      Residual res_soc = view.residual(z_soc);
      const double phi_soc = merit(z_soc, res_soc.value, penalty);
      if (phi_soc <= phi0 + opts_.armijo * deriv) {
        z_next = z_soc;
        res_next = std::move(res_soc);
        phi_next = phi_soc;
        accepted = true;
      }
    }
    for (double alpha = 0.5; !accepted && alpha >= opts_.min_step; alpha *= 0.5) {
      z_next = clamp_z(z + alpha * dz);
      res_next = view.residual(z_next);
      phi_next = merit(z_next, res_next.value, penalty);
      if (phi_next <= phi0 + opts_.armijo * alpha * deriv) accepted = true;
    }
    if (!accepted) {
      return finish(elastic ? Status::Infeasible : Status::MaxIter, iter + 1);
    }
    if (opts_.record_trace) sol.merit_trace.emplace_back(phi0, phi_next);
    z = std::move(z_next);
    res = std::move(res_next);
  }
  return finish(Status::MaxIter, opts_.max_iterations);
}

std::vector<Vector> latin_hypercube(const Vector& lb, const Vector& ub, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::Index dim = lb.size();
  std::vector<Vector> pts(static_cast<std::size_t>(std::max(n, 0)), Vector(dim));
  std::vector<int> perm(static_cast<std::size_t>(std::max(n, 0)));
  for (Eigen::Index d = 0; d < dim; ++d) {
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[i], perm[j]);
    }
    for (int i = 0; i < n; ++i) {
      const double t = (perm[i] + unit_uniform(rng)) / n;
      pts[i][d] = lb[d] + t * (ub[d] - lb[d]);
    }
  }
  return pts;
}

Solution Solver::solve_multistart(const Problem& prob, const Vector& warm_start, int n_starts,
                                  std::uint64_t rng_seed) {
  if (n_starts < 1) throw std::invalid_argument("nlp: n_starts must be >= 1");
  std::vector<Vector> starts;
  starts.push_back(warm_start);
  for (Vector& s : latin_hypercube(prob.lb, prob.ub, n_starts, rng_seed)) starts.push_back(std::move(s));

  std::optional<Solution> best;
  std::optional<Solution> least_bad;
  bool any_infeasible = false;
  double total_time = 0.0;
  int total_iterations = 0;
  for (const Vector& start : starts) {
    Solution s = solve(prob, start);
    total_time += s.solve_time;
    total_iterations += s.iterations;
    if (s.status == Status::Converged) {
      if (!best || s.objective_value < best->objective_value) best = std::move(s);
    } else {
      any_infeasible = any_infeasible || s.status == Status::Infeasible;
      if (!least_bad || s.eq_residual_norm < least_bad->eq_residual_norm) least_bad = std::move(s);
    }
  }
  Solution out = best ? std::move(*best) : std::move(*least_bad);
  if (!best) out.status = any_infeasible ? Status::Infeasible : Status::MaxIter;
  out.solve_time = total_time;
  out.iterations = total_iterations;
  return out;
}

}  // namespace nca::nlp
