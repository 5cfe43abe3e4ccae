#include "nca/alloc.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nca/mlp.hpp"

namespace nca {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

const char* to_string(Backend b) {
  switch (b) {
    case Backend::LCA: return "LCA";
    case Backend::NLP: return "NLP";
    case Backend::NN: return "NN";
  }
  return "?";
}

Backend parse_backend(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "lca") return Backend::LCA;
  if (s == "nlp") return Backend::NLP;
  if (s == "nn") return Backend::NN;
  throw std::invalid_argument("unknown allocation backend '" + name + "'");
}

GeneralizedInput compute_mu_des(const Vec3& nu, const Vec3& xdot0_r, double theta0,
                                const ControlInput& u0, const VehicleParams& p) {
  return nu - xdot0_r + reduced_g(theta0, u0, p);
}

std::pair<ControlInput, ControlInput> effective_bounds(const AllocationRequest& req) {
  ControlInput lb = req.bounds.lower;
  ControlInput ub = req.bounds.upper;
  if (req.bounds.rate_max) {
    const ControlInput window = *req.bounds.rate_max * req.dt;
    lb = lb.cwiseMax(req.u0 - window);
    ub = ub.cwiseMin(req.u0 + window);
  }
  return {lb, ub};
}

Vec3 channel_scale(const VehicleParams& p) {
  return {p.gravity, p.gravity, p.arm * p.mass * p.gravity / p.inertia_y};
}

double allocation_objective(const ControlInput& u, const InputBounds& bounds) {
  return u.cwiseQuotient(bounds.scale()).squaredNorm();
}

nlp::Problem make_nca_problem(double theta0, const GeneralizedInput& mu_des, const ControlInput& lb,
                              const ControlInput& ub, const InputBounds& bounds, const VehicleParams& p,
                              double eq_tolerance) {
  nlp::Problem prob;
  prob.weight = nlp::Matrix::Identity(kNumInputs, kNumInputs);
  prob.scale = bounds.scale();
  prob.lb = lb;
  prob.ub = ub;
  prob.eq_tolerance = eq_tolerance;
  prob.residual_scale = channel_scale(p);
  prob.residual = [theta0, mu_des, p](const nlp::Vector& u) {
    const ControlInput uu = u;
    return nlp::Residual{reduced_g(theta0, uu, p) - mu_des, reduced_g_jacobian(theta0, uu, p)};
  };
  prob.curvature = [theta0, p](const nlp::Vector& u, const nlp::Vector& lambda) -> nlp::Matrix {
    return reduced_g_weighted_hessian(theta0, ControlInput(u), Vec3(lambda), p);
  };
  return prob;
}

AllocationResult allocate_lca(const AllocationRequest& req, const VehicleParams& p,
                              const AllocatorOptions& opts, qp::Solver& solver,
                              const std::optional<qp::Vector>& warm) {
  const auto [lb, ub] = effective_bounds(req);
  const ControlInput scale = req.bounds.scale();
  const Mat35 b0 = reduced_g_jacobian(req.theta0, req.u0, p);
  const GeneralizedInput g0 = reduced_g(req.theta0, req.u0, p);
  const ControlInput z0 = req.u0.cwiseQuotient(scale);

  // Increment in normalized units dz = du ./ scale; cost (z0 + dz)'(z0 + dz).
  qp::Problem prob;
  prob.H = 2.0 * qp::Matrix::Identity(kNumInputs, kNumInputs);
  prob.c = 2.0 * z0;
  prob.A_eq = b0 * scale.asDiagonal();
  prob.b_eq = req.mu_des - g0;
  prob.lb = (lb - req.u0).cwiseQuotient(scale);
  prob.ub = (ub - req.u0).cwiseQuotient(scale);

  const auto t0 = Clock::now();
  const qp::Solution sol = solver.solve(prob, warm);
  const double elapsed = seconds_since(t0);

  if (sol.status != qp::Status::Optimal) {
    AllocationResult r = relax(req, Backend::LCA, p, opts, req.u0);
    r.solve_time += elapsed;
    return r;
  }
  AllocationResult r;
  r.backend = Backend::LCA;
  const ControlInput du = ControlInput(sol.z).cwiseProduct(scale);
  r.u = (req.u0 + du).cwiseMax(lb).cwiseMin(ub);
  r.solve_time = elapsed;
  r.solver_status = qp::to_string(sol.status);
  r.linearization_residual = reduced_g(req.theta0, r.u, p) - g0 - b0 * (r.u - req.u0);
  return r;
}

AllocationResult allocate_nca_nlp(const AllocationRequest& req, const ControlInput& warm,
                                  const VehicleParams& p, const AllocatorOptions& opts,
                                  nlp::Solver& solver) {
  const auto [lb, ub] = effective_bounds(req);
  const nlp::Problem prob =
      make_nca_problem(req.theta0, req.mu_des, lb, ub, req.bounds, p, opts.eq_tolerance);
  const nlp::Solution sol = solver.solve(prob, warm);
  if (sol.status != nlp::Status::Converged) {
    AllocationResult r = relax(req, Backend::NLP, p, opts, sol.u_star);
    r.solve_time += sol.solve_time;
    return r;
  }
  AllocationResult r;
  r.backend = Backend::NLP;
  r.u = ControlInput(sol.u_star).cwiseMax(lb).cwiseMin(ub);
  r.solve_time = sol.solve_time;
  r.solver_status = nlp::to_string(sol.status);
  return r;
}

AllocationResult allocate_nn(const AllocationRequest& req, const mlp::Model& model,
                             const VehicleParams& p) {
  const auto [lb, ub] = effective_bounds(req);
  Eigen::VectorXd features(4);
  features << req.theta0, req.mu_des;
  const auto t0 = Clock::now();
  const Eigen::VectorXd raw = model.forward(features);
  const double elapsed = seconds_since(t0);

  AllocationResult r;
  r.backend = Backend::NN;
  ControlInput u = ControlInput::Zero();
  if (raw.size() == kNumInputs && raw.allFinite()) u = raw;
  r.u = u.cwiseMax(lb).cwiseMin(ub);
  r.slack = reduced_g(req.theta0, r.u, p) - req.mu_des;
  r.solve_time = elapsed;
  r.solver_status = "Inference";
  return r;
}

AllocationResult relax(const AllocationRequest& req, Backend backend, const VehicleParams& p,
                       const AllocatorOptions& opts, const ControlInput& warm) {
  const auto [lb, ub] = effective_bounds(req);
  const ControlInput scale = req.bounds.scale();
  const Vec3 sigma = channel_scale(p);
  const Vec3 slack_cost = opts.relax.penalty * opts.relax.channel_weight;  // per normalized unit
  AllocationResult r;
  r.backend = backend;
  r.relaxed = true;

  if (backend == Backend::LCA) {
    const Mat35 b0 = reduced_g_jacobian(req.theta0, req.u0, p);
    const GeneralizedInput g0 = reduced_g(req.theta0, req.u0, p);
    const ControlInput z0 = req.u0.cwiseQuotient(scale);
    const Vec3 demand = req.mu_des - g0;
    // Variables [dz (5), t+ (3), t- (3)] with t in units of sigma:
    // B0 S dz + diag(sigma)(t+ - t-) = demand.
    constexpr int n = kNumInputs + 2 * kNumChannels;
    qp::Problem prob;
    prob.H = qp::Matrix::Zero(n, n);
    prob.H.topLeftCorner(kNumInputs, kNumInputs) = 2.0 * qp::Matrix::Identity(kNumInputs, kNumInputs);
    prob.c.resize(n);
    prob.c << 2.0 * z0, slack_cost, slack_cost;
    prob.A_eq.resize(kNumChannels, n);
    prob.A_eq << b0 * scale.asDiagonal(), qp::Matrix(sigma.asDiagonal()), -qp::Matrix(sigma.asDiagonal());
    prob.b_eq = demand;
    prob.lb.resize(n);
    prob.ub.resize(n);
    prob.lb << (lb - req.u0).cwiseQuotient(scale), qp::Vector::Zero(2 * kNumChannels);
    prob.ub << (ub - req.u0).cwiseQuotient(scale), qp::Vector::Constant(2 * kNumChannels, kInf);
    qp::Vector start = qp::Vector::Zero(n);
    start.segment<3>(5) = demand.cwiseQuotient(sigma).cwiseMax(0.0);
    start.segment<3>(8) = (-demand).cwiseQuotient(sigma).cwiseMax(0.0);

    qp::Solver solver;
    const auto t0 = Clock::now();
    const qp::Solution sol = solver.solve(prob, start);
    r.solve_time = seconds_since(t0);
    r.solver_status = std::string("Relaxed") + qp::to_string(sol.status);
    if (sol.status != qp::Status::Optimal) {
      r.u = req.u0.cwiseMax(lb).cwiseMin(ub);
      r.slack = -demand;
      return r;
    }
    const ControlInput du = ControlInput(sol.z.head<kNumInputs>()).cwiseProduct(scale);
    r.u = (req.u0 + du).cwiseMax(lb).cwiseMin(ub);
    r.slack = b0 * (r.u - req.u0) - demand;
    r.linearization_residual = reduced_g(req.theta0, r.u, p) - g0 - b0 * (r.u - req.u0);
    return r;
  }

  // Nonlinear relaxation over [u (5), t+ (3), t- (3)]:
  // g_r(theta0, u) + t+ - t- = mu_des, penalty on t in units of sigma.
  constexpr int n = kNumInputs + 2 * kNumChannels;
  nlp::Problem prob;
  prob.weight = nlp::Matrix::Zero(n, n);
  prob.weight.topLeftCorner(kNumInputs, kNumInputs).setIdentity();
  prob.linear.resize(n);
  prob.linear << nlp::Vector::Zero(kNumInputs), slack_cost, slack_cost;
  prob.scale.resize(n);
  prob.scale << scale, sigma, sigma;
  prob.lb.resize(n);
  prob.ub.resize(n);
  prob.lb << lb, nlp::Vector::Zero(2 * kNumChannels);
  prob.ub << ub, nlp::Vector::Constant(2 * kNumChannels, kInf);
  prob.eq_tolerance = opts.eq_tolerance;
  prob.residual_scale = sigma;
  const double theta0 = req.theta0;
  const GeneralizedInput mu = req.mu_des;
  prob.residual = [theta0, mu, p](const nlp::Vector& v) {
    const ControlInput u = v.head<kNumInputs>();
    nlp::Residual res;
    res.value = reduced_g(theta0, u, p) + v.segment<3>(5) - v.segment<3>(8) - mu;
    res.jacobian.resize(kNumChannels, n);
    res.jacobian << reduced_g_jacobian(theta0, u, p), nlp::Matrix::Identity(3, 3), -nlp::Matrix::Identity(3, 3);
    return res;
  };
  prob.curvature = [theta0, p](const nlp::Vector& v, const nlp::Vector& lambda) {
    nlp::Matrix h = nlp::Matrix::Zero(n, n);
    h.topLeftCorner(kNumInputs, kNumInputs) =
        reduced_g_weighted_hessian(theta0, ControlInput(v.head<kNumInputs>()), Vec3(lambda), p);
    return h;
  };

  const ControlInput u_start = warm.cwiseMax(lb).cwiseMin(ub);
  const Vec3 gap = mu - reduced_g(theta0, u_start, p);
  nlp::Vector start(n);
  start << u_start, gap.cwiseMax(0.0), (-gap).cwiseMax(0.0);

  nlp::Solver solver;
  const nlp::Solution sol = solver.solve(prob, start);
  r.solve_time = sol.solve_time;
  r.solver_status = std::string("Relaxed") + nlp::to_string(sol.status);
  r.u = ControlInput(sol.u_star.head<kNumInputs>()).cwiseMax(lb).cwiseMin(ub);
  r.slack = reduced_g(theta0, r.u, p) - mu;
  return r;
}

AllocationResult LcaAllocator::allocate(const AllocationRequest& req) {
  return allocate_lca(req, params_, opts_, solver_);
}

AllocationResult NlpAllocator::allocate(const AllocationRequest& req) {
  const ControlInput warm = warm_.value_or(req.u0);
  AllocationResult r = allocate_nca_nlp(req, warm, params_, opts_, solver_);
  warm_ = r.u;
  return r;
}

AllocationResult NnAllocator::allocate(const AllocationRequest& req) {
  if (!model_) throw std::logic_error("NN allocator has no model");
  return allocate_nn(req, *model_, params_);
}

std::unique_ptr<Allocator> make_allocator(Backend backend, const VehicleParams& p,
                                          const AllocatorOptions& opts,
                                          std::shared_ptr<const mlp::Model> model) {
  switch (backend) {
    case Backend::LCA: return std::make_unique<LcaAllocator>(p, opts);
    case Backend::NLP: return std::make_unique<NlpAllocator>(p, opts);
    case Backend::NN:
      if (!model) throw std::invalid_argument("NN backend requires a trained model");
      return std::make_unique<NnAllocator>(p, std::move(model));
  }
  throw std::invalid_argument("unknown backend");
}

}  // namespace nca
