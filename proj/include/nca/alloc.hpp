#pragma once

// Per-sample control allocation for the three backends:
//   LCA  linearized incremental allocation, a QP over the increment
//   NLP  nonlinear allocation against g_r(theta0, u), solved online by SQP
//   NN   regression network trained on offline NLP solutions
// plus the prioritized slack relaxation used when LCA or NLP fail.

#include <memory>
#include <optional>
#include <string>

#include "nca/nlp.hpp"
#include "nca/qp.hpp"
#include "nca/vehicle.hpp"

namespace nca {

namespace mlp {
class Model;
}

enum class Backend { LCA, NLP, NN };

const char* to_string(Backend b);
/// Accepts "lca", "nlp", "nn" (any case); throws std::invalid_argument otherwise.
Backend parse_backend(const std::string& name);

struct AllocationRequest {
  double theta0 = 0.0;          // x_g at the sample instant
  GeneralizedInput mu_des = GeneralizedInput::Zero();
  ControlInput u0 = ControlInput::Zero();  // input held over the previous sample
  InputBounds bounds;
  double dt = 0.01;
};

struct AllocationResult {
  ControlInput u = ControlInput::Zero();
  // Achieved minus desired generalized input. For LCA this is measured on the
  // linearized equality, for NLP and NN on g_r itself. Zero unless relaxed,
  // except for NN where it always carries the measured residual.
  Vec3 slack = Vec3::Zero();
  Backend backend = Backend::LCA;
  bool relaxed = false;
  double solve_time = 0.0;  // seconds, solver call only
  std::string solver_status;
  // g_r(theta0, u) - g_r(theta0, u0) - B0 (u - u0); LCA only, zero otherwise.
  Vec3 linearization_residual = Vec3::Zero();
};

struct RelaxWeights {
  Vec3 channel_weight{1.0, 1.0, 100.0};  // [a_x, a_z, theta_ddot]
  double penalty = 1e4;
};

struct AllocatorOptions {
  RelaxWeights relax;
  double eq_tolerance = 1e-6;
};

/// mu_des = nu - xdot0 + g_r(theta0, u0).
GeneralizedInput compute_mu_des(const Vec3& nu, const Vec3& xdot0_r, double theta0,
                                const ControlInput& u0, const VehicleParams& p);

/// Box bounds intersected with the rate window u0 +- rate_max * dt.
std::pair<ControlInput, ControlInput> effective_bounds(const AllocationRequest& req);

/// Natural magnitude of each generalized-input channel: [g, g, L m g / I_y].
Vec3 channel_scale(const VehicleParams& p);

/// J(u) = u' Q u with Q = diag(1 / scale^2), scale from InputBounds::scale().
double allocation_objective(const ControlInput& u, const InputBounds& bounds);

/// The nonlinear allocation problem min J(u) s.t. g_r(theta0, u) = mu_des, lb <= u <= ub.
nlp::Problem make_nca_problem(double theta0, const GeneralizedInput& mu_des, const ControlInput& lb,
                              const ControlInput& ub, const InputBounds& bounds, const VehicleParams& p,
                              double eq_tolerance = 1e-6);

AllocationResult allocate_lca(const AllocationRequest& req, const VehicleParams& p,
                              const AllocatorOptions& opts, qp::Solver& solver,
                              const std::optional<qp::Vector>& warm = std::nullopt);

AllocationResult allocate_nca_nlp(const AllocationRequest& req, const ControlInput& warm,
                                  const VehicleParams& p, const AllocatorOptions& opts,
                                  nlp::Solver& solver);

AllocationResult allocate_nn(const AllocationRequest& req, const mlp::Model& model,
                             const VehicleParams& p);

/// Re-solves with the equality replaced by a slack penalized by
/// penalty * sum_j w_j |s_j| / channel_scale_j. LCA relaxes the linearized
/// equality (QP), NLP relaxes g_r itself (SQP).
AllocationResult relax(const AllocationRequest& req, Backend backend, const VehicleParams& p,
                       const AllocatorOptions& opts, const ControlInput& warm);

/// Stateful allocator bound to one control loop; keeps its warm start.
class Allocator {
 public:
  virtual ~Allocator() = default;
  virtual AllocationResult allocate(const AllocationRequest& req) = 0;
  virtual Backend backend() const = 0;
  virtual void reset() {}
};

class LcaAllocator final : public Allocator {
 public:
  LcaAllocator(VehicleParams p, AllocatorOptions opts = {}) : params_(p), opts_(opts) {}
  AllocationResult allocate(const AllocationRequest& req) override;
  Backend backend() const override { return Backend::LCA; }

 private:
  VehicleParams params_;
  AllocatorOptions opts_;
  qp::Solver solver_;
};

class NlpAllocator final : public Allocator {
 public:
  NlpAllocator(VehicleParams p, AllocatorOptions opts = {}) : params_(p), opts_(opts) {}
  AllocationResult allocate(const AllocationRequest& req) override;
  Backend backend() const override { return Backend::NLP; }
  void reset() override { warm_.reset(); }

 private:
  VehicleParams params_;
  AllocatorOptions opts_;
  nlp::Solver solver_;
  std::optional<ControlInput> warm_;
};

class NnAllocator final : public Allocator {
 public:
  NnAllocator(VehicleParams p, std::shared_ptr<const mlp::Model> model)
      : params_(p), model_(std::move(model)) {}
  AllocationResult allocate(const AllocationRequest& req) override;
  Backend backend() const override { return Backend::NN; }

 private:
  VehicleParams params_;
  std::shared_ptr<const mlp::Model> model_;
};

std::unique_ptr<Allocator> make_allocator(Backend backend, const VehicleParams& p,
                                          const AllocatorOptions& opts,
                                          std::shared_ptr<const mlp::Model> model = nullptr);

}  // namespace nca
