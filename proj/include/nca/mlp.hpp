#pragma once

// Fully connected regression network with tanh hidden layers and an identity
// output layer. Inputs and outputs are z-scored with the stored statistics;
// the loss is the mean squared error in normalized output coordinates.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nca/dataset.hpp"

namespace nca::mlp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct SchemaMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CorruptFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = -1;
  double initial_validation_loss = 0.0;
  double best_validation_loss = 0.0;
  double final_train_loss = 0.0;
  std::vector<double> train_curve;
  std::vector<double> validation_curve;
};

class Model {
 public:
  Model() = default;
  /// LeCun-uniform weights, zero biases, identity normalization.
  Model(std::vector<int> layer_sizes, std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(weights_.size()); }
  std::size_t num_parameters() const;

  /// Raw input -> raw output; pure function of the parameters.
  Vector forward(const Vector& x_raw) const;
  /// Normalized batch (one sample per column) -> normalized outputs.
  Matrix forward_normalized(const Matrix& xn) const;

  std::vector<Matrix>& weights() { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  const std::vector<Vector>& biases() const { return biases_; }

  NormStats& norm() { return norm_; }
  const NormStats& norm() const { return norm_; }
  TrainingMeta& meta() { return meta_; }
  const TrainingMeta& meta() const { return meta_; }

  Vector flatten() const;
  void unflatten(const Vector& params);

  Vector normalize_input(const Vector& x) const;
  Vector denormalize_output(const Vector& y) const;
  Vector normalize_output(const Vector& y) const;

  /// Throws SchemaMismatch when shapes do not chain or stds are not positive.
  void validate() const;

 private:
  std::vector<int> sizes_;
  std::vector<Matrix> weights_;  // out x in
  std::vector<Vector> biases_;
  NormStats norm_;
  TrainingMeta meta_;
};

struct Gradient {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_biases;

  Vector flatten() const;
};

struct LossGradient {
  double loss = 0.0;
  Gradient grad;
};

/// Loss and gradient on a normalized batch (samples as columns). Serial
/// reference path.
LossGradient loss_and_gradient_normalized(const Model& model, const Matrix& xn, const Matrix& yn);

/// Same quantity accumulated over fixed 64-sample chunks in parallel, reduced
/// in chunk order; the result does not depend on the thread count.
LossGradient loss_and_gradient_parallel(const Model& model, const Matrix& xn, const Matrix& yn);

/// Raw batch, one sample per row (the Dataset layout).
LossGradient loss_and_gradient(const Model& model, const Matrix& x_rows, const Matrix& y_rows);

struct TrainConfig {
  std::vector<int> hidden_layers{128, 128, 128};
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 200;
  double validation_fraction = 0.1;
  int early_stop_patience = 20;
  std::uint64_t rng_seed = 1;
  bool parallel_gradient = true;

  void validate() const;
};

/// Best-validation-loss model over the epochs. Throws NonFiniteLoss if the
/// loss diverges, std::invalid_argument on N < 100 or a bad config.
using EpochCallback = std::function<void(int epoch, double train_loss, double validation_loss)>;
Model train(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

std::string to_json_string(const Model& model);
Model from_json_string(const std::string& text);

std::string train_config_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; the result is validated.
TrainConfig train_config_from_json(const std::string& text);

}  // namespace nca::mlp
