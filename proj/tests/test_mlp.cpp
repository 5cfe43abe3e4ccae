#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "nca/mlp.hpp"
#include "oracles.hpp"

namespace nca {
namespace {

using mlp::Matrix;
using mlp::Model;
using mlp::Vector;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nca_mlp_" + name);
}

TEST(Mlp, ZeroNetworkOutputsMeans) {
  Model m({4, 128, 128, 128, 5}, 1);
  m.unflatten(Vector::Zero(static_cast<Eigen::Index>(m.num_parameters())));
  m.norm().output_mean = Vector::LinSpaced(5, 1.0, 5.0);
  m.norm().output_std = Vector::Constant(5, 3.0);
  EXPECT_EQ(m.forward(Vector::Constant(4, 0.7)), m.norm().output_mean);
}

TEST(Mlp, TinyHandBuiltNet) {
  Model m({1, 1, 1}, 0);
  m.weights()[0](0, 0) = 1.0;
  m.weights()[1](0, 0) = 1.0;
  EXPECT_EQ(m.forward(Vector::Zero(1))[0], 0.0);
  EXPECT_DOUBLE_EQ(m.forward(Vector::Constant(1, 0.5))[0], std::tanh(0.5));
}

TEST(Mlp, ParameterCountForPaperArchitecture) {
  const Model m({4, 128, 128, 128, 5}, 1);
  EXPECT_EQ(m.num_parameters(), 4u * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 5 + 5);
}

TEST(Mlp, LabelsEqualOutputsGiveZeroLoss) {
  std::mt19937_64 rng(2);
  const Model m({4, 10, 5}, 3);
  const Matrix x = random_matrix(4, 30, rng);
  const mlp::LossGradient lg = mlp::loss_and_gradient_normalized(m, x, m.forward_normalized(x));
  EXPECT_EQ(lg.loss, 0.0);
  EXPECT_EQ(lg.grad.flatten().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Model m({2, 3, 1}, 100 + trial);
    m.unflatten(random_matrix(m.num_parameters(), 1, rng));
    const Matrix x = random_matrix(2, 8, rng);
    const Matrix y = random_matrix(1, 8, rng);
    const Vector analytic = mlp::loss_and_gradient_normalized(m, x, y).grad.flatten();
    const Vector theta = m.flatten();
    auto loss = [&](const Eigen::VectorXd& t) {
      Model probe = m;
      probe.unflatten(t);
      return Eigen::VectorXd::Constant(1, mlp::loss_and_gradient_normalized(probe, x, y).loss);
    };
    const Eigen::MatrixXd fd = oracle::fd_jacobian(loss, theta, 1e-4);
    EXPECT_LE(oracle::max_relative_error(analytic.transpose(), fd), 1e-6) << "trial " << trial;
  }
}

TEST(Mlp, DuplicatedRowsLeaveLossAndGradient) {
  std::mt19937_64 rng(9);
  const Model m({4, 12, 5}, 5);
  const Matrix x = random_matrix(4, 20, rng);
  const Matrix y = random_matrix(5, 20, rng);
  Matrix x2(4, 40), y2(5, 40);
  x2 << x, x;
  y2 << y, y;
  const auto a = mlp::loss_and_gradient_normalized(m, x, y);
  const auto b = mlp::loss_and_gradient_normalized(m, x2, y2);
  EXPECT_NEAR(a.loss, b.loss, 1e-14 * a.loss);
  EXPECT_LE((a.grad.flatten() - b.grad.flatten()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Mlp, ParallelGradientMatchesSerial) {
  std::mt19937_64 rng(12);
  const Model m({4, 32, 32, 5}, 8);
  for (Eigen::Index n : {1, 63, 64, 65, 256, 1000}) {
    const Matrix x = random_matrix(4, n, rng);
    const Matrix y = random_matrix(5, n, rng);
    const auto serial = mlp::loss_and_gradient_normalized(m, x, y);
    const auto parallel = mlp::loss_and_gradient_parallel(m, x, y);
    EXPECT_NEAR(serial.loss, parallel.loss, 1e-13 * serial.loss) << n;
    EXPECT_LE((serial.grad.flatten() - parallel.grad.flatten()).cwiseAbs().maxCoeff(), 1e-13) << n;
    // Chunked reduction order is fixed, so repeated calls are bit-identical.
    EXPECT_EQ(parallel.grad.flatten(), mlp::loss_and_gradient_parallel(m, x, y).grad.flatten());
  }
}

TEST(Mlp, RawLossUsesNormalizedOutputs) {
  std::mt19937_64 rng(4);
  Model m({4, 6, 5}, 2);
  m.norm().output_mean = Vector::Constant(5, 10.0);
  m.norm().output_std = Vector::Constant(5, 4.0);
  const Matrix x_rows = random_matrix(7, 4, rng);
  Matrix y_rows(7, 5);
  for (Eigen::Index i = 0; i < 7; ++i) y_rows.row(i) = m.forward(x_rows.row(i).transpose()).transpose();
  EXPECT_LE(mlp::loss_and_gradient(m, x_rows, y_rows).loss, 1e-28);
  y_rows.array() += 4.0;
  EXPECT_NEAR(mlp::loss_and_gradient(m, x_rows, y_rows).loss, 1.0, 1e-12);
}

Dataset linear_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd a(5, 4);
  a << 1, 2, 0, -1, 0.5, 0, 1, 1, -2, 1, 0, 0.3, 0, 0, 1, 2, 1, 1, 1, 1;
  Dataset d;
  d.X.resize(n, 4);
  d.Y.resize(n, 5);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) d.X(i, j) = u(rng);
    d.Y.row(i) = (a * d.X.row(i).transpose()).transpose() + Eigen::RowVectorXd::LinSpaced(5, 0.0, 4.0);
  }
  d.residuals = Eigen::VectorXd::Zero(n);
  d.norm = NormStats::from(d.X, d.Y);
  return d;
}

TEST(Mlp, LearnsLinearMap) {
  const Dataset d = linear_dataset(20000, 1);
  mlp::TrainConfig cfg;
  cfg.hidden_layers = {32, 32};
  cfg.epochs = 50;
  cfg.batch_size = 64;
  const Model m = mlp::train(d, cfg);
  EXPECT_LE(std::sqrt(m.meta().best_validation_loss), 1e-2);
  EXPECT_LE(m.meta().best_validation_loss, m.meta().initial_validation_loss);
  EXPECT_LE(m.meta().epochs_run, 50);
  EXPECT_EQ(static_cast<int>(m.meta().validation_curve.size()), m.meta().epochs_run);
}

TEST(Mlp, TrainingIsReproducible) {
  const Dataset d = linear_dataset(600, 2);
  mlp::TrainConfig cfg;
  cfg.hidden_layers = {16, 16};
  cfg.epochs = 5;
  cfg.rng_seed = 77;
  const std::string a = mlp::to_json_string(mlp::train(d, cfg));
  const std::string b = mlp::to_json_string(mlp::train(d, cfg));
  EXPECT_EQ(a, b);
  cfg.parallel_gradient = false;
  const Model serial = mlp::train(d, cfg);
  EXPECT_EQ(serial.layer_sizes(), mlp::from_json_string(a).layer_sizes());
}

TEST(Mlp, TrainRejectsSmallDatasetsAndBadConfigs) {
  EXPECT_THROW(mlp::train(linear_dataset(99, 3), {}), std::invalid_argument);
  mlp::TrainConfig cfg;
  cfg.validation_fraction = 1.0;
  EXPECT_THROW(mlp::train(linear_dataset(200, 3), cfg), std::invalid_argument);
}

TEST(Mlp, DivergentTrainingAborts) {
  Dataset d = linear_dataset(300, 4);
  mlp::TrainConfig cfg;
  cfg.hidden_layers = {8};
  cfg.epochs = 3;
  d.Y(5, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(mlp::train(d, cfg), mlp::NonFiniteLoss);
}

TEST(Mlp, SaveLoadRoundTripIsExact) {
  std::mt19937_64 rng(6);
  Model m({4, 64, 5}, 21);
  m.norm() = NormStats::from(random_matrix(50, 4, rng), random_matrix(50, 5, rng));
  const auto path = temp_path("roundtrip.json");
  mlp::save_model(m, path.string());
  const Model back = mlp::load_model(path.string());
  EXPECT_EQ(back.flatten(), m.flatten());
  EXPECT_EQ(back.norm().input_std, m.norm().input_std);
  EXPECT_EQ(back.norm().output_mean, m.norm().output_mean);
  for (int k = 0; k < 100; ++k) {
    const Vector x = random_matrix(4, 1, rng);
    EXPECT_EQ(back.forward(x), m.forward(x));
  }
  std::filesystem::remove(path);
}

TEST(Mlp, TruncatedFileIsCorrupt) {
  const std::string text = mlp::to_json_string(Model({4, 8, 5}, 1));
  const auto path = temp_path("truncated.json");
  {
    std::ofstream out(path);
    out << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(mlp::load_model(path.string()), mlp::CorruptFile);
  std::filesystem::remove(path);
}

TEST(Mlp, SchemaTagAndShapesAreChecked) {
  std::string text = mlp::to_json_string(Model({4, 8, 5}, 1));
  std::string wrong_tag = text;
  wrong_tag.replace(wrong_tag.find("nca-mlp/1"), 9, "nca-mlp/9");
  EXPECT_THROW(mlp::from_json_string(wrong_tag), mlp::SchemaMismatch);
  std::string wrong_sizes = text;
  wrong_sizes.replace(wrong_sizes.find("[4,8,5]"), 7, "[4,9,5]");
  EXPECT_THROW(mlp::from_json_string(wrong_sizes), mlp::SchemaMismatch);
}

TEST(Mlp, NormalizationRoundTrip) {
  std::mt19937_64 rng(10);
  Model m({4, 4, 5}, 1);
  m.norm() = NormStats::from(random_matrix(30, 4, rng) * 50.0, random_matrix(30, 5, rng) * 7.0);
  for (int k = 0; k < 100; ++k) {
    const Vector y = random_matrix(5, 1, rng) * 20.0;
    EXPECT_LE((m.denormalize_output(m.normalize_output(y)) - y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, NormStatsReplaceZeroDeviation) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 4);
  x.col(1) = Eigen::VectorXd::LinSpaced(10, 0.0, 9.0);
  const NormStats s = NormStats::from(x, Eigen::MatrixXd::Zero(10, 5));
  EXPECT_EQ(s.input_std[0], 1.0);
  EXPECT_GT(s.input_std[1], 1.0);
  EXPECT_EQ(s.output_std, Eigen::VectorXd::Ones(5));
}

}  // namespace
}  // namespace nca
