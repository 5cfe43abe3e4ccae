#include "nca/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace nca {

NormStats NormStats::from(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  auto column_stats = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& std) {
    const double n = static_cast<double>(m.rows());
    mean = m.colwise().mean().transpose();
    std.resize(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double var = n > 0 ? (m.col(j).array() - mean[j]).square().sum() / n : 0.0;
      std[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
  };
  NormStats s;
  column_stats(x, s.input_mean, s.input_std);
  column_stats(y, s.output_mean, s.output_std);
  return s;
}

namespace mlp {
namespace {

constexpr const char* kSchema = "nca-mlp/1";
constexpr Eigen::Index kChunk = 64;

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void shuffle(std::vector<Eigen::Index>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

// Forward pass keeping every layer's activation; acts[0] is the input.
std::vector<Matrix> forward_all(const Model& model, const Matrix& xn) {
  std::vector<Matrix> acts;
  acts.reserve(model.num_layers() + 1);
  acts.push_back(xn);
  for (int l = 0; l < model.num_layers(); ++l) {
    Matrix z = model.weights()[l] * acts.back();
    z.colwise() += model.biases()[l];
    if (l + 1 < model.num_layers()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Sum of squared errors and its gradient scaled by `scale`.
void accumulate(const Model& model, const Matrix& xn, const Matrix& yn, double scale, double& sse,
                Gradient& g) {
  const std::vector<Matrix> acts = forward_all(model, xn);
  Matrix delta = acts.back() - yn;
  sse = delta.squaredNorm();
  delta *= 2.0 * scale;
  for (int l = model.num_layers() - 1; l >= 0; --l) {
    g.d_weights[l] = delta * acts[l].transpose();
    g.d_biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (model.weights()[l].transpose() * delta).cwiseProduct(
          (1.0 - acts[l].array().square()).matrix());
    }
  }
}

Gradient zero_gradient(const Model& model) {
  Gradient g;
  for (int l = 0; l < model.num_layers(); ++l) {
    g.d_weights.push_back(Matrix::Zero(model.weights()[l].rows(), model.weights()[l].cols()));
    g.d_biases.push_back(Vector::Zero(model.biases()[l].size()));
  }
  return g;
}

Matrix gather_columns(const Matrix& m, const std::vector<Eigen::Index>& idx, std::size_t begin,
                      std::size_t end) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(idx[k]);
  return out;
}

double mse(const Model& model, const Matrix& xn, const Matrix& yn) {
  if (xn.cols() == 0) return 0.0;
  double sse = 0.0;
  for (Eigen::Index c = 0; c < xn.cols(); c += 4096) {
    const Eigen::Index w = std::min<Eigen::Index>(4096, xn.cols() - c);
    sse += (model.forward_normalized(xn.middleCols(c, w)) - yn.middleCols(c, w)).squaredNorm();
  }
  return sse / static_cast<double>(xn.cols() * yn.rows());
}

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const nlohmann::json& j) {
  const std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Model::Model(std::vector<int> layer_sizes, std::uint64_t seed) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("mlp: need at least input and output layers");
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const double limit = std::sqrt(3.0 / in);
    Matrix w(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) w(r, c) = limit * (2.0 * unit_uniform(rng) - 1.0);
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Vector::Zero(out));
  }
  norm_.input_mean = Vector::Zero(sizes_.front());
  norm_.input_std = Vector::Ones(sizes_.front());
  norm_.output_mean = Vector::Zero(sizes_.back());
  norm_.output_std = Vector::Ones(sizes_.back());
  meta_.seed = seed;
}

std::size_t Model::num_parameters() const {
  std::size_t n = 0;
  for (int l = 0; l < num_layers(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Vector Model::normalize_input(const Vector& x) const {
  return (x - norm_.input_mean).cwiseQuotient(norm_.input_std);
}

Vector Model::normalize_output(const Vector& y) const {
  return (y - norm_.output_mean).cwiseQuotient(norm_.output_std);
}

Vector Model::denormalize_output(const Vector& y) const {
  return y.cwiseProduct(norm_.output_std) + norm_.output_mean;
}

Matrix Model::forward_normalized(const Matrix& xn) const {
  Matrix a = xn;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = weights_[l] * a;
    z.colwise() += biases_[l];
    a = l + 1 < num_layers() ? Matrix(z.array().tanh().matrix()) : std::move(z);
  }
  return a;
}

Vector Model::forward(const Vector& x_raw) const {
  Vector a = normalize_input(x_raw);
  for (int l = 0; l < num_layers(); ++l) {
    Vector z = weights_[l] * a + biases_[l];
    a = l + 1 < num_layers() ? Vector(z.array().tanh().matrix()) : std::move(z);
  }
  return denormalize_output(a);
}

Vector Model::flatten() const {
  Vector out(static_cast<Eigen::Index>(num_parameters()));
  Eigen::Index k = 0;
  for (int l = 0; l < num_layers(); ++l) {
    out.segment(k, weights_[l].size()) = Eigen::Map<const Vector>(weights_[l].data(), weights_[l].size());
    k += weights_[l].size();
    out.segment(k, biases_[l].size()) = biases_[l];
    k += biases_[l].size();
  }
  return out;
}

void Model::unflatten(const Vector& params) {
  if (params.size() != static_cast<Eigen::Index>(num_parameters())) {
    throw std::invalid_argument("mlp: parameter vector size mismatch");
  }
  Eigen::Index k = 0;
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::Map<Vector>(weights_[l].data(), weights_[l].size()) = params.segment(k, weights_[l].size());
    k += weights_[l].size();
    biases_[l] = params.segment(k, biases_[l].size());
    k += biases_[l].size();
  }
}

void Model::validate() const {
  if (sizes_.size() < 2 || weights_.size() + 1 != sizes_.size() || biases_.size() != weights_.size()) {
    throw SchemaMismatch("mlp: layer count does not match layer sizes");
  }
  for (int l = 0; l < num_layers(); ++l) {
    if (weights_[l].rows() != sizes_[l + 1] || weights_[l].cols() != sizes_[l] ||
        biases_[l].size() != sizes_[l + 1]) {
      throw SchemaMismatch("mlp: layer " + std::to_string(l) + " shape does not chain");
    }
  }
  if (norm_.input_mean.size() != sizes_.front() || norm_.input_std.size() != sizes_.front() ||
      norm_.output_mean.size() != sizes_.back() || norm_.output_std.size() != sizes_.back()) {
    throw SchemaMismatch("mlp: normalization statistics have the wrong size");
  }
  if ((norm_.input_std.array() <= 0.0).any() || (norm_.output_std.array() <= 0.0).any()) {
    throw SchemaMismatch("mlp: normalization standard deviations must be positive");
  }
}

Vector Gradient::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < d_weights.size(); ++l) n += d_weights[l].size() + d_biases[l].size();
  Vector out(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < d_weights.size(); ++l) {
    out.segment(k, d_weights[l].size()) = Eigen::Map<const Vector>(d_weights[l].data(), d_weights[l].size());
    k += d_weights[l].size();
    out.segment(k, d_biases[l].size()) = d_biases[l];
    k += d_biases[l].size();
  }
  return out;
}

LossGradient loss_and_gradient_normalized(const Model& model, const Matrix& xn, const Matrix& yn) {
  LossGradient out;
  out.grad = zero_gradient(model);
  if (xn.cols() == 0) throw std::invalid_argument("mlp: empty batch");
  const double denom = static_cast<double>(xn.cols() * yn.rows());
  double sse = 0.0;
  accumulate(model, xn, yn, 1.0 / denom, sse, out.grad);
  out.loss = sse / denom;
  return out;
}

LossGradient loss_and_gradient_parallel(const Model& model, const Matrix& xn, const Matrix& yn) {
  if (xn.cols() == 0) throw std::invalid_argument("mlp: empty batch");
  const Eigen::Index n = xn.cols();
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  const double denom = static_cast<double>(n * yn.rows());
  std::vector<Gradient> partial(static_cast<std::size_t>(chunks), zero_gradient(model));
  std::vector<double> sse(static_cast<std::size_t>(chunks), 0.0);

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * kChunk;
    const Eigen::Index width = std::min(kChunk, n - begin);
    accumulate(model, xn.middleCols(begin, width), yn.middleCols(begin, width), 1.0 / denom,
               sse[static_cast<std::size_t>(c)], partial[static_cast<std::size_t>(c)]);
  }

  LossGradient out;
  out.grad = std::move(partial[0]);
  double total = sse[0];
  for (std::size_t c = 1; c < partial.size(); ++c) {
    for (int l = 0; l < model.num_layers(); ++l) {
      out.grad.d_weights[l] += partial[c].d_weights[l];
      out.grad.d_biases[l] += partial[c].d_biases[l];
    }
    total += sse[c];
  }
  out.loss = total / denom;
  return out;
}

LossGradient loss_and_gradient(const Model& model, const Matrix& x_rows, const Matrix& y_rows) {
  Matrix xn(x_rows.cols(), x_rows.rows());
  Matrix yn(y_rows.cols(), y_rows.rows());
  for (Eigen::Index i = 0; i < x_rows.rows(); ++i) {
    xn.col(i) = model.normalize_input(x_rows.row(i).transpose());
    yn.col(i) = model.normalize_output(y_rows.row(i).transpose());
  }
  return loss_and_gradient_normalized(model, xn, yn);
}

void TrainConfig::validate() const {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("train: validation_fraction must lie in (0, 1)");
  }
  if (batch_size < 1 || epochs < 1 || early_stop_patience < 1 || !(learning_rate > 0.0)) {
    throw std::invalid_argument("train: batch_size, epochs, patience and learning_rate must be positive");
  }
  for (int h : hidden_layers) {
    if (h < 1) throw std::invalid_argument("train: hidden layer sizes must be positive");
  }
}

Model train(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const Eigen::Index n = data.size();
  if (n < 100) throw std::invalid_argument("train: dataset has " + std::to_string(n) + " rows, need >= 100");

  std::vector<int> sizes{static_cast<int>(data.X.cols())};
  sizes.insert(sizes.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
  sizes.push_back(static_cast<int>(data.Y.cols()));
  Model model(sizes, cfg.rng_seed);
  model.norm() = data.norm.empty() ? NormStats::from(data.X, data.Y) : data.norm;
  model.validate();

  Matrix xn(data.X.cols(), n), yn(data.Y.cols(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    xn.col(i) = model.normalize_input(data.X.row(i).transpose());
    yn.col(i) = model.normalize_output(data.Y.row(i).transpose());
  }

  std::mt19937_64 rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  shuffle(order, rng);
  const auto n_val = static_cast<std::size_t>(
      std::clamp<Eigen::Index>(std::llround(cfg.validation_fraction * n), 1, n - 1));
  const Matrix x_val = gather_columns(xn, order, 0, n_val);
  const Matrix y_val = gather_columns(yn, order, 0, n_val);
  std::vector<Eigen::Index> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  Vector params = model.flatten();
  Vector m1 = Vector::Zero(params.size());
  Vector m2 = Vector::Zero(params.size());
  long step = 0;

  TrainingMeta meta;
  meta.seed = cfg.rng_seed;
  meta.initial_validation_loss = mse(model, x_val, y_val);
  meta.best_validation_loss = meta.initial_validation_loss;
  Vector best_params = params;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(train_idx, rng);
    double epoch_sse = 0.0;
    for (std::size_t b = 0; b < train_idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(train_idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const Matrix xb = gather_columns(xn, train_idx, b, e);
      const Matrix yb = gather_columns(yn, train_idx, b, e);
      const LossGradient lg = cfg.parallel_gradient ? loss_and_gradient_parallel(model, xb, yb)
                                                    : loss_and_gradient_normalized(model, xb, yb);
      if (!std::isfinite(lg.loss)) {
        throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_sse += lg.loss * static_cast<double>(e - b);
      const Vector g = lg.grad.flatten();
      ++step;
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      params.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon);
      model.unflatten(params);
    }
    const double train_loss = epoch_sse / static_cast<double>(train_idx.size());
    const double val_loss = mse(model, x_val, y_val);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch));
    }
    meta.train_curve.push_back(train_loss);
    meta.validation_curve.push_back(val_loss);
    meta.epochs_run = epoch + 1;
    meta.final_train_loss = train_loss;
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
    if (val_loss < meta.best_validation_loss) {
      meta.best_validation_loss = val_loss;
      meta.best_epoch = epoch;
      best_params = params;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  model.unflatten(best_params);
  model.meta() = meta;
  return model;
}

std::string to_json_string(const Model& model) {
  nlohmann::json j;
  j["schema"] = kSchema;
  j["layer_sizes"] = model.layer_sizes();
  j["hidden_activation"] = "tanh";
  j["output_activation"] = "identity";
  j["norm_stats"] = {{"input_mean", vec_json(model.norm().input_mean)},
                     {"input_std", vec_json(model.norm().input_std)},
                     {"output_mean", vec_json(model.norm().output_mean)},
                     {"output_std", vec_json(model.norm().output_std)}};
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < model.num_layers(); ++l) {
    // Row-major weight order.
    const Matrix& w = model.weights()[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    layers.push_back({{"weights", flat}, {"bias", vec_json(model.biases()[l])}});
  }
  j["layers"] = layers;
  const TrainingMeta& m = model.meta();
  j["training_meta"] = {{"seed", m.seed},
                        {"epochs_run", m.epochs_run},
                        {"best_epoch", m.best_epoch},
                        {"initial_validation_loss", m.initial_validation_loss},
                        {"best_validation_loss", m.best_validation_loss},
                        {"final_train_loss", m.final_train_loss},
                        {"train_curve", m.train_curve},
                        {"validation_curve", m.validation_curve}};
  return j.dump() + "\n";
}

Model from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("mlp: cannot parse model file: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema")) throw CorruptFile("mlp: model file has no schema tag");
  if (j["schema"] != kSchema) {
    throw SchemaMismatch("mlp: expected schema " + std::string(kSchema) + ", found " + j["schema"].dump());
  }
  Model model;
  try {
    const std::vector<int> sizes = j.at("layer_sizes").get<std::vector<int>>();
    if (j.at("hidden_activation") != "tanh" || j.at("output_activation") != "identity") {
      throw SchemaMismatch("mlp: unsupported activation");
    }
    if (sizes.size() < 2) throw SchemaMismatch("mlp: need at least two layer sizes");
    model = Model(sizes, 0);
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() + 1 != sizes.size()) {
      throw SchemaMismatch("mlp: layer list does not match layer sizes");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::vector<double> flat = layers[l].at("weights").get<std::vector<double>>();
      Matrix& w = model.weights()[l];
      if (flat.size() != static_cast<std::size_t>(w.size())) {
        throw SchemaMismatch("mlp: layer " + std::to_string(l) + " weight count mismatch");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[k++];
      }
      model.biases()[l] = json_vec(layers[l].at("bias"));
    }
    const auto& ns = j.at("norm_stats");
    model.norm().input_mean = json_vec(ns.at("input_mean"));
    model.norm().input_std = json_vec(ns.at("input_std"));
    model.norm().output_mean = json_vec(ns.at("output_mean"));
    model.norm().output_std = json_vec(ns.at("output_std"));
    if (j.contains("training_meta")) {
      const auto& m = j["training_meta"];
      TrainingMeta& meta = model.meta();
      meta.seed = m.value("seed", std::uint64_t{0});
      meta.epochs_run = m.value("epochs_run", 0);
      meta.best_epoch = m.value("best_epoch", -1);
      meta.initial_validation_loss = m.value("initial_validation_loss", 0.0);
      meta.best_validation_loss = m.value("best_validation_loss", 0.0);
      meta.final_train_loss = m.value("final_train_loss", 0.0);
      meta.train_curve = m.value("train_curve", std::vector<double>{});
      meta.validation_curve = m.value("validation_curve", std::vector<double>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("mlp: malformed model file: ") + e.what());
  }
  model.validate();
  return model;
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("mlp: cannot open " + path + " for writing");
  out << to_json_string(model);
  if (!out) throw std::runtime_error("mlp: write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("mlp: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

std::string train_config_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["hidden_layers"] = cfg.hidden_layers;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["epochs"] = cfg.epochs;
  j["validation_fraction"] = cfg.validation_fraction;
  j["early_stop_patience"] = cfg.early_stop_patience;
  j["rng_seed"] = cfg.rng_seed;
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  const nlohmann::json j = nlohmann::json::parse(text);
  cfg.hidden_layers = j.value("hidden_layers", cfg.hidden_layers);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
  cfg.early_stop_patience = j.value("early_stop_patience", cfg.early_stop_patience);
  cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
  cfg.validate();
  return cfg;
}

}  // namespace mlp
}  // namespace nca
