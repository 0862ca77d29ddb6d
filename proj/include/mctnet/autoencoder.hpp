#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mctnet/error.hpp"
#include "mctnet/rng.hpp"

namespace mctnet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

// input_dim -> n_hidden -> n_features -> n_hidden -> input_dim
struct ArchitectureSpec {
  std::size_t input_dim = 0;
  std::size_t n_hidden = 0;
  std::size_t n_features = 0;

  void validate() const {
    if (!(input_dim > n_hidden && n_hidden > n_features && n_features >= 1))
      throw ParameterError("architecture requires input_dim > n_hidden > n_features >= 1");
  }
  std::string label() const { return std::to_string(n_hidden) + "x" + std::to_string(n_features); }
  bool operator==(const ArchitectureSpec&) const = default;
};

// Weights are stored fan_in x fan_out, so a batch X (rows = samples)
// maps to X * W + b.
struct DenseLayer {
  Matrix weights;
  RowVector bias;
};

inline constexpr std::size_t kLayerCount = 4;

// L1, L2, L3 use tanh; L4 is linear.
struct NetworkParams {
  ArchitectureSpec spec;
  std::array<DenseLayer, kLayerCount> layers;

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
  }
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 0.001;
  double l2_alpha = 0.005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-7;
  // Whether the L2 term also covers the linear output layer L4.
  bool regularize_output = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || !(learning_rate > 0.0) || !(l2_alpha >= 0.0))
      throw ParameterError("train config requires epochs >= 1, batch_size >= 1, learning_rate > 0, alpha >= 0");
  }
};

// Post-epoch losses. train_loss includes the L2 term, train_mse and
// val_mse are the reconstruction error alone.
struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> train_mse;
  std::vector<double> val_mse;
};

namespace detail {

inline std::array<std::pair<std::size_t, std::size_t>, kLayerCount> layer_shapes(const ArchitectureSpec& s) {
  return {{{s.input_dim, s.n_hidden}, {s.n_hidden, s.n_features}, {s.n_features, s.n_hidden}, {s.n_hidden, s.input_dim}}};
}

}  // namespace detail

inline NetworkParams zero_network(const ArchitectureSpec& spec) {
  spec.validate();
  NetworkParams p;
  p.spec = spec;
  const auto shapes = detail::layer_shapes(spec);
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    p.layers[l].weights = Matrix::Zero(static_cast<Eigen::Index>(shapes[l].first), static_cast<Eigen::Index>(shapes[l].second));
    p.layers[l].bias = RowVector::Zero(static_cast<Eigen::Index>(shapes[l].second));
  }
  return p;
}

// Uniform on +-sqrt(6 / (fan_in + fan_out)), zero biases. Draws are taken
// layer by layer in row-major order from SplitMix64(seed).
inline NetworkParams init_network(const ArchitectureSpec& spec, std::uint64_t seed) {
  NetworkParams p = zero_network(spec);
  SplitMix64 rng(seed);
  for (auto& layer : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weights.rows() + layer.weights.cols()));
    double* w = layer.weights.data();
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) w[i] = rng.uniform(-limit, limit);
  }
  return p;
}

// Activations of one batch; tanh'(z) is recovered as 1 - h^2.
struct ForwardCache {
  Matrix input;
  Matrix hidden1;
  Matrix features;
  Matrix hidden3;
  Matrix reconstruction;
};

namespace detail {

inline void check_input(const NetworkParams& p, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != p.spec.input_dim)
    throw ShapeError("input has " + std::to_string(cols) + " pixels, network expects " + std::to_string(p.spec.input_dim));
}

inline Matrix dense(const Matrix& x, const DenseLayer& l) {
  Matrix z(x.rows(), l.weights.cols());
  z.noalias() = x * l.weights;
  z.rowwise() += l.bias;
  return z;
}

inline Matrix dense_tanh(const Matrix& x, const DenseLayer& l) {
  Matrix z = dense(x, l);
  z = z.array().tanh().matrix();
  return z;
}

}  // namespace detail

// Encoder half: tanh(L2(tanh(L1 x))). Rows of x are samples.
inline Matrix encode(const NetworkParams& p, const Matrix& x) {
  detail::check_input(p, x.cols());
  return detail::dense_tanh(detail::dense_tanh(x, p.layers[0]), p.layers[1]);
}

inline ForwardCache forward_batch(const NetworkParams& p, const Matrix& x) {
  detail::check_input(p, x.cols());
  ForwardCache c;
  c.input = x;
  c.hidden1 = detail::dense_tanh(x, p.layers[0]);
  c.features = detail::dense_tanh(c.hidden1, p.layers[1]);
  c.hidden3 = detail::dense_tanh(c.features, p.layers[2]);
  c.reconstruction = detail::dense(c.hidden3, p.layers[3]);
  return c;
}

struct ForwardResult {
  Eigen::VectorXd reconstruction;
  Eigen::VectorXd features;
  ForwardCache cache;
};

inline Matrix as_row(std::span<const double> x) {
  Matrix m(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), m.data());
  return m;
}

inline ForwardResult forward(const NetworkParams& p, std::span<const double> x) {
  ForwardResult r;
  r.cache = forward_batch(p, as_row(x));
  r.reconstruction = r.cache.reconstruction.row(0).transpose();
  r.features = r.cache.features.row(0).transpose();
  return r;
}

inline Eigen::VectorXd extract_features(const NetworkParams& p, std::span<const double> pixels) {
  return encode(p, as_row(pixels)).row(0).transpose();
}

inline double l2_penalty(const NetworkParams& p, bool include_output = true) {
  double s = 0.0;
  for (std::size_t l = 0; l < kLayerCount; ++l)
    if (include_output || l + 1 < kLayerCount) s += p.layers[l].weights.squaredNorm();
  return s;
}

// Mean over batch and pixels of (x - reconstruction)^2.
inline double reconstruction_mse(const NetworkParams& p, const Matrix& batch) {
  if (batch.rows() == 0) throw ParameterError("loss: empty batch");
  const ForwardCache c = forward_batch(p, batch);
  return (c.reconstruction - batch).squaredNorm() / static_cast<double>(batch.size());
}

// MSE + alpha * sum of squared weights (biases excluded).
inline double loss(const NetworkParams& p, const Matrix& batch, double alpha, bool include_output = true) {
  return reconstruction_mse(p, batch) + alpha * l2_penalty(p, include_output);
}

// Gradient of loss() by backpropagation. Optionally writes the loss value.
inline NetworkParams gradient(const NetworkParams& p, const Matrix& batch, double alpha, double* loss_out = nullptr,
                              bool include_output = true) {
  if (batch.rows() == 0) throw ParameterError("gradient: empty batch");
  const ForwardCache c = forward_batch(p, batch);
  const double scale = 2.0 / static_cast<double>(batch.size());

  NetworkParams g;
  g.spec = p.spec;
  Matrix d_out = c.reconstruction - batch;
  if (loss_out) *loss_out = d_out.squaredNorm() / static_cast<double>(batch.size()) + alpha * l2_penalty(p, include_output);
  d_out *= scale;

  const std::array<const Matrix*, kLayerCount> inputs{&c.input, &c.hidden1, &c.features, &c.hidden3};
  const std::array<const Matrix*, kLayerCount> outputs{&c.hidden1, &c.features, &c.hidden3, nullptr};
  // d_out holds dLoss/d(pre-activation) of the current layer.
  for (std::size_t l = kLayerCount; l-- > 0;) {
    auto& gl = g.layers[l];
    gl.weights.resize(p.layers[l].weights.rows(), p.layers[l].weights.cols());
    gl.weights.noalias() = inputs[l]->transpose() * d_out;
    if (alpha != 0.0 && (include_output || l + 1 < kLayerCount)) gl.weights += (2.0 * alpha) * p.layers[l].weights;
    gl.bias = d_out.colwise().sum();
    if (l == 0) break;
    Matrix d_in(d_out.rows(), p.layers[l].weights.rows());
    d_in.noalias() = d_out * p.layers[l].weights.transpose();
    const Matrix& h = *outputs[l - 1];
    d_out = d_in.array() * (1.0 - h.array().square());
  }
  return g;
}

// Adam moments for every parameter of a network.
struct AdamState {
  NetworkParams m;
  NetworkParams v;
  long step = 0;

  static AdamState zeros_like(const NetworkParams& p) {
    AdamState s;
    s.m = zero_network(p.spec);
    s.v = zero_network(p.spec);
    return s;
  }
};

// In-place Adam update on flat arrays with bias-corrected moments; step is
// the 1-based update count.
inline void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                        std::span<double> v, long step, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
    throw ShapeError("adam_update: size mismatch");
  if (step < 1) throw ParameterError("adam_update: step counter must be >= 1");
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 / (1.0 - std::pow(b1, static_cast<double>(step)));
  const double c2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(step)));
  const double lr = cfg.learning_rate;
  const double eps = cfg.adam_eps;
  const std::size_t n = params.size();
  double* __restrict pp = params.data();
  const double* __restrict gp = grads.data();
  double* __restrict mp = m.data();
  double* __restrict vp = v.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gp[i];
    const double mi = b1 * mp[i] + (1.0 - b1) * g;
    const double vi = b2 * vp[i] + (1.0 - b2) * g * g;
    mp[i] = mi;
    vp[i] = vi;
    pp[i] -= lr * (mi * c1) / (std::sqrt(vi * c2) + eps);
  }
}

inline void adam_step(AdamState& state, NetworkParams& p, const NetworkParams& g, const TrainConfig& cfg) {
  ++state.step;
  auto flat = [](auto& mat) { return std::span(mat.data(), static_cast<std::size_t>(mat.size())); };
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    adam_update(flat(p.layers[l].weights), flat(g.layers[l].weights), flat(state.m.layers[l].weights),
                flat(state.v.layers[l].weights), state.step, cfg);
    adam_update(flat(p.layers[l].bias), flat(g.layers[l].bias), flat(state.m.layers[l].bias),
                flat(state.v.layers[l].bias), state.step, cfg);
  }
}

// Copies the listed rows of a row-major sample store into a new matrix.
inline Matrix gather_rows(const Matrix& data, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Chunked MSE over a whole sample set, bounded memory.
inline double dataset_mse(const NetworkParams& p, const Matrix& data, Eigen::Index chunk = 64) {
  if (data.rows() == 0) return 0.0;
  double sse = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); r += chunk) {
    const Eigen::Index n = std::min(chunk, data.rows() - r);
    const Matrix x = data.middleRows(r, n);
    sse += (forward_batch(p, x).reconstruction - x).squaredNorm();
  }
  return sse / static_cast<double>(data.size());
}

struct TrainResult {
  NetworkParams params;
  TrainReport report;
};

// Minibatch Adam. Init draws from derive_seed(seed, kInit, 0); epoch
// shuffles draw from one SplitMix64 stream seeded with
// derive_seed(seed, kBatches, 0). The last batch of an epoch may be short.
inline TrainResult train(const Matrix& ae_train, const Matrix& ae_val, const ArchitectureSpec& spec,
                         const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (ae_train.rows() == 0) throw ParameterError("train: empty training set");
  if (static_cast<std::size_t>(ae_train.cols()) != spec.input_dim) throw ShapeError("train: sample width differs from input_dim");
  if (ae_val.rows() > 0 && ae_val.cols() != ae_train.cols()) throw ShapeError("train: validation width differs");

  TrainResult out;
  out.params = init_network(spec, derive_seed(cfg.seed, SeedStage::kInit, 0));
  AdamState adam = AdamState::zeros_like(out.params);
  SplitMix64 rng(derive_seed(cfg.seed, SeedStage::kBatches, 0));

  const auto n = static_cast<std::size_t>(ae_train.rows());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(std::span<std::size_t>(order), rng);
    int batch_index = 0;
    for (std::size_t start = 0; start < n; start += bs, ++batch_index) {
      const std::size_t len = std::min(bs, n - start);
      const Matrix batch = gather_rows(ae_train, std::span<const std::size_t>(order).subspan(start, len));
      double batch_loss = 0.0;
      const NetworkParams g = gradient(out.params, batch, cfg.l2_alpha, &batch_loss, cfg.regularize_output);
      if (!std::isfinite(batch_loss))
        throw TrainingDivergedError(epoch, batch_index,
                                    "training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      adam_step(adam, out.params, g, cfg);
    }
    const double mse = dataset_mse(out.params, ae_train);
    const double total = mse + cfg.l2_alpha * l2_penalty(out.params, cfg.regularize_output);
    if (!std::isfinite(total))
      throw TrainingDivergedError(epoch, batch_index, "training diverged after epoch " + std::to_string(epoch));
    out.report.train_mse.push_back(mse);
    out.report.train_loss.push_back(total);
    out.report.val_mse.push_back(ae_val.rows() > 0 ? dataset_mse(out.params, ae_val) : 0.0);
  }
  return out;
}

// N_h in {190, 180, ..., 100} outer, f_h in {40, 30, 20, 10} inner.
inline std::vector<ArchitectureSpec> ensemble_specs(std::size_t input_dim) {
  std::vector<ArchitectureSpec> out;
  for (std::size_t nh = 190; nh >= 100; nh -= 10)
    for (std::size_t fh = 40; fh >= 10; fh -= 10) out.push_back({input_dim, nh, fh});
  return out;
}

}  // namespace mctnet
