#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/random.hpp"

namespace lithopatch {

inline constexpr int kHidden1 = 25;
inline constexpr int kHidden2 = 256;

enum class Mode { training, inference };

/// FC(d->25) -> BatchNorm -> ReLU -> FC(25->256) -> ReLU -> FC(256->4) -> softmax.
/// Weights are stored fan_in x fan_out, so z = x W + b for a row vector x.
struct MlpHeadModel {
  int input_dim = 0;
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::VectorXd bn_gamma, bn_beta;
  Eigen::VectorXd running_mean, running_var;
  double momentum = 0.1;
  double bn_eps = 1e-5;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd W3;
  Eigen::VectorXd b3;
  bool relu_after_fc2 = true;
};

/// Gradient (or ADAM moment) storage shaped like the trainable parameters.
struct MlpGradients {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1, bn_gamma, bn_beta;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd W3;
  Eigen::VectorXd b3;
};

template <typename Scalar>
struct ParamView {
  const char* name;
  Scalar* data;
  Eigen::Index size;
};

/// The eight trainable tensors of a model or gradient struct, in a fixed order.
template <typename T>
auto parameter_views(T& t) {
  using Scalar = std::remove_pointer_t<decltype(t.W1.data())>;
  return std::array<ParamView<Scalar>, 8>{{{"W1", t.W1.data(), t.W1.size()},
           {"b1", t.b1.data(), t.b1.size()},
           {"bn_gamma", t.bn_gamma.data(), t.bn_gamma.size()},
           {"bn_beta", t.bn_beta.data(), t.bn_beta.size()},
           {"W2", t.W2.data(), t.W2.size()},
           {"b2", t.b2.data(), t.b2.size()},
           {"W3", t.W3.data(), t.W3.size()},
           {"b3", t.b3.data(), t.b3.size()}}};
}

inline MlpGradients zero_gradients(const MlpHeadModel& m) {
  MlpGradients g;
  g.W1 = Eigen::MatrixXd::Zero(m.W1.rows(), m.W1.cols());
  g.b1 = Eigen::VectorXd::Zero(m.b1.size());
  g.bn_gamma = Eigen::VectorXd::Zero(m.bn_gamma.size());
  g.bn_beta = Eigen::VectorXd::Zero(m.bn_beta.size());
  g.W2 = Eigen::MatrixXd::Zero(m.W2.rows(), m.W2.cols());
  g.b2 = Eigen::VectorXd::Zero(m.b2.size());
  g.W3 = Eigen::MatrixXd::Zero(m.W3.rows(), m.W3.cols());
  g.b3 = Eigen::VectorXd::Zero(m.b3.size());
  return g;
}

inline bool same_parameters(const MlpHeadModel& a, const MlpHeadModel& b) {
  return a.input_dim == b.input_dim && a.W1 == b.W1 && a.b1 == b.b1 && a.bn_gamma == b.bn_gamma &&
         a.bn_beta == b.bn_beta && a.running_mean == b.running_mean && a.running_var == b.running_var &&
         a.W2 == b.W2 && a.b2 == b.b2 && a.W3 == b.W3 && a.b3 == b.b3 && a.relu_after_fc2 == b.relu_after_fc2;
}

/// He-uniform for the ReLU layers, Xavier-uniform for the output layer, zero biases.
inline MlpHeadModel init_head(int input_dim, std::uint64_t seed, bool relu_after_fc2 = true) {
  if (input_dim < 1) throw Error(ErrorCode::DimensionMismatch, "input dimension must be >= 1");
  Rng rng(seed);
  auto fill = [&](Eigen::MatrixXd& w, double limit) {
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
  };
  MlpHeadModel m;
  m.input_dim = input_dim;
  m.relu_after_fc2 = relu_after_fc2;
  m.W1.resize(input_dim, kHidden1);
  fill(m.W1, std::sqrt(6.0 / input_dim));
  m.W2.resize(kHidden1, kHidden2);
  fill(m.W2, std::sqrt(6.0 / kHidden1));
  m.W3.resize(kHidden2, kNumClasses);
  fill(m.W3, std::sqrt(6.0 / (kHidden2 + kNumClasses)));
  m.b1 = Eigen::VectorXd::Zero(kHidden1);
  m.b2 = Eigen::VectorXd::Zero(kHidden2);
  m.b3 = Eigen::VectorXd::Zero(kNumClasses);
  m.bn_gamma = Eigen::VectorXd::Ones(kHidden1);
  m.bn_beta = Eigen::VectorXd::Zero(kHidden1);
  m.running_mean = Eigen::VectorXd::Zero(kHidden1);
  m.running_var = Eigen::VectorXd::Ones(kHidden1);
  return m;
}

struct ForwardCache {
  Mode mode = Mode::inference;
  Eigen::MatrixXd X, Z1, xhat, BN, A1, Z2, A2, logits, P;
  Eigen::RowVectorXd mu, var, inv_std;
};

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::ArrayXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().transpose();
    p.row(i) = (e / e.sum()).transpose();
  }
  return p;
}

/// Batch forward pass; rows of X are samples. Training mode normalizes with
/// biased batch statistics, inference mode with the running statistics.
inline ForwardCache forward_batch(const MlpHeadModel& m, const Eigen::MatrixXd& X, Mode mode) {
  if (X.cols() != m.input_dim)
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(m.input_dim) + " inputs, got " +
                                                  std::to_string(X.cols()));
  ForwardCache c;
  c.mode = mode;
  c.X = X;
  c.Z1 = (X * m.W1).rowwise() + m.b1.transpose();
  if (mode == Mode::training) {
    c.mu = c.Z1.colwise().mean();
    c.var = (c.Z1.rowwise() - c.mu).array().square().colwise().mean().matrix();
  } else {
    c.mu = m.running_mean.transpose();
    c.var = m.running_var.transpose();
  }
  c.inv_std = (c.var.array() + m.bn_eps).rsqrt().matrix();
  c.xhat = ((c.Z1.rowwise() - c.mu).array().rowwise() * c.inv_std.array()).matrix();
  c.BN = ((c.xhat.array().rowwise() * m.bn_gamma.transpose().array()).rowwise() + m.bn_beta.transpose().array())
             .matrix();
  c.A1 = c.BN.cwiseMax(0.0);
  c.Z2 = (c.A1 * m.W2).rowwise() + m.b2.transpose();
  c.A2 = m.relu_after_fc2 ? Eigen::MatrixXd(c.Z2.cwiseMax(0.0)) : c.Z2;
  c.logits = (c.A2 * m.W3).rowwise() + m.b3.transpose();
  c.P = softmax_rows(c.logits);
  return c;
}

/// Single-sample forward pass returning the class probabilities.
inline std::vector<double> forward(const MlpHeadModel& m, std::span<const double> x, Mode mode = Mode::inference) {
  Eigen::MatrixXd X(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) X(0, static_cast<Eigen::Index>(j)) = x[j];
  const auto c = forward_batch(m, X, mode);
  return std::vector<double>(c.P.data(), c.P.data() + c.P.size());
}

inline std::vector<double> predict_proba(const MlpHeadModel& m, std::span<const double> x) {
  return forward(m, x, Mode::inference);
}

/// Mean softmax cross-entropy, computed from the logits via log-sum-exp.
inline double cross_entropy(const ForwardCache& c, std::span<const int> y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < c.logits.rows(); ++i) {
    const double mx = c.logits.row(i).maxCoeff();
    const double lse = mx + std::log((c.logits.row(i).array() - mx).exp().sum());
    total += lse - c.logits(i, y[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(c.logits.rows());
}

/// Gradients of the mean cross-entropy with respect to every trainable parameter.
inline MlpGradients backward(const MlpHeadModel& m, const ForwardCache& c, std::span<const int> y) {
  const auto n = static_cast<double>(c.X.rows());
  MlpGradients g;
  Eigen::MatrixXd dL = c.P;
  for (Eigen::Index i = 0; i < dL.rows(); ++i) dL(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  dL /= n;
  g.W3 = c.A2.transpose() * dL;
  g.b3 = dL.colwise().sum().transpose();

  Eigen::MatrixXd dZ2 = dL * m.W3.transpose();
  if (m.relu_after_fc2) dZ2 = (dZ2.array() * (c.Z2.array() > 0.0).cast<double>()).matrix();
  g.W2 = c.A1.transpose() * dZ2;
  g.b2 = dZ2.colwise().sum().transpose();

  Eigen::MatrixXd dBN = ((dZ2 * m.W2.transpose()).array() * (c.BN.array() > 0.0).cast<double>()).matrix();
  g.bn_gamma = (dBN.array() * c.xhat.array()).colwise().sum().transpose();
  g.bn_beta = dBN.colwise().sum().transpose();

  const Eigen::MatrixXd dxhat = (dBN.array().rowwise() * m.bn_gamma.transpose().array()).matrix();
  Eigen::MatrixXd dZ1;
  if (c.mode == Mode::training) {
    const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
    const Eigen::RowVectorXd s2 = (dxhat.array() * c.xhat.array()).colwise().sum();
    dZ1 = ((((n * dxhat).rowwise() - s1).array() - c.xhat.array().rowwise() * s2.array()).rowwise() *
           (c.inv_std.array() / n))
              .matrix();
  } else {
    dZ1 = (dxhat.array().rowwise() * c.inv_std.array()).matrix();
  }
  g.W1 = c.X.transpose() * dZ1;
  g.b1 = dZ1.colwise().sum().transpose();
  return g;
}

/// Smallest |pre-activation| at any ReLU for the batch (distance to a kink).
inline double relu_margin(const ForwardCache& c, bool relu_after_fc2) {
  double margin = c.BN.cwiseAbs().minCoeff();
  if (relu_after_fc2) margin = std::min(margin, c.Z2.cwiseAbs().minCoeff());
  return margin;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 0;
  bool relu_after_fc2 = true;
};

/// Learning rates used with each backbone's features.
inline std::optional<double> backbone_learning_rate(std::string_view tag) {
  if (tag == "alexnet") return 1e-4;
  if (tag == "vgg16" || tag == "vgg19") return 5e-5;
  if (tag == "inception_v3") return 6e-4;
  return std::nullopt;
}

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
    throw Error(ErrorCode::ConfigInvalid, "learning_rate must be finite and >= 0");
  if (c.batch_size < 2) throw Error(ErrorCode::ConfigInvalid, "batch_size must be >= 2");
  if (c.patience < 1) throw Error(ErrorCode::ConfigInvalid, "patience must be >= 1");
  if (c.max_epochs < 0) throw Error(ErrorCode::ConfigInvalid, "max_epochs must be >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw Error(ErrorCode::ConfigInvalid, "ADAM betas must lie in [0, 1)");
}

struct AdamState {
  MlpGradients m, v;
  long step = 0;
};

inline AdamState make_adam_state(const MlpHeadModel& model) { return {zero_gradients(model), zero_gradients(model), 0}; }

inline void adam_step(MlpHeadModel& model, const MlpGradients& grad, AdamState& state, const TrainConfig& c) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto params = parameter_views(model);
  const auto g = parameter_views(grad);
  auto m = parameter_views(state.m);
  auto v = parameter_views(state.v);
  for (std::size_t t = 0; t < params.size(); ++t)
    for (Eigen::Index i = 0; i < params[t].size; ++i) {
      const double gi = g[t].data[i];
      m[t].data[i] = c.beta1 * m[t].data[i] + (1.0 - c.beta1) * gi;
      v[t].data[i] = c.beta2 * v[t].data[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[t].data[i] / bc1, vhat = v[t].data[i] / bc2;
      params[t].data[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.adam_eps);
    }
}

/// Running statistics follow the batch statistics with unbiased variance.
inline void update_running_stats(MlpHeadModel& m, const ForwardCache& c) {
  const double n = static_cast<double>(c.X.rows());
  const double unbias = n > 1 ? n / (n - 1.0) : 1.0;
  m.running_mean = (1.0 - m.momentum) * m.running_mean + m.momentum * c.mu.transpose();
  m.running_var = (1.0 - m.momentum) * m.running_var + m.momentum * unbias * c.var.transpose();
}

inline Eigen::MatrixXd rows_to_matrix(const FeatureMatrix& data, std::span<const std::size_t> idx) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(data.cols));
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < data.cols; ++j) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = data.at(idx[r], j);
  return X;
}

inline Eigen::MatrixXd rows_to_matrix(const FeatureMatrix& data) {
  std::vector<std::size_t> idx(data.rows);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return rows_to_matrix(data, idx);
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;  ///< 0 when no epoch ran
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

struct TrainResult {
  MlpHeadModel model;
  TrainingLog log;
};

/// Inference-mode loss and accuracy over a whole split.
inline std::pair<double, double> evaluate_loss(const MlpHeadModel& m, const FeatureMatrix& data) {
  const auto c = forward_batch(m, rows_to_matrix(data), Mode::inference);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.rows; ++i) {
    Eigen::Index best;
    c.P.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    correct += best == data.labels[i];
  }
  return {cross_entropy(c, data.labels), static_cast<double>(correct) / static_cast<double>(data.rows)};
}

/// ADAM on the mean cross-entropy with early stopping on validation loss; the
/// returned model is the snapshot from the best validation epoch. Batches of a
/// single row are skipped because batch normalization needs a variance.
inline TrainResult train_head(const FeatureMatrix& train, const FeatureMatrix& val, const TrainConfig& config) {
  validate(config);
  if (train.rows == 0) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val.rows == 0) throw Error(ErrorCode::EmptySplit, "validation split is empty");
  if (train.rows < 2) throw Error(ErrorCode::EmptySplit, "training split needs at least 2 rows for batch statistics");
  if (train.cols != val.cols) throw Error(ErrorCode::DimensionMismatch, "train and validation widths differ");
  validate_feature_matrix(train);
  validate_feature_matrix(val);

  TrainResult result;
  MlpHeadModel model = init_head(static_cast<int>(train.cols), derive_seed(config.seed, {1}), config.relu_after_fc2);
  result.model = model;
  AdamState adam = make_adam_state(model);
  Rng shuffler(derive_seed(config.seed, {2}));
  int since_best = 0;
  std::vector<int> yb;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto perm = shuffler.permutation(train.rows);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), perm.size() - start);
      if (b < 2) continue;
      const std::span<const std::size_t> idx(perm.data() + start, b);
      yb.resize(b);
      for (std::size_t i = 0; i < b; ++i) yb[i] = train.labels[idx[i]];
      const auto cache = forward_batch(model, rows_to_matrix(train, idx), Mode::training);
      const double loss = cross_entropy(cache, yb);
      if (!std::isfinite(loss)) throw Error(ErrorCode::DivergedLoss, "training loss is not finite at epoch " + std::to_string(epoch));
      update_running_stats(model, cache);
      adam_step(model, backward(model, cache, yb), adam, config);
      loss_sum += loss * static_cast<double>(b);
      seen += b;
    }
    const auto [val_loss, val_acc] = evaluate_loss(model, val);
    if (!std::isfinite(val_loss))
      throw Error(ErrorCode::DivergedLoss, "validation loss is not finite at epoch " + std::to_string(epoch));
    result.log.epochs.push_back({epoch, loss_sum / static_cast<double>(seen), val_loss, val_acc});
    if (val_loss < result.log.best_val_loss) {
      result.log.best_val_loss = val_loss;
      result.log.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.log.stopped_early = true;
      break;
    }
  }
  return result;
}

namespace detail {

// Loop-based long double re-implementation of the training-mode loss, used as
// the finite-difference oracle. Matrices are row-major: W[i * cols + j].
struct LdHead {
  int d = 0;
  bool relu2 = true;
  long double eps = 1e-5L;
  std::vector<long double> W1, b1, gamma, beta, W2, b2, W3, b3;

  explicit LdHead(const MlpHeadModel& m) : d(m.input_dim), relu2(m.relu_after_fc2), eps(m.bn_eps) {
    auto mat = [](const Eigen::MatrixXd& w) {
      std::vector<long double> out(static_cast<std::size_t>(w.size()));
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) out[static_cast<std::size_t>(i * w.cols() + j)] = w(i, j);
      return out;
    };
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<long double>(v.data(), v.data() + v.size()); };
    W1 = mat(m.W1), b1 = vec(m.b1), gamma = vec(m.bn_gamma), beta = vec(m.bn_beta);
    W2 = mat(m.W2), b2 = vec(m.b2), W3 = mat(m.W3), b3 = vec(m.b3);
  }

  // n x 25 post-ReLU activations of the batch-normalized first layer
  std::vector<long double> hidden1(const std::vector<long double>& X, int n) const {
    std::vector<long double> z(static_cast<std::size_t>(n) * kHidden1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kHidden1; ++j) {
        long double s = b1[j];
        for (int k = 0; k < d; ++k) s += X[i * d + k] * W1[k * kHidden1 + j];
        z[i * kHidden1 + j] = s;
      }
    std::vector<long double> a(z.size());
    for (int j = 0; j < kHidden1; ++j) {
      long double mu = 0;
      for (int i = 0; i < n; ++i) mu += z[i * kHidden1 + j];
      mu /= n;
      long double var = 0;
      for (int i = 0; i < n; ++i) var += (z[i * kHidden1 + j] - mu) * (z[i * kHidden1 + j] - mu);
      var /= n;
      const long double inv = 1.0L / std::sqrt(var + eps);
      for (int i = 0; i < n; ++i) {
        const long double bn = gamma[j] * (z[i * kHidden1 + j] - mu) * inv + beta[j];
        a[i * kHidden1 + j] = bn > 0 ? bn : 0;
      }
    }
    return a;
  }

  long double z2_entry(const std::vector<long double>& a1, int i, int j) const {
    long double s = b2[j];
    for (int k = 0; k < kHidden1; ++k) s += a1[i * kHidden1 + k] * W2[k * kHidden2 + j];
    return s;
  }

  std::vector<long double> z2(const std::vector<long double>& a1, int n) const {
    std::vector<long double> z(static_cast<std::size_t>(n) * kHidden2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kHidden2; ++j) z[i * kHidden2 + j] = z2_entry(a1, i, j);
    return z;
  }

  long double loss_from_z2(const std::vector<long double>& z, std::span<const int> y, int n) const {
    long double total = 0;
    for (int i = 0; i < n; ++i) {
      long double logits[kNumClasses];
      for (int c = 0; c < kNumClasses; ++c) {
        long double s = b3[c];
        for (int k = 0; k < kHidden2; ++k) {
          const long double a = relu2 && z[i * kHidden2 + k] < 0 ? 0 : z[i * kHidden2 + k];
          s += a * W3[k * kNumClasses + c];
        }
        logits[c] = s;
      }
      const long double mx = *std::max_element(logits, logits + kNumClasses);
      long double se = 0;
      for (long double l : logits) se += std::exp(l - mx);
      total += mx + std::log(se) - logits[y[i]];
    }
    return total / n;
  }
};

}  // namespace detail

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = 0;
};

/// Compares backward() against central differences (h = 1e-5) of the
/// training-mode loss for every trainable parameter. The differences are taken
/// on a long double evaluation so that parameters with vanishing gradients
/// (such as b1 under batch normalization) are resolved.
inline GradientCheckResult gradient_check(const MlpHeadModel& model, const Eigen::MatrixXd& X, std::span<const int> y,
                                          double h = 1e-5) {
  if (X.rows() < 2) throw Error(ErrorCode::TooFewSamples, "gradient check needs a batch of at least 2");
  const auto cache = forward_batch(model, X, Mode::training);
  MlpGradients analytic = backward(model, cache, y);

  const int n = static_cast<int>(X.rows());
  const int d = model.input_dim;
  std::vector<long double> Xl(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) Xl[i * d + k] = X(i, k);

  detail::LdHead net(model);
  const auto a1 = net.hidden1(Xl, n);
  const auto z2 = net.z2(a1, n);

  // row-major position of column-major Eigen index i in a rows x cols tensor
  auto rm = [](Eigen::Index i, Eigen::Index rows, Eigen::Index cols) { return (i % rows) * cols + i / rows; };

  GradientCheckResult result;
  auto record = [&](const char* name, Eigen::Index i, double ga, long double fd) {
    const double gfd = static_cast<double>(fd);
    const double denom = std::max({std::abs(ga), std::abs(gfd), 1e-8});
    const double rel = std::abs(ga - gfd) / denom;
    if (rel > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = std::max(rel, result.max_relative_error);
      result.worst_parameter = name;
      result.worst_index = i;
    }
  };
  const long double hl = h;

  auto first_layer = [&](std::vector<long double>& p, std::size_t pos) {
    const long double orig = p[pos];
    p[pos] = orig + hl;
    const long double up = net.loss_from_z2(net.z2(net.hidden1(Xl, n), n), y, n);
    p[pos] = orig - hl;
    const long double down = net.loss_from_z2(net.z2(net.hidden1(Xl, n), n), y, n);
    p[pos] = orig;
    return (up - down) / (2 * hl);
  };
  for (Eigen::Index i = 0; i < model.W1.size(); ++i)
    record("W1", i, analytic.W1(i), first_layer(net.W1, rm(i, model.W1.rows(), model.W1.cols())));
  for (Eigen::Index i = 0; i < kHidden1; ++i) {
    record("b1", i, analytic.b1(i), first_layer(net.b1, i));
    record("bn_gamma", i, analytic.bn_gamma(i), first_layer(net.gamma, i));
    record("bn_beta", i, analytic.bn_beta(i), first_layer(net.beta, i));
  }

  // second layer: only column j of z2 changes
  auto second_layer = [&](std::vector<long double>& p, std::size_t pos, int j) {
    const long double orig = p[pos];
    auto z = z2;
    long double out[2];
    for (int s = 0; s < 2; ++s) {
      p[pos] = orig + (s == 0 ? hl : -hl);
      for (int r = 0; r < n; ++r) z[r * kHidden2 + j] = net.z2_entry(a1, r, j);
      out[s] = net.loss_from_z2(z, y, n);
    }
    p[pos] = orig;
    return (out[0] - out[1]) / (2 * hl);
  };
  for (Eigen::Index i = 0; i < model.W2.size(); ++i) {
    const auto pos = rm(i, model.W2.rows(), model.W2.cols());
    record("W2", i, analytic.W2(i), second_layer(net.W2, pos, static_cast<int>(pos % kHidden2)));
  }
  for (Eigen::Index i = 0; i < kHidden2; ++i) record("b2", i, analytic.b2(i), second_layer(net.b2, i, static_cast<int>(i)));

  auto output_layer = [&](std::vector<long double>& p, std::size_t pos) {
    const long double orig = p[pos];
    p[pos] = orig + hl;
    const long double up = net.loss_from_z2(z2, y, n);
    p[pos] = orig - hl;
    const long double down = net.loss_from_z2(z2, y, n);
    p[pos] = orig;
    return (up - down) / (2 * hl);
  };
  for (Eigen::Index i = 0; i < model.W3.size(); ++i)
    record("W3", i, analytic.W3(i), output_layer(net.W3, rm(i, model.W3.rows(), model.W3.cols())));
  for (Eigen::Index i = 0; i < kNumClasses; ++i) record("b3", i, analytic.b3(i), output_layer(net.b3, i));
  return result;
}

// --- checkpoints

namespace detail {
inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols)
    throw Error(ErrorCode::MalformedFile, "checkpoint tensor has the wrong shape");
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error(ErrorCode::MalformedFile, "checkpoint tensor has the wrong size");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) {
      const double v = data[static_cast<std::size_t>(i * cols + k)];
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "checkpoint parameter");
      m(i, k) = v;
    }
  return m;
}
}  // namespace detail

inline nlohmann::json to_json(const MlpHeadModel& m) {
  return {{"format", "lithopatch-mlp"},
          {"version", 1},
          {"input_dim", m.input_dim},
          {"relu_after_fc2", m.relu_after_fc2},
          {"momentum", m.momentum},
          {"bn_eps", m.bn_eps},
          {"label_map", {"COM", "COD", "UA", "BRU"}},
          {"W1", detail::matrix_json(m.W1)},
          {"b1", detail::matrix_json(m.b1)},
          {"bn_gamma", detail::matrix_json(m.bn_gamma)},
          {"bn_beta", detail::matrix_json(m.bn_beta)},
          {"running_mean", detail::matrix_json(m.running_mean)},
          {"running_var", detail::matrix_json(m.running_var)},
          {"W2", detail::matrix_json(m.W2)},
          {"b2", detail::matrix_json(m.b2)},
          {"W3", detail::matrix_json(m.W3)},
          {"b3", detail::matrix_json(m.b3)}};
}

inline MlpHeadModel mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "lithopatch-mlp" || j.at("version").get<int>() != 1)
      throw Error(ErrorCode::MalformedFile, "not a version 1 MLP checkpoint");
    MlpHeadModel m;
    m.input_dim = j.at("input_dim").get<int>();
    if (m.input_dim < 1) throw Error(ErrorCode::MalformedFile, "input_dim must be >= 1");
    m.relu_after_fc2 = j.at("relu_after_fc2").get<bool>();
    m.momentum = j.at("momentum").get<double>();
    m.bn_eps = j.at("bn_eps").get<double>();
    m.W1 = detail::matrix_from_json(j.at("W1"), m.input_dim, kHidden1);
    m.b1 = detail::matrix_from_json(j.at("b1"), kHidden1, 1);
    m.bn_gamma = detail::matrix_from_json(j.at("bn_gamma"), kHidden1, 1);
    m.bn_beta = detail::matrix_from_json(j.at("bn_beta"), kHidden1, 1);
    m.running_mean = detail::matrix_from_json(j.at("running_mean"), kHidden1, 1);
    m.running_var = detail::matrix_from_json(j.at("running_var"), kHidden1, 1);
    if ((m.running_var.array() < 0.0).any()) throw Error(ErrorCode::MalformedFile, "negative running variance");
    m.W2 = detail::matrix_from_json(j.at("W2"), kHidden1, kHidden2);
    m.b2 = detail::matrix_from_json(j.at("b2"), kHidden2, 1);
    m.W3 = detail::matrix_from_json(j.at("W3"), kHidden2, kNumClasses);
    m.b3 = detail::matrix_from_json(j.at("b3"), kNumClasses, 1);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("MLP checkpoint: ") + e.what());
  }
}

inline void save_mlp(const std::filesystem::path& path, const MlpHeadModel& m) {
  io::write_text_atomically(path, to_json(m).dump());
}

inline MlpHeadModel load_mlp(const std::filesystem::path& path) {
  try {
    return mlp_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

inline nlohmann::json to_json(const TrainingLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs)
    epochs.push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_accuracy", e.val_accuracy}});
  return {{"epochs", epochs},
          {"best_epoch", log.best_epoch},
          {"best_val_loss", log.best_epoch ? nlohmann::json(log.best_val_loss) : nlohmann::json(nullptr)},
          {"stopped_early", log.stopped_early}};
}

}  // namespace lithopatch
