#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rcr/core.hpp"

namespace rcr {

enum class Mode { kTrain, kEval };

/// A trainable tensor: values plus an accumulated gradient of the same shape.
template <class S>
struct Param {
  std::string name;
  Matrix<S> w;
  Matrix<S> g;
  int rank = 2;  // serialized rank; 1 for per-feature vectors and biases

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, int rank_ = 2)
      : name(std::move(n)),
        w(Matrix<S>::Zero(rows, cols)),
        g(Matrix<S>::Zero(rows, cols)),
        rank(rank_) {}

  void zero_grad() { g.setZero(); }
};

/// Uniform init in +-1/sqrt(fan_in); biases start at zero.
template <class S>
void init_dense(Param<S>& weight, Param<S>& bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.w.rows()));
  for (Eigen::Index i = 0; i < weight.w.rows(); ++i)
    for (Eigen::Index j = 0; j < weight.w.cols(); ++j)
      weight.w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
  bias.w.setZero();
}

// ---------------------------------------------------------------------------
// Dense (fully-connected) layer. Shared per-point maps in the encoder are the
// same operation applied to a (batch * points) x features matrix.
// ---------------------------------------------------------------------------

template <class S>
struct DenseLayer {
  Param<S> weight;  // in x out
  Param<S> bias;    // 1 x out

  DenseLayer() = default;
  DenseLayer(const std::string& name, int in, int out)
      : weight(name + ".weight", in, out),
        bias(name + ".bias", 1, out, 1) {}

  int in_features() const { return static_cast<int>(weight.w.rows()); }
  int out_features() const { return static_cast<int>(weight.w.cols()); }
};

template <class S>
Matrix<S> dense_forward(const DenseLayer<S>& layer, const Matrix<S>& input) {
  detail::require(input.cols() == layer.weight.w.rows(),
                  "dense: input width mismatch");
  Matrix<S> out = input * layer.weight.w;
  out.rowwise() += layer.bias.w.row(0);
  return out;
}

/// Accumulates weight/bias gradients and returns the input gradient.
template <class S>
Matrix<S> dense_backward(DenseLayer<S>& layer, const Matrix<S>& input,
                         const Matrix<S>& grad_out) {
  detail::require(grad_out.cols() == layer.weight.w.cols() &&
                      grad_out.rows() == input.rows(),
                  "dense: gradient shape mismatch");
  layer.weight.g.noalias() += input.transpose() * grad_out;
  layer.bias.g.row(0) += grad_out.colwise().sum();
  return grad_out * layer.weight.w.transpose();
}

/// Final-layer variant with a scalar inner loop. Each output column depends
/// only on its own weight column, which keeps logits for pre-existing classes
/// bit-identical across classifier expansions.
template <class S>
Matrix<S> dense_forward_columnwise(const DenseLayer<S>& layer,
                                   const Matrix<S>& input) {
  detail::require(input.cols() == layer.weight.w.rows(),
                  "dense: input width mismatch");
  const Eigen::Index rows = input.rows(), in = input.cols(),
                     out = layer.weight.w.cols();
  Matrix<S> y(rows, out);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index j = 0; j < out; ++j) {
      S acc = layer.bias.w(0, j);
      for (Eigen::Index k = 0; k < in; ++k) acc += input(r, k) * layer.weight.w(k, j);
      y(r, j) = acc;
    }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization with staircase momentum decay.
// ---------------------------------------------------------------------------

template <class S>
struct BatchNormState {
  Param<S> gamma;  // 1 x features
  Param<S> beta;   // 1 x features
  Matrix<S> running_mean;
  Matrix<S> running_var;
  std::int64_t samples_seen = 0;

  double initial_momentum = 0.5;
  double decay_factor = 0.5;
  std::int64_t decay_interval_samples = 100000;
  double momentum_floor = 0.01;

  BatchNormState() = default;
  BatchNormState(const std::string& name, int features)
      : gamma(name + ".gamma", 1, features, 1),
        beta(name + ".beta", 1, features, 1),
        running_mean(Matrix<S>::Zero(1, features)),
        running_var(Matrix<S>::Ones(1, features)) {
    gamma.w.setOnes();
    beta.w.setZero();
  }

  int features() const { return static_cast<int>(gamma.w.cols()); }

  double effective_momentum() const {
    const auto steps = samples_seen / decay_interval_samples;
    const double m = initial_momentum * std::pow(decay_factor, static_cast<double>(steps));
    return std::max(momentum_floor, m);
  }
};

template <class S>
struct BatchNormCache {
  Matrix<S> x_hat;      // normalized input
  Matrix<S> inv_std;    // 1 x features
  Matrix<S> x_center;   // input minus batch mean
};

/// Train mode normalizes by batch statistics (biased variance), applies the
/// affine pair, and folds the batch into the running estimates at the current
/// effective momentum. `samples_in_batch` is the number of training samples
/// the rows represent; for per-point features that is the cloud count, not
/// the row count. Pass 0 to use the row count.
template <class S>
Matrix<S> batchnorm_forward(BatchNormState<S>& state, const Matrix<S>& input,
                            Mode mode, BatchNormCache<S>* cache = nullptr,
                            std::int64_t samples_in_batch = 0) {
  detail::require(input.cols() == state.gamma.w.cols(), "batchnorm: width mismatch");
  const Eigen::Index rows = input.rows();
  if (mode == Mode::kEval) {
    Matrix<S> inv_std =
        (state.running_var.array() + S(1e-5)).rsqrt().matrix();
    Matrix<S> x_hat =
        (input.rowwise() - state.running_mean.row(0)).array().rowwise() *
        inv_std.row(0).array();
    Matrix<S> out = x_hat.array().rowwise() * state.gamma.w.row(0).array();
    out.rowwise() += state.beta.w.row(0);
    return out;
  }

  detail::require(rows >= 2, "batchnorm: train mode needs at least 2 rows");
  const double momentum = state.effective_momentum();

  Matrix<S> mean = input.colwise().mean();
  Matrix<S> centered = input.rowwise() - mean.row(0);
  Matrix<S> var = centered.array().square().colwise().mean();
  Matrix<S> inv_std = (var.array() + S(1e-5)).rsqrt().matrix();

  Matrix<S> x_hat = centered.array().rowwise() * inv_std.row(0).array();
  Matrix<S> out = x_hat.array().rowwise() * state.gamma.w.row(0).array();
  out.rowwise() += state.beta.w.row(0);

  state.running_mean =
      (1.0 - momentum) * state.running_mean + momentum * mean;
  state.running_var = (1.0 - momentum) * state.running_var + momentum * var;
  state.samples_seen += samples_in_batch > 0 ? samples_in_batch
                                             : static_cast<std::int64_t>(rows);

  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->x_center = std::move(centered);
  }
  return out;
}

/// Backward through train-mode batch statistics. Accumulates gamma/beta
/// gradients and returns the input gradient.
template <class S>
Matrix<S> batchnorm_backward(BatchNormState<S>& state,
                             const BatchNormCache<S>& cache,
                             const Matrix<S>& grad_out) {
  const Eigen::Index rows = grad_out.rows();
  const S inv_rows = S(1) / static_cast<S>(rows);

  state.beta.g.row(0) += grad_out.colwise().sum();
  state.gamma.g.row(0) += (grad_out.array() * cache.x_hat.array()).colwise().sum().matrix();

  // d x_hat
  Matrix<S> dxh = grad_out.array().rowwise() * state.gamma.w.row(0).array();
  // d var and d mean through the batch statistics
  Matrix<S> inv_std3 = cache.inv_std.array().cube().matrix();
  Matrix<S> dvar =
      ((dxh.array() * cache.x_center.array()).colwise().sum() *
       (S(-0.5) * inv_std3.row(0).array()))
          .matrix();
  Matrix<S> dmean =
      (dxh.colwise().sum().array() * (-cache.inv_std.row(0).array())).matrix() +
      (dvar.array() * (S(-2) * inv_rows) * cache.x_center.colwise().sum().array())
          .matrix();

  Matrix<S> dx = dxh.array().rowwise() * cache.inv_std.row(0).array();
  dx += (cache.x_center.array().rowwise() * (S(2) * inv_rows * dvar.row(0).array()))
            .matrix();
  dx.rowwise() += (inv_rows * dmean.row(0).array()).matrix().row(0);
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <class S>
Matrix<S> relu_forward(const Matrix<S>& input) {
  return input.cwiseMax(S(0));
}

/// Subgradient at zero is zero.
template <class S>
Matrix<S> relu_backward(const Matrix<S>& input, const Matrix<S>& grad_out) {
  return ((input.array() > S(0)).template cast<S>() * grad_out.array()).matrix();
}

// ---------------------------------------------------------------------------
// Inverted dropout
// ---------------------------------------------------------------------------

template <class S>
Matrix<S> dropout_forward(const Matrix<S>& input, double p, Mode mode, Rng& rng,
                          Matrix<S>* mask_out = nullptr) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) {
    if (mask_out) *mask_out = Matrix<S>::Ones(input.rows(), input.cols());
    return input;
  }
  const S scale = static_cast<S>(1.0 / (1.0 - p));
  Matrix<S> mask(input.rows(), input.cols());
  for (Eigen::Index i = 0; i < input.rows(); ++i)
    for (Eigen::Index j = 0; j < input.cols(); ++j)
      mask(i, j) = rng.bernoulli(p) ? S(0) : scale;
  Matrix<S> out = input.cwiseProduct(mask);
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

template <class S>
Matrix<S> dropout_backward(const Matrix<S>& mask, const Matrix<S>& grad_out) {
  return grad_out.cwiseProduct(mask);
}

// ---------------------------------------------------------------------------
// Max aggregation over each sample's points. Ties break to the lowest point
// index; the backward pass routes each pooled gradient to its argmax point.
// ---------------------------------------------------------------------------

template <class S>
struct MaxAggregateOut {
  Matrix<S> pooled;        // batch x features
  IndexMatrix argmax;      // batch x features, point index within the sample
};

template <class S>
MaxAggregateOut<S> max_aggregate(const Matrix<S>& per_point, int batch, int points) {
  detail::require(points >= 1, "max_aggregate: needs at least one point");
  detail::require(per_point.rows() == static_cast<Eigen::Index>(batch) * points,
                  "max_aggregate: row count must equal batch * points");
  const Eigen::Index features = per_point.cols();
  MaxAggregateOut<S> out;
  out.pooled.resize(batch, features);
  out.argmax.resize(batch, features);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * points;
    out.pooled.row(b) = per_point.row(base);
    out.argmax.row(b).setZero();
    for (int k = 1; k < points; ++k) {
      const auto row = per_point.row(base + k);
      for (Eigen::Index f = 0; f < features; ++f) {
        if (row(f) > out.pooled(b, f)) {
          out.pooled(b, f) = row(f);
          out.argmax(b, f) = k;
        }
      }
    }
  }
  return out;
}

template <class S>
Matrix<S> max_aggregate_backward(const IndexMatrix& argmax,
                                 const Matrix<S>& grad_pooled, int points) {
  const int batch = static_cast<int>(grad_pooled.rows());
  const Eigen::Index features = grad_pooled.cols();
  Matrix<S> grad =
      Matrix<S>::Zero(static_cast<Eigen::Index>(batch) * points, features);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * points;
    for (Eigen::Index f = 0; f < features; ++f)
      grad(base + argmax(b, f), f) += grad_pooled(b, f);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, mean over the batch.
// ---------------------------------------------------------------------------

template <class S>
struct SoftmaxCrossEntropyOut {
  double loss = 0.0;
  Matrix<S> grad_logits;  // (softmax - one_hot) / batch
};

template <class S>
SoftmaxCrossEntropyOut<S> softmax_cross_entropy(const Matrix<S>& logits,
                                                const std::vector<int>& labels) {
  const Eigen::Index batch = logits.rows(), classes = logits.cols();
  detail::require(static_cast<Eigen::Index>(labels.size()) == batch,
                  "cross_entropy: label count mismatch");
  SoftmaxCrossEntropyOut<S> out;
  out.grad_logits.resize(batch, classes);
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    detail::require(label >= 0 && label < classes, "cross_entropy: label out of range");
    const S row_max = logits.row(i).maxCoeff();
    double denom = 0.0;
    for (Eigen::Index j = 0; j < classes; ++j)
      denom += std::exp(static_cast<double>(logits(i, j) - row_max));
    const double log_denom = std::log(denom);
    total += log_denom - static_cast<double>(logits(i, label) - row_max);
    for (Eigen::Index j = 0; j < classes; ++j) {
      const double p =
          std::exp(static_cast<double>(logits(i, j) - row_max)) / denom;
      out.grad_logits(i, j) =
          static_cast<S>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(batch));
    }
  }
  out.loss = total / static_cast<double>(batch);
  return out;
}

}  // namespace rcr
