#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rcr/adam.hpp"
#include "rcr/core.hpp"
#include "rcr/distances.hpp"
#include "rcr/nn.hpp"
#include "rcr/pointcloud.hpp"

namespace rcr {

struct ModelConfig {
  int input_dims = 3;        // N
  int z_size = 2048;         // latent width |z|
  int decoder_points = 2048; // points emitted by the decoder (M)
  int class_count = 2;       // current classifier width, grows over tasks
  bool reconstruction = true;
  double dropout_p = 0.3;
  // BN+ReLU follow the first four per-point layers; the fifth feeds max
  // aggregation directly. Set to also normalize after the fifth.
  bool encoder_bn_after_last = false;

  void validate() const {
    detail::require(input_dims == 2 || input_dims == 3,
                    "model: input_dims must be 2 or 3");
    detail::require(z_size >= 1, "model: z_size must be >= 1");
    detail::require(decoder_points >= 1, "model: decoder_points must be >= 1");
    detail::require(class_count >= 2, "model: class_count must be >= 2");
    detail::require(dropout_p >= 0.0 && dropout_p < 1.0,
                    "model: dropout_p must be in [0, 1)");
  }
};

template <class S>
struct EncoderTape {
  int batch = 0, points = 0;
  std::vector<Matrix<S>> layer_inputs;  // input to each per-point dense
  std::vector<BatchNormCache<S>> bn;
  std::vector<Matrix<S>> pre_relu;      // BN outputs, pre-activation
  Matrix<S> pre_pool;                   // per-point features fed to max
  IndexMatrix argmax;
};

template <class S>
struct DecoderTape {
  std::vector<Matrix<S>> layer_inputs;
  std::vector<Matrix<S>> pre_relu;
};

template <class S>
struct ClassifierTape {
  Matrix<S> in_z;
  Matrix<S> fc1_out;
  BatchNormCache<S> bn1;
  Matrix<S> bn1_out;
  Matrix<S> relu1_out;
  Matrix<S> fc2_out;
  Matrix<S> dropout_mask;
  Matrix<S> dropout_out;
  BatchNormCache<S> bn2;
  Matrix<S> bn2_out;
  Matrix<S> relu2_out;
};

template <class S>
struct EncoderResult {
  Matrix<S> z;             // batch x z_size
  IndexMatrix critical;    // batch x z_size argmax point indices
};

struct JointLossResult {
  double total = 0.0;
  double classification = 0.0;
  double reconstruction = 0.0;
};

/// Shared-encoder model: a per-point feature stack with max aggregation,
/// a reconstruction decoder, and a classification head. The three parts are
/// trained jointly; the decoder regularizes the shared features.
template <class S>
class RcrModel {
 public:
  RcrModel(const ModelConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    cfg.validate();
    const int widths[] = {cfg.input_dims, 64, 64, 64, 128, cfg.z_size};
    for (int i = 0; i < 5; ++i)
      enc_.emplace_back("encoder.fc" + std::to_string(i + 1), widths[i], widths[i + 1]);
    const int bn_count = cfg.encoder_bn_after_last ? 5 : 4;
    for (int i = 0; i < bn_count; ++i)
      enc_bn_.emplace_back("encoder.bn" + std::to_string(i + 1), widths[i + 1]);

    const int dec_widths[] = {cfg.z_size, 64, 128, 512, 1024,
                              cfg.decoder_points * cfg.input_dims};
    for (int i = 0; i < 5; ++i)
      dec_.emplace_back("decoder.fc" + std::to_string(i + 1), dec_widths[i],
                        dec_widths[i + 1]);

    cls1_ = DenseLayer<S>("classifier.fc1", cfg.z_size, 512);
    cls2_ = DenseLayer<S>("classifier.fc2", 512, 256);
    cls3_ = DenseLayer<S>("classifier.fc3", 256, cfg.class_count);
    cls_bn1_ = BatchNormState<S>("classifier.bn1", 512);
    cls_bn2_ = BatchNormState<S>("classifier.bn2", 256);

    for (auto& l : enc_) init_dense(l.weight, l.bias, init_rng);
    for (auto& l : dec_) init_dense(l.weight, l.bias, init_rng);
    init_dense(cls1_.weight, cls1_.bias, init_rng);
    init_dense(cls2_.weight, cls2_.bias, init_rng);
    init_dense(cls3_.weight, cls3_.bias, init_rng);
  }

  const ModelConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  // -- encoder ------------------------------------------------------------

  /// Point rows must be packed sample-major: (batch * points) x input_dims.
  EncoderResult<S> encoder_forward(const Matrix<S>& points, int batch,
                                   int points_per_cloud,
                                   EncoderTape<S>* tape = nullptr) {
    detail::require(points.cols() == cfg_.input_dims, "encoder: dimension mismatch");
    detail::require(points.rows() ==
                        static_cast<Eigen::Index>(batch) * points_per_cloud,
                    "encoder: row count must equal batch * points");
    detail::require(mode_ == Mode::kEval || batch >= 2,
                    "encoder: train mode needs a batch of at least 2 clouds");
    if (tape) {
      tape->batch = batch;
      tape->points = points_per_cloud;
      tape->layer_inputs.assign(5, {});
      tape->bn.assign(enc_bn_.size(), {});
      tape->pre_relu.assign(enc_bn_.size(), {});
    }
    Matrix<S> h = points;
    for (size_t i = 0; i < enc_.size(); ++i) {
      if (tape) tape->layer_inputs[i] = h;
      h = dense_forward(enc_[i], h);
      if (i < enc_bn_.size()) {
        BatchNormCache<S>* cache = tape ? &tape->bn[i] : nullptr;
        h = batchnorm_forward(enc_bn_[i], h, mode_, cache, batch);
        if (tape) tape->pre_relu[i] = h;
        h = relu_forward(h);
      }
    }
    auto agg = max_aggregate(h, batch, points_per_cloud);
    if (tape) {
      tape->argmax = agg.argmax;
      tape->pre_pool = std::move(h);
    }
    return {std::move(agg.pooled), std::move(agg.argmax)};
  }

  /// Returns the gradient with respect to the packed input points.
  Matrix<S> encoder_backward(const EncoderTape<S>& tape, const Matrix<S>& grad_z) {
    Matrix<S> d = max_aggregate_backward(tape.argmax, grad_z, tape.points);
    for (int i = 4; i >= 0; --i) {
      const size_t ui = static_cast<size_t>(i);
      if (ui < enc_bn_.size()) {
        d = relu_backward(tape.pre_relu[ui], d);
        d = batchnorm_backward(enc_bn_[ui], tape.bn[ui], d);
      }
      d = dense_backward(enc_[ui], tape.layer_inputs[ui], d);
    }
    return d;
  }

  // -- decoder ------------------------------------------------------------

  /// Emits batch x (decoder_points * input_dims); rows reshape to M x N.
  Matrix<S> decoder_forward(const Matrix<S>& z, DecoderTape<S>* tape = nullptr) {
    detail::require(z.cols() == cfg_.z_size, "decoder: latent width mismatch");
    if (tape) {
      tape->layer_inputs.assign(5, {});
      tape->pre_relu.assign(4, {});
    }
    Matrix<S> h = z;
    for (size_t i = 0; i < dec_.size(); ++i) {
      if (tape) tape->layer_inputs[i] = h;
      h = dense_forward(dec_[i], h);
      if (i + 1 < dec_.size()) {
        if (tape) tape->pre_relu[i] = h;
        h = relu_forward(h);
      }
    }
    return h;
  }

  Matrix<S> decoder_backward(const DecoderTape<S>& tape, const Matrix<S>& grad_out) {
    Matrix<S> d = grad_out;
    for (int i = 4; i >= 0; --i) {
      const size_t ui = static_cast<size_t>(i);
      if (ui + 1 < dec_.size()) d = relu_backward(tape.pre_relu[ui], d);
      d = dense_backward(dec_[ui], tape.layer_inputs[ui], d);
    }
    return d;
  }

  // -- classifier -----------------------------------------------------------

  Matrix<S> classifier_forward(const Matrix<S>& z, Rng* rng = nullptr,
                               ClassifierTape<S>* tape = nullptr) {
    detail::require(z.cols() == cfg_.z_size, "classifier: latent width mismatch");
    detail::require(mode_ == Mode::kEval || rng != nullptr,
                    "classifier: train mode needs a random source for dropout");
    ClassifierTape<S> local;
    ClassifierTape<S>& t = tape ? *tape : local;
    const bool keep = tape != nullptr;

    if (keep) t.in_z = z;
    t.fc1_out = dense_forward(cls1_, z);
    t.bn1_out = batchnorm_forward(cls_bn1_, t.fc1_out, mode_, keep ? &t.bn1 : nullptr,
                                  z.rows());
    t.relu1_out = relu_forward(t.bn1_out);
    t.fc2_out = dense_forward(cls2_, t.relu1_out);
    Rng unused(0);
    t.dropout_out = dropout_forward(t.fc2_out, cfg_.dropout_p, mode_,
                                    rng ? *rng : unused, keep ? &t.dropout_mask : nullptr);
    t.bn2_out = batchnorm_forward(cls_bn2_, t.dropout_out, mode_, keep ? &t.bn2 : nullptr,
                                  z.rows());
    t.relu2_out = relu_forward(t.bn2_out);
    return dense_forward_columnwise(cls3_, t.relu2_out);
  }

  Matrix<S> classifier_backward(const ClassifierTape<S>& tape,
                                const Matrix<S>& grad_logits) {
    Matrix<S> d = dense_backward(cls3_, tape.relu2_out, grad_logits);
    d = relu_backward(tape.bn2_out, d);
    d = batchnorm_backward(cls_bn2_, tape.bn2, d);
    d = dropout_backward(tape.dropout_mask, d);
    d = dense_backward(cls2_, tape.relu1_out, d);
    d = relu_backward(tape.bn1_out, d);
    d = batchnorm_backward(cls_bn1_, tape.bn1, d);
    return dense_backward(cls1_, tape.in_z, d);
  }

  // -- joint loss -----------------------------------------------------------

  /// Eq-style joint objective: batch-mean cross-entropy plus batch-mean
  /// Chamfer distance between each input cloud and its reconstruction.
  /// Gradients are written to grad_logits / grad_decoded when requested.
  JointLossResult joint_loss(const std::vector<Matrix<S>>& input_clouds,
                             const std::vector<int>& labels,
                             const Matrix<S>& decoded, const Matrix<S>& logits,
                             Matrix<S>* grad_logits = nullptr,
                             Matrix<S>* grad_decoded = nullptr) const {
    const int batch = static_cast<int>(logits.rows());
    detail::require(static_cast<int>(labels.size()) == batch,
                    "joint_loss: label count mismatch");
    JointLossResult result;

    auto ce = softmax_cross_entropy(logits, labels);
    result.classification = ce.loss;
    if (grad_logits) *grad_logits = std::move(ce.grad_logits);

    if (cfg_.reconstruction) {
      detail::require(static_cast<int>(input_clouds.size()) == batch &&
                          decoded.rows() == batch,
                      "joint_loss: reconstruction batch mismatch");
      const int m = cfg_.decoder_points, n = cfg_.input_dims;
      if (grad_decoded) grad_decoded->setZero(batch, decoded.cols());
      double total = 0.0;
      for (int i = 0; i < batch; ++i) {
        Eigen::Map<const Matrix<S>> recon(decoded.row(i).data(), m, n);
        Matrix<S> recon_mat = recon;
        total += chamfer(input_clouds[static_cast<size_t>(i)], recon_mat);
        if (grad_decoded) {
          auto grads = chamfer_gradient(input_clouds[static_cast<size_t>(i)], recon_mat);
          Eigen::Map<Matrix<S>> row(grad_decoded->row(i).data(), m, n);
          row = grads.second / static_cast<S>(batch);
        }
      }
      result.reconstruction = total / batch;
    }
    result.total = result.classification + result.reconstruction;
    return result;
  }

  // -- classifier expansion ---------------------------------------------------

  /// Widens the final layer to cover new classes. Existing columns are kept
  /// bit-exact; new columns draw from the standard init. When an optimizer is
  /// given, its moment slots for the final layer grow in place so existing
  /// moments carry over and new entries start at zero.
  void expand_classifier(int new_class_count, Rng& rng,
                         AdamOptimizer<S>* optimizer = nullptr) {
    detail::require(new_class_count > cfg_.class_count,
                    "expand_classifier: class count must increase");
    const Eigen::Index in = cls3_.weight.w.rows();
    const Eigen::Index old_c = cls3_.weight.w.cols();
    const Eigen::Index new_c = new_class_count;

    Matrix<S> w = Matrix<S>::Zero(in, new_c);
    w.leftCols(old_c) = cls3_.weight.w;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < in; ++i)
      for (Eigen::Index j = old_c; j < new_c; ++j)
        w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
    cls3_.weight.w = std::move(w);
    cls3_.weight.g = Matrix<S>::Zero(in, new_c);

    Matrix<S> b = Matrix<S>::Zero(1, new_c);
    b.leftCols(old_c) = cls3_.bias.w;
    cls3_.bias.w = std::move(b);
    cls3_.bias.g = Matrix<S>::Zero(1, new_c);

    cfg_.class_count = new_class_count;
    if (optimizer) {
      const size_t n_params = parameters().size();
      optimizer->grow_slot(n_params - 2, in, new_c);  // fc3.weight
      optimizer->grow_slot(n_params - 1, 1, new_c);   // fc3.bias
    }
  }

  // -- parameter access --------------------------------------------------------

  /// Fixed order; the final classifier layer is always the last two entries.
  std::vector<Param<S>*> parameters() {
    std::vector<Param<S>*> out;
    for (size_t i = 0; i < enc_.size(); ++i) {
      out.push_back(&enc_[i].weight);
      out.push_back(&enc_[i].bias);
      if (i < enc_bn_.size()) {
        out.push_back(&enc_bn_[i].gamma);
        out.push_back(&enc_bn_[i].beta);
      }
    }
    for (auto& l : dec_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&cls1_.weight);
    out.push_back(&cls1_.bias);
    out.push_back(&cls_bn1_.gamma);
    out.push_back(&cls_bn1_.beta);
    out.push_back(&cls2_.weight);
    out.push_back(&cls2_.bias);
    out.push_back(&cls_bn2_.gamma);
    out.push_back(&cls_bn2_.beta);
    out.push_back(&cls3_.weight);
    out.push_back(&cls3_.bias);
    return out;
  }

  std::vector<Param<S>*> decoder_parameters() {
    std::vector<Param<S>*> out;
    for (auto& l : dec_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<BatchNormState<S>*> batchnorms() {
    std::vector<BatchNormState<S>*> out;
    for (auto& bn : enc_bn_) out.push_back(&bn);
    out.push_back(&cls_bn1_);
    out.push_back(&cls_bn2_);
    return out;
  }

  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // -- snapshots for best-epoch restoration -------------------------------------

  /// Captures parameter values and BN running statistics. Schedule counters
  /// (BN samples_seen, optimizer steps) are intentionally excluded: they
  /// advance monotonically through a run.
  struct Snapshot {
    std::vector<Matrix<S>> params;
    std::vector<Matrix<S>> bn_means, bn_vars;
  };

  Snapshot snapshot() {
    Snapshot s;
    for (auto* p : parameters()) s.params.push_back(p->w);
    for (auto* bn : batchnorms()) {
      s.bn_means.push_back(bn->running_mean);
      s.bn_vars.push_back(bn->running_var);
    }
    return s;
  }

  void restore(const Snapshot& s) {
    auto params = parameters();
    detail::require(params.size() == s.params.size(), "restore: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) params[i]->w = s.params[i];
    auto bns = batchnorms();
    for (size_t i = 0; i < bns.size(); ++i) {
      bns[i]->running_mean = s.bn_means[i];
      bns[i]->running_var = s.bn_vars[i];
    }
  }

 private:
  ModelConfig cfg_;
  std::vector<DenseLayer<S>> enc_;
  std::vector<BatchNormState<S>> enc_bn_;
  std::vector<DenseLayer<S>> dec_;
  DenseLayer<S> cls1_, cls2_, cls3_;
  BatchNormState<S> cls_bn1_, cls_bn2_;
  Mode mode_ = Mode::kTrain;
};

/// Packs equal-cardinality clouds into a sample-major point matrix.
template <class S>
Matrix<S> pack_clouds(const std::vector<const PointCloudT<S>*>& clouds) {
  detail::require(!clouds.empty(), "pack: empty batch");
  const int k = clouds.front()->count();
  const int n = clouds.front()->dims();
  Matrix<S> packed(static_cast<Eigen::Index>(clouds.size()) * k, n);
  for (size_t i = 0; i < clouds.size(); ++i) {
    detail::require(clouds[i]->count() == k && clouds[i]->dims() == n,
                    "pack: clouds must share cardinality and dimensionality");
    packed.middleRows(static_cast<Eigen::Index>(i) * k, k) = clouds[i]->pts;
  }
  return packed;
}

}  // namespace rcr
