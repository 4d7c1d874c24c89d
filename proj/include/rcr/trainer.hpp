#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rcr/adam.hpp"
#include "rcr/model.hpp"
#include "rcr/rehearsal.hpp"
#include "rcr/schedule.hpp"

namespace rcr {

enum class Method { kRcr, kFineTune, kIncremental, kJointSupervised };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kRcr: return "rcr";
    case Method::kFineTune: return "fine_tune";
    case Method::kIncremental: return "incremental";
    case Method::kJointSupervised: return "joint";
  }
  return "?";
}

struct AdamSettings {
  double lr_initial = 1e-3;
  double lr_decay = 0.7;
  std::int64_t lr_interval_steps = 100000;
  double lr_floor = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct BnSettings {
  double initial_momentum = 0.5;
  double decay_factor = 0.5;
  std::int64_t decay_interval_samples = 100000;
  double momentum_floor = 0.01;
};

struct TrainConfig {
  int max_epochs = 1000;
  int patience_epochs = 100;
  double improvement_threshold = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(max_epochs >= 1, "train: max_epochs must be >= 1");
    detail::require(patience_epochs >= 1 && patience_epochs <= max_epochs,
                    "train: patience must be in [1, max_epochs]");
    detail::require(batch_size >= 2, "train: batch_size must be >= 2");
  }
};

struct RunSpec {
  ModelConfig model;
  TrainConfig train;
  CompressionPolicy compression;
  AugmentPolicy augment;
  AdamSettings adam;
  BnSettings bn;
};

struct EpochStats {
  double loss = 0.0;
  double classification = 0.0;
  double reconstruction = 0.0;
};

struct TaskTrace {
  int task_id = 0;
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based
};

namespace detail {

template <class S>
AdamOptimizer<S> make_optimizer(const AdamSettings& s) {
  AdamOptimizer<S> opt;
  opt.lr_initial = s.lr_initial;
  opt.lr_decay = s.lr_decay;
  opt.lr_interval_steps = s.lr_interval_steps;
  opt.lr_floor = s.lr_floor;
  opt.beta1 = s.beta1;
  opt.beta2 = s.beta2;
  return opt;
}

template <class S>
void apply_bn_settings(RcrModel<S>& model, const BnSettings& s) {
  for (auto* bn : model.batchnorms()) {
    bn->initial_momentum = s.initial_momentum;
    bn->decay_factor = s.decay_factor;
    bn->decay_interval_samples = s.decay_interval_samples;
    bn->momentum_floor = s.momentum_floor;
  }
}

/// Repeats a cloud's own points cyclically up to `target` rows. Max
/// aggregation is duplicate-invariant, so padded clouds encode identically;
/// padding exists only to keep training sub-batches rectangular.
template <class S>
Matrix<S> pad_points(const Matrix<S>& pts, int target) {
  if (pts.rows() >= target) return pts;
  Matrix<S> out(target, pts.cols());
  for (int r = 0; r < target; ++r)
    out.row(r) = pts.row(r % static_cast<int>(pts.rows()));
  return out;
}

struct TrainGroup {
  int cardinality = 0;
  std::vector<int> members;  // indices into the batch sample list
};

/// Groups batch members by cardinality (descending). Groups of a single
/// cloud would break train-mode contracts, so lone groups are merged with a
/// neighbor, padding the smaller clouds up.
inline std::vector<TrainGroup> build_train_groups(const std::vector<int>& cardinalities) {
  std::vector<TrainGroup> groups;
  for (size_t i = 0; i < cardinalities.size(); ++i) {
    const int k = cardinalities[i];
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const TrainGroup& g) { return g.cardinality == k; });
    if (it == groups.end()) {
      groups.push_back({k, {static_cast<int>(i)}});
    } else {
      it->members.push_back(static_cast<int>(i));
    }
  }
  std::sort(groups.begin(), groups.end(),
            [](const TrainGroup& a, const TrainGroup& b) {
              return a.cardinality > b.cardinality;
            });
  // Merge lone groups into the next larger one (or absorb the next smaller
  // group when the lone group is already the largest).
  bool merged = true;
  while (merged && groups.size() >= 2) {
    merged = false;
    for (size_t i = 0; i < groups.size(); ++i) {
      if (groups[i].members.size() >= 2) continue;
      const size_t target = i == 0 ? 1 : i - 1;
      TrainGroup& dst = groups[i == 0 ? 0 : target];
      TrainGroup& src = groups[i == 0 ? 1 : i];
      dst.members.insert(dst.members.end(), src.members.begin(), src.members.end());
      groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(i == 0 ? 1 : i));
      merged = true;
      break;
    }
  }
  return groups;
}

}  // namespace detail

/// One training step over a composed minibatch. Returns the joint loss.
/// `batch_clouds` are the augmented network inputs; `batch_labels` are logit
/// slots. Gradients accumulate across cardinality groups into a single
/// optimizer step.
template <class S>
JointLossResult train_step(RcrModel<S>& model, AdamOptimizer<S>& optimizer,
                           const std::vector<PointCloudT<S>>& batch_clouds,
                           const std::vector<int>& batch_labels, Rng& rng) {
  const int batch = static_cast<int>(batch_clouds.size());
  std::vector<int> cardinalities(batch_clouds.size());
  for (size_t i = 0; i < batch_clouds.size(); ++i)
    cardinalities[i] = batch_clouds[i].count();
  auto groups = detail::build_train_groups(cardinalities);

  // Row order of z (and everything derived from it) is group-major.
  std::vector<int> row_to_sample;
  row_to_sample.reserve(batch_clouds.size());
  std::vector<EncoderTape<S>> tapes(groups.size());
  Matrix<S> z(batch, model.config().z_size);
  Eigen::Index row = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    const int gb = static_cast<int>(group.members.size());
    Matrix<S> packed(static_cast<Eigen::Index>(gb) * group.cardinality,
                     model.config().input_dims);
    for (int b = 0; b < gb; ++b) {
      const int sample = group.members[static_cast<size_t>(b)];
      packed.middleRows(static_cast<Eigen::Index>(b) * group.cardinality,
                        group.cardinality) =
          detail::pad_points(batch_clouds[static_cast<size_t>(sample)].pts,
                             group.cardinality);
      row_to_sample.push_back(sample);
    }
    auto enc = model.encoder_forward(packed, gb, group.cardinality, &tapes[g]);
    z.middleRows(row, gb) = enc.z;
    row += gb;
  }

  std::vector<int> labels(static_cast<size_t>(batch));
  std::vector<Matrix<S>> recon_targets;
  if (model.config().reconstruction) recon_targets.resize(static_cast<size_t>(batch));
  for (int r = 0; r < batch; ++r) {
    const int sample = row_to_sample[static_cast<size_t>(r)];
    labels[static_cast<size_t>(r)] = batch_labels[static_cast<size_t>(sample)];
    if (model.config().reconstruction)
      recon_targets[static_cast<size_t>(r)] = batch_clouds[static_cast<size_t>(sample)].pts;
  }

  ClassifierTape<S> cls_tape;
  Matrix<S> logits = model.classifier_forward(z, &rng, &cls_tape);

  DecoderTape<S> dec_tape;
  Matrix<S> decoded;
  if (model.config().reconstruction) decoded = model.decoder_forward(z, &dec_tape);

  Matrix<S> grad_logits, grad_decoded;
  const JointLossResult loss = model.joint_loss(
      recon_targets, labels, decoded, logits, &grad_logits,
      model.config().reconstruction ? &grad_decoded : nullptr);

  model.zero_grads();
  Matrix<S> dz = model.classifier_backward(cls_tape, grad_logits);
  if (model.config().reconstruction)
    dz += model.decoder_backward(dec_tape, grad_decoded);
  row = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    const int gb = static_cast<int>(groups[g].members.size());
    const Matrix<S> dz_group = dz.middleRows(row, gb);
    model.encoder_backward(tapes[g], dz_group);
    row += gb;
  }
  optimizer.step(model.parameters());
  return loss;
}

/// Trains on one task until the epoch-mean loss stops improving: at most
/// max_epochs, stopping after patience_epochs consecutive epochs without an
/// improvement beyond improvement_threshold. Parameters (and BN running
/// statistics) of the best epoch are restored on exit; schedule counters
/// keep their final values.
template <class S>
TaskTrace train_task(RcrModel<S>& model, AdamOptimizer<S>& optimizer,
                     const LabeledDataset& train_data,
                     const std::vector<int>& new_indices,
                     const RehearsalStore& store,
                     const std::vector<int>& class_to_logit, const RunSpec& spec,
                     Rng& rng, int task_id = 0) {
  spec.train.validate();
  detail::require(!new_indices.empty(), "train_task: no training samples");
  model.set_mode(Mode::kTrain);

  TaskTrace trace;
  trace.task_id = task_id;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::optional<typename RcrModel<S>::Snapshot> best_state;

  std::vector<int> epoch_order = new_indices;
  for (int epoch = 1; epoch <= spec.train.max_epochs; ++epoch) {
    // Fisher-Yates reshuffle of the new data each epoch.
    for (size_t i = epoch_order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.uniform_index(i));
      std::swap(epoch_order[i - 1], epoch_order[j]);
    }

    double weighted_loss = 0.0, weighted_lc = 0.0, weighted_lr = 0.0;
    long seen = 0;
    size_t pos = 0;
    while (pos < epoch_order.size()) {
      MinibatchSpec batch = compose_minibatch(epoch_order, pos, store,
                                              spec.train.batch_size, rng);
      if (epoch_order.size() - pos == 1)  // avoid a lone trailing cloud
        batch.new_indices.push_back(epoch_order[pos++]);

      std::vector<PointCloudT<S>> clouds;
      std::vector<int> labels;
      clouds.reserve(batch.new_indices.size() + batch.store_indices.size());
      auto add = [&](const LabeledSample& sample) {
        PointCloudT<S> cloud;
        cloud.pts = sample.cloud.pts.template cast<S>();
        clouds.push_back(augment(cloud, spec.augment, rng));
        const int slot = class_to_logit[static_cast<size_t>(sample.label)];
        detail::require(slot >= 0, "train_task: label not covered by classifier");
        labels.push_back(slot);
      };
      for (int idx : batch.new_indices)
        add(train_data.samples[static_cast<size_t>(idx)]);
      for (int idx : batch.store_indices)
        add(store.samples[static_cast<size_t>(idx)]);

      const JointLossResult loss = train_step(model, optimizer, clouds, labels, rng);
      if (!std::isfinite(loss.total))
        throw NumericError("train_task: non-finite loss (task " +
                           std::to_string(task_id) + ", epoch " +
                           std::to_string(epoch) + ", loss_c " +
                           std::to_string(loss.classification) + ", loss_r " +
                           std::to_string(loss.reconstruction) + ")");
      const auto weight = static_cast<double>(clouds.size());
      weighted_loss += loss.total * weight;
      weighted_lc += loss.classification * weight;
      weighted_lr += loss.reconstruction * weight;
      seen += static_cast<long>(clouds.size());
    }

    EpochStats stats;
    stats.loss = weighted_loss / static_cast<double>(seen);
    stats.classification = weighted_lc / static_cast<double>(seen);
    stats.reconstruction = weighted_lr / static_cast<double>(seen);
    trace.epochs.push_back(stats);

    if (stats.loss < best_loss - spec.train.improvement_threshold) {
      best_loss = stats.loss;
      best_epoch = epoch;
      best_state = model.snapshot();
    }
    if (epoch - best_epoch >= spec.train.patience_epochs) break;
  }

  if (best_state) model.restore(*best_state);
  trace.best_epoch = best_epoch;
  return trace;
}

// ---------------------------------------------------------------------------
// Full continual runs
// ---------------------------------------------------------------------------

struct RunOutput {
  AccuracyMatrix matrix;
  RehearsalStore store;
  std::vector<TaskTrace> traces;
  std::vector<int> class_to_logit;
  std::vector<double> task_wall_seconds;
  std::uint64_t schedule_hash = 0;
  std::unique_ptr<RcrModel<float>> model;
};

namespace detail {

inline LabeledDataset subset(const LabeledDataset& data, const std::vector<int>& indices) {
  LabeledDataset out;
  out.class_count = data.class_count;
  out.class_names = data.class_names;
  out.samples.reserve(indices.size());
  for (int i : indices) out.samples.push_back(data.samples[static_cast<size_t>(i)]);
  return out;
}

}  // namespace detail

/// Algorithm-style continual loop: for each task, train jointly on new plus
/// rehearsal data, compress the finished task into the store, and evaluate
/// every task seen so far in both scenarios. `method` selects what enters
/// the store: compressed data (rcr), nothing (fine_tune), or the raw task
/// data (incremental).
inline RunOutput run_continual(const LabeledDataset& train_data,
                               const LabeledDataset& test_data,
                               const TaskSchedule& schedule, const RunSpec& spec,
                               Method method = Method::kRcr) {
  detail::require(schedule.task_count() >= 1, "run: empty schedule");
  detail::require(method != Method::kJointSupervised,
                  "run_continual: joint baseline uses run_joint_supervised");
  Rng master(spec.train.seed);
  Rng init_rng = master.fork();
  Rng train_rng = master.fork();
  Rng compress_rng = master.fork();

  RunOutput out;
  out.schedule_hash = schedule.hash();
  out.class_to_logit.assign(static_cast<size_t>(train_data.class_count), -1);

  ModelConfig cfg = spec.model;
  cfg.class_count = static_cast<int>(schedule.tasks.front().classes.size());
  out.model = std::make_unique<RcrModel<float>>(cfg, init_rng);
  detail::apply_bn_settings(*out.model, spec.bn);
  auto optimizer = detail::make_optimizer<float>(spec.adam);
  optimizer.attach(out.model->parameters());

  int seen_classes = 0;
  for (int t = 1; t <= schedule.task_count(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const TaskView& task = schedule.tasks[static_cast<size_t>(t - 1)];
    if (t > 1)
      out.model->expand_classifier(
          seen_classes + static_cast<int>(task.classes.size()), init_rng, &optimizer);
    for (int c : task.classes)
      out.class_to_logit[static_cast<size_t>(c)] = seen_classes++;

    out.traces.push_back(train_task(*out.model, optimizer, train_data,
                                    task.train_indices, out.store,
                                    out.class_to_logit, spec, train_rng, t));

    if (method == Method::kRcr) {
      const LabeledDataset task_data = detail::subset(train_data, task.train_indices);
      LabeledDataset compressed;
      if (spec.compression.strategy == CompressionStrategy::kRandom) {
        compressed = compress_random(task_data, spec.compression, compress_rng);
      } else {
        out.model->set_mode(Mode::kEval);
        compressed = compress_argmax(task_data, *out.model, spec.compression, compress_rng);
      }
      store_merge(out.store, compressed, t);
    } else if (method == Method::kIncremental) {
      store_merge(out.store, detail::subset(train_data, task.train_indices), t);
    }

    record_evaluation(out.matrix, *out.model, test_data, schedule, t, out.class_to_logit);
    out.task_wall_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return out;
}

/// Upper-bound baseline: one model trained once on all tasks' data pooled,
/// evaluated at the final task count only.
inline RunOutput run_joint_supervised(const LabeledDataset& train_data,
                                      const LabeledDataset& test_data,
                                      const TaskSchedule& schedule,
                                      const RunSpec& spec) {
  Rng master(spec.train.seed);
  Rng init_rng = master.fork();
  Rng train_rng = master.fork();

  RunOutput out;
  out.schedule_hash = schedule.hash();
  out.class_to_logit.assign(static_cast<size_t>(train_data.class_count), -1);
  std::vector<int> pooled;
  int seen = 0;
  for (const auto& task : schedule.tasks) {
    for (int c : task.classes) out.class_to_logit[static_cast<size_t>(c)] = seen++;
    pooled.insert(pooled.end(), task.train_indices.begin(), task.train_indices.end());
  }

  ModelConfig cfg = spec.model;
  cfg.class_count = seen;
  out.model = std::make_unique<RcrModel<float>>(cfg, init_rng);
  detail::apply_bn_settings(*out.model, spec.bn);
  auto optimizer = detail::make_optimizer<float>(spec.adam);
  optimizer.attach(out.model->parameters());

  const auto start = std::chrono::steady_clock::now();
  out.traces.push_back(train_task(*out.model, optimizer, train_data, pooled,
                                  out.store, out.class_to_logit, spec, train_rng, 1));
  record_evaluation(out.matrix, *out.model, test_data, schedule,
                    schedule.task_count(), out.class_to_logit);
  out.task_wall_seconds.push_back(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return out;
}

/// Dispatch by baseline kind; kRcr runs the full method.
inline RunOutput run_method(Method method, const LabeledDataset& train_data,
                            const LabeledDataset& test_data,
                            const TaskSchedule& schedule, const RunSpec& spec) {
  if (method == Method::kJointSupervised)
    return run_joint_supervised(train_data, test_data, schedule, spec);
  return run_continual(train_data, test_data, schedule, spec, method);
}

}  // namespace rcr
