#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "rcr/model.hpp"
#include "rcr/pointcloud.hpp"

namespace rcr {

enum class CompressionStrategy { kRandom, kArgmax };

struct CompressionPolicy {
  CompressionStrategy strategy = CompressionStrategy::kRandom;
  int points_to_keep = 100;
  bool with_replacement = false;

  void validate() const {
    detail::require(points_to_keep >= 1, "compression: points_to_keep must be >= 1");
  }
};

/// Accumulated compressed past data, grown once per finished task.
struct RehearsalStore {
  std::vector<LabeledSample> samples;
  std::vector<int> per_task_counts;
  int last_task_id = -1;

  bool empty() const { return samples.empty(); }
  int size() const { return static_cast<int>(samples.size()); }
};

/// Replaces every cloud with a uniform random subsample; labels and sample
/// order are preserved.
inline LabeledDataset compress_random(const LabeledDataset& dataset,
                                      const CompressionPolicy& policy, Rng& rng) {
  policy.validate();
  detail::require(policy.strategy == CompressionStrategy::kRandom,
                  "compress_random: policy strategy mismatch");
  LabeledDataset out;
  out.class_count = dataset.class_count;
  out.class_names = dataset.class_names;
  out.samples.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples)
    out.samples.push_back({subsample_uniform(s.cloud, policy.points_to_keep,
                                             policy.with_replacement, rng),
                           s.label});
  return out;
}

/// Keeps each cloud's critical point set: the deduplicated argmax indices
/// that survive the encoder's max aggregation. Sets larger than
/// points_to_keep are uniformly subsampled without replacement.
template <class S>
LabeledDataset compress_argmax(const LabeledDataset& dataset, RcrModel<S>& model,
                               const CompressionPolicy& policy, Rng& rng) {
  policy.validate();
  detail::require(policy.strategy == CompressionStrategy::kArgmax,
                  "compress_argmax: policy strategy mismatch");
  detail::require(model.mode() == Mode::kEval, "compress_argmax: model must be in eval mode");
  LabeledDataset out;
  out.class_count = dataset.class_count;
  out.class_names = dataset.class_names;
  out.samples.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    Matrix<S> pts = s.cloud.pts.template cast<S>();
    auto enc = model.encoder_forward(pts, 1, s.cloud.count());
    std::vector<int> indices(enc.critical.data(),
                             enc.critical.data() + enc.critical.size());
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    if (static_cast<int>(indices.size()) > policy.points_to_keep) {
      auto keep = draw_indices(static_cast<int>(indices.size()),
                               policy.points_to_keep, false, rng);
      std::vector<int> reduced;
      reduced.reserve(keep.size());
      for (int i : keep) reduced.push_back(indices[static_cast<size_t>(i)]);
      std::sort(reduced.begin(), reduced.end());
      indices = std::move(reduced);
    }
    out.samples.push_back({gather(s.cloud, indices), s.label});
  }
  return out;
}

/// Appends a finished task's compressed data. Task ids must be presented in
/// strictly increasing order; existing samples are never touched.
inline void store_merge(RehearsalStore& store, const LabeledDataset& compressed,
                        int task_id) {
  detail::require(task_id > store.last_task_id,
                  "store_merge: task ids must be strictly increasing");
  store.samples.insert(store.samples.end(), compressed.samples.begin(),
                       compressed.samples.end());
  store.per_task_counts.push_back(compressed.size());
  store.last_task_id = task_id;
}

/// One minibatch: indices into the new task's data plus indices into the
/// store, grouped by point cardinality for the encoder. Sample order within
/// the batch is new-half first, then rehearsal.
struct MinibatchSpec {
  std::vector<int> new_indices;
  std::vector<int> store_indices;

  struct Group {
    int cardinality = 0;
    // (from_store, index) pairs in batch order
    std::vector<std::pair<bool, int>> members;
  };
};

/// Groups batch members by point count, descending, preserving batch order
/// within each group.
inline std::vector<MinibatchSpec::Group> group_by_cardinality(
    const MinibatchSpec& batch, const LabeledDataset& new_data,
    const RehearsalStore& store) {
  std::map<int, MinibatchSpec::Group, std::greater<int>> groups;
  for (int idx : batch.new_indices) {
    const int k = new_data.samples[static_cast<size_t>(idx)].cloud.count();
    auto& g = groups[k];
    g.cardinality = k;
    g.members.emplace_back(false, idx);
  }
  for (int idx : batch.store_indices) {
    const int k = store.samples[static_cast<size_t>(idx)].cloud.count();
    auto& g = groups[k];
    g.cardinality = k;
    g.members.emplace_back(true, idx);
  }
  std::vector<MinibatchSpec::Group> out;
  out.reserve(groups.size());
  for (auto& [k, g] : groups) out.push_back(std::move(g));
  return out;
}

/// Half/half minibatch composition. With an empty store the whole batch is
/// new data. `epoch_position` walks `epoch_order` (the shuffled new-data
/// indices) without replacement; rehearsal indices are drawn uniformly with
/// replacement from the whole store.
inline MinibatchSpec compose_minibatch(const std::vector<int>& epoch_order,
                                       size_t& epoch_position,
                                       const RehearsalStore& store, int batch_size,
                                       Rng& rng) {
  detail::require(batch_size >= 2, "minibatch: batch size must be >= 2");
  MinibatchSpec spec;
  const bool rehearse = !store.empty();
  const int new_count = rehearse ? (batch_size + 1) / 2 : batch_size;
  const int store_count = rehearse ? batch_size / 2 : 0;
  for (int i = 0; i < new_count && epoch_position < epoch_order.size(); ++i)
    spec.new_indices.push_back(epoch_order[epoch_position++]);
  for (int i = 0; i < store_count; ++i)
    spec.store_indices.push_back(static_cast<int>(
        rng.uniform_index(static_cast<std::uint64_t>(store.size()))));
  return spec;
}

}  // namespace rcr
