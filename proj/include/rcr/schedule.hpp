#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "rcr/core.hpp"
#include "rcr/model.hpp"
#include "rcr/pointcloud.hpp"

namespace rcr {

enum class Ordering { kByPopulation, kSplitOrder };
enum class Scenario { kTaskIl, kClassIl };

inline const char* scenario_name(Scenario s) {
  return s == Scenario::kTaskIl ? "task_il" : "class_il";
}

/// One task: a disjoint set of class labels plus its train/test sample
/// indices into the owning datasets.
struct TaskView {
  int task_id = 0;  // 1-based
  std::vector<int> classes;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

struct TaskSchedule {
  std::vector<TaskView> tasks;
  int classes_per_task = 2;

  int task_count() const { return static_cast<int>(tasks.size()); }

  /// Classes in introduction order; position in this list is the logit slot.
  std::vector<int> classes_through(int tasks_trained) const {
    std::vector<int> out;
    for (int t = 0; t < tasks_trained; ++t)
      out.insert(out.end(), tasks[static_cast<size_t>(t)].classes.begin(),
                 tasks[static_cast<size_t>(t)].classes.end());
    return out;
  }

  std::uint64_t hash() const {
    std::string repr;
    for (const auto& t : tasks) {
      repr += std::to_string(t.task_id) + ":";
      for (int c : t.classes) repr += std::to_string(c) + ",";
      repr += ";";
    }
    return fnv1a(repr);
  }
};

/// Groups classes into tasks. by_population sorts by descending train-sample
/// count (ties by ascending class id) before chunking; split_order chunks in
/// label order: (0,1), (2,3), ...
/// num_tasks == 0 means as many full tasks as the class count allows.
inline TaskSchedule build_task_schedule(const LabeledDataset& train,
                                        const LabeledDataset& test,
                                        int classes_per_task, Ordering ordering,
                                        int num_tasks = 0) {
  detail::require(classes_per_task >= 1, "schedule: classes_per_task must be >= 1");
  detail::require(train.class_count == test.class_count,
                  "schedule: train/test class inventories differ");
  const int max_tasks = train.class_count / classes_per_task;
  if (num_tasks == 0) num_tasks = max_tasks;
  detail::require(num_tasks >= 1 && train.class_count >= classes_per_task * num_tasks,
                  "schedule: not enough classes for the requested task count");

  std::vector<int> order(static_cast<size_t>(train.class_count));
  std::iota(order.begin(), order.end(), 0);
  if (ordering == Ordering::kByPopulation) {
    const auto counts = train.per_class_counts();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const int ca = counts[static_cast<size_t>(a)], cb = counts[static_cast<size_t>(b)];
      return ca > cb || (ca == cb && a < b);
    });
  }

  TaskSchedule schedule;
  schedule.classes_per_task = classes_per_task;
  for (int t = 0; t < num_tasks; ++t) {
    TaskView task;
    task.task_id = t + 1;
    for (int c = 0; c < classes_per_task; ++c)
      task.classes.push_back(order[static_cast<size_t>(t * classes_per_task + c)]);
    schedule.tasks.push_back(std::move(task));
  }

  auto assign = [&](const LabeledDataset& data, bool is_train) {
    std::vector<int> class_to_task(static_cast<size_t>(data.class_count), -1);
    for (const auto& task : schedule.tasks)
      for (int c : task.classes) class_to_task[static_cast<size_t>(c)] = task.task_id;
    for (int i = 0; i < data.size(); ++i) {
      const int t = class_to_task[static_cast<size_t>(data.samples[static_cast<size_t>(i)].label)];
      if (t < 0) continue;  // class not scheduled
      auto& task = schedule.tasks[static_cast<size_t>(t - 1)];
      (is_train ? task.train_indices : task.test_indices).push_back(i);
    }
  };
  assign(train, true);
  assign(test, false);
  return schedule;
}

// ---------------------------------------------------------------------------
// Accuracy bookkeeping
// ---------------------------------------------------------------------------

struct AccuracyMatrix {
  struct Entry {
    int tasks_trained = 0;
    int task_evaluated = 0;
    Scenario scenario = Scenario::kTaskIl;
    double accuracy = 0.0;
    int test_count = 0;
  };
  struct Average {
    int tasks_trained = 0;
    Scenario scenario = Scenario::kTaskIl;
    double micro = 0.0;
    double macro = 0.0;
  };

  std::vector<Entry> entries;   // append-only within a run
  std::vector<Average> averages;

  const Entry* find(int tasks_trained, int task_evaluated, Scenario sc) const {
    for (const auto& e : entries)
      if (e.tasks_trained == tasks_trained && e.task_evaluated == task_evaluated &&
          e.scenario == sc)
        return &e;
    return nullptr;
  }
  const Average* find_average(int tasks_trained, Scenario sc) const {
    for (const auto& a : averages)
      if (a.tasks_trained == tasks_trained && a.scenario == sc) return &a;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Evaluation. One forward pass per test sample serves both scenarios:
// Class-IL takes the argmax over every logit seen so far, Task-IL restricts
// the argmax to the evaluated task's logit slots.
// ---------------------------------------------------------------------------

struct EvalSlice {
  // indexed by scenario: [0] task_il, [1] class_il
  std::vector<double> per_task_accuracy[2];
  std::vector<int> per_task_counts;
  double micro[2] = {0.0, 0.0};
  double macro[2] = {0.0, 0.0};
};

template <class S>
EvalSlice evaluate_tasks(RcrModel<S>& model, const LabeledDataset& test,
                         const TaskSchedule& schedule, int tasks_trained,
                         const std::vector<int>& class_to_logit,
                         int eval_chunk = 64) {
  detail::require(tasks_trained >= 1 && tasks_trained <= schedule.task_count(),
                  "evaluate: tasks_trained out of range");
  const Mode saved = model.mode();
  model.set_mode(Mode::kEval);

  EvalSlice slice;
  slice.per_task_counts.resize(static_cast<size_t>(tasks_trained), 0);
  slice.per_task_accuracy[0].assign(static_cast<size_t>(tasks_trained), 0.0);
  slice.per_task_accuracy[1].assign(static_cast<size_t>(tasks_trained), 0.0);

  long micro_correct[2] = {0, 0};
  long micro_total = 0;
  for (int t = 0; t < tasks_trained; ++t) {
    const TaskView& task = schedule.tasks[static_cast<size_t>(t)];
    std::vector<int> task_logits;
    for (int c : task.classes) {
      const int slot = class_to_logit[static_cast<size_t>(c)];
      detail::require(slot >= 0, "evaluate: model does not cover the task's classes");
      task_logits.push_back(slot);
    }

    long correct[2] = {0, 0};
    long total = 0;
    // Group by cardinality so ragged test sets still pack rectangles.
    std::vector<int> order = task.test_indices;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return test.samples[static_cast<size_t>(a)].cloud.count() <
             test.samples[static_cast<size_t>(b)].cloud.count();
    });
    size_t pos = 0;
    while (pos < order.size()) {
      const int k = test.samples[static_cast<size_t>(order[pos])].cloud.count();
      size_t end = pos;
      while (end < order.size() && end - pos < static_cast<size_t>(eval_chunk) &&
             test.samples[static_cast<size_t>(order[end])].cloud.count() == k)
        ++end;
      const int batch = static_cast<int>(end - pos);
      Matrix<S> packed(static_cast<Eigen::Index>(batch) * k, test.dims());
      for (int b = 0; b < batch; ++b)
        packed.middleRows(static_cast<Eigen::Index>(b) * k, k) =
            test.samples[static_cast<size_t>(order[pos + static_cast<size_t>(b)])]
                .cloud.pts.template cast<S>();
      auto enc = model.encoder_forward(packed, batch, k);
      Matrix<S> logits = model.classifier_forward(enc.z);
      for (int b = 0; b < batch; ++b) {
        const auto& sample =
            test.samples[static_cast<size_t>(order[pos + static_cast<size_t>(b)])];
        const int truth = class_to_logit[static_cast<size_t>(sample.label)];
        int global_best = 0;
        for (Eigen::Index j = 1; j < logits.cols(); ++j)
          if (logits(b, j) > logits(b, global_best)) global_best = static_cast<int>(j);
        int task_best = task_logits.front();
        for (int slot : task_logits)
          if (logits(b, slot) > logits(b, task_best)) task_best = slot;
        correct[0] += task_best == truth ? 1 : 0;
        correct[1] += global_best == truth ? 1 : 0;
        ++total;
      }
      pos = end;
    }

    slice.per_task_counts[static_cast<size_t>(t)] = static_cast<int>(total);
    for (int sc = 0; sc < 2; ++sc)
      slice.per_task_accuracy[sc][static_cast<size_t>(t)] =
          total > 0 ? static_cast<double>(correct[sc]) / static_cast<double>(total) : 0.0;
    micro_correct[0] += correct[0];
    micro_correct[1] += correct[1];
    micro_total += total;
  }

  for (int sc = 0; sc < 2; ++sc) {
    slice.micro[sc] = micro_total > 0
                          ? static_cast<double>(micro_correct[sc]) /
                                static_cast<double>(micro_total)
                          : 0.0;
    double sum = 0.0;
    for (double a : slice.per_task_accuracy[sc]) sum += a;
    slice.macro[sc] = sum / static_cast<double>(tasks_trained);
  }

  model.set_mode(saved);
  return slice;
}

/// Single-scenario view of evaluate_tasks, recorded into an AccuracyMatrix.
template <class S>
void record_evaluation(AccuracyMatrix& matrix, RcrModel<S>& model,
                       const LabeledDataset& test, const TaskSchedule& schedule,
                       int tasks_trained, const std::vector<int>& class_to_logit) {
  const EvalSlice slice =
      evaluate_tasks(model, test, schedule, tasks_trained, class_to_logit);
  for (int sc = 0; sc < 2; ++sc) {
    const Scenario scenario = sc == 0 ? Scenario::kTaskIl : Scenario::kClassIl;
    for (int j = 0; j < tasks_trained; ++j)
      matrix.entries.push_back({tasks_trained, j + 1, scenario,
                                slice.per_task_accuracy[sc][static_cast<size_t>(j)],
                                slice.per_task_counts[static_cast<size_t>(j)]});
    matrix.averages.push_back({tasks_trained, scenario, slice.micro[sc], slice.macro[sc]});
  }
}

}  // namespace rcr
