#pragma once

#include <cmath>
#include <vector>

#include "rcr/core.hpp"
#include "rcr/nn.hpp"

namespace rcr {

/// Adam without weight decay or AMSGrad. The learning rate follows a
/// staircase: lr = max(lr_floor, lr_initial * lr_decay^floor(steps/interval)),
/// where steps counts optimizer invocations.
template <class S>
class AdamOptimizer {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lr_initial = 1e-3;
  double lr_decay = 0.7;
  std::int64_t lr_interval_steps = 100000;
  double lr_floor = 1e-5;

  AdamOptimizer() = default;

  /// Creates zeroed moment slots matching the given parameter list. Must be
  /// called before step(); slot order is the parameter order.
  void attach(const std::vector<Param<S>*>& params) {
    slots_.clear();
    slots_.reserve(params.size());
    for (const auto* p : params)
      slots_.push_back({Matrix<S>::Zero(p->w.rows(), p->w.cols()),
                        Matrix<S>::Zero(p->w.rows(), p->w.cols())});
  }

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  size_t slot_count() const { return slots_.size(); }

  double effective_lr() const {
    const auto k = step_count_ / lr_interval_steps;
    return std::max(lr_floor, lr_initial * std::pow(lr_decay, static_cast<double>(k)));
  }

  /// One update over all parameters; advances the step counter once.
  /// Throws NumericError on non-finite gradients.
  void step(const std::vector<Param<S>*>& params) {
    detail::require(params.size() == slots_.size(),
                    "adam: parameter list does not match attached slots");
    const double lr = effective_lr();
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
      Param<S>& p = *params[i];
      Slot& slot = slots_[i];
      if (!p.g.allFinite())
        throw NumericError("adam: non-finite gradient for " + p.name);
      slot.m = S(beta1) * slot.m + S(1.0 - beta1) * p.g;
      slot.v.array() =
          S(beta2) * slot.v.array() + S(1.0 - beta2) * p.g.array().square();
      // p -= lr * m_hat / (sqrt(v_hat) + eps)
      p.w.array() -= S(lr) * (slot.m.array() / S(bc1)) /
                     ((slot.v.array() / S(bc2)).sqrt() + S(epsilon));
    }
  }

  /// Grows the moment slot at `index` to `rows x cols`, preserving existing
  /// moments in the top-left block and zero-filling new entries. Used when
  /// the classifier's final layer gains output columns.
  void grow_slot(size_t index, Eigen::Index rows, Eigen::Index cols) {
    detail::require(index < slots_.size(), "adam: slot index out of range");
    Slot& slot = slots_[index];
    detail::require(rows >= slot.m.rows() && cols >= slot.m.cols(),
                    "adam: slots may only grow");
    Matrix<S> m = Matrix<S>::Zero(rows, cols);
    Matrix<S> v = Matrix<S>::Zero(rows, cols);
    m.topLeftCorner(slot.m.rows(), slot.m.cols()) = slot.m;
    v.topLeftCorner(slot.v.rows(), slot.v.cols()) = slot.v;
    slot.m = std::move(m);
    slot.v = std::move(v);
  }

 private:
  struct Slot {
    Matrix<S> m, v;
  };
  std::vector<Slot> slots_;
  std::int64_t step_count_ = 0;
};

/// Free-function form: one Adam update for a single parameter group.
template <class S>
void adam_step(AdamOptimizer<S>& opt, const std::vector<Param<S>*>& params) {
  opt.step(params);
}

}  // namespace rcr
