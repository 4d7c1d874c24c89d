#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "rcr/core.hpp"

namespace rcr {

/// Static KD-tree over the rows of a K x N point matrix (N small, 2 or 3).
/// Built once per query batch; nearest-neighbor results are deterministic:
/// exact distance ties resolve to the lowest original row index.
template <class S>
class KdTree {
 public:
  explicit KdTree(const Matrix<S>& points, int leaf_size = 8)
      : pts_(points), leaf_size_(leaf_size) {
    const int n = static_cast<int>(points.rows());
    order_.resize(static_cast<size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(static_cast<size_t>(2 * n / leaf_size_ + 4));
    root_ = build(0, n);
  }

  struct Hit {
    int index = -1;
    double sq_dist = std::numeric_limits<double>::infinity();
  };

  /// Nearest row to `q` (length-N vector).
  Hit nearest(const RowVec<S>& q) const {
    Hit best;
    search(root_, q, best);
    return best;
  }

 private:
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
    int axis = 0;
    S split = S(0);
  };

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin <= leaf_size_) {
      // Sorted leaves make the lowest-index tie rule fall out of scan order.
      std::sort(order_.begin() + begin, order_.begin() + end);
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    // Split on the widest axis at the median.
    const int dims = static_cast<int>(pts_.cols());
    int axis = 0;
    S best_span = S(-1);
    for (int d = 0; d < dims; ++d) {
      S lo = pts_(order_[static_cast<size_t>(begin)], d);
      S hi = lo;
      for (int i = begin + 1; i < end; ++i) {
        const S v = pts_(order_[static_cast<size_t>(i)], d);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_span) {
        best_span = hi - lo;
        axis = d;
      }
    }
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       const S va = pts_(a, axis), vb = pts_(b, axis);
                       return va < vb || (va == vb && a < b);
                     });
    node.axis = axis;
    node.split = pts_(order_[static_cast<size_t>(mid)], axis);
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<size_t>(self)].left = left;
    nodes_[static_cast<size_t>(self)].right = right;
    return self;
  }

  void search(int node_id, const RowVec<S>& q, Hit& best) const {
    const Node& node = nodes_[static_cast<size_t>(node_id)];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int row = order_[static_cast<size_t>(i)];
        double d = 0.0;
        for (int c = 0; c < q.cols(); ++c) {
          const double diff =
              static_cast<double>(q(c)) - static_cast<double>(pts_(row, c));
          d += diff * diff;
        }
        if (d < best.sq_dist || (d == best.sq_dist && row < best.index)) {
          best.sq_dist = d;
          best.index = row;
        }
      }
      return;
    }
    const double delta =
        static_cast<double>(q(node.axis)) - static_cast<double>(node.split);
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    // The far half can still hold the lowest-index point among exact ties,
    // so prune only on strict distance.
    if (delta * delta <= best.sq_dist) search(far, q, best);
  }

  const Matrix<S>& pts_;
  int leaf_size_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace rcr
