#pragma once

#include <algorithm>
#include <bit>
#include <utility>
#include <vector>

#include "rcr/core.hpp"
#include "rcr/kdtree.hpp"
#include "rcr/pointcloud.hpp"

namespace rcr {

/// Pairwise squared Euclidean distances between the rows of two point
/// matrices, accumulated in double.
template <class S>
Matrix<double> squared_distance_table(const Matrix<S>& a, const Matrix<S>& b) {
  detail::require(a.cols() == b.cols(), "distance table: dimension mismatch");
  Matrix<double> table(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double diff =
            static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
        d += diff * diff;
      }
      table(i, j) = d;
    }
  return table;
}

namespace detail {

constexpr int kKdTreeCrossover = 64;

/// Nearest row of `b` for every row of `a`; exact ties go to the lowest
/// index in `b`. Uses a KD-tree when both clouds are past the crossover,
/// a double loop otherwise. Both paths agree bit-for-bit.
template <class S>
void nearest_rows(const Matrix<S>& a, const Matrix<S>& b,
                  std::vector<int>& index, std::vector<double>& sq_dist) {
  const Eigen::Index na = a.rows(), nb = b.rows();
  index.assign(static_cast<size_t>(na), -1);
  sq_dist.assign(static_cast<size_t>(na), 0.0);
  if (na > kKdTreeCrossover && nb > kKdTreeCrossover) {
    KdTree<S> tree(b);
    for (Eigen::Index i = 0; i < na; ++i) {
      const auto hit = tree.nearest(a.row(i));
      index[static_cast<size_t>(i)] = hit.index;
      sq_dist[static_cast<size_t>(i)] = hit.sq_dist;
    }
    return;
  }
  for (Eigen::Index i = 0; i < na; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (Eigen::Index j = 0; j < nb; ++j) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double diff =
            static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    index[static_cast<size_t>(i)] = best_j;
    sq_dist[static_cast<size_t>(i)] = best;
  }
}

/// Sum in ascending order. Makes the reduction independent of point order,
/// so permutation invariance and symmetry hold exactly.
inline double canonical_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

template <class S>
void check_chamfer_args(const Matrix<S>& a, const Matrix<S>& b) {
  require(a.rows() >= 1 && b.rows() >= 1, "chamfer: clouds must be non-empty");
  require(a.cols() == b.cols(), "chamfer: dimension mismatch");
}

}  // namespace detail

/// Chamfer distance: sum of squared nearest-neighbor distances in both
/// directions, un-normalized by cardinality.
template <class S>
double chamfer(const Matrix<S>& a, const Matrix<S>& b) {
  detail::check_chamfer_args(a, b);
  std::vector<int> idx;
  std::vector<double> d_ab, d_ba;
  detail::nearest_rows(a, b, idx, d_ab);
  detail::nearest_rows(b, a, idx, d_ba);
  return detail::canonical_sum(d_ab) + detail::canonical_sum(d_ba);
}

template <class S>
double chamfer(const PointCloudT<S>& a, const PointCloudT<S>& b) {
  return chamfer(a.pts, b.pts);
}

/// Gradient of chamfer() with respect to every coordinate of both clouds.
/// Nearest-neighbor assignments are treated as locally constant; ties break
/// to the lowest index, matching the forward pass.
template <class S>
std::pair<Matrix<S>, Matrix<S>> chamfer_gradient(const Matrix<S>& a,
                                                 const Matrix<S>& b) {
  detail::check_chamfer_args(a, b);
  std::vector<int> na, nb;
  std::vector<double> da, db;
  detail::nearest_rows(a, b, na, da);
  detail::nearest_rows(b, a, nb, db);

  Matrix<double> grad_a = Matrix<double>::Zero(a.rows(), a.cols());
  Matrix<double> grad_b = Matrix<double>::Zero(b.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const int j = na[static_cast<size_t>(i)];
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double diff =
          static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
      grad_a(i, c) += 2.0 * diff;
      grad_b(j, c) -= 2.0 * diff;
    }
  }
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    const int i = nb[static_cast<size_t>(j)];
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      const double diff =
          static_cast<double>(b(j, c)) - static_cast<double>(a(i, c));
      grad_b(j, c) += 2.0 * diff;
      grad_a(i, c) -= 2.0 * diff;
    }
  }
  return {grad_a.template cast<S>(), grad_b.template cast<S>()};
}

template <class S>
std::pair<Matrix<S>, Matrix<S>> chamfer_gradient(const PointCloudT<S>& a,
                                                 const PointCloudT<S>& b) {
  return chamfer_gradient(a.pts, b.pts);
}

/// Exact Earth Mover's Distance between equal-size clouds: the minimum over
/// bijections of the halved squared matching cost. Solved by dynamic
/// programming over subsets, so it is exact but limited to 8 points.
/// Verification-only; never used in training.
template <class S>
double emd_exact(const Matrix<S>& a, const Matrix<S>& b) {
  detail::require(a.rows() == b.rows(), "emd: cardinalities must match");
  detail::require(a.cols() == b.cols(), "emd: dimension mismatch");
  detail::require(a.rows() >= 1, "emd: clouds must be non-empty");
  const int k = static_cast<int>(a.rows());
  if (k > 8)
    throw UnsupportedSizeError("emd: exact solver supports at most 8 points");

  const Matrix<double> cost = squared_distance_table(a, b);
  const unsigned full = (1u << k) - 1u;
  std::vector<double> best(full + 1, std::numeric_limits<double>::infinity());
  best[0] = 0.0;
  for (unsigned mask = 0; mask < full; ++mask) {
    if (!std::isfinite(best[mask])) continue;
    const int i = std::popcount(mask);  // next row of `a` to match
    for (int j = 0; j < k; ++j) {
      if (mask & (1u << j)) continue;
      const double candidate = best[mask] + cost(i, j);
      const unsigned next = mask | (1u << j);
      if (candidate < best[next]) best[next] = candidate;
    }
  }
  return best[full] / 2.0;
}

template <class S>
double emd_exact(const PointCloudT<S>& a, const PointCloudT<S>& b) {
  return emd_exact(a.pts, b.pts);
}

}  // namespace rcr
