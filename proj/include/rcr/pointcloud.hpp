#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "rcr/core.hpp"

namespace rcr {

/// An unordered set of K points in N-dimensional space (N in {2, 3}),
/// stored as a K x N row-major matrix. Row order carries no meaning;
/// comparisons in tests go through multisets.
template <class S>
struct PointCloudT {
  Matrix<S> pts;

  PointCloudT() = default;
  explicit PointCloudT(Matrix<S> p) : pts(std::move(p)) {}

  int count() const { return static_cast<int>(pts.rows()); }
  int dims() const { return static_cast<int>(pts.cols()); }

  bool all_finite() const { return pts.allFinite(); }
};

using PointCloud = PointCloudT<float>;

struct LabeledSample {
  PointCloud cloud;
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledSample> samples;
  int class_count = 0;
  std::vector<std::string> class_names;  // empty or one per class

  int size() const { return static_cast<int>(samples.size()); }
  int dims() const { return samples.empty() ? 0 : samples.front().cloud.dims(); }

  /// Labels in [0, class_count); class_names length matches when present.
  void validate() const {
    detail::require(class_count >= 1, "dataset: class_count must be >= 1");
    detail::require(class_names.empty() ||
                        static_cast<int>(class_names.size()) == class_count,
                    "dataset: class_names length must equal class_count");
    for (const auto& s : samples) {
      detail::require(s.label >= 0 && s.label < class_count,
                      "dataset: label outside [0, class_count)");
      detail::require(s.cloud.count() >= 1, "dataset: empty cloud");
    }
  }

  std::vector<int> per_class_counts() const {
    std::vector<int> counts(static_cast<size_t>(class_count), 0);
    for (const auto& s : samples) counts[static_cast<size_t>(s.label)]++;
    return counts;
  }
};

struct AugmentPolicy {
  double rotation_limit_degrees = 180.0;
  double noise_sigma = 0.02;
  double noise_cap = 0.05;
  bool flip_enabled = true;
  double flip_probability = 0.5;

  /// Conventional defaults: +-15 deg and no flips for 2D, +-180 deg about
  /// the vertical axis with flips for 3D.
  static AugmentPolicy defaults_for(int dims) {
    AugmentPolicy p;
    if (dims == 2) {
      p.rotation_limit_degrees = 15.0;
      p.flip_enabled = false;
    }
    return p;
  }

  void validate() const {
    detail::require(flip_probability >= 0.0 && flip_probability <= 1.0,
                    "augment: flip_probability must be in [0, 1]");
    detail::require(noise_cap >= 0.0, "augment: noise_cap must be >= 0");
    detail::require(noise_sigma >= 0.0, "augment: noise_sigma must be >= 0");
  }
};

/// Draws k point indices from [0, n). Without replacement this is a partial
/// Fisher-Yates over a sparse swap map, so extra space is O(k) even for
/// large clouds.
inline std::vector<int> draw_indices(int n, int k, bool with_replacement, Rng& rng) {
  detail::require(k >= 1, "subsample: k must be >= 1");
  std::vector<int> picked(static_cast<size_t>(k));
  if (with_replacement) {
    for (int i = 0; i < k; ++i)
      picked[static_cast<size_t>(i)] =
          static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    return picked;
  }
  detail::require(k <= n, "subsample: k exceeds point count without replacement");
  std::unordered_map<int, int> swapped;
  swapped.reserve(static_cast<size_t>(k) * 2);
  auto slot = [&](int i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
    const int at_j = slot(j);
    const int at_i = slot(i);
    picked[static_cast<size_t>(i)] = at_j;
    swapped[j] = at_i;
  }
  return picked;
}

template <class S>
PointCloudT<S> gather(const PointCloudT<S>& cloud, const std::vector<int>& idx) {
  Matrix<S> out(static_cast<Eigen::Index>(idx.size()), cloud.pts.cols());
  for (size_t r = 0; r < idx.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = cloud.pts.row(idx[r]);
  return PointCloudT<S>(std::move(out));
}

/// Uniform random subsample of k points.
template <class S>
PointCloudT<S> subsample_uniform(const PointCloudT<S>& cloud, int k,
                                 bool with_replacement, Rng& rng) {
  detail::require(cloud.count() >= 1, "subsample: empty cloud");
  return gather(cloud, draw_indices(cloud.count(), k, with_replacement, rng));
}

/// Random rigid rotation (2D in-plane; 3D about the z axis), optional mirror
/// flip across the XZ or YZ plane, then per-coordinate Gaussian noise clamped
/// to +-noise_cap. Draw order is fixed: angle, flip, noise.
template <class S>
PointCloudT<S> augment(const PointCloudT<S>& cloud, const AugmentPolicy& policy,
                       Rng& rng) {
  policy.validate();
  const int n = cloud.dims();
  detail::require(n == 2 || n == 3, "augment: dimensionality must be 2 or 3");

  const double limit = policy.rotation_limit_degrees * M_PI / 180.0;
  const double angle = rng.uniform(-limit, limit);
  const double c = std::cos(angle), s = std::sin(angle);

  Matrix<S> out = cloud.pts;
  // Rotation in the xy plane; for 3D this is about the vertical (z) axis.
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double x = static_cast<double>(out(i, 0));
    const double y = static_cast<double>(out(i, 1));
    out(i, 0) = static_cast<S>(c * x - s * y);
    out(i, 1) = static_cast<S>(s * x + c * y);
  }

  if (policy.flip_enabled && rng.bernoulli(policy.flip_probability)) {
    // XZ plane negates y, YZ plane negates x.
    const int axis = rng.bernoulli(0.5) ? 1 : 0;
    out.col(axis) = -out.col(axis);
  }

  if (policy.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (int d = 0; d < n; ++d) {
        double eps = rng.normal(0.0, policy.noise_sigma);
        eps = std::clamp(eps, -policy.noise_cap, policy.noise_cap);
        out(i, d) = static_cast<S>(static_cast<double>(out(i, d)) + eps);
      }
  }
  return PointCloudT<S>(std::move(out));
}

/// Centers the cloud and scales so the farthest point sits on the unit
/// sphere. A fully degenerate cloud (all points coincident) maps to zeros.
template <class S>
PointCloudT<S> normalize_unit_sphere(const PointCloudT<S>& cloud) {
  detail::require(cloud.count() >= 1, "normalize: empty cloud");
  Matrix<S> out = cloud.pts;
  RowVec<S> centroid = out.colwise().mean();
  out.rowwise() -= centroid;
  const S max_norm = out.rowwise().norm().maxCoeff();
  if (max_norm > S(1e-12)) {
    out /= max_norm;
  } else {
    out.setZero();
  }
  return PointCloudT<S>(std::move(out));
}

}  // namespace rcr
