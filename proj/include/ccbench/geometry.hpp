#pragma once

#include "ccbench/core.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace ccbench::geometry {

/// N points with xyz coordinates and RGB colors in [0,1].
template <typename Scalar>
struct ColoredPointCloudT {
  MatX3T<Scalar> points;
  MatX3T<Scalar> colors;

  Eigen::Index size() const { return points.rows(); }
};

using ColoredPointCloud = ColoredPointCloudT<double>;

template <typename Scalar>
void validate_cloud(const ColoredPointCloudT<Scalar>& cloud,
                    Eigen::Index min_points = 1) {
  check(cloud.points.rows() == cloud.colors.rows(),
        "cloud: point/color row count mismatch");
  check(cloud.points.rows() >= min_points,
        "cloud: fewer than " + std::to_string(min_points) + " points");
  check(cloud.points.allFinite(), "cloud: non-finite coordinate");
  check(cloud.colors.allFinite(), "cloud: non-finite color");
  check((cloud.colors.array() >= Scalar(0)).all() &&
            (cloud.colors.array() <= Scalar(1)).all(),
        "cloud: color outside [0,1]");
}

/// Centers the cloud on its centroid and scales so the farthest point sits on
/// the unit sphere. The scale is clamped to 1 when all points coincide.
/// Colors pass through unchanged. Idempotent.
template <typename Scalar>
ColoredPointCloudT<Scalar> normalize_cloud(
    const ColoredPointCloudT<Scalar>& cloud) {
  validate_cloud(cloud);
  ColoredPointCloudT<Scalar> out;
  const Eigen::RowVector3<Scalar> centroid = cloud.points.colwise().mean();
  out.points = cloud.points.rowwise() - centroid;
  const Scalar max_norm = out.points.rowwise().norm().maxCoeff();
  if (max_norm > Scalar(1e-12)) out.points /= max_norm;
  out.colors = cloud.colors;
  return out;
}

/// Greedy max-min subset selection. Starts at the point farthest from the
/// centroid; every tie (start and greedy steps) resolves to the lowest index,
/// which makes the selected point sequence invariant to input permutation.
template <typename Scalar>
std::vector<Eigen::Index> farthest_point_sample(const MatX3T<Scalar>& points,
                                                Eigen::Index m) {
  const Eigen::Index n = points.rows();
  check(n >= 1, "farthest_point_sample: empty input");
  check(m >= 1 && m <= n, "farthest_point_sample: M out of range [1, N]");

  const Eigen::RowVector3<Scalar> centroid = points.colwise().mean();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> min_d2 =
      (points.rowwise() - centroid).rowwise().squaredNorm();

  std::vector<Eigen::Index> picked;
  picked.reserve(static_cast<std::size_t>(m));
  std::vector<char> used(static_cast<std::size_t>(n), 0);

  for (Eigen::Index step = 0; step < m; ++step) {
    Eigen::Index best = -1;
    Scalar best_d2 = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      if (min_d2(i) > best_d2) {
        best_d2 = min_d2(i);
        best = i;
      }
    }
    picked.push_back(best);
    used[static_cast<std::size_t>(best)] = 1;
    min_d2 = min_d2.cwiseMin(
        (points.rowwise() - points.row(best)).rowwise().squaredNorm());
  }
  return picked;
}

template <typename Scalar>
std::vector<Eigen::Index> farthest_point_sample(
    const ColoredPointCloudT<Scalar>& cloud, Eigen::Index m) {
  return farthest_point_sample<Scalar>(cloud.points, m);
}

/// For each center index, up to K neighbor indices with distance <= radius,
/// in ascending index order. Short groups are padded by repeating the first
/// found index; a centerless group falls back to K copies of the center.
template <typename Scalar>
std::vector<std::vector<Eigen::Index>> ball_query(
    const MatX3T<Scalar>& points, const std::vector<Eigen::Index>& centers,
    Scalar radius, Eigen::Index k) {
  check(radius > Scalar(0), "ball_query: radius must be positive");
  check(k >= 1, "ball_query: K must be >= 1");
  const Eigen::Index n = points.rows();
  const Scalar r2 = radius * radius;

  std::vector<std::vector<Eigen::Index>> groups;
  groups.reserve(centers.size());
  for (const Eigen::Index c : centers) {
    check(c >= 0 && c < n, "ball_query: center index out of range");
    std::vector<Eigen::Index> group;
    group.reserve(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < n && static_cast<Eigen::Index>(group.size()) < k; ++j) {
      if ((points.row(j) - points.row(c)).squaredNorm() <= r2) {
        group.push_back(j);
      }
    }
    if (group.empty()) {
      group.assign(static_cast<std::size_t>(k), c);
    } else {
      while (static_cast<Eigen::Index>(group.size()) < k) group.push_back(group.front());
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

template <typename Scalar>
std::vector<std::vector<Eigen::Index>> ball_query(
    const ColoredPointCloudT<Scalar>& cloud,
    const std::vector<Eigen::Index>& centers, Scalar radius, Eigen::Index k) {
  return ball_query<Scalar>(cloud.points, centers, radius, k);
}

/// Nearest-neighbor matches between two point sets, one entry per row of
/// `from` giving the index of its closest row in `to`.
template <typename DerivedA, typename DerivedB>
std::vector<Eigen::Index> nearest_indices(const Eigen::MatrixBase<DerivedA>& from,
                                          const Eigen::MatrixBase<DerivedB>& to) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(from.rows()));
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    Eigen::Index j;
    (to.derived().rowwise() - from.derived().row(i)).rowwise().squaredNorm().minCoeff(&j);
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

/// Symmetric mean of squared nearest-neighbor distances (no square root).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar chamfer_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  check(a.rows() > 0 && b.rows() > 0, "chamfer_distance: empty point set");
  check(a.cols() == b.cols(), "chamfer_distance: dimension mismatch");
  Scalar sum_ab = 0, sum_ba = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    sum_ab += (b.derived().rowwise() - a.derived().row(i))
                  .rowwise().squaredNorm().minCoeff();
  }
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    sum_ba += (a.derived().rowwise() - b.derived().row(j))
                  .rowwise().squaredNorm().minCoeff();
  }
  return sum_ab / static_cast<Scalar>(a.rows()) +
         sum_ba / static_cast<Scalar>(b.rows());
}

}  // namespace ccbench::geometry
