#pragma once

#include <Eigen/Core>

#include <random>

#include "taxpose/geometry.hpp"
#include "taxpose/model.hpp"

namespace taxpose {

using SymmetryLabels = Eigen::VectorXd;  // one value in [-1, 1] per point

struct PrincipalAxes {
  Mat3d axes;        // columns, by descending variance
  Vec3d variances;
};

/// Eigen-decomposition of the (1/N) centred covariance. Each axis is signed so
/// its first component with magnitude above 1e-12 is positive.
PrincipalAxes pca(const PointCloudd& cloud);

/// l_i = <s, (p_i - mu) / |p_i - mu|> with s the first principal axis.
SymmetryLabels gripper_labels(const PointCloudd& cloud);

/// s = normalize(v_rot x reference), v_rot the largest-variance axis.
SymmetryLabels bottle_labels(const PointCloudd& cloud, const Vec3d& reference_dir);

/// s = reference with its v_rot component removed, v_rot the smallest-variance axis.
SymmetryLabels bowl_labels(const PointCloudd& cloud, const Vec3d& reference_dir);

/// Labels from the dot products of unit centroid offsets with `s`.
SymmetryLabels labels_along(const PointCloudd& cloud, const Vec3d& s);

/// A unit vector perpendicular to `axis`, drawn uniformly around it.
template <typename Rng>
Vec3d random_perpendicular(const Vec3d& axis, Rng& rng) {
  const Vec3d a = axis.normalized();
  const Vec3d helper = std::abs(a.x()) < 0.9 ? Vec3d::UnitX() : Vec3d::UnitY();
  const Vec3d e1 = a.cross(helper).normalized();
  const Vec3d e2 = a.cross(e1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.14159265358979323846);
  const double th = angle(rng);
  return std::cos(th) * e1 + std::sin(th) * e2;
}

FeatureMatrix augment_features(const FeatureMatrix& phi, const SymmetryLabels& labels);

}  // namespace taxpose
