#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "taxpose/errors.hpp"

namespace taxpose {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using Points3d = Points3<double>;

/// Ordered, non-empty set of finite 3D points stored column-wise.
template <typename Scalar>
class PointCloud {
 public:
  explicit PointCloud(Points3<Scalar> points) : points_(std::move(points)) {
    if (points_.cols() < 1) throw InputError("point cloud must contain at least one point");
    if (!points_.allFinite()) throw InputError("point cloud contains non-finite coordinates");
  }

  Eigen::Index size() const { return points_.cols(); }
  const Points3<Scalar>& points() const { return points_; }
  Vec3<Scalar> point(Eigen::Index i) const { return points_.col(i); }

  /// Row-major (N x 3) copy, the layout used by the feature networks.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> rows() const { return points_.transpose(); }

  template <typename Other>
  PointCloud<Other> cast() const {
    return PointCloud<Other>(points_.template cast<Other>());
  }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_.cols() == b.points_.cols() && a.points_ == b.points_;
  }

 private:
  Points3<Scalar> points_;
};

using PointCloudd = PointCloud<double>;

/// Element of SE(3): p -> rotation * p + translation.
template <typename Scalar>
struct RigidTransform {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vec3<Scalar>& t) {
    RigidTransform out;
    out.translation = t;
    return out;
  }

  static RigidTransform from_rotation(const Mat3<Scalar>& r) {
    RigidTransform out;
    out.rotation = r;
    return out;
  }

  Vec3<Scalar> operator*(const Vec3<Scalar>& p) const { return rotation * p + translation; }

  template <typename Other>
  RigidTransform<Other> cast() const {
    return {rotation.template cast<Other>(), translation.template cast<Other>()};
  }
};

using RigidTransformd = RigidTransform<double>;

/// True when r is orthonormal with det +1 to within tol.
template <typename Scalar>
bool is_rotation(const Mat3<Scalar>& r, Scalar tol = Scalar(1e-9)) {
  using std::abs;
  if (!r.allFinite()) return false;
  const Scalar ortho = (r.transpose() * r - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && abs(r.determinant() - Scalar(1)) <= tol;
}

/// compose(a, b) applies b first, then a.
template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar>& a, const RigidTransform<Scalar>& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename Scalar>
RigidTransform<Scalar> invert(const RigidTransform<Scalar>& t) {
  const Mat3<Scalar> rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

template <typename Scalar>
Points3<Scalar> apply(const RigidTransform<Scalar>& t, const Points3<Scalar>& points) {
  return (t.rotation * points).colwise() + t.translation;
}

template <typename Scalar>
PointCloud<Scalar> apply(const RigidTransform<Scalar>& t, const PointCloud<Scalar>& cloud) {
  return PointCloud<Scalar>(apply(t, cloud.points()));
}

template <typename Scalar>
Mat3<Scalar> rotation_about(const Vec3<Scalar>& axis, Scalar angle) {
  return Eigen::AngleAxis<Scalar>(angle, axis.normalized()).toRotationMatrix();
}

/// Uniform sample from SO(3): a normalized 4D Gaussian is a uniform unit quaternion.
template <typename Rng>
Mat3d random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector4d q;
  do {
    for (int i = 0; i < 4; ++i) q[i] = normal(rng);
  } while (q.norm() < 1e-12);
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

/// Rotation about +z by an angle uniform in [0, 2*pi).
template <typename Rng>
Mat3d random_yaw(Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  return rotation_about<double>(Vec3d::UnitZ(), angle(rng));
}

/// Half the conventional geodesic angle: 0.5 * acos((tr(pred^T gt) - 1) / 2).
template <typename Scalar>
Scalar rotation_geodesic_error(const Mat3<Scalar>& pred, const Mat3<Scalar>& gt) {
  using std::acos;
  const Scalar c = ((pred.transpose() * gt).trace() - Scalar(1)) / Scalar(2);
  return Scalar(0.5) * acos(std::clamp(c, Scalar(-1), Scalar(1)));
}

template <typename Scalar>
Scalar translation_error(const Vec3<Scalar>& pred, const Vec3<Scalar>& gt) {
  return (pred - gt).norm();
}

template <typename Scalar>
Vec3<Scalar> centroid(const Points3<Scalar>& points) {
  return points.rowwise().sum() / Scalar(points.cols());
}

template <typename Scalar>
Vec3<Scalar> centroid(const PointCloud<Scalar>& cloud) {
  return centroid(cloud.points());
}

template <typename Scalar>
struct Centered {
  PointCloud<Scalar> cloud;
  Vec3<Scalar> mean;
};

template <typename Scalar>
Centered<Scalar> center(const PointCloud<Scalar>& cloud) {
  const Vec3<Scalar> mean = centroid(cloud);
  return {PointCloud<Scalar>(cloud.points().colwise() - mean), mean};
}

/// Largest pairwise distance within the cloud.
template <typename Scalar>
Scalar diameter(const PointCloud<Scalar>& cloud) {
  const auto& p = cloud.points();
  Scalar best(0);
  for (Eigen::Index i = 0; i < p.cols(); ++i)
    for (Eigen::Index j = i + 1; j < p.cols(); ++j) best = std::max(best, (p.col(i) - p.col(j)).norm());
  return best;
}

}  // namespace taxpose
