#include "taxpose/symmetry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace taxpose {

namespace {

constexpr double kCoincidence = 1e-12;
constexpr double kParallel = 1e-9;

void fix_sign(Eigen::Ref<Vec3d> axis) {
  for (int k = 0; k < 3; ++k)
    if (std::abs(axis(k)) > 1e-12) {
      if (axis(k) < 0) axis = -axis;
      return;
    }
}

Vec3d unit_reference(const Vec3d& reference_dir) {
  const double n = reference_dir.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ParallelReference("reference direction must be a non-zero finite vector");
  return reference_dir / n;
}

}  // namespace

PrincipalAxes pca(const PointCloudd& cloud) {
  if (cloud.size() < 3) throw DegenerateGeometry("pca needs at least three points");
  const Points3d c = center(cloud).cloud.points();
  if (c.cwiseAbs().maxCoeff() < kCoincidence) throw DegenerateGeometry("pca: all points coincide");
  const Mat3d cov = c * c.transpose() / static_cast<double>(c.cols());
  Eigen::SelfAdjointEigenSolver<Mat3d> es(cov);
  PrincipalAxes out;
  // Eigen sorts ascending.
  for (int k = 0; k < 3; ++k) {
    out.axes.col(k) = es.eigenvectors().col(2 - k);
    out.variances(k) = std::max(0.0, es.eigenvalues()(2 - k));
    fix_sign(out.axes.col(k));
  }
  return out;
}

SymmetryLabels labels_along(const PointCloudd& cloud, const Vec3d& s) {
  const Points3d c = center(cloud).cloud.points();
  SymmetryLabels l(c.cols());
  for (Eigen::Index i = 0; i < c.cols(); ++i) {
    const double n = c.col(i).norm();
    if (n < kCoincidence) throw CentroidCoincidence("point " + std::to_string(i) + " sits on the centroid");
    l(i) = std::clamp(s.dot(c.col(i) / n), -1.0, 1.0);
  }
  return l;
}

SymmetryLabels gripper_labels(const PointCloudd& cloud) { return labels_along(cloud, pca(cloud).axes.col(0)); }

SymmetryLabels bottle_labels(const PointCloudd& cloud, const Vec3d& reference_dir) {
  const Vec3d rot = pca(cloud).axes.col(0);
  const Vec3d s = rot.cross(unit_reference(reference_dir));
  if (s.norm() < kParallel) throw ParallelReference("reference direction is parallel to the symmetry axis");
  return labels_along(cloud, s.normalized());
}

SymmetryLabels bowl_labels(const PointCloudd& cloud, const Vec3d& reference_dir) {
  const Vec3d rot = pca(cloud).axes.col(2);
  const Vec3d g = unit_reference(reference_dir);
  const Vec3d s = g - g.dot(rot) * rot;
  if (s.norm() < kParallel) throw ParallelReference("reference direction is parallel to the symmetry axis");
  return labels_along(cloud, s.normalized());
}

FeatureMatrix augment_features(const FeatureMatrix& phi, const SymmetryLabels& labels) {
  if (labels.size() != phi.rows()) throw LengthMismatch("one symmetry label per feature row is required");
  FeatureMatrix out(phi.rows(), phi.cols() + 1);
  out << phi, labels;
  return out;
}

}  // namespace taxpose
