#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "taxpose/symmetry.hpp"
#include "test_util.hpp"

using namespace taxpose;
using taxpose::testing::random_points;

namespace {

// Anisotropic cloud: standard deviations (sx, sy, sz) along the axes.
PointCloudd stretched(std::mt19937_64& rng, Eigen::Index n, double sx, double sy, double sz) {
  Points3d p = random_points(rng, n);
  p.row(0) *= sx;
  p.row(1) *= sy;
  p.row(2) *= sz;
  return PointCloudd(p);
}

SymmetryLabels brute_labels(const PointCloudd& cloud, const Vec3d& s) {
  Vec3d mu = Vec3d::Zero();
  for (Eigen::Index i = 0; i < cloud.size(); ++i) mu += cloud.point(i);
  mu /= double(cloud.size());
  SymmetryLabels l(cloud.size());
  for (Eigen::Index i = 0; i < cloud.size(); ++i) l(i) = s.dot((cloud.point(i) - mu).normalized());
  return l;
}

bool same_up_to_sign(const Vec3d& a, const Vec3d& b, double tol) {
  return (a - b).norm() < tol || (a + b).norm() < tol;
}

}  // namespace

TEST(Pca, CollinearAndPlanarClouds) {
  Points3d line(3, 5);
  line.setZero();
  line.row(0) << -2, -1, 0, 1, 2;
  const auto a = pca(PointCloudd(line));
  EXPECT_TRUE(same_up_to_sign(a.axes.col(0), Vec3d::UnitX(), 1e-12));
  EXPECT_NEAR(a.variances(0), 2.0, 1e-12);
  EXPECT_NEAR(a.variances(1), 0.0, 1e-12);
  EXPECT_NEAR(a.variances(2), 0.0, 1e-12);

  std::mt19937_64 rng(1);
  Points3d plane = random_points(rng, 30);
  plane.row(2).setZero();
  EXPECT_TRUE(same_up_to_sign(pca(PointCloudd(plane)).axes.col(2), Vec3d::UnitZ(), 1e-12));
}

TEST(Pca, MatchesEigenOracleWithSignConvention) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const PointCloudd p = stretched(rng, 40, 3.0, 1.5, 0.5);
    const Points3d c = p.points().colwise() - p.points().rowwise().mean();
    const Mat3d cov = c * c.transpose() / 40.0;
    const Eigen::SelfAdjointEigenSolver<Mat3d> es(cov);
    const auto axes = pca(p);
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(axes.variances(k), es.eigenvalues()(2 - k), 1e-10);
      EXPECT_TRUE(same_up_to_sign(axes.axes.col(k), es.eigenvectors().col(2 - k), 1e-10));
      const Vec3d v = axes.axes.col(k);
      const int first = std::abs(v(0)) > 1e-12 ? 0 : (std::abs(v(1)) > 1e-12 ? 1 : 2);
      EXPECT_GT(v(first), 0.0);
    }
  }
}

TEST(Pca, AxesRotateWithTheCloud) {
  std::mt19937_64 rng(3);
  const PointCloudd p = stretched(rng, 50, 4.0, 2.0, 1.0);
  const RigidTransformd t = taxpose::testing::random_rigid(rng, 3.0);
  const auto a = pca(p), b = pca(apply(t, p));
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(same_up_to_sign(b.axes.col(k), t.rotation * a.axes.col(k), 1e-9));
}

TEST(Pca, Degenerate) {
  EXPECT_THROW(pca(PointCloudd(Points3d::Ones(3, 5))), DegenerateGeometry);
  EXPECT_THROW(pca(PointCloudd(Points3d::Random(3, 2))), DegenerateGeometry);
}

TEST(GripperLabels, SymmetricPairAndPerpendicularPoint) {
  Points3d p(3, 4);
  p.col(0) = Vec3d(3, 0, 0);
  p.col(1) = Vec3d(-3, 0, 0);
  p.col(2) = Vec3d(0, 1, 0);
  p.col(3) = Vec3d(0, -1, 0);
  const auto l = gripper_labels(PointCloudd(p));
  EXPECT_NEAR(std::abs(l(0)), 1.0, 1e-15);
  EXPECT_NEAR(l(0), -l(1), 1e-15);
  EXPECT_NEAR(l(2), 0.0, 1e-15);
}

TEST(GripperLabels, MatchesBruteForce) {
  // Two parallel finger slabs.
  std::mt19937_64 rng(4);
  Points3d p = random_points(rng, 20, 0.1);
  for (int i = 0; i < 20; ++i) p(0, i) += i < 10 ? 1.0 : -1.0;
  const PointCloudd cloud(p);
  EXPECT_LT(taxpose::testing::max_abs(gripper_labels(cloud) - brute_labels(cloud, pca(cloud).axes.col(0))), 1e-12);
}

TEST(GripperLabels, CentroidCoincidence) {
  Points3d p(3, 3);
  p.col(0) = Vec3d(1, 0, 0);
  p.col(1) = Vec3d(-1, 0, 0);
  p.col(2) = Vec3d(0, 0, 0);
  EXPECT_THROW(gripper_labels(PointCloudd(p)), CentroidCoincidence);
}

TEST(BottleLabels, CrossProductDirection) {
  std::mt19937_64 rng(5);
  Points3d p = stretched(rng, 60, 0.3, 0.3, 3.0).points();
  p.col(0) = Vec3d(0, 0.5, 0) + p.rowwise().mean();
  const PointCloudd cloud(p);
  const Vec3d rot = pca(cloud).axes.col(0);
  const Vec3d s = rot.cross(Vec3d::UnitX()).normalized();
  EXPECT_LT(taxpose::testing::max_abs(bottle_labels(cloud, Vec3d::UnitX()) - brute_labels(cloud, s)), 1e-12);
  EXPECT_THROW(bottle_labels(cloud, rot), ParallelReference);
}

TEST(BottleLabels, AxisAlignedExample) {
  // Symmetry axis z, reference x: s = y.
  Points3d p(3, 6);
  p.col(0) = Vec3d(0, 0, 5);
  p.col(1) = Vec3d(0, 0, -5);
  p.col(2) = Vec3d(0, 1, 0);
  p.col(3) = Vec3d(0, -1, 0);
  p.col(4) = Vec3d(0.5, 0, 1);
  p.col(5) = Vec3d(-0.5, 0, -1);
  const auto l = bottle_labels(PointCloudd(p), Vec3d::UnitX());
  EXPECT_NEAR(std::abs(l(2)), 1.0, 1e-12);
  EXPECT_NEAR(l(2), -l(3), 1e-12);
  EXPECT_NEAR(l(0), 0.0, 1e-12);
  EXPECT_NEAR(l(4), 0.0, 1e-12);
}

TEST(BottleLabels, ReferenceChoiceRotatesDirection) {
  std::mt19937_64 rng(6);
  const PointCloudd cloud = stretched(rng, 40, 0.4, 0.4, 3.0);
  const Vec3d rot = pca(cloud).axes.col(0);
  const Vec3d r1 = random_perpendicular(rot, rng), r2 = random_perpendicular(rot, rng);
  const Vec3d s1 = rot.cross(r1).normalized();
  // The rotation about rot carrying r1 to r2 carries s1 to s2.
  const double angle = std::atan2(rot.dot(r1.cross(r2)), r1.dot(r2));
  const Vec3d s2 = rotation_about<double>(rot, angle) * s1;
  EXPECT_LT(taxpose::testing::max_abs(bottle_labels(cloud, r2) - brute_labels(cloud, s2)), 1e-10);
}

TEST(BowlLabels, GramSchmidtExamples) {
  // Flat disc: smallest-variance axis is z.
  std::mt19937_64 rng(7);
  const PointCloudd cloud = stretched(rng, 50, 2.0, 2.0, 0.2);
  const Vec3d rot = pca(cloud).axes.col(2);
  const Vec3d ref = Vec3d(1, 0, 1).normalized();
  const Vec3d s = (ref - ref.dot(rot) * rot).normalized();
  EXPECT_LT(taxpose::testing::max_abs(bowl_labels(cloud, ref) - brute_labels(cloud, s)), 1e-12);
  const Vec3d perp = rot.unitOrthogonal();
  EXPECT_LT(taxpose::testing::max_abs(bowl_labels(cloud, perp) - brute_labels(cloud, perp)), 1e-12);
  EXPECT_THROW(bowl_labels(cloud, rot), ParallelReference);
}

TEST(Labels, BoundedOnRandomClouds) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloudd c = stretched(rng, 25, 2.0, 1.0, 0.5);
    const Vec3d ref = taxpose::testing::random_vec(rng);
    for (const auto& l : {gripper_labels(c), bottle_labels(c, ref), bowl_labels(c, ref)}) {
      EXPECT_LE(l.maxCoeff(), 1.0);
      EXPECT_GE(l.minCoeff(), -1.0);
    }
  }
}

TEST(Labels, MirrorAcrossBisectingPlaneNegatesExactly) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloudd c = stretched(rng, 30, 1.0, 2.0, 1.5);
    Points3d m = c.points();
    m.row(1) = -m.row(1);
    const SymmetryLabels a = labels_along(c, Vec3d::UnitY());
    const SymmetryLabels b = labels_along(PointCloudd(m), Vec3d::UnitY());
    EXPECT_EQ(b, -a);
  }
}

TEST(AugmentFeatures, AppendsLabelColumn) {
  const FeatureMatrix phi = Eigen::MatrixXd::Random(5, 3);
  const FeatureMatrix zero = augment_features(phi, SymmetryLabels::Zero(5));
  EXPECT_EQ(zero.cols(), 4);
  EXPECT_EQ(zero.col(3), Eigen::VectorXd::Zero(5));
  const SymmetryLabels l = SymmetryLabels::LinSpaced(5, -1, 1);
  const FeatureMatrix aug = augment_features(phi, l);
  EXPECT_EQ(FeatureMatrix(aug.leftCols(3)), phi);
  EXPECT_EQ(aug.col(3), l);
  EXPECT_THROW(augment_features(phi, SymmetryLabels::Zero(4)), LengthMismatch);
}

TEST(RandomPerpendicular, UnitAndOrthogonal) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3d axis = taxpose::testing::random_vec(rng);
    const Vec3d v = random_perpendicular(axis, rng);
    EXPECT_NEAR(v.norm(), 1.0, 1e-14);
    EXPECT_NEAR(v.dot(axis.normalized()), 0.0, 1e-14);
  }
}
