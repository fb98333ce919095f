#include <gtest/gtest.h>

#include <cmath>

#include "taxpose/errors.hpp"
#include "taxpose/geometry.hpp"
#include "test_util.hpp"

using namespace taxpose;
using taxpose::testing::max_abs;
using taxpose::testing::random_cloud;
using taxpose::testing::random_rigid;

namespace {

RigidTransformd translate(double x, double y, double z) { return RigidTransformd::from_translation(Vec3d(x, y, z)); }

double transform_distance(const RigidTransformd& a, const RigidTransformd& b) {
  return std::max(max_abs(a.rotation - b.rotation), max_abs(a.translation - b.translation));
}

}  // namespace

TEST(PointCloud, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointCloudd(Points3d(3, 0)), InputError);
  Points3d p = Points3d::Zero(3, 2);
  p(1, 1) = std::nan("");
  EXPECT_THROW(PointCloudd{p}, InputError);
}

TEST(Compose, IdentityAndInverse) {
  std::mt19937_64 rng(1);
  const RigidTransformd t = random_rigid(rng);
  EXPECT_LT(transform_distance(compose(RigidTransformd::identity(), t), t), 1e-15);
  EXPECT_LT(transform_distance(compose(t, invert(t)), RigidTransformd::identity()), 1e-12);
}

TEST(Compose, TranslationsAdd) {
  const RigidTransformd c = compose(translate(1, 0, 0), translate(0, 2, 0));
  EXPECT_EQ(c.translation, Vec3d(1, 2, 0));
  EXPECT_EQ(c.rotation, Mat3d::Identity());
}

TEST(Compose, AppliesRightOperandFirst) {
  std::mt19937_64 rng(2);
  const RigidTransformd a = random_rigid(rng), b = random_rigid(rng);
  const Points3d p = random_cloud(rng, 20).points();
  EXPECT_LT(max_abs(apply(compose(a, b), p) - apply(a, apply(b, p))), 1e-12);
}

TEST(Compose, Associative) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const RigidTransformd a = random_rigid(rng), b = random_rigid(rng), c = random_rigid(rng);
    EXPECT_LT(transform_distance(compose(compose(a, b), c), compose(a, compose(b, c))), 1e-12);
  }
}

TEST(Invert, IdentityAndPureRotation) {
  const RigidTransformd ii = invert(RigidTransformd::identity());
  EXPECT_EQ(ii.rotation, Mat3d::Identity());
  EXPECT_EQ(ii.translation, Vec3d::Zero());
  std::mt19937_64 rng(4);
  const Mat3d r = random_rotation(rng);
  const RigidTransformd inv = invert(RigidTransformd::from_rotation(r));
  EXPECT_EQ(inv.rotation, Mat3d(r.transpose()));
  EXPECT_EQ(inv.translation, Vec3d::Zero());
}

TEST(Invert, RoundTrip) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 100; ++k) {
    const RigidTransformd t = random_rigid(rng, 3.0);
    EXPECT_LT(transform_distance(compose(invert(t), t), RigidTransformd::identity()), 1e-12);
    EXPECT_EQ(invert(t).rotation, Mat3d(t.rotation.transpose()));
    EXPECT_LT(max_abs(invert(t).translation + t.rotation.transpose() * t.translation), 1e-15);
  }
}

TEST(Apply, IdentityTranslationAndRoundTrip) {
  std::mt19937_64 rng(6);
  const PointCloudd p = random_cloud(rng, 30);
  EXPECT_EQ(apply(RigidTransformd::identity(), p), p);
  const Vec3d t(0.5, -2.0, 3.25);
  const PointCloudd shifted = apply(RigidTransformd::from_translation(t), p);
  EXPECT_EQ(shifted.size(), p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(shifted.point(i), Vec3d(p.point(i) + t));
  const RigidTransformd r = random_rigid(rng);
  EXPECT_LT(max_abs(apply(r, apply(invert(r), p)).points() - p.points()), 1e-12);
}

TEST(RandomRotation, DeterministicAndValid) {
  std::mt19937_64 a(7), b(7);
  const Mat3d ra = random_rotation(a), rb = random_rotation(b);
  EXPECT_EQ(ra, rb);
  EXPECT_TRUE(is_rotation(ra));
}

TEST(RandomRotation, TraceHasZeroMean) {
  // Haar measure on SO(3) has E[R] = 0, so E[tr R] = 0.
  std::mt19937_64 rng(8);
  double sum = 0.0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    const Mat3d r = random_rotation(rng);
    ASSERT_TRUE(is_rotation(r));
    sum += r.trace();
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
}

TEST(RandomRotation, AngleDistributionMatchesHaar) {
  // Under Haar measure the rotation angle has density (1 - cos t) / pi, so
  // P(angle < pi/2) = (pi/2 - 1) / pi.
  std::mt19937_64 rng(9);
  int below = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const double c = std::clamp((random_rotation(rng).trace() - 1.0) / 2.0, -1.0, 1.0);
    below += std::acos(c) < M_PI / 2 ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(below) / n, (M_PI / 2 - 1) / M_PI, 0.01);
}

TEST(RotationGeodesicError, TraceFormulaCases) {
  const Mat3d i = Mat3d::Identity();
  EXPECT_EQ(rotation_geodesic_error(i, i), 0.0);
  EXPECT_NEAR(rotation_geodesic_error<double>(rotation_about<double>(Vec3d::UnitZ(), M_PI), i), M_PI / 2, 1e-12);
  EXPECT_NEAR(rotation_geodesic_error<double>(rotation_about<double>(Vec3d::UnitZ(), M_PI / 2), i), M_PI / 4, 1e-12);
}

TEST(RotationGeodesicError, HalfAngleAboutAnyAxis) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, M_PI);
  for (int k = 0; k < 200; ++k) {
    const Vec3d axis = taxpose::testing::random_vec(rng);
    const double theta = u(rng);
    const Mat3d r = rotation_about<double>(axis, theta);
    EXPECT_NEAR(rotation_geodesic_error<double>(r, Mat3d::Identity()), theta / 2, 1e-7);
  }
  // Away from the endpoints acos is well-conditioned.
  for (double theta : {0.3, 1.0, 2.0, 2.8}) {
    const Mat3d r = rotation_about<double>(Vec3d(1, 2, 3), theta);
    EXPECT_NEAR(rotation_geodesic_error<double>(r, Mat3d::Identity()), theta / 2, 1e-9);
  }
}

TEST(RotationGeodesicError, SymmetricAndZeroOnlyForEqual) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 100; ++k) {
    const Mat3d a = random_rotation(rng), b = random_rotation(rng);
    EXPECT_NEAR(rotation_geodesic_error(a, b), rotation_geodesic_error(b, a), 1e-12);
    EXPECT_GT(rotation_geodesic_error(a, b), 0.0);
    EXPECT_NEAR(rotation_geodesic_error(a, a), 0.0, 1e-7);
  }
}

TEST(RotationGeodesicError, ClampsRoundedTrace) {
  Mat3d r = Mat3d::Identity() * (1.0 + 1e-15);
  EXPECT_EQ(rotation_geodesic_error<double>(r, Mat3d::Identity()), 0.0);
}

TEST(TranslationError, Cases) {
  const Vec3d t(0.25, -1, 3);
  EXPECT_EQ(translation_error(t, t), 0.0);
  EXPECT_EQ(translation_error<double>(Vec3d(1, 0, 0), Vec3d::Zero()), 1.0);
  EXPECT_EQ(translation_error<double>(Vec3d(1, 2, 2), Vec3d::Zero()), 3.0);
}

TEST(Centroid, SinglePointAndSymmetricPair) {
  const Vec3d p(1.5, -2, 0.25);
  const PointCloudd single{Points3d(p)};
  EXPECT_EQ(centroid(single), p);
  EXPECT_EQ(center(single).cloud.point(0), Vec3d::Zero());
  Points3d pair(3, 2);
  pair << p, -p;
  EXPECT_EQ(centroid(PointCloudd(pair)), Vec3d::Zero());
}

TEST(Center, RoundTripAndZeroMean) {
  std::mt19937_64 rng(12);
  const PointCloudd p = random_cloud(rng, 50, 2.0);
  const Centered<double> c = center(p);
  EXPECT_LT(max_abs(centroid(c.cloud)), 1e-12);
  EXPECT_LT(max_abs((c.cloud.points().colwise() + c.mean) - p.points()), 1e-12);
}

TEST(Center, TranslationNormalizingOnDyadicGrid) {
  // Dyadic coordinates and a power-of-two count keep every sum exact, so the
  // centred cloud is bit-identical after translation.
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> k(-64, 64);
  Points3d p(3, 32);
  for (Eigen::Index i = 0; i < p.cols(); ++i)
    for (int r = 0; r < 3; ++r) p(r, i) = k(rng) / 16.0;
  const Vec3d t(3.5, -0.25, 12.0);
  EXPECT_EQ(center(PointCloudd(p.colwise() + t)).cloud, center(PointCloudd(p)).cloud);
}

TEST(Center, TranslationNormalizingGeneralCase) {
  std::mt19937_64 rng(14);
  const PointCloudd p = random_cloud(rng, 37);
  const Vec3d t = taxpose::testing::random_vec(rng, 5.0);
  EXPECT_LT(max_abs(center(apply(RigidTransformd::from_translation(t), p)).cloud.points() - center(p).cloud.points()),
            1e-12);
}

TEST(Diameter, MatchesLargestPairwiseDistance) {
  Points3d p(3, 3);
  p << 0, 3, 0,
       0, 0, 4,
       0, 0, 0;
  EXPECT_DOUBLE_EQ(diameter(PointCloudd(p)), 5.0);
}
