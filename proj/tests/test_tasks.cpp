#include <gtest/gtest.h>

#include <filesystem>

#include "taxpose/errors.hpp"
#include "taxpose/geometry_io.hpp"
#include "taxpose/tasks.hpp"
#include "test_util.hpp"

using namespace taxpose;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

// Largest certified distance of any point of `a` outside the convex hull of `b`.
double certified_hull_excess(const PointCloudd& a, const PointCloudd& b) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) best = std::max(best, hull_distance(b.points(), a.point(i)).lower);
  return best;
}

}  // namespace

TEST(BuiltinTasks, AllValidate) {
  for (const auto& name : builtin_task_names()) {
    const TaskSpec s = builtin_task(name);
    EXPECT_NO_THROW(s.validate()) << name;
    EXPECT_EQ(s.name, name);
    EXPECT_GT(anchor_diameter(s), 0.0);
  }
  EXPECT_THROW(builtin_task("fold-laundry"), InputError);
  EXPECT_TRUE(builtin_task("block-goals").goal_conditioned());
  EXPECT_FALSE(builtin_task("peg-in-ring").goal_conditioned());
}

TEST(TaskSpec, ValidationCatchesInconsistentKeys) {
  TaskSpec s = builtin_task("block-in-box");
  s.goal_poses.clear();
  EXPECT_THROW(s.validate(), InputError);
  s = builtin_task("block-in-box");
  s.action_points = 3;
  EXPECT_THROW(s.validate(), InputError);
}

TEST(TaskSpec, GoalIndexAndOneHot) {
  const TaskSpec s = builtin_task("block-goals");
  for (std::size_t i = 0; i < s.goal_set.size(); ++i) {
    EXPECT_EQ(s.goal_index(s.goal_set[i]), i);
    const Eigen::VectorXd h = s.goal_one_hot(s.goal_set[i]);
    EXPECT_EQ(h.sum(), 1.0);
    EXPECT_EQ(h(static_cast<Eigen::Index>(i)), 1.0);
  }
  EXPECT_THROW(s.goal_index("under"), UnknownGoal);
}

TEST(TaskSpec, JsonRoundTrip) {
  for (const auto& name : builtin_task_names()) {
    const TaskSpec s = builtin_task(name);
    const std::string text = task_spec_to_json(s);
    EXPECT_EQ(task_spec_to_json(task_spec_from_json(text)), text) << name;
  }
  EXPECT_THROW(task_spec_from_json("[1, 2]"), FormatError);
}

TEST(RotationModeNames, RoundTrip) {
  for (auto m : {RotationMode::Full, RotationMode::Yaw}) EXPECT_EQ(rotation_mode_from_string(to_string(m)), m);
  EXPECT_THROW(rotation_mode_from_string("tumble"), InputError);
}

TEST(MakeDemo, IdentityGoalLeavesActionCanonical) {
  TaskSpec s = builtin_task("block-in-box");
  const RigidTransformd pose = s.goal_poses.at(s.goal_set.front());
  s.goal_poses.at(s.goal_set.front()) = RigidTransformd{};
  const DemoPair canonical = make_demo(s, s.goal_set.front(), 3);
  const Bounds bb = shape_bounds(s.action_shape);
  for (Eigen::Index i = 0; i < canonical.cloud_a.size(); ++i)
    EXPECT_TRUE((canonical.cloud_a.point(i).array() >= bb.lo.array() - 1e-12).all());
  const DemoPair placed = make_demo(builtin_task("block-in-box"), s.goal_set.front(), 3);
  EXPECT_EQ(placed.cloud_a, apply(pose, canonical.cloud_a));
  EXPECT_EQ(placed.cloud_b, canonical.cloud_b);
  EXPECT_THROW(make_demo(s, "nowhere", 3), UnknownGoal);
}

TEST(MakeDemo, CommonMotionPreservesRelativeConfiguration) {
  std::mt19937_64 rng(1);
  const TaskSpec s = builtin_task("peg-in-ring");
  const DemoPair d = make_demo(s, "in", 4);
  const RigidTransformd common = taxpose::testing::random_rigid(rng, 5.0);
  const PointCloudd a = apply(common, d.cloud_a), b = apply(common, d.cloud_b);
  // Relative pose of the moved pair, recovered from the known point identities.
  const Points3d back_a = apply(invert(common), a.points());
  const Points3d back_b = apply(invert(common), b.points());
  EXPECT_LT(taxpose::testing::max_abs(back_a - d.cloud_a.points()), 1e-12);
  EXPECT_LT(taxpose::testing::max_abs(back_b - d.cloud_b.points()), 1e-12);
}

TEST(MakeDemo, GoalConditionedDemosCarryOneHot) {
  const TaskSpec s = builtin_task("block-goals");
  const DemoPair d = make_demo(s, "left", 0);
  ASSERT_TRUE(d.goal_one_hot.has_value());
  EXPECT_EQ(*d.goal_one_hot, s.goal_one_hot("left"));
  EXPECT_FALSE(make_demo(builtin_task("peg-in-ring"), "in", 0).goal_one_hot.has_value());
}

TEST(MakeDemo, SymmetryLabelsWhenRequested) {
  TaskSpec s = builtin_task("peg-in-ring");
  s.symmetry_labels = true;
  const DemoPair d = make_demo(s, "in", 0);
  ASSERT_TRUE(d.labels_a && d.labels_b);
  EXPECT_EQ(d.labels_a->size(), d.cloud_a.size());
  EXPECT_LE(d.labels_b->cwiseAbs().maxCoeff(), 1.0);
}

TEST(MakeDemo, OffHullGoalsRespectDeclaredMargin) {
  for (const auto& name : builtin_task_names()) {
    const TaskSpec s = builtin_task(name);
    for (const auto& goal : s.goal_set) {
      if (!s.off_hull.at(goal)) continue;
      const double m = s.hull_margin.at(goal);
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const DemoPair d = make_demo(s, goal, seed);
        EXPECT_GE(certified_hull_excess(d.cloud_a, d.cloud_b), m) << name << "/" << goal << " seed " << seed;
      }
    }
  }
}

TEST(HullDistance, KnownCases) {
  Points3d cube(3, 8);
  int k = 0;
  for (int x : {0, 1})
    for (int y : {0, 1})
      for (int z : {0, 1}) cube.col(k++) = Vec3d(x, y, z);
  const HullDistance inside = hull_distance(cube, Vec3d(0.5, 0.5, 0.5));
  EXPECT_EQ(inside.lower, 0.0);
  EXPECT_LT(inside.upper, 1e-6);
  const HullDistance face = hull_distance(cube, Vec3d(0.5, 0.5, 3.0));
  EXPECT_LE(face.lower, 2.0 + 1e-12);
  EXPECT_GE(face.upper, 2.0 - 1e-12);
  EXPECT_NEAR(face.lower, 2.0, 1e-6);
  const HullDistance corner = hull_distance(cube, Vec3d(2, 2, 2));
  EXPECT_NEAR(corner.upper, std::sqrt(3.0), 1e-9);
  EXPECT_LE(corner.lower, corner.upper + 1e-12);
}

TEST(HullDistance, BracketsBruteForceOnRandomClouds) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const Points3d cloud = taxpose::testing::random_points(rng, 20);
    const Vec3d x = taxpose::testing::random_vec(rng, 3.0);
    const HullDistance h = hull_distance(cloud, x);
    EXPECT_LE(h.lower, h.upper + 1e-12);
    // Any hull point bounds the distance from above; vertices are hull points.
    EXPECT_LE(h.upper, (cloud.colwise() - x).colwise().norm().minCoeff() + 1e-12);
  }
}

TEST(SampleTrainingPair, Definitions) {
  const TaskSpec s = builtin_task("peg-in-ring");
  const DemoPair d = make_demo(s, "in", 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TrainingSample t = sample_training_pair(d, 3.0, RotationMode::Full, seed);
    const RigidTransformd gt = compose(t.t_beta, invert(t.t_alpha));
    EXPECT_EQ(t.t_gt.rotation, gt.rotation);
    EXPECT_EQ(t.t_gt.translation, gt.translation);
    EXPECT_EQ(t.posed_a, apply(t.t_alpha, d.cloud_a));
    EXPECT_EQ(t.posed_b, apply(t.t_beta, d.cloud_b));
    // t_gt moves the posed action back into the demo configuration relative to the posed anchor.
    const Points3d rel = apply(invert(t.t_beta), apply(t.t_gt, t.posed_a.points()));
    EXPECT_LT(taxpose::testing::max_abs(rel - d.cloud_a.points()), 1e-10);
  }
  const TrainingSample zero = sample_training_pair(d, 0.0, RotationMode::Yaw, 5);
  EXPECT_EQ(zero.t_alpha.translation, Vec3d::Zero());
  EXPECT_NEAR(zero.t_alpha.rotation(2, 2), 1.0, 1e-15);
}

TEST(RandomTransform, RangeAndDeterminism) {
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 50; ++i) {
    const RigidTransformd t = random_transform(a, 2.5, RotationMode::Yaw);
    const RigidTransformd u = random_transform(b, 2.5, RotationMode::Yaw);
    EXPECT_EQ(t.rotation, u.rotation);
    EXPECT_LE(t.translation.cwiseAbs().maxCoeff(), 2.5);
    EXPECT_LT((t.rotation.col(2) - Vec3d::UnitZ()).norm(), 1e-15);
  }
}

TEST(Evaluate, OracleAndIdentityPredictors) {
  const TaskSpec s = builtin_task("peg-in-ring");
  const auto samples = held_out_samples(s, 6, 1);
  const EvalThresholds th = default_thresholds(s);
  const EvalReport oracle = evaluate([](const TrainingSample& t) { return t.t_gt; }, samples, th);
  // acos near a trace of 3 resolves only to ~1e-8 rad.
  EXPECT_LT(oracle.mean_rotation_error, 1e-7);
  EXPECT_EQ(oracle.mean_translation_error, 0.0);
  EXPECT_EQ(oracle.success_rate, 1.0);

  std::vector<TrainingSample> quarter = samples;
  for (auto& t : quarter) t.t_gt = RigidTransformd{rotation_about<double>(Vec3d::UnitZ(), M_PI / 2), Vec3d::Zero()};
  const EvalReport ident = evaluate([](const TrainingSample&) { return RigidTransformd{}; }, quarter, th);
  EXPECT_NEAR(ident.mean_rotation_error, M_PI / 4, 1e-12);
  EXPECT_EQ(ident.success_rate, 0.0);

  for (auto& t : quarter) t.t_gt = RigidTransformd{};
  EXPECT_EQ(evaluate([](const TrainingSample&) { return RigidTransformd{}; }, quarter, th).success_rate, 1.0);
  EXPECT_THROW(evaluate([](const TrainingSample& t) { return t.t_gt; }, {}, th), InputError);
}

TEST(Evaluate, SolverErrorsCountAsFailures) {
  const TaskSpec s = builtin_task("peg-in-ring");
  const auto samples = held_out_samples(s, 4, 2);
  int calls = 0;
  const EvalReport r = evaluate(
      [&](const TrainingSample& t) {
        if (calls++ % 2 == 0) throw DegenerateCorrespondences("test");
        return t.t_gt;
      },
      samples, default_thresholds(s));
  EXPECT_EQ(r.failures, 2u);
  EXPECT_EQ(r.success_rate, 0.5);
  EXPECT_LT(r.mean_rotation_error, 1e-7);
}

TEST(Evaluate, PerGoalBreakdown) {
  const TaskSpec s = builtin_task("block-goals");
  const auto samples = held_out_samples(s, 8, 3);
  const EvalReport r = evaluate([](const TrainingSample& t) { return t.t_gt; }, samples, default_thresholds(s));
  EXPECT_EQ(r.per_goal.size(), s.goal_set.size());
  for (const auto& [goal, stats] : r.per_goal) EXPECT_EQ(stats.count, 2u) << goal;
  EXPECT_NE(eval_report_to_json(r).find("\"per_goal\""), std::string::npos);
}

TEST(Dataset, DeterministicAndRoundTripsBitExactly) {
  TaskSpec s = builtin_task("block-goals");
  s.symmetry_labels = true;
  const Dataset a = generate_dataset(s, 2, 7), b = generate_dataset(s, 2, 7);
  const fs::path d1 = fresh_dir("taxpose_ds_1"), d2 = fresh_dir("taxpose_ds_2");
  write_dataset(d1, a);
  write_dataset(d2, b);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), d1);
    EXPECT_EQ(read_file(entry.path()), read_file(d2 / rel)) << rel;
  }
  const Dataset back = read_dataset(d1);
  for (const auto& goal : s.goal_set) {
    ASSERT_EQ(back.demos.at(goal).size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
      const DemoPair& x = a.demos.at(goal)[k];
      const DemoPair& y = back.demos.at(goal)[k];
      EXPECT_EQ(x.cloud_a, y.cloud_a);
      EXPECT_EQ(x.cloud_b, y.cloud_b);
      EXPECT_EQ(*x.goal_one_hot, *y.goal_one_hot);
      EXPECT_EQ(*x.labels_a, *y.labels_a);
    }
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
  EXPECT_THROW(read_dataset(fresh_dir("taxpose_ds_missing")), std::exception);
}

TEST(HeldOut, DisjointFromTrainingDemos) {
  const TaskSpec s = builtin_task("peg-in-ring");
  const Dataset train = generate_dataset(s, 5, 0);
  const auto held = held_out_samples(s, 5, 0);
  for (const auto& t : held)
    for (const auto& d : train.demos.at("in")) EXPECT_FALSE(apply(invert(t.t_alpha), t.posed_a) == d.cloud_a);
}
