#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "taxpose/model.hpp"
#include "taxpose/shapes.hpp"
#include "taxpose/symmetry.hpp"

namespace taxpose {

enum class RotationMode { Full, Yaw };

std::string to_string(RotationMode m);
RotationMode rotation_mode_from_string(const std::string& s);

struct TaskSpec {
  std::string name;
  ShapeDescriptor action_shape, anchor_shape;
  std::vector<std::string> goal_set;
  std::map<std::string, RigidTransformd> goal_poses;
  std::map<std::string, bool> off_hull;
  /// Declared hull margin m for off-hull goals: some action point of every
  /// demo lies at least m outside the anchor's convex hull.
  std::map<std::string, double> hull_margin;
  int action_points = 64;
  int anchor_points = 64;
  /// Relative jitter of shape parameters between demos.
  double shape_jitter = 0.0;
  RotationMode rotation_mode = RotationMode::Full;
  /// Training/eval translations are uniform in [-s, s]^3, s = this times the anchor diameter.
  double translation_scale = 1.0;
  /// Attach PCA symmetry labels (gripper-style for the action, bottle-style for the anchor).
  bool symmetry_labels = false;

  bool goal_conditioned() const { return goal_set.size() > 1; }
  /// Throws InputError if keys or shapes are inconsistent.
  void validate() const;
  std::size_t goal_index(const std::string& goal) const;
  Eigen::VectorXd goal_one_hot(const std::string& goal) const;
};

/// Names: peg-in-ring, block-in-box, block-on-box, block-goals.
std::vector<std::string> builtin_task_names();
TaskSpec builtin_task(const std::string& name);

std::string task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const std::string& text);

/// Diameter of the anchor sampled with seed 0, the yardstick for translations
/// and success thresholds.
double anchor_diameter(const TaskSpec& spec);

struct DemoPair {
  PointCloudd cloud_a, cloud_b;
  std::string goal;
  std::optional<Eigen::VectorXd> goal_one_hot;
  std::optional<SymmetryLabels> labels_a, labels_b;

  ForwardOptions forward_options() const { return {goal_one_hot, labels_a, labels_b}; }
};

DemoPair make_demo(const TaskSpec& spec, const std::string& goal, std::uint64_t seed);

struct TrainingSample {
  PointCloudd posed_a, posed_b;
  RigidTransformd t_alpha, t_beta, t_gt;
  std::string goal;
  ForwardOptions options;
};

RigidTransformd random_transform(std::mt19937_64& rng, double translation_scale, RotationMode mode);

TrainingSample sample_training_pair(const DemoPair& demo, double translation_scale, RotationMode mode,
                                    std::mt19937_64& rng);
TrainingSample sample_training_pair(const DemoPair& demo, double translation_scale, RotationMode mode,
                                    std::uint64_t seed);

/// Distance from x to the convex hull of `cloud`, bracketed by a Frank-Wolfe
/// iterate (upper) and a separating-plane certificate (lower).
struct HullDistance {
  double lower = 0.0;
  double upper = 0.0;
};
HullDistance hull_distance(const Points3d& cloud, const Vec3d& x, int iterations = 2000);

struct EvalThresholds {
  double theta_max = 5.0 * 3.14159265358979323846 / 180.0;  // on the halved metric
  double d_max = 0.0;
};
EvalThresholds default_thresholds(const TaskSpec& spec);

struct GoalStats {
  std::size_t count = 0;
  std::size_t failures = 0;
  double mean_rotation_error = 0.0;
  double mean_translation_error = 0.0;
  double success_rate = 0.0;
};

struct EvalReport {
  std::size_t count = 0;
  /// Solver errors; counted as unsuccessful and excluded from the error means.
  std::size_t failures = 0;
  double mean_rotation_error = 0.0;
  double median_rotation_error = 0.0;
  double mean_translation_error = 0.0;
  double median_translation_error = 0.0;
  double success_rate = 0.0;
  EvalThresholds thresholds;
  std::map<std::string, GoalStats> per_goal;
};

using Predictor = std::function<RigidTransformd(const TrainingSample&)>;

EvalReport evaluate(const Predictor& predict, const std::vector<TrainingSample>& samples,
                    const EvalThresholds& thresholds);
EvalReport evaluate(const TaxPoseModel& model, const std::vector<TrainingSample>& samples,
                    const EvalThresholds& thresholds);

std::string eval_report_to_json(const EvalReport& report);

struct Dataset {
  TaskSpec spec;
  std::map<std::string, std::vector<DemoPair>> demos;  // by goal
};

/// n_demos demos per goal; demo k of goal g uses a seed derived from (seed, g, k).
Dataset generate_dataset(const TaskSpec& spec, int n_demos, std::uint64_t seed);
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// `count` held-out samples cycling through the goals, from demos generated
/// with seeds disjoint from generate_dataset's.
std::vector<TrainingSample> held_out_samples(const TaskSpec& spec, int count, std::uint64_t seed);

}  // namespace taxpose
