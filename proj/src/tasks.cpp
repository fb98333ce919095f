#include "taxpose/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <json.hpp>

#include "taxpose/errors.hpp"
#include "taxpose/geometry_io.hpp"

namespace taxpose {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

RigidTransformd pose(double yaw_deg, double x, double y, double z) {
  return {rotation_about<double>(Vec3d::UnitZ(), yaw_deg * kPi / 180.0), Vec3d(x, y, z)};
}

json transform_to_json(const RigidTransformd& t) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(t.rotation(r, c));
  for (int k = 0; k < 3; ++k) a.push_back(t.translation(k));
  return a;
}

RigidTransformd transform_from_json(const json& j) {
  if (!j.is_array() || j.size() != 12) throw FormatError("a transform needs 12 reals");
  RigidTransformd t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = j[3 * r + c].get<double>();
  for (int k = 0; k < 3; ++k) t.translation(k) = j[9 + k].get<double>();
  if (!is_rotation(t.rotation, 1e-6)) throw FormatError("goal pose rotation is not a rotation matrix");
  return t;
}

json shape_to_json(const ShapeDescriptor& d) { return {{"kind", to_string(d.kind)}, {"params", d.params}}; }

ShapeDescriptor shape_from_json(const json& j) {
  ShapeDescriptor d;
  d.kind = shape_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("params")) d.params = j.at("params").get<std::map<std::string, double>>();
  return d;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string to_string(RotationMode m) { return m == RotationMode::Full ? "full" : "yaw"; }

RotationMode rotation_mode_from_string(const std::string& s) {
  if (s == "full") return RotationMode::Full;
  if (s == "yaw") return RotationMode::Yaw;
  throw InputError("unknown rotation mode '" + s + "'");
}

void TaskSpec::validate() const {
  if (name.empty()) throw InputError("task spec needs a name");
  if (goal_set.empty()) throw InputError("task spec needs at least one goal");
  for (const auto& g : goal_set) {
    if (!goal_poses.count(g)) throw InputError("goal '" + g + "' has no pose");
    if (std::count(goal_set.begin(), goal_set.end(), g) != 1) throw InputError("goal '" + g + "' is listed twice");
  }
  if (goal_poses.size() != goal_set.size()) throw InputError("goal_poses keys must equal goal_set");
  for (const auto& [g, t] : goal_poses)
    if (!is_rotation(t.rotation, 1e-6) || !t.translation.allFinite())
      throw InputError("goal '" + g + "' pose is not a rigid transform");
  for (const auto& [g, m] : hull_margin)
    if (!goal_poses.count(g) || !(m >= 0.0)) throw InputError("bad hull margin for goal '" + g + "'");
  if (action_points < 8 || anchor_points < 8) throw InputError("clouds need at least 8 points");
  if (!(shape_jitter >= 0.0 && shape_jitter < 1.0)) throw InputError("shape_jitter must be in [0, 1)");
  if (!(translation_scale >= 0.0)) throw InputError("translation_scale must be non-negative");
  generate_shape(action_shape, 8, 0);
  generate_shape(anchor_shape, 8, 0);
}

std::size_t TaskSpec::goal_index(const std::string& goal) const {
  const auto it = std::find(goal_set.begin(), goal_set.end(), goal);
  if (it == goal_set.end()) throw UnknownGoal("goal '" + goal + "' is not part of task '" + name + "'");
  return static_cast<std::size_t>(it - goal_set.begin());
}

Eigen::VectorXd TaskSpec::goal_one_hot(const std::string& goal) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(goal_set.size()));
  v(static_cast<Eigen::Index>(goal_index(goal))) = 1.0;
  return v;
}

std::vector<std::string> builtin_task_names() { return {"peg-in-ring", "block-in-box", "block-on-box", "block-goals"}; }

TaskSpec builtin_task(const std::string& name) {
  TaskSpec s;
  s.name = name;
  if (name == "peg-in-ring") {
    s.action_shape = {ShapeKind::CappedPeg, {{"cap_radius", 0.55}}};
    s.anchor_shape = {ShapeKind::RingPost, {}};
    // Shaft through the ring, cap resting on the tube, tab pointing along +y.
    const double pr = s.anchor_shape.param("post_radius"), rr = s.anchor_shape.param("ring_radius");
    const double rz = s.anchor_shape.param("ring_height"), tr = s.anchor_shape.param("tube_radius");
    const double len = s.action_shape.param("peg_length");
    s.goal_set = {"in"};
    s.goal_poses["in"] = pose(90.0, pr + rr, 0.0, rz + tr - len);
    s.off_hull["in"] = true;
    s.hull_margin["in"] = 0.3;
  } else if (name == "block-in-box") {
    s.action_shape = {ShapeKind::Box, {{"sx", 1.0}, {"sy", 0.6}, {"sz", 0.5}}};
    s.anchor_shape = {ShapeKind::OpenBox, {}};
    s.goal_set = {"in"};
    s.goal_poses["in"] = pose(0.0, 0.0, 0.0, s.anchor_shape.param("wall"));
    s.off_hull["in"] = false;
  } else if (name == "block-on-box") {
    s.action_shape = {ShapeKind::Box, {{"sx", 1.0}, {"sy", 0.6}, {"sz", 0.5}}};
    s.anchor_shape = {ShapeKind::Box, {}};
    s.goal_set = {"on"};
    s.goal_poses["on"] = pose(0.0, 0.0, 0.0, s.anchor_shape.param("sz"));
    s.off_hull["on"] = true;
    s.hull_margin["on"] = 0.4;
  } else if (name == "block-goals") {
    s.action_shape = {ShapeKind::NotchedBlock, {}};
    s.anchor_shape = {ShapeKind::OpenBox, {}};
    const double side = s.anchor_shape.param("sx") / 2 + s.action_shape.param("sx") / 2 + 0.2;
    s.goal_set = {"in", "on", "left", "right"};
    s.goal_poses["in"] = pose(0.0, 0.0, 0.0, s.anchor_shape.param("wall"));
    s.goal_poses["on"] = pose(0.0, 0.0, 0.0, s.anchor_shape.param("sz"));
    s.goal_poses["left"] = pose(0.0, -side, 0.0, 0.0);
    s.goal_poses["right"] = pose(0.0, side, 0.0, 0.0);
    s.off_hull = {{"in", false}, {"on", true}, {"left", true}, {"right", true}};
    s.hull_margin = {{"on", 0.5}, {"left", 0.5}, {"right", 0.5}};
  } else {
    throw InputError("unknown built-in task '" + name + "'");
  }
  for (const auto& g : s.goal_set)
    if (!s.off_hull.count(g)) s.off_hull[g] = false;
  return s;
}

std::string task_spec_to_json(const TaskSpec& spec) {
  json doc;
  doc["name"] = spec.name;
  doc["action_shape"] = shape_to_json(spec.action_shape);
  doc["anchor_shape"] = shape_to_json(spec.anchor_shape);
  doc["goal_set"] = spec.goal_set;
  json poses = json::object();
  for (const auto& [g, t] : spec.goal_poses) poses[g] = transform_to_json(t);
  doc["goal_poses"] = poses;
  doc["off_hull"] = spec.off_hull;
  doc["hull_margin"] = spec.hull_margin;
  doc["action_points"] = spec.action_points;
  doc["anchor_points"] = spec.anchor_points;
  doc["shape_jitter"] = spec.shape_jitter;
  doc["rotation_mode"] = to_string(spec.rotation_mode);
  doc["translation_scale"] = spec.translation_scale;
  doc["symmetry_labels"] = spec.symmetry_labels;
  return doc.dump(2) + "\n";
}

TaskSpec task_spec_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    TaskSpec s;
    s.name = doc.at("name").get<std::string>();
    s.action_shape = shape_from_json(doc.at("action_shape"));
    s.anchor_shape = shape_from_json(doc.at("anchor_shape"));
    s.goal_set = doc.at("goal_set").get<std::vector<std::string>>();
    for (const auto& [g, t] : doc.at("goal_poses").items()) s.goal_poses[g] = transform_from_json(t);
    if (doc.contains("off_hull")) s.off_hull = doc.at("off_hull").get<std::map<std::string, bool>>();
    if (doc.contains("hull_margin")) s.hull_margin = doc.at("hull_margin").get<std::map<std::string, double>>();
    s.action_points = doc.value("action_points", s.action_points);
    s.anchor_points = doc.value("anchor_points", s.anchor_points);
    s.shape_jitter = doc.value("shape_jitter", s.shape_jitter);
    s.rotation_mode = rotation_mode_from_string(doc.value("rotation_mode", to_string(s.rotation_mode)));
    s.translation_scale = doc.value("translation_scale", s.translation_scale);
    s.symmetry_labels = doc.value("symmetry_labels", s.symmetry_labels);
    for (const auto& g : s.goal_set)
      if (!s.off_hull.count(g)) s.off_hull[g] = false;
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed task spec: ") + e.what());
  }
}

double anchor_diameter(const TaskSpec& spec) {
  return diameter(generate_shape(spec.anchor_shape, spec.anchor_points, 0));
}

DemoPair make_demo(const TaskSpec& spec, const std::string& goal, std::uint64_t seed) {
  spec.goal_index(goal);
  std::mt19937_64 rng(derive_seed(seed, 1, 0));
  const ShapeDescriptor action = spec.shape_jitter > 0 ? jitter_shape(spec.action_shape, spec.shape_jitter, rng)
                                                       : spec.action_shape;
  const ShapeDescriptor anchor = spec.shape_jitter > 0 ? jitter_shape(spec.anchor_shape, spec.shape_jitter, rng)
                                                       : spec.anchor_shape;
  DemoPair d{apply(spec.goal_poses.at(goal), generate_shape(action, spec.action_points, derive_seed(seed, 2, 0))),
             generate_shape(anchor, spec.anchor_points, derive_seed(seed, 3, 0)),
             goal,
             std::nullopt,
             std::nullopt,
             std::nullopt};
  if (spec.goal_conditioned()) d.goal_one_hot = spec.goal_one_hot(goal);
  if (spec.symmetry_labels) {
    d.labels_a = gripper_labels(d.cloud_a);
    d.labels_b = bottle_labels(d.cloud_b, centroid(d.cloud_a) - centroid(d.cloud_b));
  }
  return d;
}

RigidTransformd random_transform(std::mt19937_64& rng, double translation_scale, RotationMode mode) {
  RigidTransformd t;
  t.rotation = mode == RotationMode::Full ? random_rotation(rng) : random_yaw(rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 3; ++k) t.translation(k) = translation_scale * u(rng);
  return t;
}

TrainingSample sample_training_pair(const DemoPair& demo, double translation_scale, RotationMode mode,
                                    std::mt19937_64& rng) {
  TrainingSample s{demo.cloud_a, demo.cloud_b, {}, {}, {}, demo.goal, demo.forward_options()};
  s.t_alpha = random_transform(rng, translation_scale, mode);
  s.t_beta = random_transform(rng, translation_scale, mode);
  s.t_gt = compose(s.t_beta, invert(s.t_alpha));
  s.posed_a = apply(s.t_alpha, demo.cloud_a);
  s.posed_b = apply(s.t_beta, demo.cloud_b);
  return s;
}

TrainingSample sample_training_pair(const DemoPair& demo, double translation_scale, RotationMode mode,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_training_pair(demo, translation_scale, mode, rng);
}

HullDistance hull_distance(const Points3d& cloud, const Vec3d& x, int iterations) {
  const Eigen::Index n = cloud.cols();
  // Start from the nearest vertex.
  Eigen::Index best = 0;
  (cloud.colwise() - x).colwise().squaredNorm().minCoeff(&best);
  Vec3d y = cloud.col(best);
  HullDistance out;
  out.upper = (y - x).norm();
  for (int it = 0; it < iterations && out.upper > 0.0; ++it) {
    const Vec3d g = y - x;
    const Eigen::RowVectorXd proj = g.transpose() * cloud;
    Eigen::Index s = 0;
    proj.minCoeff(&s);
    const Vec3d dir = cloud.col(s) - y;
    const double denom = dir.squaredNorm();
    if (denom == 0.0) break;
    const double step = std::clamp(-g.dot(dir) / denom, 0.0, 1.0);
    if (step == 0.0) break;
    y += step * dir;
    out.upper = std::min(out.upper, (y - x).norm());
  }
  const Vec3d g = y - x;
  const double gn = g.norm();
  if (gn > 0.0) {
    const Vec3d u = g / gn;
    double lo = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) lo = std::min(lo, u.dot(cloud.col(j) - x));
    out.lower = std::max(0.0, lo);
  }
  return out;
}

EvalThresholds default_thresholds(const TaskSpec& spec) {
  EvalThresholds t;
  t.d_max = 0.05 * anchor_diameter(spec);
  return t;
}

EvalReport evaluate(const Predictor& predict, const std::vector<TrainingSample>& samples,
                    const EvalThresholds& thresholds) {
  if (samples.empty()) throw InputError("evaluation needs at least one sample");
  EvalReport r;
  r.thresholds = thresholds;
  r.count = samples.size();
  std::vector<double> rot, trans;
  std::size_t successes = 0;
  std::map<std::string, std::size_t> goal_successes;
  for (const auto& s : samples) {
    GoalStats& g = r.per_goal[s.goal];
    ++g.count;
    RigidTransformd pred;
    try {
      pred = predict(s);
    } catch (const NumericalError&) {
      ++r.failures;
      ++g.failures;
      continue;
    }
    const double er = rotation_geodesic_error(pred.rotation, s.t_gt.rotation);
    const double et = translation_error(pred.translation, s.t_gt.translation);
    rot.push_back(er);
    trans.push_back(et);
    g.mean_rotation_error += er;
    g.mean_translation_error += et;
    if (er < thresholds.theta_max && et < thresholds.d_max) {
      ++successes;
      ++goal_successes[s.goal];
    }
  }
  for (auto& [name, g] : r.per_goal) {
    const std::size_t ok = g.count - g.failures;
    if (ok > 0) {
      g.mean_rotation_error /= static_cast<double>(ok);
      g.mean_translation_error /= static_cast<double>(ok);
    }
    g.success_rate = static_cast<double>(goal_successes[name]) / static_cast<double>(g.count);
  }
  if (!rot.empty()) {
    for (double v : rot) r.mean_rotation_error += v;
    for (double v : trans) r.mean_translation_error += v;
    r.mean_rotation_error /= static_cast<double>(rot.size());
    r.mean_translation_error /= static_cast<double>(trans.size());
  }
  r.median_rotation_error = median(rot);
  r.median_translation_error = median(trans);
  r.success_rate = static_cast<double>(successes) / static_cast<double>(r.count);
  return r;
}

EvalReport evaluate(const TaxPoseModel& model, const std::vector<TrainingSample>& samples,
                    const EvalThresholds& thresholds) {
  return evaluate([&](const TrainingSample& s) { return forward(model, s.posed_a, s.posed_b, s.options).transform; },
                  samples, thresholds);
}

std::string eval_report_to_json(const EvalReport& r) {
  json doc;
  doc["count"] = r.count;
  doc["failures"] = r.failures;
  doc["mean_rotation_error"] = r.mean_rotation_error;
  doc["median_rotation_error"] = r.median_rotation_error;
  doc["mean_translation_error"] = r.mean_translation_error;
  doc["median_translation_error"] = r.median_translation_error;
  doc["success_rate"] = r.success_rate;
  doc["theta_max"] = r.thresholds.theta_max;
  doc["d_max"] = r.thresholds.d_max;
  json goals = json::object();
  for (const auto& [name, g] : r.per_goal)
    goals[name] = {{"count", g.count},
                   {"failures", g.failures},
                   {"mean_rotation_error", g.mean_rotation_error},
                   {"mean_translation_error", g.mean_translation_error},
                   {"success_rate", g.success_rate}};
  doc["per_goal"] = goals;
  return doc.dump(2) + "\n";
}

Dataset generate_dataset(const TaskSpec& spec, int n_demos, std::uint64_t seed) {
  spec.validate();
  if (n_demos < 1) throw InputError("need at least one demo per goal");
  Dataset d{spec, {}};
  for (std::size_t g = 0; g < spec.goal_set.size(); ++g) {
    const std::string& goal = spec.goal_set[g];
    for (int k = 0; k < n_demos; ++k)
      d.demos[goal].push_back(make_demo(spec, goal, derive_seed(seed, g + 1, static_cast<std::uint64_t>(k))));
  }
  return d;
}

namespace {

std::string cloud_text(const PointCloudd& c, const std::optional<SymmetryLabels>& labels) {
  std::ostringstream out;
  write_cloud(out, c, labels ? &*labels : nullptr);
  return out.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "demos");
  write_file_atomic(dir / "spec.json", task_spec_to_json(data.spec));
  for (const auto& [goal, demos] : data.demos) {
    const fs::path gdir = dir / "demos" / goal;
    fs::create_directories(gdir);
    for (std::size_t k = 0; k < demos.size(); ++k) {
      write_file_atomic(gdir / (std::to_string(k) + "_a.xyz"), cloud_text(demos[k].cloud_a, demos[k].labels_a));
      write_file_atomic(gdir / (std::to_string(k) + "_b.xyz"), cloud_text(demos[k].cloud_b, demos[k].labels_b));
    }
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Dataset d{task_spec_from_json(read_file(dir / "spec.json")), {}};
  for (const auto& goal : d.spec.goal_set) {
    const fs::path gdir = dir / "demos" / goal;
    for (int k = 0;; ++k) {
      const fs::path pa = gdir / (std::to_string(k) + "_a.xyz");
      const fs::path pb = gdir / (std::to_string(k) + "_b.xyz");
      if (!fs::exists(pa) || !fs::exists(pb)) break;
      LabeledCloud a = read_cloud(pa);
      LabeledCloud b = read_cloud(pb);
      DemoPair demo{a.cloud, b.cloud, goal, std::nullopt, a.labels, b.labels};
      if (d.spec.goal_conditioned()) demo.goal_one_hot = d.spec.goal_one_hot(goal);
      if (d.spec.symmetry_labels && (!demo.labels_a || !demo.labels_b))
        throw FormatError("demo " + pa.string() + " lacks symmetry labels");
      d.demos[goal].push_back(std::move(demo));
    }
    if (d.demos[goal].empty()) throw FormatError("no demos found for goal '" + goal + "' in " + gdir.string());
  }
  return d;
}

std::vector<TrainingSample> held_out_samples(const TaskSpec& spec, int count, std::uint64_t seed) {
  if (count < 1) throw InputError("need at least one held-out sample");
  const double scale = spec.translation_scale * anchor_diameter(spec);
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    const std::string& goal = spec.goal_set[static_cast<std::size_t>(i) % spec.goal_set.size()];
    // Salt 0xE7A1 keeps these demos disjoint from generate_dataset's.
    const DemoPair demo = make_demo(spec, goal, derive_seed(seed, 0xE7A1, static_cast<std::uint64_t>(i)));
    out.push_back(sample_training_pair(demo, scale, spec.rotation_mode, derive_seed(seed, 0xE7A2, i)));
  }
  return out;
}

}  // namespace taxpose
