// taxpose: command-line workflow for cross-pose estimation.
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 numerical or solver
// error, 4 audit failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "taxpose/checkpoint.hpp"
#include "taxpose/errors.hpp"
#include "taxpose/geometry_io.hpp"
#include "taxpose/pretrain.hpp"
#include "taxpose/tasks.hpp"
#include "taxpose/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace taxpose;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitAudit = 4;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("TAXPOSE_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw InputError(std::string("TAXPOSE_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

void print_config(const std::string& command, const json& cfg) {
  std::cerr << "# " << command << " config: " << cfg.dump() << "\n";
}

TaskSpec load_spec(const std::string& spec_arg) {
  if (fs::exists(spec_arg)) return task_spec_from_json(read_file(spec_arg));
  for (const auto& name : builtin_task_names())
    if (name == spec_arg) return builtin_task(name);
  throw InputError("'" + spec_arg + "' is neither a spec file nor a built-in task");
}

struct Common {
  std::uint64_t seed = 0;
  bool float_strict = false;
};

int cmd_gen(const Common& c, const std::string& spec_arg, const std::string& out, int demos) {
  const TaskSpec spec = load_spec(spec_arg);
  print_config("gen", {{"spec", spec.name}, {"out", out}, {"demos", demos}, {"seed", c.seed}});
  write_dataset(out, generate_dataset(spec, demos, c.seed));
  std::cout << "wrote " << demos << " demos per goal for task '" << spec.name << "' to " << out << "\n";
  return 0;
}

struct PretrainArgs {
  std::string out;
  int steps = 500;
  double lr = 1e-3;
  double lambda_geo = 10.0;
  int shapes = 4;
  int embed_dim = 32;
  int hidden_dim = 64;
  int trials = 5;
};

int cmd_pretrain(const Common& c, const PretrainArgs& a) {
  print_config("pretrain", {{"out", a.out},
                            {"steps", a.steps},
                            {"learning_rate", a.lr},
                            {"lambda_geo", a.lambda_geo},
                            {"shapes", a.shapes},
                            {"embed_dim", a.embed_dim},
                            {"hidden_dim", a.hidden_dim},
                            {"seed", c.seed}});
  ModelConfig mc;
  mc.embed_dim = a.embed_dim;
  mc.hidden_dim = a.hidden_dim;
  std::mt19937_64 rng(c.seed);
  TaxPoseModel model = init_model(mc, rng);

  PretrainConfig pc;
  pc.steps = a.steps;
  pc.learning_rate = a.lr;
  pc.lambda_geo = a.lambda_geo;
  pc.seed = c.seed;
  const ShapeKind kinds[] = {ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::NotchedBlock};
  for (int k = 0; k < a.shapes; ++k) {
    const ShapeDescriptor d = jitter_shape({kinds[k % 3], {}}, 0.2, rng);
    pc.shapes.push_back(generate_shape(d, 32 + static_cast<int>(rng() % 97), rng()));
  }
  for (Encoder<Eigen::MatrixXd>* enc : {&model.params.encoder_a, &model.params.encoder_b}) {
    const double before = feature_drift(mc, *enc, pc.shapes, a.trials, c.seed + 1);
    const PretrainResult r = pretrain_encoder(pc, mc, *enc);
    const double after = feature_drift(mc, r.encoder, pc.shapes, a.trials, c.seed + 1);
    std::cout << "encoder " << (enc == &model.params.encoder_a ? "a" : "b") << ": loss " << r.loss_trace.front()
              << " -> " << r.smoothed_trace.back() << ", feature drift " << before << " -> " << after << "\n";
    *enc = r.encoder;
    ++pc.seed;
  }
  save_checkpoint(a.out, model);
  return 0;
}

struct TrainArgs {
  std::string data, out, trace, config;
  std::optional<int> steps, batch, demos, embed_dim, hidden_dim, eval_every;
  std::optional<double> lr;
  std::optional<std::string> goal, cross, pretrained;
  bool no_residuals = false;
  bool unweighted_svd = false;
};

TrainConfig resolve_train_config(const Common& c, const TrainArgs& a, bool seed_given) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from_json(read_file(a.config));
  if (seed_given || a.config.empty()) cfg.seed = c.seed;
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.demos) cfg.n_demos = *a.demos;
  if (a.embed_dim) cfg.model.embed_dim = *a.embed_dim;
  if (a.hidden_dim) cfg.model.hidden_dim = *a.hidden_dim;
  if (a.eval_every) cfg.eval_every = *a.eval_every;
  if (a.lr) cfg.optimizer.learning_rate = *a.lr;
  if (a.goal) cfg.goal = *a.goal;
  if (a.cross) cfg.model.cross = cross_variant_from_string(*a.cross);
  if (a.pretrained) cfg.pretrained_encoder = *a.pretrained;
  if (a.no_residuals) cfg.model.residuals_enabled = false;
  if (a.unweighted_svd) cfg.model.weighted_svd_enabled = false;
  cfg.validate();
  return cfg;
}

int cmd_train(const Common& c, const TrainArgs& a, bool seed_given) {
  const TrainConfig cfg = resolve_train_config(c, a, seed_given);
  print_config("train", json::parse(train_config_to_json(cfg)));
  const Dataset data = read_dataset(a.data);
  const TrainResult r = train(cfg, data);
  save_checkpoint(a.out, r.model);
  if (!a.trace.empty()) write_file_atomic(a.trace, trace_to_csv(r.trace));
  const TraceRow& last = r.trace.back();
  std::cout << "final loss " << last.loss.total << ", held-out mean E_R " << last.eval_rotation_error
            << " rad, mean E_t " << last.eval_translation_error << ", skipped steps " << r.skipped_steps << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& data_dir, int samples,
             std::string out) {
  if (out.empty()) out = (fs::path(data_dir) / "eval_report.json").string();
  print_config("eval", {{"model", model_path}, {"data", data_dir}, {"samples", samples}, {"out", out}, {"seed", c.seed}});
  const TaxPoseModel model = load_checkpoint(model_path);
  const Dataset data = read_dataset(data_dir);
  const EvalReport r = evaluate(model, held_out_samples(data.spec, samples, c.seed), default_thresholds(data.spec));
  write_file_atomic(out, eval_report_to_json(r));
  std::cout << "mean E_R " << r.mean_rotation_error << " rad, mean E_t " << r.mean_translation_error
            << ", success " << r.success_rate << " (" << r.failures << " solver failures)\n";
  return 0;
}

int cmd_solve(const std::string& model_path, const std::string& a_path, const std::string& b_path,
              const std::optional<std::string>& goal, const std::string& gt_path) {
  print_config("solve", {{"model", model_path},
                         {"cloud_a", a_path},
                         {"cloud_b", b_path},
                         {"goal", goal ? json(*goal) : json(nullptr)},
                         {"ground_truth", gt_path.empty() ? json(nullptr) : json(gt_path)}});
  const TaxPoseModel model = load_checkpoint(model_path);
  const LabeledCloud a = read_cloud(a_path);
  const LabeledCloud b = read_cloud(b_path);
  ForwardOptions opts;
  opts.labels_a = a.labels;
  opts.labels_b = b.labels;
  const auto& names = model.config.goal_names;
  if (model.config.goal_context_dim > 0) {
    if (!goal) throw GoalContextMismatch("this model is goal-conditioned; pass --goal <name>");
    const auto it = std::find(names.begin(), names.end(), *goal);
    if (it == names.end()) throw UnknownGoal("goal '" + *goal + "' is not one of the model's goals");
    Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(model.config.goal_context_dim);
    one_hot(it - names.begin()) = 1.0;
    opts.goal = one_hot;
  } else if (goal) {
    throw GoalContextMismatch("this model is not goal-conditioned; drop --goal");
  }
  const CrossPoseEstimate est = forward(model, a.cloud, b.cloud, opts);
  std::cout << format_transform(est.transform) << "\n";
  if (!gt_path.empty()) {
    const RigidTransformd gt = read_transform(gt_path);
    std::cout << "E_R " << format_real(rotation_geodesic_error(est.transform.rotation, gt.rotation)) << " E_t "
              << format_real(translation_error(est.transform.translation, gt.translation)) << "\n";
  }
  return 0;
}

int cmd_equivariance(const Common& c, const std::string& model_path, const std::string& data_dir, int trials,
                     double tol, bool no_centering) {
  print_config("equivariance", {{"model", model_path},
                                {"data", data_dir},
                                {"trials", trials},
                                {"tolerance", tol},
                                {"seed", c.seed}});
  if (trials < 1) throw InputError("--trials must be >= 1");
  TaxPoseModel model = load_checkpoint(model_path);
  model.config.debug_disable_centering = no_centering;
  const Dataset data = read_dataset(data_dir);
  std::vector<const DemoPair*> demos;
  for (const auto& goal : data.spec.goal_set)
    for (const auto& d : data.demos.at(goal)) demos.push_back(&d);
  if (model.config.goal_context_dim != (data.spec.goal_conditioned() ? static_cast<int>(data.spec.goal_set.size()) : 0))
    throw GoalContextMismatch("model goal context does not match the dataset's task");

  const double scale = data.spec.translation_scale * anchor_diameter(data.spec);
  std::mt19937_64 rng(c.seed);
  double max_r = 0.0, max_t = 0.0;
  for (int k = 0; k < trials; ++k) {
    const DemoPair& demo = *demos[static_cast<std::size_t>(k) % demos.size()];
    const TrainingSample s = sample_training_pair(demo, scale, data.spec.rotation_mode, rng);
    const Vec3d t_alpha = random_transform(rng, scale, RotationMode::Full).translation;
    const Vec3d t_beta = random_transform(rng, scale, RotationMode::Full).translation;
    const CrossPoseEstimate base = forward(model, s.posed_a, s.posed_b, s.options);
    const CrossPoseEstimate moved =
        forward(model, PointCloudd(s.posed_a.points().colwise() + t_alpha),
                PointCloudd(s.posed_b.points().colwise() + t_beta), s.options);
    const Mat3d& r = base.transform.rotation;
    max_r = std::max(max_r, (moved.transform.rotation - r).norm());
    max_t = std::max(max_t, (moved.transform.translation - (base.transform.translation + t_beta - r * t_alpha)).norm());
  }
  const bool pass = max_r < tol && max_t < tol;
  std::cout << "max rotation deviation " << format_real(max_r) << ", max translation deviation " << format_real(max_t)
            << " over " << trials << " trials: " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : kExitAudit;
}

int cmd_ablate(const Common& c, const TrainArgs& a, bool seed_given, const std::vector<std::string>& which,
               int eval_count, const std::string& out) {
  const TrainConfig cfg = resolve_train_config(c, a, seed_given);
  std::vector<Ablation> ablations;
  if (which.empty()) ablations = all_ablations();
  for (const auto& w : which) ablations.push_back(ablation_from_string(w));
  json names = json::array();
  for (Ablation x : ablations) names.push_back(to_string(x));
  json shown = json::parse(train_config_to_json(cfg));
  shown["ablations"] = names;
  shown["eval_samples"] = eval_count;
  print_config("ablate", shown);
  const Dataset data = read_dataset(a.data);
  const auto entries = run_ablation(cfg, data, ablations, eval_count);
  const std::string report = ablation_report_to_json(entries);
  if (!out.empty()) write_file_atomic(out, report);
  for (const auto& e : entries)
    std::cout << e.name << ": mean E_R " << e.report.mean_rotation_error << " rad, mean E_t "
              << e.report.mean_translation_error << ", success " << e.report.success_rate << "\n";
  return 0;
}

void add_train_flags(CLI::App* app, TrainArgs& a) {
  app->add_option("--data", a.data, "Dataset directory")->required();
  app->add_option("--config", a.config, "train_config.json");
  app->add_option("--steps", a.steps);
  app->add_option("--batch", a.batch);
  app->add_option("--demos", a.demos, "Demos per goal to use");
  app->add_option("--embed-dim", a.embed_dim);
  app->add_option("--hidden-dim", a.hidden_dim);
  app->add_option("--eval-every", a.eval_every);
  app->add_option("--lr", a.lr);
  app->add_option("--goal", a.goal, "Train on this goal only");
  app->add_option("--cross", a.cross, "attention | dot_product | mlp_cross");
  app->add_option("--pretrained", a.pretrained, "Checkpoint whose encoders initialize the model");
  app->add_flag("--no-residuals", a.no_residuals);
  app->add_flag("--unweighted-svd", a.unweighted_svd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-specific cross-pose estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = app.add_option("--seed", seed, "RNG seed (default: $TAXPOSE_SEED or 0)");
  app.add_flag("--float-strict", common.float_strict, "Fail on any non-finite intermediate value");

  auto* gen = app.add_subcommand("gen", "Generate a demonstration dataset");
  std::string spec_arg, gen_out;
  int gen_demos = 10;
  gen->add_option("spec", spec_arg, "Task spec JSON or built-in task name")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--demos", gen_demos, "Demos per goal")->check(CLI::PositiveNumber);

  auto* pre = app.add_subcommand("pretrain", "Contrastive encoder pretraining");
  PretrainArgs pa;
  pre->add_option("--out", pa.out, "Checkpoint path")->required();
  pre->add_option("--steps", pa.steps)->check(CLI::PositiveNumber);
  pre->add_option("--lr", pa.lr);
  pre->add_option("--lambda-geo", pa.lambda_geo);
  pre->add_option("--shapes", pa.shapes)->check(CLI::PositiveNumber);
  pre->add_option("--embed-dim", pa.embed_dim)->check(CLI::PositiveNumber);
  pre->add_option("--hidden-dim", pa.hidden_dim)->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  TrainArgs ta;
  add_train_flags(tr, ta);
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--trace", ta.trace, "Metrics trace CSV");

  auto* ev = app.add_subcommand("eval", "Evaluate a model on held-out poses");
  std::string ev_model, ev_data, ev_out;
  int ev_samples = 100;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--samples", ev_samples)->check(CLI::PositiveNumber);
  ev->add_option("--out", ev_out, "Report path (default: <data>/eval_report.json)");

  auto* so = app.add_subcommand("solve", "Estimate the cross-pose for one pair of clouds");
  std::string so_model, so_a, so_b, so_gt;
  std::optional<std::string> so_goal;
  so->add_option("model", so_model)->required();
  so->add_option("cloud_a", so_a)->required();
  so->add_option("cloud_b", so_b)->required();
  so->add_option("--goal", so_goal);
  so->add_option("--gt", so_gt, "Ground-truth transform file (12 reals)");

  auto* eq = app.add_subcommand("equivariance", "Audit translational equivariance");
  std::string eq_model, eq_data;
  int eq_trials = 100;
  double eq_tol = 1e-9;
  bool eq_no_center = false;
  eq->add_option("--model", eq_model)->required();
  eq->add_option("--data", eq_data)->required();
  eq->add_option("--trials", eq_trials);
  eq->add_option("--tolerance", eq_tol);
  eq->add_flag("--debug-no-centering", eq_no_center)->group("");

  auto* ab = app.add_subcommand("ablate", "Train the base model and ablations side by side");
  TrainArgs aa;
  std::vector<std::string> ab_which;
  int ab_eval = 50;
  std::string ab_out;
  add_train_flags(ab, aa);
  ab->add_option("--which", ab_which, "Ablations (default: all)");
  ab->add_option("--eval-samples", ab_eval)->check(CLI::PositiveNumber);
  ab->add_option("--out", ab_out, "Report JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    common.seed = seed_opt->count() ? seed : default_seed();
    const bool seed_given = seed_opt->count() > 0;
    ad::set_strict_finite(common.float_strict);
    if (*gen) return cmd_gen(common, spec_arg, gen_out, gen_demos);
    if (*pre) return cmd_pretrain(common, pa);
    if (*tr) return cmd_train(common, ta, seed_given);
    if (*ev) return cmd_eval(common, ev_model, ev_data, ev_samples, ev_out);
    if (*so) return cmd_solve(so_model, so_a, so_b, so_goal, so_gt);
    if (*eq) return cmd_equivariance(common, eq_model, eq_data, eq_trials, eq_tol, eq_no_center);
    if (*ab) return cmd_ablate(common, aa, seed_given, ab_which, ab_eval, ab_out);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
