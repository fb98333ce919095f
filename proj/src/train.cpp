#include "taxpose/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "taxpose/checkpoint.hpp"
#include "taxpose/errors.hpp"

namespace taxpose {

using nlohmann::json;

AdamState adam_init(const Parameters& params) { return {zeros_like(params), zeros_like(params), 0}; }

void adam_step(Parameters& params, const Parameters& grad, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double lr = cfg.learning_rate;
  visit_parameters(
      [&](const std::string&, Eigen::MatrixXd& p, const Eigen::MatrixXd& g, Eigen::MatrixXd& m, Eigen::MatrixXd& v) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
      },
      params, grad, state.m, state.v);
}

namespace {

json params_to_json(const Parameters& p) {
  json out = json::object();
  visit_parameters(
      [&](const std::string& name, const Eigen::MatrixXd& m) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          json row = json::array();
          for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
          rows.push_back(row);
        }
        out[name] = rows;
      },
      p);
  return out;
}

Parameters params_from_json(const json& j, const Parameters& shape) {
  Parameters out = shape;
  visit_parameters(
      [&](const std::string& name, Eigen::MatrixXd& m) {
        const json& rows = j.at(name);
        if (rows.size() != static_cast<std::size_t>(m.rows())) throw FormatError("optimizer tensor '" + name + "' has the wrong shape");
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          if (rows[r].size() != static_cast<std::size_t>(m.cols())) throw FormatError("optimizer tensor '" + name + "' has the wrong shape");
          for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c].get<double>();
        }
      },
      out);
  return out;
}

}  // namespace

std::string adam_state_to_json(const AdamState& state) {
  json doc;
  doc["step"] = state.step;
  doc["m"] = params_to_json(state.m);
  doc["v"] = params_to_json(state.v);
  return doc.dump() + "\n";
}

AdamState adam_state_from_json(const std::string& text, const Parameters& shape) {
  try {
    const json doc = json::parse(text);
    return {params_from_json(doc.at("m"), shape), params_from_json(doc.at("v"), shape), doc.at("step").get<long>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed optimizer state: ") + e.what());
  }
}

void TrainConfig::validate() const {
  if (steps < 1) throw InputError("steps must be >= 1");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (n_demos < 1) throw InputError("n_demos must be >= 1");
  if (eval_every < 0 || eval_samples < 1) throw InputError("eval_every must be >= 0 and eval_samples >= 1");
  if (!(optimizer.learning_rate >= 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.epsilon > 0.0))
    throw InputError("invalid optimizer settings");
  if (!(loss_weights.lambda_cons >= 0.0) || !(loss_weights.lambda_corr >= 0.0) || !(loss_weights.lambda_disp >= 0.0))
    throw InputError("loss weights must be non-negative");
}

std::string train_config_to_json(const TrainConfig& c) {
  json doc;
  doc["steps"] = c.steps;
  doc["batch_size"] = c.batch_size;
  doc["learning_rate"] = c.optimizer.learning_rate;
  doc["beta1"] = c.optimizer.beta1;
  doc["beta2"] = c.optimizer.beta2;
  doc["epsilon"] = c.optimizer.epsilon;
  doc["lambda_disp"] = c.loss_weights.lambda_disp;
  doc["lambda_cons"] = c.loss_weights.lambda_cons;
  doc["lambda_corr"] = c.loss_weights.lambda_corr;
  doc["seed"] = c.seed;
  doc["embed_dim"] = c.model.embed_dim;
  doc["hidden_dim"] = c.model.hidden_dim;
  doc["knn"] = c.model.knn;
  doc["cross_variant"] = to_string(c.model.cross);
  doc["residuals_enabled"] = c.model.residuals_enabled;
  doc["weighted_svd_enabled"] = c.model.weighted_svd_enabled;
  doc["pretrained_encoder"] = c.pretrained_encoder ? json(*c.pretrained_encoder) : json(nullptr);
  doc["n_demos"] = c.n_demos;
  doc["goal"] = c.goal ? json(*c.goal) : json(nullptr);
  doc["eval_every"] = c.eval_every;
  doc["eval_samples"] = c.eval_samples;
  return doc.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  static const std::vector<std::string> known = {
      "steps",     "batch_size", "learning_rate", "beta1",       "beta2",         "epsilon",
      "lambda_disp", "lambda_cons", "lambda_corr", "seed",        "embed_dim",     "hidden_dim",
      "knn",       "cross_variant", "residuals_enabled", "weighted_svd_enabled", "pretrained_encoder",
      "n_demos",   "goal",       "eval_every",    "eval_samples"};
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) throw FormatError("train config must be a JSON object");
    for (const auto& [key, value] : doc.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw FormatError("unknown train config key '" + key + "'");
    TrainConfig c;
    c.steps = doc.value("steps", c.steps);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.optimizer.learning_rate = doc.value("learning_rate", c.optimizer.learning_rate);
    c.optimizer.beta1 = doc.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = doc.value("beta2", c.optimizer.beta2);
    c.optimizer.epsilon = doc.value("epsilon", c.optimizer.epsilon);
    c.loss_weights.lambda_disp = doc.value("lambda_disp", c.loss_weights.lambda_disp);
    c.loss_weights.lambda_cons = doc.value("lambda_cons", c.loss_weights.lambda_cons);
    c.loss_weights.lambda_corr = doc.value("lambda_corr", c.loss_weights.lambda_corr);
    c.seed = doc.value("seed", c.seed);
    c.model.embed_dim = doc.value("embed_dim", c.model.embed_dim);
    c.model.hidden_dim = doc.value("hidden_dim", c.model.hidden_dim);
    c.model.knn = doc.value("knn", c.model.knn);
    c.model.cross = cross_variant_from_string(doc.value("cross_variant", to_string(c.model.cross)));
    c.model.residuals_enabled = doc.value("residuals_enabled", c.model.residuals_enabled);
    c.model.weighted_svd_enabled = doc.value("weighted_svd_enabled", c.model.weighted_svd_enabled);
    if (doc.contains("pretrained_encoder") && !doc["pretrained_encoder"].is_null())
      c.pretrained_encoder = doc["pretrained_encoder"].get<std::string>();
    c.n_demos = doc.value("n_demos", c.n_demos);
    if (doc.contains("goal") && !doc["goal"].is_null()) c.goal = doc["goal"].get<std::string>();
    c.eval_every = doc.value("eval_every", c.eval_every);
    c.eval_samples = doc.value("eval_samples", c.eval_samples);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed train config: ") + e.what());
  }
}

namespace {

TaskSpec restricted_spec(const TaskSpec& spec, const std::optional<std::string>& goal) {
  if (!goal) return spec;
  spec.goal_index(*goal);
  TaskSpec s = spec;
  s.goal_set = {*goal};
  s.goal_poses = {{*goal, spec.goal_poses.at(*goal)}};
  s.off_hull = {{*goal, spec.off_hull.count(*goal) ? spec.off_hull.at(*goal) : false}};
  s.hull_margin.clear();
  if (spec.hull_margin.count(*goal)) s.hull_margin[*goal] = spec.hull_margin.at(*goal);
  return s;
}

void load_pretrained(TaxPoseModel& model, const std::string& path) {
  const TaxPoseModel pre = load_checkpoint(path);
  auto same_shape = [](const Encoder<Eigen::MatrixXd>& a, const Encoder<Eigen::MatrixXd>& b) {
    bool ok = true;
    auto check = [&](const std::string&, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
      ok = ok && x.rows() == y.rows() && x.cols() == y.cols();
    };
    detail::visit_encoder("", check, a, b);
    return ok;
  };
  if (!same_shape(pre.params.encoder_a, model.params.encoder_a) ||
      !same_shape(pre.params.encoder_b, model.params.encoder_b))
    throw InputError("pretrained encoder shapes do not match the model");
  model.params.encoder_a = pre.params.encoder_a;
  model.params.encoder_b = pre.params.encoder_b;
}

}  // namespace

ModelConfig model_config_for(const TrainConfig& cfg, const TaskSpec& spec) {
  const TaskSpec s = restricted_spec(spec, cfg.goal);
  ModelConfig m = cfg.model;
  m.goal_context_dim = s.goal_conditioned() ? static_cast<int>(s.goal_set.size()) : 0;
  m.goal_names = s.goal_conditioned() ? s.goal_set : std::vector<std::string>{};
  m.symmetry_labels = s.symmetry_labels;
  return m;
}

std::vector<TrainingSample> eval_samples_for(const TrainConfig& cfg, const Dataset& data) {
  return held_out_samples(restricted_spec(data.spec, cfg.goal), cfg.eval_samples, cfg.seed ^ 0x5EEDULL);
}

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  const TaskSpec spec = restricted_spec(data.spec, cfg.goal);
  std::vector<const DemoPair*> demos;
  for (const auto& goal : spec.goal_set) {
    const auto it = data.demos.find(goal);
    if (it == data.demos.end() || it->second.empty()) throw InputError("dataset has no demos for goal '" + goal + "'");
    const std::size_t n = std::min<std::size_t>(it->second.size(), static_cast<std::size_t>(cfg.n_demos));
    for (std::size_t k = 0; k < n; ++k) demos.push_back(&it->second[k]);
  }

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.model = init_model(model_config_for(cfg, data.spec), rng);
  if (cfg.pretrained_encoder) load_pretrained(result.model, *cfg.pretrained_encoder);
  result.optimizer = adam_init(result.model.params);

  const double scale = spec.translation_scale * anchor_diameter(spec);
  const std::vector<TrainingSample> held_out = eval_samples_for(cfg, data);
  const EvalThresholds thresholds = default_thresholds(spec);
  std::uniform_int_distribution<std::size_t> pick(0, demos.size() - 1);

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<LossExample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const DemoPair& demo = *demos[pick(rng)];
      const TrainingSample s = sample_training_pair(demo, scale, spec.rotation_mode, rng);
      batch.push_back({s.posed_a, s.posed_b, s.t_gt, s.options});
    }
    TraceRow row;
    row.step = step;
    try {
      LossGradient lg;
      try {
        lg = loss_gradient(result.model, batch, cfg.loss_weights);
      } catch (const NonFiniteValue& e) {
        throw NonFiniteValue(std::string(e.what()) + " at step " + std::to_string(step));
      }
      if (!std::isfinite(lg.loss.total) || !parameters_finite(lg.gradient))
        throw NonFiniteValue("training produced a non-finite loss or gradient at step " + std::to_string(step));
      adam_step(result.model.params, lg.gradient, result.optimizer, cfg.optimizer);
      row.loss = lg.loss;
    } catch (const NearDegenerateSpectrum&) {
      ++result.skipped_steps;
      row.loss.total = std::numeric_limits<double>::quiet_NaN();
      row.loss.disp = row.loss.corr = row.loss.cons = row.loss.total;
    } catch (const DegenerateCorrespondences&) {
      ++result.skipped_steps;
      row.loss.total = std::numeric_limits<double>::quiet_NaN();
      row.loss.disp = row.loss.corr = row.loss.cons = row.loss.total;
    }
    if ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps) {
      const EvalReport r = evaluate(result.model, held_out, thresholds);
      row.eval_rotation_error = r.mean_rotation_error;
      row.eval_translation_error = r.mean_translation_error;
    }
    result.trace.push_back(row);
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, const TaskSpec& spec) {
  cfg.validate();
  const TaskSpec s = restricted_spec(spec, cfg.goal);
  Dataset data = generate_dataset(s, cfg.n_demos, cfg.seed);
  data.spec = spec;
  return train(cfg, data);
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "step,disp,corr,cons,total,eval_E_R,eval_E_t\n";
  auto cell = [&](double v) {
    if (std::isnan(v)) return;
    out << v;
  };
  for (const auto& r : trace) {
    out << r.step << ',';
    cell(r.loss.disp);
    out << ',';
    cell(r.loss.corr);
    out << ',';
    cell(r.loss.cons);
    out << ',';
    cell(r.loss.total);
    out << ',';
    cell(r.eval_rotation_error);
    out << ',';
    cell(r.eval_translation_error);
    out << '\n';
  }
  return out.str();
}

namespace {

const std::vector<std::pair<Ablation, std::string>>& ablation_names() {
  static const std::vector<std::pair<Ablation, std::string>> names = {
      {Ablation::NoDisp, "no_disp"},           {Ablation::NoCorr, "no_corr"},
      {Ablation::NoCons, "no_cons"},           {Ablation::ScaledCombo, "scaled_combo"},
      {Ablation::NoResidual, "no_residual"},   {Ablation::UnweightedSvd, "unweighted_svd"},
      {Ablation::DotProduct, "dot_product"},   {Ablation::MlpCross, "mlp_cross"},
      {Ablation::DimSmall, "dim_small"},       {Ablation::NoPretrain, "no_pretrain"},
  };
  return names;
}

}  // namespace

std::string to_string(Ablation a) {
  for (const auto& [k, name] : ablation_names())
    if (k == a) return name;
  return "unknown";
}

Ablation ablation_from_string(const std::string& s) {
  for (const auto& [k, name] : ablation_names())
    if (name == s) return k;
  throw InputError("unknown ablation '" + s + "'");
}

std::vector<Ablation> all_ablations() {
  std::vector<Ablation> out;
  for (const auto& [k, name] : ablation_names()) out.push_back(k);
  return out;
}

TrainConfig apply_ablation(const TrainConfig& base, Ablation which) {
  TrainConfig c = base;
  switch (which) {
    case Ablation::NoDisp: c.loss_weights.lambda_disp = 0.0; break;
    case Ablation::NoCorr: c.loss_weights.lambda_corr = 0.0; break;
    case Ablation::NoCons: c.loss_weights.lambda_cons = 0.0; break;
    case Ablation::ScaledCombo:
      c.loss_weights.lambda_disp = 0.0;
      c.loss_weights.lambda_cons = 1.1;
      c.loss_weights.lambda_corr = 1.0;
      break;
    case Ablation::NoResidual: c.model.residuals_enabled = false; break;
    case Ablation::UnweightedSvd: c.model.weighted_svd_enabled = false; break;
    case Ablation::DotProduct: c.model.cross = CrossVariant::DotProduct; break;
    case Ablation::MlpCross: c.model.cross = CrossVariant::MlpCross; break;
    case Ablation::DimSmall: c.model.embed_dim = std::max(1, c.model.embed_dim / 4); break;
    case Ablation::NoPretrain: c.pretrained_encoder.reset(); break;
  }
  return c;
}

std::vector<AblationEntry> run_ablation(const TrainConfig& base, const Dataset& data,
                                        const std::vector<Ablation>& which, int eval_count) {
  const TaskSpec spec = restricted_spec(data.spec, base.goal);
  const std::vector<TrainingSample> held_out = held_out_samples(spec, eval_count, base.seed ^ 0xAB1A7EULL);
  const EvalThresholds thresholds = default_thresholds(spec);
  std::vector<AblationEntry> out;
  auto run = [&](const std::string& name, const TrainConfig& cfg) {
    const TrainResult r = train(cfg, data);
    out.push_back({name, evaluate(r.model, held_out, thresholds), r.trace.back().loss});
  };
  run("base", base);
  for (Ablation a : which) run(to_string(a), apply_ablation(base, a));
  return out;
}

std::string ablation_report_to_json(const std::vector<AblationEntry>& entries) {
  json doc = json::array();
  for (const auto& e : entries)
    doc.push_back({{"name", e.name},
                   {"final_total_loss", e.final_loss.total},
                   {"report", json::parse(eval_report_to_json(e.report))}});
  return doc.dump(2) + "\n";
}

}  // namespace taxpose
