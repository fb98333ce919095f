#include "taxpose/pretrain.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace taxpose {

Eigen::MatrixXd geometric_weight_matrix(const PointCloudd& cloud, double lambda_geo) {
  if (!(lambda_geo > 0.0)) throw InputError("lambda_geo must be positive");
  const Eigen::Index n = cloud.size();
  if (n < 2) throw DegenerateGeometry("geometric weights need at least two points");
  const Points3d& p = cloud.points();
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(n, n);
  double mu = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::tanh(lambda_geo * (p.col(i) - p.col(j)).norm());
      d(i, j) = d(j, i) = v;
      mu = std::max(mu, v);
    }
  if (!(mu > 0.0)) throw DegenerateGeometry("all points coincide; geometric weights are undefined");
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) d(i, j) /= mu;
  return d;
}

namespace {

struct InfoNce {
  double loss;
  Eigen::MatrixXd dscores;  // dL/ds, s = phi psi^T
};

InfoNce infonce_terms(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& psi, const Eigen::MatrixXd& d) {
  if (phi.rows() != psi.rows() || phi.cols() != psi.cols()) throw LengthMismatch("phi and psi must have equal shape");
  if (d.rows() != phi.rows() || d.cols() != phi.rows()) throw LengthMismatch("weight matrix must be N x N");
  const Eigen::MatrixXd s = phi * psi.transpose();
  const Eigen::MatrixXd z = d.cwiseProduct(s);
  const Eigen::VectorXd m = z.rowwise().maxCoeff();
  Eigen::MatrixXd p = (z.colwise() - m).array().exp().matrix();
  const Eigen::VectorXd rowsum = p.rowwise().sum();
  p.array().colwise() /= rowsum.array();
  const Eigen::VectorXd lse = m.array() + rowsum.array().log();
  InfoNce out;
  out.loss = (lse - s.diagonal()).sum();
  out.dscores = p.cwiseProduct(d);
  out.dscores.diagonal().array() -= 1.0;
  return out;
}

}  // namespace

double weighted_infonce(const FeatureMatrix& phi, const FeatureMatrix& psi, const Eigen::MatrixXd& d) {
  return infonce_terms(phi, psi, d).loss;
}

ad::Var weighted_infonce(const ad::Var& phi, const ad::Var& psi, const Eigen::MatrixXd& d) {
  ad::Tape& t = *phi.tape();
  auto terms = std::make_shared<InfoNce>(infonce_terms(phi.value(), psi.value(), d));
  return t.record(Eigen::MatrixXd::Constant(1, 1, terms->loss), {phi, psi},
                  [phi, psi, terms, &t](const Eigen::MatrixXd& g, const Eigen::MatrixXd&) {
                    const Eigen::MatrixXd ds = terms->dscores * g(0, 0);
                    if (phi.requires_grad()) t.accumulate(phi, ds * psi.value());
                    if (psi.requires_grad()) t.accumulate(psi, ds.transpose() * phi.value());
                  });
}

namespace {

std::optional<Eigen::VectorXd> neutral_goal(const ModelConfig& c) {
  if (c.goal_context_dim == 0) return std::nullopt;
  return Eigen::VectorXd::Zero(c.goal_context_dim);
}

RigidTransformd random_pose(std::mt19937_64& rng, double translation_scale) {
  std::normal_distribution<double> n(0.0, translation_scale);
  return {random_rotation(rng), Vec3d(n(rng), n(rng), n(rng))};
}

Encoder<ad::Var> bind_encoder(ad::Tape& tape, const Encoder<Eigen::MatrixXd>& e, bool trainable) {
  Encoder<ad::Var> out;
  auto bind = [&](const std::string&, ad::Var& v, const Eigen::MatrixXd& m) {
    v = trainable ? tape.leaf(m) : tape.constant(m);
  };
  detail::visit_encoder("", bind, out, e);
  return out;
}

}  // namespace

PretrainResult pretrain_encoder(const PretrainConfig& cfg, const ModelConfig& model_config,
                                const Encoder<Eigen::MatrixXd>& encoder) {
  if (cfg.shapes.empty()) throw InputError("pretraining needs at least one shape");
  if (cfg.steps < 1) throw InputError("pretraining needs steps >= 1");
  if (!(cfg.lambda_geo > 0.0)) throw InputError("lambda_geo must be positive");

  std::vector<Eigen::MatrixXd> weights;
  for (const auto& s : cfg.shapes) weights.push_back(geometric_weight_matrix(s, cfg.lambda_geo));
  const auto goal = neutral_goal(model_config);

  PretrainResult out;
  out.encoder = encoder;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.shapes.size() - 1);
  double ema = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t k = pick(rng);
    const PointCloudd& shape = cfg.shapes[k];
    const PointCloudd view = apply(random_pose(rng, cfg.translation_scale), shape);

    ad::Tape tape;
    const Encoder<ad::Var> bound = bind_encoder(tape, out.encoder, /*trainable=*/true);
    const ad::Var phi = encode_on_tape(tape, model_config, bound, shape, goal);
    const ad::Var psi = encode_on_tape(tape, model_config, bound, view, goal);
    const ad::Var loss = weighted_infonce(phi, psi, weights[k]);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw NonFiniteValue("pretraining loss became non-finite at step " + std::to_string(step));
    tape.backward(loss);

    auto descend = [&](const std::string&, Eigen::MatrixXd& m, const ad::Var& v) {
      m -= cfg.learning_rate * tape.grad(v);
    };
    detail::visit_encoder("", descend, out.encoder, bound);

    out.loss_trace.push_back(value);
    ema = step == 0 ? value : 0.9 * ema + 0.1 * value;
    out.smoothed_trace.push_back(step == 0 ? ema : std::min(out.smoothed_trace.back(), ema));
  }
  return out;
}

double feature_drift(const ModelConfig& model_config, const Encoder<Eigen::MatrixXd>& encoder,
                     const std::vector<PointCloudd>& shapes, int trials, std::uint64_t seed,
                     double translation_scale) {
  if (shapes.empty() || trials < 1) throw InputError("feature_drift needs shapes and trials >= 1");
  const auto goal = neutral_goal(model_config);
  std::mt19937_64 rng(seed);
  double total = 0.0, scale = 0.0;
  for (const auto& shape : shapes) {
    ad::Tape tape;
    const Encoder<ad::Var> bound = bind_encoder(tape, encoder, /*trainable=*/false);
    const Eigen::MatrixXd phi = encode_on_tape(tape, model_config, bound, shape, goal).value();
    scale += trials * phi.rowwise().norm().sum();
    for (int t = 0; t < trials; ++t) {
      const PointCloudd view = apply(random_pose(rng, translation_scale), shape);
      const Eigen::MatrixXd psi = encode_on_tape(tape, model_config, bound, view, goal).value();
      total += (phi - psi).rowwise().norm().sum();
    }
  }
  if (!(scale > 0.0)) throw DegenerateGeometry("encoder maps every point to the zero feature");
  return total / scale;
}

}  // namespace taxpose
