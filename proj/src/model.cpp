#include "taxpose/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <utility>

namespace taxpose {

std::string to_string(CrossVariant v) {
  switch (v) {
    case CrossVariant::Attention: return "attention";
    case CrossVariant::DotProduct: return "dot_product";
    case CrossVariant::MlpCross: return "mlp_cross";
  }
  return "attention";
}

CrossVariant cross_variant_from_string(const std::string& s) {
  if (s == "attention") return CrossVariant::Attention;
  if (s == "dot_product") return CrossVariant::DotProduct;
  if (s == "mlp_cross") return CrossVariant::MlpCross;
  throw InputError("unknown cross variant '" + s + "'");
}

namespace {

/// Clouds built from network outputs: a non-finite entry means the model diverged.
PointCloudd network_cloud(Points3d p) {
  if (!p.allFinite()) throw NonFiniteValue("network produced non-finite point coordinates");
  return PointCloudd(std::move(p));
}

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  // Fill row-major so the draw order does not depend on Eigen's storage.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

Dense<Eigen::MatrixXd> init_dense(int in, int out, std::mt19937_64& rng, bool zero = false) {
  if (zero) return {Eigen::MatrixXd::Zero(in, out), Eigen::MatrixXd::Zero(1, out)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Dense<Eigen::MatrixXd> d;
  d.weight = uniform_matrix(in, out, bound, rng);
  d.bias = uniform_matrix(1, out, bound, rng);
  return d;
}

Encoder<Eigen::MatrixXd> init_encoder(int in, int hidden, int out, std::mt19937_64& rng) {
  return {init_dense(in, hidden, rng), init_dense(hidden, hidden, rng), init_dense(hidden, out, rng)};
}

CrossAttention<Eigen::MatrixXd> init_attention(int w, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(w));
  CrossAttention<Eigen::MatrixXd> a;
  a.query = uniform_matrix(w, w, bound, rng);
  a.key = uniform_matrix(w, w, bound, rng);
  a.value = uniform_matrix(w, w, bound, rng);
  return a;
}

Head<Eigen::MatrixXd> init_head(int w, int hidden, int out, std::mt19937_64& rng) {
  return {init_dense(w, hidden, rng), init_dense(hidden, out, rng, /*zero=*/true)};
}

ad::Var dense(const ad::Var& x, const Dense<ad::Var>& d) { return ad::add_row(ad::matmul(x, d.weight), d.bias); }

ad::Var mlp3(const ad::Var& x, const Encoder<ad::Var>& e) {
  const ad::Var h1 = ad::tanh(dense(x, e.input));
  const ad::Var h2 = ad::tanh(dense(h1, e.hidden));
  return dense(h2, e.output);
}

ad::Var head(const ad::Var& phi, const Head<ad::Var>& h) { return dense(ad::tanh(dense(phi, h.hidden)), h.output); }

Head<ad::Var> bind_head(ad::Tape& tape, const Head<Eigen::MatrixXd>& h) {
  return {{tape.constant(h.hidden.weight), tape.constant(h.hidden.bias)},
          {tape.constant(h.output.weight), tape.constant(h.output.bias)}};
}

struct CrossOutput {
  ad::Var phi_a, phi_b, corr_ab, corr_ba;
};

ad::Var cross_attention_map(const ad::Var& psi_self, const ad::Var& psi_other, const CrossAttention<ad::Var>& p) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(psi_self.cols()));
  const ad::Var q = ad::matmul(psi_self, p.query);
  const ad::Var k = ad::matmul(psi_other, p.key);
  return ad::row_softmax(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d));
}

CrossOutput cross_module(const ModelConfig& config, const BoundParameters& p, const ad::Var& psi_a,
                         const ad::Var& psi_b) {
  CrossOutput out;
  if (config.cross == CrossVariant::MlpCross) {
    const ad::Var pooled_b = ad::repeat_rows(ad::mean_rows(psi_b), psi_a.rows());
    const ad::Var pooled_a = ad::repeat_rows(ad::mean_rows(psi_a), psi_b.rows());
    out.phi_a = psi_a + mlp3(ad::concat_cols(psi_a, pooled_b), p.cross_mlp_a);
    out.phi_b = psi_b + mlp3(ad::concat_cols(psi_b, pooled_a), p.cross_mlp_b);
    out.corr_ab = ad::row_softmax(ad::matmul_nt(out.phi_a, out.phi_b));
    out.corr_ba = ad::row_softmax(ad::matmul_nt(out.phi_b, out.phi_a));
    return out;
  }
  const ad::Var attn_ab = cross_attention_map(psi_a, psi_b, p.attention_a);
  const ad::Var attn_ba = cross_attention_map(psi_b, psi_a, p.attention_b);
  out.phi_a = psi_a + ad::matmul(attn_ab, ad::matmul(psi_b, p.attention_a.value));
  out.phi_b = psi_b + ad::matmul(attn_ba, ad::matmul(psi_a, p.attention_b.value));
  if (config.cross == CrossVariant::Attention) {
    out.corr_ab = attn_ab;
    out.corr_ba = attn_ba;
  } else {
    out.corr_ab = ad::row_softmax(ad::matmul_nt(out.phi_a, out.phi_b));
    out.corr_ba = ad::row_softmax(ad::matmul_nt(out.phi_b, out.phi_a));
  }
  return out;
}

ad::Var with_labels(ad::Tape& tape, const ad::Var& psi, const std::optional<Eigen::VectorXd>& labels,
                    const char* which) {
  if (!labels) throw InputError(std::string("model expects symmetry labels for object ") + which);
  if (labels->size() != psi.rows()) throw LengthMismatch(std::string("symmetry label count mismatch for object ") + which);
  return ad::concat_cols(psi, tape.constant(*labels));
}

Points3d rows_to_points(const Eigen::MatrixXd& rows) { return rows.transpose(); }

}  // namespace

TaxPoseModel init_model(const ModelConfig& config, std::mt19937_64& rng) {
  if (config.embed_dim < 1 || config.hidden_dim < 1 || config.goal_context_dim < 0 || config.knn < 0)
    throw InputError("invalid model dimensions");
  if (!config.goal_names.empty() && static_cast<int>(config.goal_names.size()) != config.goal_context_dim)
    throw InputError("goal_names must match goal_context_dim");
  TaxPoseModel m;
  m.config = config;
  const int in = config.encoder_input_dim();
  const int h = config.hidden_dim;
  const int d = config.embed_dim;
  const int w = config.feature_dim();
  m.params.encoder_a = init_encoder(in, h, d, rng);
  m.params.encoder_b = init_encoder(in, h, d, rng);
  m.params.attention_a = init_attention(w, rng);
  m.params.attention_b = init_attention(w, rng);
  m.params.cross_mlp_a = init_encoder(2 * w, h, w, rng);
  m.params.cross_mlp_b = init_encoder(2 * w, h, w, rng);
  m.params.residual_a = init_head(w, h, 3, rng);
  m.params.residual_b = init_head(w, h, 3, rng);
  m.params.weight_a = init_head(w, h, 1, rng);
  m.params.weight_b = init_head(w, h, 1, rng);
  return m;
}

Parameters zeros_like(const Parameters& p) {
  Parameters out = p;
  visit_parameters([](const std::string&, Eigen::MatrixXd& m) { m.setZero(); }, out);
  return out;
}

std::size_t parameter_count(const Parameters& p) {
  std::size_t n = 0;
  Parameters copy = p;
  visit_parameters([&](const std::string&, Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); }, copy);
  return n;
}

bool parameters_finite(const Parameters& p) {
  bool ok = true;
  Parameters copy = p;
  visit_parameters([&](const std::string&, Eigen::MatrixXd& m) { ok = ok && m.allFinite(); }, copy);
  return ok;
}

Eigen::MatrixXd encoder_inputs(const ModelConfig& config, const PointCloudd& cloud,
                               const std::optional<Eigen::VectorXd>& goal) {
  const int g = config.goal_context_dim;
  if (g > 0 && !goal) throw GoalContextMismatch("goal-conditioned model needs a goal vector of length " + std::to_string(g));
  if (goal && goal->size() != g)
    throw GoalContextMismatch("goal vector has length " + std::to_string(goal->size()) + ", model expects " +
                              std::to_string(g));

  const Points3d c = config.debug_disable_centering ? cloud.points() : center(cloud).cloud.points();
  const Eigen::Index n = c.cols();
  const Eigen::Index k = std::min<Eigen::Index>(config.knn, n - 1);

  Eigen::MatrixXd x(n, config.encoder_input_dim());
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3d offset = Vec3d::Zero();
    if (k > 0) {
      for (Eigen::Index j = 0; j < n; ++j)
        dist[static_cast<std::size_t>(j)] = {j == i ? std::numeric_limits<double>::infinity()
                                                    : (c.col(j) - c.col(i)).squaredNorm(),
                                             j};
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      for (Eigen::Index m = 0; m < k; ++m) offset += c.col(dist[static_cast<std::size_t>(m)].second) - c.col(i);
      offset /= static_cast<double>(k);
    }
    x.block<1, 3>(i, 0) = c.col(i).transpose();
    x.block<1, 3>(i, 3) = offset.transpose();
    x(i, 6) = c.col(i).norm();
    x(i, 7) = offset.norm();
    if (g > 0) x.block(i, 8, 1, g) = goal->transpose();
  }
  return x;
}

ad::Var encode_on_tape(ad::Tape& tape, const ModelConfig& config, const Encoder<ad::Var>& encoder,
                       const PointCloudd& cloud, const std::optional<Eigen::VectorXd>& goal) {
  return mlp3(tape.constant(encoder_inputs(config, cloud, goal)), encoder);
}

FeatureMatrix encode(const TaxPoseModel& model, Side side, const PointCloudd& cloud,
                     const std::optional<Eigen::VectorXd>& goal) {
  ad::Tape tape;
  const auto& e = side == Side::A ? model.params.encoder_a : model.params.encoder_b;
  Encoder<ad::Var> bound;
  auto bind = [&](const std::string&, ad::Var& v, const Eigen::MatrixXd& m) { v = tape.constant(m); };
  detail::visit_encoder("", bind, bound, e);
  return encode_on_tape(tape, model.config, bound, cloud, goal).value();
}

AttentionWeights attention_weights(const FeatureMatrix& queries, const FeatureMatrix& keys) {
  if (queries.cols() != keys.cols()) throw LengthMismatch("queries and keys must share a feature dimension");
  ad::Tape tape;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  return ad::row_softmax(ad::scale(ad::matmul_nt(tape.constant(queries), tape.constant(keys)), inv_sqrt_d)).value();
}

AttentionWeights dot_product_weights(const FeatureMatrix& phi_self, const FeatureMatrix& phi_other) {
  if (phi_self.cols() != phi_other.cols()) throw LengthMismatch("embeddings must share a feature dimension");
  ad::Tape tape;
  return ad::row_softmax(ad::matmul_nt(tape.constant(phi_self), tape.constant(phi_other))).value();
}

PointCloudd virtual_points(const AttentionWeights& w, const PointCloudd& other) {
  if (w.cols() != other.size()) throw LengthMismatch("weight columns must equal the other cloud's size");
  return network_cloud(other.points() * w.transpose());
}

Points3d residuals(const Head<Eigen::MatrixXd>& h, const FeatureMatrix& phi) {
  ad::Tape tape;
  return rows_to_points(head(tape.constant(phi), bind_head(tape, h)).value());
}

Eigen::VectorXd importance_weights(const Head<Eigen::MatrixXd>& h, const FeatureMatrix& phi) {
  ad::Tape tape;
  return ad::column_softmax(head(tape.constant(phi), bind_head(tape, h))).value();
}

BoundParameters bind_parameters(ad::Tape& tape, const Parameters& p, bool trainable) {
  BoundParameters out;
  visit_parameters(
      [&](const std::string&, ad::Var& v, const Eigen::MatrixXd& m) { v = trainable ? tape.leaf(m) : tape.constant(m); },
      out, p);
  return out;
}

Parameters collect_gradients(const ad::Tape& tape, const BoundParameters& bound) {
  Parameters out;
  visit_parameters([&](const std::string&, Eigen::MatrixXd& g, const ad::Var& v) { g = tape.grad(v); }, out, bound);
  return out;
}

Eigen::MatrixXd transform_to_pose(const RigidTransformd& t) {
  Eigen::MatrixXd pose(3, 4);
  pose << t.rotation, t.translation;
  return pose;
}

RigidTransformd pose_to_transform(const Eigen::MatrixXd& pose) {
  return {pose.leftCols<3>(), pose.col(3)};
}

ad::Var transform_rows(const ad::Var& pose, const ad::Var& points) {
  ad::Tape& t = *pose.tape();
  const Eigen::MatrixXd r = pose.value().leftCols(3);
  const Eigen::RowVectorXd tr = pose.value().col(3).transpose();
  Eigen::MatrixXd out = (points.value() * r.transpose()).rowwise() + tr;
  return t.record(std::move(out), {pose, points}, [pose, points, &t](const Eigen::MatrixXd& g, const Eigen::MatrixXd&) {
    if (pose.requires_grad()) {
      Eigen::MatrixXd gp(3, 4);
      gp << g.transpose() * points.value(), g.colwise().sum().transpose();
      t.accumulate(pose, gp);
    }
    if (points.requires_grad()) t.accumulate(points, g * pose.value().leftCols(3));
  });
}

ad::Var inverse_transform_rows(const ad::Var& pose, const ad::Var& points) {
  ad::Tape& t = *pose.tape();
  const Eigen::MatrixXd r = pose.value().leftCols(3);
  const Eigen::RowVectorXd tr = pose.value().col(3).transpose();
  const Eigen::MatrixXd shifted = points.value().rowwise() - tr;
  return t.record(shifted * r, {pose, points}, [pose, points, &t](const Eigen::MatrixXd& g, const Eigen::MatrixXd&) {
    const Eigen::MatrixXd r = pose.value().leftCols(3);
    const Eigen::MatrixXd gq = g * r.transpose();
    if (pose.requires_grad()) {
      const Eigen::MatrixXd q = points.value().rowwise() - pose.value().col(3).transpose();
      Eigen::MatrixXd gp(3, 4);
      gp << q.transpose() * g, -gq.colwise().sum().transpose();
      t.accumulate(pose, gp);
    }
    if (points.requires_grad()) t.accumulate(points, gq);
  });
}

ad::Var procrustes_on_tape(const PointCloudd& source_a, const ad::Var& target_a, const PointCloudd& source_b,
                           const ad::Var& target_b, const ad::Var& weights_a, const ad::Var& weights_b,
                           bool* rank_flag) {
  ad::Tape& t = *target_a.tape();
  auto set = std::make_shared<CorrespondenceSet<double>>(CorrespondenceSet<double>{
      source_a, network_cloud(target_a.value().transpose()), source_b, network_cloud(target_b.value().transpose()),
      weights_a.value().col(0), weights_b.value().col(0)});
  const auto solution = solve_weighted(*set);
  if (rank_flag) *rank_flag = solution.rank_flag;
  return t.record(transform_to_pose(solution.transform), {target_a, target_b, weights_a, weights_b},
                  [set, target_a, target_b, weights_a, weights_b, &t](const Eigen::MatrixXd& g, const Eigen::MatrixXd&) {
                    TransformGradient<double> up;
                    up.rotation = g.leftCols<3>();
                    up.translation = g.col(3);
                    const auto grad = procrustes_gradient(*set, up);
                    t.accumulate(target_a, grad.target_a.transpose());
                    t.accumulate(target_b, grad.target_b.transpose());
                    t.accumulate(weights_a, grad.weights_a);
                    t.accumulate(weights_b, grad.weights_b);
                  });
}

TapeEstimate forward_on_tape(ad::Tape& tape, const ModelConfig& config, const BoundParameters& p,
                             const PointCloudd& a, const PointCloudd& b, const ForwardOptions& options) {
  ad::Var psi_a = encode_on_tape(tape, config, p.encoder_a, a, options.goal);
  ad::Var psi_b = encode_on_tape(tape, config, p.encoder_b, b, options.goal);
  if (config.symmetry_labels) {
    psi_a = with_labels(tape, psi_a, options.labels_a, "A");
    psi_b = with_labels(tape, psi_b, options.labels_b, "B");
  }
  const CrossOutput cross = cross_module(config, p, psi_a, psi_b);

  TapeEstimate est;
  est.correspondence_ab = cross.corr_ab;
  est.correspondence_ba = cross.corr_ba;
  est.virtual_a = ad::matmul(cross.corr_ab, tape.constant(b.rows()));
  est.virtual_b = ad::matmul(cross.corr_ba, tape.constant(a.rows()));
  if (config.residuals_enabled) {
    est.residual_a = head(cross.phi_a, p.residual_a);
    est.residual_b = head(cross.phi_b, p.residual_b);
  } else {
    est.residual_a = tape.constant(Eigen::MatrixXd::Zero(a.size(), 3));
    est.residual_b = tape.constant(Eigen::MatrixXd::Zero(b.size(), 3));
  }
  est.corrected_a = est.virtual_a + est.residual_a;
  est.corrected_b = est.virtual_b + est.residual_b;
  if (config.weighted_svd_enabled) {
    est.weights_a = ad::column_softmax(head(cross.phi_a, p.weight_a));
    est.weights_b = ad::column_softmax(head(cross.phi_b, p.weight_b));
  } else {
    est.weights_a = tape.constant(Eigen::MatrixXd::Constant(a.size(), 1, 1.0 / static_cast<double>(a.size())));
    est.weights_b = tape.constant(Eigen::MatrixXd::Constant(b.size(), 1, 1.0 / static_cast<double>(b.size())));
  }
  est.pose = procrustes_on_tape(a, est.corrected_a, b, est.corrected_b, est.weights_a, est.weights_b, &est.rank_flag);
  return est;
}

CrossPoseEstimate forward(const TaxPoseModel& model, const PointCloudd& a, const PointCloudd& b,
                          const ForwardOptions& options) {
  ad::Tape tape;
  const BoundParameters bound = bind_parameters(tape, model.params, /*trainable=*/false);
  const TapeEstimate est = forward_on_tape(tape, model.config, bound, a, b, options);
  return CrossPoseEstimate{pose_to_transform(est.pose.value()),
                           network_cloud(rows_to_points(est.virtual_a.value())),
                           network_cloud(rows_to_points(est.virtual_b.value())),
                           rows_to_points(est.residual_a.value()),
                           rows_to_points(est.residual_b.value()),
                           network_cloud(rows_to_points(est.corrected_a.value())),
                           network_cloud(rows_to_points(est.corrected_b.value())),
                           est.weights_a.value().col(0),
                           est.weights_b.value().col(0),
                           est.correspondence_ab.value(),
                           est.correspondence_ba.value(),
                           est.rank_flag};
}

}  // namespace taxpose
