#pragma once

#include <Eigen/Core>

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "taxpose/autodiff.hpp"
#include "taxpose/geometry.hpp"
#include "taxpose/procrustes.hpp"

namespace taxpose {

using FeatureMatrix = Eigen::MatrixXd;     // N x d, one row per point
using AttentionWeights = Eigen::MatrixXd;  // N_self x N_other, rows sum to 1

/// How cross-object features and correspondence weights are produced.
enum class CrossVariant {
  Attention,   // single-head cross-attention; its attention map gives the weights
  DotProduct,  // same feature update; weights from raw feature dot products
  MlpCross,    // 3-layer MLP on [own feature, pooled other feature]; dot-product weights
};

std::string to_string(CrossVariant v);
CrossVariant cross_variant_from_string(const std::string& s);

struct ModelConfig {
  int embed_dim = 32;
  int hidden_dim = 64;
  int goal_context_dim = 0;
  int knn = 8;
  CrossVariant cross = CrossVariant::Attention;
  bool residuals_enabled = true;
  bool weighted_svd_enabled = true;
  bool symmetry_labels = false;
  /// Names for the one-hot goal slots (empty, or goal_context_dim entries).
  std::vector<std::string> goal_names;
  /// Feeds raw instead of centred coordinates to the encoders. Test hook for
  /// the equivariance audit's negative control; never serialized.
  bool debug_disable_centering = false;

  int encoder_input_dim() const { return 8 + goal_context_dim; }
  int feature_dim() const { return embed_dim + (symmetry_labels ? 1 : 0); }
};

template <class T>
struct Dense {
  T weight;  // in x out
  T bias;    // 1 x out
};

template <class T>
struct Encoder {
  Dense<T> input, hidden, output;
};

template <class T>
struct CrossAttention {
  T query, key, value;  // w x w
};

/// Same three-layer shape as an encoder.
template <class T>
using CrossMlp = Encoder<T>;

template <class T>
struct Head {
  Dense<T> hidden, output;
};

/// Every learnable tensor. T is Eigen::MatrixXd for storage and ad::Var when
/// bound to a tape.
template <class T>
struct ModelParameters {
  Encoder<T> encoder_a, encoder_b;
  CrossAttention<T> attention_a, attention_b;
  CrossMlp<T> cross_mlp_a, cross_mlp_b;
  Head<T> residual_a, residual_b;
  Head<T> weight_a, weight_b;
};

namespace detail {

template <class F, class... D>
void visit_dense(const std::string& name, F& f, D&... d) {
  f(name + ".weight", d.weight...);
  f(name + ".bias", d.bias...);
}

template <class F, class... E>
void visit_encoder(const std::string& name, F& f, E&... e) {
  visit_dense(name + ".input", f, e.input...);
  visit_dense(name + ".hidden", f, e.hidden...);
  visit_dense(name + ".output", f, e.output...);
}

template <class F, class... A>
void visit_attention(const std::string& name, F& f, A&... a) {
  f(name + ".query", a.query...);
  f(name + ".key", a.key...);
  f(name + ".value", a.value...);
}

template <class F, class... H>
void visit_head(const std::string& name, F& f, H&... h) {
  visit_dense(name + ".hidden", f, h.hidden...);
  visit_dense(name + ".output", f, h.output...);
}

}  // namespace detail

/// Calls f(name, p.tensor...) for every tensor, walking several parameter
/// sets in lockstep. Order is fixed and defines the checkpoint layout.
template <class F, class... P>
void visit_parameters(F&& f, P&... p) {
  detail::visit_encoder("encoder_a", f, p.encoder_a...);
  detail::visit_encoder("encoder_b", f, p.encoder_b...);
  detail::visit_attention("attention_a", f, p.attention_a...);
  detail::visit_attention("attention_b", f, p.attention_b...);
  detail::visit_encoder("cross_mlp_a", f, p.cross_mlp_a...);
  detail::visit_encoder("cross_mlp_b", f, p.cross_mlp_b...);
  detail::visit_head("residual_a", f, p.residual_a...);
  detail::visit_head("residual_b", f, p.residual_b...);
  detail::visit_head("weight_a", f, p.weight_a...);
  detail::visit_head("weight_b", f, p.weight_b...);
}

using Parameters = ModelParameters<Eigen::MatrixXd>;
using BoundParameters = ModelParameters<ad::Var>;

struct TaxPoseModel {
  ModelConfig config;
  Parameters params;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; the output
/// layers of the residual and importance-weight heads start at zero.
TaxPoseModel init_model(const ModelConfig& config, std::mt19937_64& rng);

Parameters zeros_like(const Parameters& p);
std::size_t parameter_count(const Parameters& p);
bool parameters_finite(const Parameters& p);

enum class Side { A, B };

/// Optional per-call context: one-hot goal and symmetry labels.
struct ForwardOptions {
  std::optional<Eigen::VectorXd> goal;
  std::optional<Eigen::VectorXd> labels_a;
  std::optional<Eigen::VectorXd> labels_b;
};

struct CrossPoseEstimate {
  RigidTransformd transform;
  PointCloudd virtual_a, virtual_b;
  Points3d residual_a, residual_b;
  PointCloudd corrected_a, corrected_b;
  Eigen::VectorXd weights_a, weights_b;
  AttentionWeights correspondence_ab, correspondence_ba;
  bool rank_flag = false;
};

/// Per-point encoder inputs: centred xyz, mean offset to the k nearest
/// neighbours, the norms of both, and the goal one-hot. Depends only on the
/// centred cloud, so it is invariant to translating the input.
Eigen::MatrixXd encoder_inputs(const ModelConfig& config, const PointCloudd& cloud,
                               const std::optional<Eigen::VectorXd>& goal);

FeatureMatrix encode(const TaxPoseModel& model, Side side, const PointCloudd& cloud,
                     const std::optional<Eigen::VectorXd>& goal = std::nullopt);

/// softmax(Q K^T / sqrt(d)) row by row, with Q and K already projected.
AttentionWeights attention_weights(const FeatureMatrix& queries, const FeatureMatrix& keys);
/// softmax(Phi_self Phi_other^T) row by row; no scaling, no projections.
AttentionWeights dot_product_weights(const FeatureMatrix& phi_self, const FeatureMatrix& phi_other);
/// Row i is sum_j w_ij * other_j.
PointCloudd virtual_points(const AttentionWeights& w, const PointCloudd& other);
Points3d residuals(const Head<Eigen::MatrixXd>& head, const FeatureMatrix& phi);
/// Softmax of the head's scalar score per point.
Eigen::VectorXd importance_weights(const Head<Eigen::MatrixXd>& head, const FeatureMatrix& phi);

CrossPoseEstimate forward(const TaxPoseModel& model, const PointCloudd& a, const PointCloudd& b,
                          const ForwardOptions& options = {});

// ---------------------------------------------------------------------------
// Tape-level building blocks used by training.

BoundParameters bind_parameters(ad::Tape& tape, const Parameters& p, bool trainable);
Parameters collect_gradients(const ad::Tape& tape, const BoundParameters& bound);

struct TapeEstimate {
  ad::Var pose;  // 3 x 4: [R | t]
  ad::Var virtual_a, virtual_b;
  ad::Var residual_a, residual_b;
  ad::Var corrected_a, corrected_b;  // N x 3
  ad::Var weights_a, weights_b;      // N x 1
  ad::Var correspondence_ab, correspondence_ba;
  bool rank_flag = false;
};

ad::Var encode_on_tape(ad::Tape& tape, const ModelConfig& config, const Encoder<ad::Var>& encoder,
                       const PointCloudd& cloud, const std::optional<Eigen::VectorXd>& goal);

TapeEstimate forward_on_tape(ad::Tape& tape, const ModelConfig& config, const BoundParameters& params,
                             const PointCloudd& a, const PointCloudd& b, const ForwardOptions& options);

/// Differentiable weighted Procrustes: returns the 3 x 4 pose [R | t].
ad::Var procrustes_on_tape(const PointCloudd& source_a, const ad::Var& target_a, const PointCloudd& source_b,
                           const ad::Var& target_b, const ad::Var& weights_a, const ad::Var& weights_b,
                           bool* rank_flag = nullptr);

/// Rows of P mapped by pose [R | t]: P R^T + 1 t^T.
ad::Var transform_rows(const ad::Var& pose, const ad::Var& points);
/// Rows of P mapped by the inverse pose: (P - 1 t^T) R.
ad::Var inverse_transform_rows(const ad::Var& pose, const ad::Var& points);

RigidTransformd pose_to_transform(const Eigen::MatrixXd& pose);
Eigen::MatrixXd transform_to_pose(const RigidTransformd& t);

}  // namespace taxpose
