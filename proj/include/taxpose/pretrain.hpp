#pragma once

#include <cstdint>
#include <vector>

#include "taxpose/autodiff.hpp"
#include "taxpose/model.hpp"

namespace taxpose {

struct PretrainConfig {
  double lambda_geo = 10.0;
  int steps = 500;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Translation magnitude of the random SE(3) views, in world units.
  double translation_scale = 1.0;
  std::vector<PointCloudd> shapes;
};

/// d_ii = 1; d_ij = tanh(lambda |p_i - p_j|) / mu off the diagonal, with mu
/// the largest off-diagonal tanh value of this cloud.
Eigen::MatrixXd geometric_weight_matrix(const PointCloudd& cloud, double lambda_geo);

/// -sum_i log( exp(phi_i . psi_i) / sum_j exp(d_ij phi_i . psi_j) ), evaluated
/// with a max-shifted log-sum-exp.
double weighted_infonce(const FeatureMatrix& phi, const FeatureMatrix& psi, const Eigen::MatrixXd& d);
ad::Var weighted_infonce(const ad::Var& phi, const ad::Var& psi, const Eigen::MatrixXd& d);

struct PretrainResult {
  Encoder<Eigen::MatrixXd> encoder;
  std::vector<double> loss_trace;
  /// Running minimum of an exponential moving average of loss_trace.
  std::vector<double> smoothed_trace;
};

/// Plain gradient descent on the weighted contrastive loss between a shape
/// and a randomly transformed copy of it, both through the same encoder.
PretrainResult pretrain_encoder(const PretrainConfig& cfg, const ModelConfig& model_config,
                                const Encoder<Eigen::MatrixXd>& encoder);

/// Mean |phi_i - psi_i| between features of each shape and of `trials`
/// fresh random SE(3) copies of it, divided by the mean |phi_i|.
double feature_drift(const ModelConfig& model_config, const Encoder<Eigen::MatrixXd>& encoder,
                     const std::vector<PointCloudd>& shapes, int trials, std::uint64_t seed,
                     double translation_scale = 1.0);

}  // namespace taxpose
