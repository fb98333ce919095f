#pragma once

#include <optional>
#include <vector>

#include "taxpose/autodiff.hpp"
#include "taxpose/model.hpp"

namespace taxpose {

/// lambda_disp is 1 except in the ablations that drop the displacement term.
struct LossWeights {
  double lambda_cons = 0.1;
  double lambda_corr = 1.0;
  double lambda_disp = 1.0;
};

struct LossBreakdown {
  double disp = 0.0;
  double corr = 0.0;
  double cons = 0.0;
  double total = 0.0;
};

LossBreakdown combine(const LossWeights& w, double disp, double corr, double cons);

/// mean |T p_a - T_gt p_a|^2 + mean |T^-1 p_b - T_gt^-1 p_b|^2
double point_displacement_loss(const RigidTransformd& t_pred, const RigidTransformd& t_gt, const PointCloudd& p_a,
                               const PointCloudd& p_b);
double direct_correspondence_loss(const CrossPoseEstimate& est, const RigidTransformd& t_gt, const PointCloudd& p_a,
                                  const PointCloudd& p_b);
/// The correspondence loss measured against the estimate's own transform.
double consistency_loss(const CrossPoseEstimate& est, const PointCloudd& p_a, const PointCloudd& p_b);

/// Without ground truth only the consistency term contributes.
LossBreakdown combined_loss(const LossWeights& w, const CrossPoseEstimate& est,
                            const std::optional<RigidTransformd>& t_gt, const PointCloudd& p_a,
                            const PointCloudd& p_b);

struct TapeLosses {
  ad::Var disp, corr, cons, total;
};

TapeLosses losses_on_tape(ad::Tape& tape, const LossWeights& w, const TapeEstimate& est,
                          const std::optional<RigidTransformd>& t_gt, const PointCloudd& p_a,
                          const PointCloudd& p_b);

struct LossExample {
  PointCloudd a, b;
  std::optional<RigidTransformd> t_gt;
  ForwardOptions options;
};

struct LossGradient {
  LossBreakdown loss;  // batch mean
  Parameters gradient;
  bool rank_flag = false;
};

/// Batch-mean loss and its reverse-mode gradient w.r.t. every parameter.
LossGradient loss_gradient(const TaxPoseModel& model, const std::vector<LossExample>& batch, const LossWeights& w);

/// Batch-mean loss only, through the same code path as loss_gradient.
LossBreakdown batch_loss(const TaxPoseModel& model, const std::vector<LossExample>& batch, const LossWeights& w);

}  // namespace taxpose
