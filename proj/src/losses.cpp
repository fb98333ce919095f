#include "taxpose/losses.hpp"

namespace taxpose {

namespace {

double mean_sq(const Points3d& a, const Points3d& b) {
  return (a - b).colwise().squaredNorm().sum() / static_cast<double>(a.cols());
}

ad::Var zero(ad::Tape& tape) { return tape.constant(Eigen::MatrixXd::Zero(1, 1)); }

}  // namespace

LossBreakdown combine(const LossWeights& w, double disp, double corr, double cons) {
  return {disp, corr, cons, w.lambda_disp * disp + w.lambda_cons * cons + w.lambda_corr * corr};
}

double point_displacement_loss(const RigidTransformd& t_pred, const RigidTransformd& t_gt, const PointCloudd& p_a,
                               const PointCloudd& p_b) {
  return mean_sq(apply(t_pred, p_a.points()), apply(t_gt, p_a.points())) +
         mean_sq(apply(invert(t_pred), p_b.points()), apply(invert(t_gt), p_b.points()));
}

double direct_correspondence_loss(const CrossPoseEstimate& est, const RigidTransformd& t_gt, const PointCloudd& p_a,
                                  const PointCloudd& p_b) {
  if (est.corrected_a.size() != p_a.size() || est.corrected_b.size() != p_b.size())
    throw LengthMismatch("corrected correspondences must match the input clouds");
  return mean_sq(est.corrected_a.points(), apply(t_gt, p_a.points())) +
         mean_sq(est.corrected_b.points(), apply(invert(t_gt), p_b.points()));
}

double consistency_loss(const CrossPoseEstimate& est, const PointCloudd& p_a, const PointCloudd& p_b) {
  return direct_correspondence_loss(est, est.transform, p_a, p_b);
}

LossBreakdown combined_loss(const LossWeights& w, const CrossPoseEstimate& est,
                            const std::optional<RigidTransformd>& t_gt, const PointCloudd& p_a,
                            const PointCloudd& p_b) {
  const double cons = consistency_loss(est, p_a, p_b);
  if (!t_gt) return combine(w, 0.0, 0.0, cons);
  return combine(w, point_displacement_loss(est.transform, *t_gt, p_a, p_b),
                 direct_correspondence_loss(est, *t_gt, p_a, p_b), cons);
}

TapeLosses losses_on_tape(ad::Tape& tape, const LossWeights& w, const TapeEstimate& est,
                          const std::optional<RigidTransformd>& t_gt, const PointCloudd& p_a,
                          const PointCloudd& p_b) {
  const ad::Var rows_a = tape.constant(p_a.rows());
  const ad::Var rows_b = tape.constant(p_b.rows());
  const ad::Var pred_a = transform_rows(est.pose, rows_a);
  const ad::Var pred_b = inverse_transform_rows(est.pose, rows_b);

  TapeLosses out;
  out.cons = ad::mean_squared_row_distance(est.corrected_a, pred_a) +
             ad::mean_squared_row_distance(est.corrected_b, pred_b);
  if (t_gt) {
    const ad::Var gt_a = tape.constant(apply(*t_gt, p_a.points()).transpose());
    const ad::Var gt_b = tape.constant(apply(invert(*t_gt), p_b.points()).transpose());
    out.disp = ad::mean_squared_row_distance(pred_a, gt_a) + ad::mean_squared_row_distance(pred_b, gt_b);
    out.corr = ad::mean_squared_row_distance(est.corrected_a, gt_a) +
               ad::mean_squared_row_distance(est.corrected_b, gt_b);
  } else {
    out.disp = zero(tape);
    out.corr = zero(tape);
  }
  out.total = w.lambda_disp * out.disp + w.lambda_cons * out.cons + w.lambda_corr * out.corr;
  return out;
}

namespace {

LossBreakdown breakdown(const TapeLosses& l) {
  return {l.disp.value()(0, 0), l.corr.value()(0, 0), l.cons.value()(0, 0), l.total.value()(0, 0)};
}

void add_scaled(LossBreakdown& acc, const LossBreakdown& x, double s) {
  acc.disp += s * x.disp;
  acc.corr += s * x.corr;
  acc.cons += s * x.cons;
  acc.total += s * x.total;
}

}  // namespace

LossGradient loss_gradient(const TaxPoseModel& model, const std::vector<LossExample>& batch, const LossWeights& w) {
  if (batch.empty()) throw InputError("loss_gradient needs a non-empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossGradient out;
  out.gradient = zeros_like(model.params);
  for (const LossExample& ex : batch) {
    ad::Tape tape;
    const BoundParameters bound = bind_parameters(tape, model.params, /*trainable=*/true);
    const TapeEstimate est = forward_on_tape(tape, model.config, bound, ex.a, ex.b, ex.options);
    const TapeLosses losses = losses_on_tape(tape, w, est, ex.t_gt, ex.a, ex.b);
    tape.backward(losses.total);
    const Parameters g = collect_gradients(tape, bound);
    visit_parameters([&](const std::string&, Eigen::MatrixXd& acc, const Eigen::MatrixXd& gi) { acc += scale * gi; },
                     out.gradient, g);
    add_scaled(out.loss, breakdown(losses), scale);
    out.rank_flag = out.rank_flag || est.rank_flag;
  }
  return out;
}

LossBreakdown batch_loss(const TaxPoseModel& model, const std::vector<LossExample>& batch, const LossWeights& w) {
  if (batch.empty()) throw InputError("batch_loss needs a non-empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossBreakdown out;
  for (const LossExample& ex : batch) {
    ad::Tape tape;
    const BoundParameters bound = bind_parameters(tape, model.params, /*trainable=*/false);
    const TapeEstimate est = forward_on_tape(tape, model.config, bound, ex.a, ex.b, ex.options);
    add_scaled(out, breakdown(losses_on_tape(tape, w, est, ex.t_gt, ex.a, ex.b)), scale);
  }
  return out;
}

}  // namespace taxpose
