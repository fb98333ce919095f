#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "taxpose/losses.hpp"
#include "taxpose/model.hpp"
#include "taxpose/tasks.hpp"

namespace taxpose {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Parameters m, v;
  long step = 0;
};

AdamState adam_init(const Parameters& params);
/// Bias-corrected Adam update, in place on params and state.
void adam_step(Parameters& params, const Parameters& grad, AdamState& state, const AdamConfig& cfg);

std::string adam_state_to_json(const AdamState& state);
AdamState adam_state_from_json(const std::string& text, const Parameters& shape);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  AdamConfig optimizer;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  /// Variant flags and sizes. Goal and symmetry fields are filled from the task.
  ModelConfig model;
  std::optional<std::string> pretrained_encoder;  // checkpoint path
  int n_demos = 10;
  /// Train on one goal only; empty means every goal (goal-conditioned when the task has several).
  std::optional<std::string> goal;
  /// Held-out evaluation every eval_every steps (0: only after the last step).
  int eval_every = 0;
  int eval_samples = 20;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct TraceRow {
  int step = 0;
  LossBreakdown loss;
  double eval_rotation_error = std::numeric_limits<double>::quiet_NaN();
  double eval_translation_error = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  TaxPoseModel model;
  std::vector<TraceRow> trace;
  AdamState optimizer;
  /// Steps skipped because a sample hit a near-degenerate spectrum.
  int skipped_steps = 0;
};

/// Model config with goal context and symmetry flags adapted to the task.
ModelConfig model_config_for(const TrainConfig& cfg, const TaskSpec& spec);

TrainResult train(const TrainConfig& cfg, const Dataset& data);
/// Generates cfg.n_demos demos per goal from the spec first.
TrainResult train(const TrainConfig& cfg, const TaskSpec& spec);

/// Columns: step, disp, corr, cons, total, eval_E_R, eval_E_t.
std::string trace_to_csv(const std::vector<TraceRow>& trace);

/// Held-out samples used for in-training evaluation (same seeds as train()).
std::vector<TrainingSample> eval_samples_for(const TrainConfig& cfg, const Dataset& data);

enum class Ablation {
  NoDisp,
  NoCorr,
  NoCons,
  ScaledCombo,
  NoResidual,
  UnweightedSvd,
  DotProduct,
  MlpCross,
  DimSmall,
  NoPretrain,
};

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
std::vector<Ablation> all_ablations();

TrainConfig apply_ablation(const TrainConfig& base, Ablation which);

struct AblationEntry {
  std::string name;  // "base" or the ablation name
  EvalReport report;
  LossBreakdown final_loss;
};

/// Trains the base configuration and each ablation with the same seed and
/// evaluates all of them on the same held-out samples.
std::vector<AblationEntry> run_ablation(const TrainConfig& base, const Dataset& data,
                                        const std::vector<Ablation>& which, int eval_count);

std::string ablation_report_to_json(const std::vector<AblationEntry>& entries);

}  // namespace taxpose
