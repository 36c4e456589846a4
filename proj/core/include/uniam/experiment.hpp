#pragma once

// End-to-end runs: train, score target samples, calibrate β on a held-out
// slice of the target, evaluate against the entropy baseline, and sweep.

#include <ostream>
#include <string>
#include <vector>

#include "uniam/eval.hpp"
#include "uniam/trainer.hpp"

namespace uniam {

/// CAM scores, residuals and classifier logits for every target sample.
struct ScoredTargets {
  std::vector<std::string> ids;
  std::vector<CommonnessScores> scores;
  std::vector<ResidualVector> attn_residuals;
  std::vector<ResidualVector> feat_residuals;
  /// CAM class prediction used when a sample is accepted as common.
  std::vector<int> predictions;
  Matrix logits;
  std::vector<int> ground_truth;
  std::vector<int> common_classes;

  std::vector<double> w_t() const;
  std::vector<ScoreRow> rows(const TrainConfig& cfg, double beta) const;
};

ScoredTargets score_model(const Model& model, const TrainData& data, const TrainConfig& cfg);

/// Subsets of ScoredTargets fields by index.
template <class T>
std::vector<T> pick(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v.at(i));
  return out;
}

/// β maximising H-score on the validation indices.
double calibrate_beta(const ScoredTargets& s, std::span<const std::size_t> validation,
                      const TrainConfig& cfg);

struct Evaluation {
  double beta = 0.0;
  EvalReport report;
  double baseline_threshold = 0.0;
  EvalReport baseline;
};

/// CAM decisions at `beta` and the entropy baseline at its best threshold,
/// both on `indices`.
Evaluation evaluate_at(const ScoredTargets& s, std::span<const std::size_t> indices,
                       const TrainConfig& cfg, double beta);

/// Calibrates β on the validation slice and evaluates on the test slice.
Evaluation calibrate_and_evaluate(const ScoredTargets& s, const TrainConfig& cfg);

struct PipelineResult {
  FitResult fit;
  ScoredTargets scored;
  Evaluation evaluation;
};

PipelineResult run_pipeline(const Dataset& dataset, const TrainConfig& cfg);

enum class SweepAxis { beta, alpha, n_target_private, n_common };
SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis a);
bool is_threshold_axis(SweepAxis a);

/// "lo:hi:step", inclusive of hi up to rounding.
std::vector<double> parse_range(const std::string& text);

struct SweepRow {
  double value = 0.0;
  double h_score = 0.0;
  double common_accuracy = 0.0;
  double unknown_accuracy = 0.0;
  double baseline_h_score = 0.0;
};

/// β axis: re-thresholds one trained model on the test slice.
std::vector<SweepRow> sweep_beta(const ScoredTargets& s, const TrainConfig& cfg,
                                 std::span<const double> grid);

/// α, n_target_private, n_common: one full train and evaluate per point.
std::vector<SweepRow> sweep_retrain(const ScenarioSpec& spec, const TrainConfig& cfg,
                                    SweepAxis axis, std::span<const double> grid);

void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace uniam
