#pragma once

// Open-set metrics: H-score, AUROC, per-class accuracy, the entropy
// baseline detector, threshold search, and score histograms.

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "uniam/cam.hpp"
#include "uniam/numeric.hpp"

namespace uniam {

/// 2ab/(a+b), 0 when a+b = 0. Inputs must lie in [0,1].
double h_score(double acc_common, double acc_unknown);

/// Mann-Whitney AUROC of `scores` for `positive` vs the rest; ties count
/// one half. Returns 0.5 when either class is empty.
double auroc(std::span<const double> scores, const std::vector<bool>& positive);

struct ClassAccuracy {
  int class_id = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct ConfusionCell {
  int ground_truth = 0;
  int predicted = kUnknownLabel;
  std::size_t count = 0;
};

struct EvalReport {
  double common_accuracy = 0.0;
  /// 1 when the target has no private sample.
  double unknown_accuracy = 0.0;
  double h_score = 0.0;
  double auroc = 0.5;
  bool auroc_defined = false;
  std::size_t n_common = 0;
  std::size_t n_private = 0;
  /// Common classes count a hit on the correct label, private classes a hit
  /// on "unknown".
  std::vector<ClassAccuracy> per_class;
  std::vector<ConfusionCell> confusion;
};

std::string report_to_json(const EvalReport& r);

/// `scores` (w_t) may be empty, which leaves AUROC undefined. When given,
/// larger is taken to mean "common".
EvalReport evaluate(std::span<const int> decisions, std::span<const int> ground_truth,
                    std::span<const int> common_classes, std::span<const double> scores = {});

double softmax_entropy(std::span<const double> logits);
/// Entropy > threshold → unknown, else argmax.
std::vector<int> entropy_baseline(const Matrix& logits, double threshold);

/// Accept-as-common when score ≥ threshold (high_is_common) or score <
/// threshold (otherwise); accepted samples take `predictions[i]`.
std::vector<int> threshold_decisions(std::span<const double> scores,
                                     std::span<const int> predictions, double threshold,
                                     bool high_is_common);

struct ThresholdChoice {
  double threshold = 0.0;
  double h_score = 0.0;
};

/// Scans the midpoints between consecutive distinct scores plus one
/// threshold below and one above the range; returns the H-score maximiser
/// (ties to the lowest threshold).
ThresholdChoice best_threshold(std::span<const double> scores, std::span<const int> predictions,
                               std::span<const int> ground_truth,
                               std::span<const int> common_classes, bool high_is_common);

/// Deterministic split of n target samples: every `period`-th sample
/// (starting at 0) goes to validation.
struct HoldoutSplit {
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};
HoldoutSplit holdout_split(std::size_t n, std::size_t period = 5);

struct HistogramRow {
  std::string score;  // w_attn, w_feat or w_t
  double bin_center = 0.0;
  std::size_t count_common = 0;
  std::size_t count_private = 0;
};

/// Fixed-width bins over each score column's observed [min, max]; the max
/// lands in the last bin.
std::vector<HistogramRow> histogram_export(std::span<const ScoreRow> rows,
                                           const std::vector<bool>& is_common, int bins);
void write_histogram_csv(std::ostream& os, std::span<const HistogramRow> rows);

}  // namespace uniam
