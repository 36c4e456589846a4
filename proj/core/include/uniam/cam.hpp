#pragma once

// Commonness scoring from residual vectors: attention/feature commonness
// degrees, fused transferability, source class weights, and the
// common-vs-unknown decision.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "uniam/sparse_coding.hpp"

namespace uniam {

inline constexpr int kUnknownLabel = -1;

/// How source class weights read the normalised residual sums.
enum class WeightDirection { literal, complement };
/// How the transferability score is compared with the threshold.
enum class ThresholdDirection { high_is_common, literal };

WeightDirection parse_weight_direction(const std::string& s);
ThresholdDirection parse_threshold_direction(const std::string& s);
std::string to_string(WeightDirection d);
std::string to_string(ThresholdDirection d);

struct DegreeScore {
  double score = 0.0;
  int label = 0;
};

/// Mean of the non-matched residuals minus the matched (minimum) residual.
/// Ties in the argmin resolve to the lowest class id.
DegreeScore commonness_degree(const ResidualVector& r);
inline DegreeScore acd(const ResidualVector& r) { return commonness_degree(r); }
inline DegreeScore fcd(const ResidualVector& r_feat) { return commonness_degree(r_feat); }

/// λ·w_attn + (1−λ)·w_feat
double fuse_transferability(double w_attn, double w_feat, double lambda);

struct CommonnessScores {
  double w_attn = 0.0;
  double w_feat = 0.0;
  double w_t = 0.0;
  int pseudo_label_attn = 0;
  int pseudo_label_feat = 0;
};

CommonnessScores commonness_scores(const ResidualVector& attn, const ResidualVector& feat,
                                   double lambda);

struct SourceClassWeights {
  std::vector<int> class_ids;
  Vector weights;  // aligned with class_ids, each in [0,1]
  WeightDirection direction = WeightDirection::complement;

  double weight_for(int class_id) const;
};

SourceClassWeights source_class_weights(std::span<const ResidualVector> attn_residuals,
                                        std::span<const ResidualVector> feat_residuals,
                                        double lambda, WeightDirection direction);

bool decide_common(double w_t, double beta, ThresholdDirection direction);

/// Predicted source class for a sample accepted as common. Uses the
/// attention pseudo-label; when the two views disagree, the class whose
/// λ-weighted matched residual is smaller wins.
int predicted_class(const CommonnessScores& s, const ResidualVector& attn,
                    const ResidualVector& feat, double lambda);

/// Returns the predicted class, or kUnknownLabel.
int decide(const CommonnessScores& s, const ResidualVector& attn, const ResidualVector& feat,
           double lambda, double beta, ThresholdDirection direction);

struct TargetViewScores {
  double o_attn = 0.0;
  double o_feat = 0.0;
  int cluster_attn = 0;  // ĉ
  int cluster_feat = 0;  // ĉ'
};

TargetViewScores target_view_scores(const ResidualVector& attn_r_tt,
                                    const ResidualVector& feat_r_tt);

/// One row of the score export.
struct ScoreRow {
  std::string id;
  CommonnessScores scores;
  int decision = kUnknownLabel;
};

/// Header: id,w_attn,w_feat,w_t,pseudo_label_attn,pseudo_label_feat,decision.
/// `decision` is the predicted class id or "unknown".
void write_scores_csv(std::ostream& os, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(std::istream& is);

}  // namespace uniam
