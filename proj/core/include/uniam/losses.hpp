#pragma once

// Common-feature alignment losses with analytic gradients: weighted domain
// adversarial loss, gated source cross-entropy, and the weighted contrastive
// family shared by the source and target contrastive terms.

#include <span>
#include <vector>

#include "uniam/domain.hpp"
#include "uniam/numeric.hpp"

namespace uniam {

struct LossValue {
  double value = 0.0;
  /// Gradient w.r.t. the differentiated input, same shape as that input.
  Matrix grad;
};

inline constexpr double kProbEpsilon = 1e-7;

/// mean_s[w_s·log(1−D_s)] + mean_t[w_t·log D_t], natural log, probabilities
/// clamped to [ε, 1−ε]. Gradient is n×1 w.r.t. the probabilities. Either
/// domain may be absent from the batch, in which case its term is dropped.
LossValue adversarial_loss(std::span<const double> probs, std::span<const Domain> domains,
                           std::span<const double> weights);

/// Mean over rows of 1[w ≥ α]·CE(softmax(logits_i), label_i). Gradient is
/// w.r.t. the logits.
LossValue gated_cross_entropy(const Matrix& logits, std::span<const int> labels,
                              std::span<const double> label_weights, double alpha);

/// Pseudo-labels and degrees of one target sample as seen by a source anchor.
struct TargetPseudoLabel {
  int label_attn = 0;
  int label_feat = 0;
  double w_attn = 0.0;
  double w_feat = 0.0;
};

/// Soft agreement rule shared by pair weights and soft cluster labels:
/// 1 if both views match, 0 if neither, λ·s_a/s_t or (1−λ)·s_f/s_t if only
/// one does, with s_t = λ·s_a + (1−λ)·s_f; 0 when s_t = 0.
double agreement_weight(bool attn_matches, bool feat_matches, double s_attn, double s_feat,
                        double lambda);

double source_pair_weight(int y_i, int y_j);
double target_pair_weight(int y_i, const TargetPseudoLabel& j, double lambda);

struct ContrastiveOptions {
  double tau = 0.1;
  /// Leave the anchor out of its own softmax denominator.
  bool exclude_anchor = true;
  /// Use −w·log l instead of −w·l.
  bool log_variant = false;
};

/// exp(ẑ_i·ẑ_j/τ) / Σ_k exp(ẑ_i·ẑ_k/τ) over `candidates` on l2-normalised
/// vectors.
double contrastive_similarity(std::span<const double> z_i, std::span<const Vector> candidates,
                              double tau, std::size_t j);

/// −(1/|anchors|) Σ_i Σ_j w_ij·l(z_i,z_j) with the pool being every row of
/// `features`. `weights` is |anchors| × rows. Gradient is w.r.t. `features`.
LossValue weighted_contrastive_loss(const Matrix& features, std::span<const std::size_t> anchors,
                                    const Matrix& weights, const ContrastiveOptions& opts);

/// Source anchors against the full batch. `labels` holds ground truth for
/// source rows; `pseudo` is read for target rows.
LossValue source_contrastive_loss(const Matrix& features, std::span<const Domain> domains,
                                  std::span<const int> labels,
                                  std::span<const TargetPseudoLabel> pseudo, double lambda,
                                  const ContrastiveOptions& opts);

}  // namespace uniam
