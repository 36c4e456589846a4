#pragma once

// Target class separation: K-means initialisation, residual-metric
// refinement, alignment of the attention and feature clusterings, soft
// cluster labels, and the target contrastive loss.

#include <cstdint>
#include <span>
#include <vector>

#include "uniam/cam.hpp"
#include "uniam/losses.hpp"
#include "uniam/sparse_coding.hpp"

namespace uniam {

struct Clustering {
  /// K atoms labelled 0..K-1.
  Dictionary centers;
  std::vector<int> assignments;
  /// Sum of assignment distances under the metric that produced the
  /// clustering (squared Euclidean for kmeans, matched residual for refine).
  double objective = 0.0;
  /// Objective after every iteration or round, in order.
  std::vector<double> history;
  int iterations = 0;

  std::size_t k() const { return centers.num_atoms(); }
};

/// Lloyd's algorithm with k-means++ seeding. An emptied cluster is re-seeded
/// from the point farthest from its current center.
Clustering kmeans(std::span<const Vector> vectors, std::size_t k, std::uint64_t seed,
                  int max_iter = 100);

/// Reassigns samples by the argmin of their residual vector against the
/// current (normalised) centers and recomputes centers as raw means. Stops
/// when assignments are stable or when a round would raise the residual
/// objective, in which case the previous round is kept.
Clustering residual_refine(std::span<const Vector> vectors, const Clustering& init,
                           const LassoOptions& lasso, int rounds);

/// Residual vectors of `vectors` against the centers of `c` (normalised).
std::vector<ResidualVector> cluster_residuals(std::span<const Vector> vectors,
                                              const Clustering& c, const LassoOptions& lasso);

struct ClusterCorrespondence {
  /// mapping[feature cluster] = attention cluster
  std::vector<int> mapping;
  /// overlap(f, a) = number of samples in feature cluster f and attention
  /// cluster a.
  Matrix overlap;

  int map(int feature_cluster) const { return mapping.at(static_cast<std::size_t>(feature_cluster)); }
};

/// Greedy maximum-overlap matching: repeatedly take the largest remaining
/// cell (ties to the lower (feature, attention) pair), then drop its row and
/// column.
ClusterCorrespondence align_clusterings(const Clustering& attn, const Clustering& feat);
ClusterCorrespondence align_assignments(std::span<const int> attn, std::span<const int> feat,
                                        std::size_t k);

/// o_{c,i} from the attention cluster ĉ and the mapped feature cluster ĉ'.
double soft_cluster_label(int c, const TargetViewScores& scores,
                          const ClusterCorrespondence& correspondence, double lambda);

/// n × K matrix of soft cluster labels.
Matrix soft_cluster_labels(std::span<const TargetViewScores> scores,
                           const ClusterCorrespondence& correspondence, std::size_t k,
                           double lambda);

/// o_{i,j} = Σ_c o_{c,i}·o_{c,j}
double cluster_pair_weight(const Matrix& soft_labels, std::size_t i, std::size_t j);

/// −(1/n) Σ_i Σ_j o_{i,j}·l(z_i,z_j) over target rows only.
LossValue target_contrastive_loss(const Matrix& target_features, const Matrix& soft_labels,
                                  const ContrastiveOptions& opts);

/// Fraction of samples whose cluster's majority ground-truth class matches
/// their own.
double cluster_purity(std::span<const int> assignments, std::span<const int> ground_truth);

}  // namespace uniam
