#include "uniam/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "uniam/numeric.hpp"

namespace uniam {

namespace {

void check_vectors(std::span<const Vector> vectors, std::size_t k) {
  if (k < 2) throw ArgumentError("clustering needs K >= 2");
  if (k > vectors.size())
    throw ArgumentError("clustering: K=" + std::to_string(k) + " exceeds sample count " +
                        std::to_string(vectors.size()));
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != dim) throw ShapeError("clustering: vectors differ in length");
}

Dictionary make_centers(std::vector<Vector> cols) {
  Dictionary d;
  d.atoms = Matrix::from_columns(cols);
  d.atom_labels.resize(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) d.atom_labels[c] = static_cast<int>(c);
  return d;
}

std::vector<Vector> center_vectors(const Dictionary& d) {
  std::vector<Vector> out;
  for (std::size_t j = 0; j < d.num_atoms(); ++j) out.push_back(d.atom(j));
  return out;
}

// Means of assigned vectors; an empty cluster takes the sample with the
// largest `distance` that is not already the sole member of its cluster.
std::vector<Vector> recompute_means(std::span<const Vector> vectors,
                                    std::vector<int>& assignments, std::size_t k,
                                    std::span<const double> distance) {
  const std::size_t dim = vectors.front().size();
  std::vector<Vector> sums(k, Vector(dim, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto c = static_cast<std::size_t>(assignments[i]);
    axpy(1.0, vectors[i], sums[c]);
    ++counts[c];
  }
  std::vector<bool> taken(vectors.size(), false);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t best = vectors.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const auto owner = static_cast<std::size_t>(assignments[i]);
      if (taken[i] || counts[owner] <= 1) continue;
      if (distance[i] > best_d) {
        best_d = distance[i];
        best = i;
      }
    }
    if (best == vectors.size()) continue;
    const auto owner = static_cast<std::size_t>(assignments[best]);
    axpy(-1.0, vectors[best], sums[owner]);
    --counts[owner];
    sums[c] = vectors[best];
    counts[c] = 1;
    assignments[best] = static_cast<int>(c);
    taken[best] = true;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (double& x : sums[c]) x /= static_cast<double>(counts[c]);
  }
  return sums;
}

std::vector<Vector> kmeanspp_seed(std::span<const Vector> vectors, std::size_t k, Rng& rng) {
  const std::size_t n = vectors.size();
  std::vector<Vector> centers;
  std::vector<bool> chosen(n, false);
  std::size_t first = rng.uniform_index(n);
  centers.push_back(vectors[first]);
  chosen[first] = true;
  Vector d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(vectors[i], centers[0]);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!chosen[i]) total += d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        pick = i;
        target -= d2[i];
        if (target < 0.0) break;
      }
    } else {
      // All remaining points coincide with chosen centers.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[rng.uniform_index(rest.size())];
    }
    chosen[pick] = true;
    centers.push_back(vectors[pick]);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(vectors[i], centers.back()));
  }
  return centers;
}

}  // namespace

Clustering kmeans(std::span<const Vector> vectors, std::size_t k, std::uint64_t seed,
                  int max_iter) {
  check_vectors(vectors, k);
  Rng rng(seed, 0x6B6D);
  std::vector<Vector> centers = kmeanspp_seed(vectors, k, rng);
  const std::size_t n = vectors.size();

  Clustering out;
  out.assignments.assign(n, -1);
  Vector dist(n);
  for (int it = 0; it < std::max(1, max_iter); ++it) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(vectors[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (out.assignments[i] != best) changed = true;
      out.assignments[i] = best;
      dist[i] = best_d;
      objective += best_d;
    }
    out.history.push_back(objective);
    out.objective = objective;
    out.iterations = it + 1;
    if (!changed && it > 0) break;
    centers = recompute_means(vectors, out.assignments, k, dist);
  }
  // Final objective against the returned centers.
  double objective = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    objective += squared_distance(vectors[i], centers[static_cast<std::size_t>(out.assignments[i])]);
  out.objective = objective;
  out.centers = make_centers(std::move(centers));
  return out;
}

std::vector<ResidualVector> cluster_residuals(std::span<const Vector> vectors,
                                              const Clustering& c, const LassoOptions& lasso) {
  const Dictionary unit = normalize_dictionary(c.centers);
  std::vector<ResidualVector> out(vectors.size());
  const auto n = static_cast<std::ptrdiff_t>(vectors.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        match_residuals(vectors[static_cast<std::size_t>(i)], unit, lasso).residuals;
  }
  return out;
}

Clustering residual_refine(std::span<const Vector> vectors, const Clustering& init,
                           const LassoOptions& lasso, int rounds) {
  const std::size_t k = init.k();
  check_vectors(vectors, k);
  if (init.assignments.size() != vectors.size())
    throw ArgumentError("residual_refine: clustering does not match sample count");

  Clustering current = init;
  current.history.clear();
  current.iterations = 0;
  bool have_previous = false;
  Clustering previous;

  for (int round = 0; round < rounds; ++round) {
    const auto residuals = cluster_residuals(vectors, current, lasso);
    std::vector<int> assign(vectors.size());
    Vector matched(vectors.size());
    double objective = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const auto& r = residuals[i];
      std::size_t best = 0;
      for (std::size_t j = 1; j < r.values.size(); ++j)
        if (r.values[j] < r.values[best]) best = j;
      assign[i] = r.class_ids[best];
      matched[i] = r.values[best];
      objective += matched[i];
    }
    if (have_previous && objective > previous.objective) {
      current = previous;
      break;
    }
    const bool stable = have_previous && assign == previous.assignments;
    current.assignments = assign;
    current.objective = objective;
    current.history.push_back(objective);
    current.iterations = round + 1;
    if (stable) break;
    previous = current;
    have_previous = true;
    if (round + 1 == rounds) break;
    std::vector<int> next_assign = assign;
    std::vector<Vector> means = recompute_means(vectors, next_assign, k, matched);
    // A cluster that stays empty (or collapses to the origin) keeps its
    // previous center.
    const auto old_centers = center_vectors(current.centers);
    for (std::size_t c = 0; c < k; ++c) {
      const bool empty = std::none_of(next_assign.begin(), next_assign.end(),
                                      [&](int a) { return a == static_cast<int>(c); });
      if (empty || l2_norm(means[c]) == 0.0) means[c] = old_centers[c];
    }
    current.centers = make_centers(std::move(means));
  }
  return current;
}

ClusterCorrespondence align_assignments(std::span<const int> attn, std::span<const int> feat,
                                        std::size_t k) {
  if (attn.size() != feat.size()) throw ArgumentError("align_clusterings: sample counts differ");
  ClusterCorrespondence out;
  out.overlap = Matrix(k, k);
  for (std::size_t i = 0; i < attn.size(); ++i) {
    if (attn[i] < 0 || feat[i] < 0 || static_cast<std::size_t>(attn[i]) >= k ||
        static_cast<std::size_t>(feat[i]) >= k)
      throw ArgumentError("align_clusterings: assignment outside [0,K)");
    out.overlap(static_cast<std::size_t>(feat[i]), static_cast<std::size_t>(attn[i])) += 1.0;
  }
  out.mapping.assign(k, -1);
  std::vector<bool> col_used(k, false);
  for (std::size_t step = 0; step < k; ++step) {
    double best = -1.0;
    std::size_t bf = 0;
    std::size_t ba = 0;
    for (std::size_t f = 0; f < k; ++f) {
      if (out.mapping[f] != -1) continue;
      for (std::size_t a = 0; a < k; ++a) {
        if (col_used[a]) continue;
        if (out.overlap(f, a) > best) {
          best = out.overlap(f, a);
          bf = f;
          ba = a;
        }
      }
    }
    out.mapping[bf] = static_cast<int>(ba);
    col_used[ba] = true;
  }
  return out;
}

ClusterCorrespondence align_clusterings(const Clustering& attn, const Clustering& feat) {
  if (attn.k() != feat.k())
    throw ArgumentError("align_clusterings: K differs (" + std::to_string(attn.k()) + " vs " +
                        std::to_string(feat.k()) + ")");
  return align_assignments(attn.assignments, feat.assignments, attn.k());
}

double soft_cluster_label(int c, const TargetViewScores& scores,
                          const ClusterCorrespondence& correspondence, double lambda) {
  const int mapped_feat = correspondence.map(scores.cluster_feat);
  return agreement_weight(scores.cluster_attn == c, mapped_feat == c, scores.o_attn, scores.o_feat,
                          lambda);
}

Matrix soft_cluster_labels(std::span<const TargetViewScores> scores,
                           const ClusterCorrespondence& correspondence, std::size_t k,
                           double lambda) {
  Matrix out(scores.size(), k);
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t c = 0; c < k; ++c)
      out(i, c) = soft_cluster_label(static_cast<int>(c), scores[i], correspondence, lambda);
  return out;
}

double cluster_pair_weight(const Matrix& soft_labels, std::size_t i, std::size_t j) {
  return std::clamp(dot(soft_labels.row(i), soft_labels.row(j)), 0.0, 1.0);
}

LossValue target_contrastive_loss(const Matrix& target_features, const Matrix& soft_labels,
                                  const ContrastiveOptions& opts) {
  const std::size_t n = target_features.rows();
  if (n < 2) throw ArgumentError("target_contrastive_loss: need at least two target samples");
  if (soft_labels.rows() != n) throw ShapeError("target_contrastive_loss: soft label rows");
  std::vector<std::size_t> anchors(n);
  for (std::size_t i = 0; i < n; ++i) anchors[i] = i;
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) = cluster_pair_weight(soft_labels, i, j);
  return weighted_contrastive_loss(target_features, anchors, w, opts);
}

double cluster_purity(std::span<const int> assignments, std::span<const int> ground_truth) {
  if (assignments.size() != ground_truth.size())
    throw ArgumentError("cluster_purity: length mismatch");
  if (assignments.empty()) return 0.0;
  std::map<int, std::map<int, std::size_t>> table;
  for (std::size_t i = 0; i < assignments.size(); ++i) ++table[assignments[i]][ground_truth[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [label, count] : counts) best = std::max(best, count);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(assignments.size());
}

}  // namespace uniam
