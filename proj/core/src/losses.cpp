#include "uniam/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace uniam {

LossValue adversarial_loss(std::span<const double> probs, std::span<const Domain> domains,
                           std::span<const double> weights) {
  const std::size_t n = probs.size();
  if (domains.size() != n || weights.size() != n)
    throw ShapeError("adversarial_loss: probs, domains and weights differ in length");
  std::size_t n_src = 0;
  std::size_t n_tgt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0))
      throw NumericError("adversarial_loss: discriminator output " + std::to_string(probs[i]) +
                         " outside [0,1] at row " + std::to_string(i));
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
      throw ArgumentError("adversarial_loss: weights must be finite and non-negative");
    (domains[i] == Domain::source ? n_src : n_tgt) += 1;
  }
  LossValue out;
  out.grad = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(probs[i], kProbEpsilon, 1.0 - kProbEpsilon);
    if (domains[i] == Domain::source) {
      const double scale = weights[i] / static_cast<double>(n_src);
      out.value += scale * std::log(1.0 - p);
      out.grad(i, 0) = -scale / (1.0 - p);
    } else {
      const double scale = weights[i] / static_cast<double>(n_tgt);
      out.value += scale * std::log(p);
      out.grad(i, 0) = scale / p;
    }
  }
  return out;
}

LossValue gated_cross_entropy(const Matrix& logits, std::span<const int> labels,
                              std::span<const double> label_weights, double alpha) {
  const std::size_t n = logits.rows();
  const std::size_t m = logits.cols();
  if (labels.size() != n || label_weights.size() != n)
    throw ShapeError("gated_cross_entropy: logits, labels and weights differ in length");
  LossValue out;
  out.grad = Matrix(n, m);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m)
      throw ArgumentError("gated_cross_entropy: label " + std::to_string(labels[i]) +
                          " outside [0," + std::to_string(m) + ")");
    if (!(label_weights[i] >= alpha)) continue;
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - mx);
    const double log_z = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value += (log_z - row[y]) * inv_n;
    for (std::size_t c = 0; c < m; ++c) {
      const double p = std::exp(row[c] - log_z);
      out.grad(i, c) = (p - (c == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  return out;
}

double agreement_weight(bool attn_matches, bool feat_matches, double s_attn, double s_feat,
                        double lambda) {
  if (attn_matches && feat_matches) return 1.0;
  if (!attn_matches && !feat_matches) return 0.0;
  const double s_t = lambda * s_attn + (1.0 - lambda) * s_feat;
  if (!(s_t > 0.0)) return 0.0;
  const double w = attn_matches ? lambda * s_attn / s_t : (1.0 - lambda) * s_feat / s_t;
  return std::clamp(w, 0.0, 1.0);
}

double source_pair_weight(int y_i, int y_j) { return y_i == y_j ? 1.0 : 0.0; }

double target_pair_weight(int y_i, const TargetPseudoLabel& j, double lambda) {
  return agreement_weight(j.label_attn == y_i, j.label_feat == y_i, j.w_attn, j.w_feat, lambda);
}

namespace {

struct Normalized {
  Matrix unit;
  Vector norms;
};

Normalized normalize_rows(const Matrix& z) {
  Normalized n{z, Vector(z.rows())};
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double norm = std::max(l2_norm(z.row(r)), 1e-12);
    n.norms[r] = norm;
    for (double& x : n.unit.row(r)) x /= norm;
  }
  return n;
}

}  // namespace

double contrastive_similarity(std::span<const double> z_i, std::span<const Vector> candidates,
                              double tau, std::size_t j) {
  if (!(tau > 0.0)) throw ArgumentError("contrastive_similarity: tau must be positive");
  if (j >= candidates.size()) throw ArgumentError("contrastive_similarity: index out of range");
  const double ni = std::max(l2_norm(z_i), 1e-12);
  Vector u(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k)
    u[k] = dot(z_i, candidates[k]) / (ni * std::max(l2_norm(candidates[k]), 1e-12) * tau);
  const double mx = *std::max_element(u.begin(), u.end());
  double sum = 0.0;
  for (double x : u) sum += std::exp(x - mx);
  return std::exp(u[j] - mx) / sum;
}

LossValue weighted_contrastive_loss(const Matrix& features, std::span<const std::size_t> anchors,
                                    const Matrix& weights, const ContrastiveOptions& opts) {
  if (!(opts.tau > 0.0)) throw ArgumentError("contrastive loss: tau must be positive");
  const std::size_t n = features.rows();
  if (weights.rows() != anchors.size() || weights.cols() != n)
    throw ShapeError("contrastive loss: weights must be anchors × pool");
  LossValue out;
  out.grad = Matrix(n, features.cols());
  if (anchors.empty()) return out;

  const Normalized z = normalize_rows(features);
  Matrix d_unit(n, features.cols());
  const double inv_a = 1.0 / static_cast<double>(anchors.size());
  Vector u(n);
  Vector l(n);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const std::size_t i = anchors[a];
    if (i >= n) throw ArgumentError("contrastive loss: anchor index out of range");
    auto in_pool = [&](std::size_t k) { return !(opts.exclude_anchor && k == i); };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (!in_pool(k)) continue;
      u[k] = dot(z.unit.row(i), z.unit.row(k)) / opts.tau;
      mx = std::max(mx, u[k]);
    }
    if (!std::isfinite(mx)) continue;  // empty pool
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (in_pool(k)) sum += std::exp(u[k] - mx);
    double s_wl = 0.0;
    double s_w = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (!in_pool(k)) continue;
      l[k] = std::exp(u[k] - mx) / sum;
      const double w = weights(a, k);
      s_wl += w * l[k];
      s_w += w;
      if (opts.log_variant) {
        if (w != 0.0) out.value -= inv_a * w * std::log(l[k]);
      } else {
        out.value -= inv_a * w * l[k];
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!in_pool(k)) continue;
      const double w = weights(a, k);
      const double g_u =
          inv_a * (opts.log_variant ? (l[k] * s_w - w) : l[k] * (s_wl - w)) / opts.tau;
      if (g_u == 0.0) continue;
      axpy(g_u, z.unit.row(k), d_unit.row(i));
      axpy(g_u, z.unit.row(i), d_unit.row(k));
    }
  }
  // Back through row normalisation: dz = (dẑ − ẑ(ẑ·dẑ)) / ‖z‖.
  for (std::size_t r = 0; r < n; ++r) {
    const double proj = dot(z.unit.row(r), d_unit.row(r));
    for (std::size_t c = 0; c < features.cols(); ++c)
      out.grad(r, c) = (d_unit(r, c) - z.unit(r, c) * proj) / z.norms[r];
  }
  return out;
}

LossValue source_contrastive_loss(const Matrix& features, std::span<const Domain> domains,
                                  std::span<const int> labels,
                                  std::span<const TargetPseudoLabel> pseudo, double lambda,
                                  const ContrastiveOptions& opts) {
  const std::size_t n = features.rows();
  if (domains.size() != n || labels.size() != n || pseudo.size() != n)
    throw ShapeError("source_contrastive_loss: per-row inputs differ in length");
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < n; ++i)
    if (domains[i] == Domain::source) anchors.push_back(i);
  if (anchors.empty()) throw ArgumentError("source_contrastive_loss: batch has no source sample");
  Matrix w(anchors.size(), n);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const int y_i = labels[anchors[a]];
    for (std::size_t j = 0; j < n; ++j)
      w(a, j) = domains[j] == Domain::source ? source_pair_weight(y_i, labels[j])
                                             : target_pair_weight(y_i, pseudo[j], lambda);
  }
  return weighted_contrastive_loss(features, anchors, w, opts);
}

}  // namespace uniam
