#include "uniam/attention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace uniam {

TokenSequence TokenSequence::from_flat(std::span<const double> flat, std::size_t d_model) {
  if (d_model == 0 || flat.size() % d_model != 0 || flat.size() < 2 * d_model)
    throw ShapeError("TokenSequence: input length " + std::to_string(flat.size()) +
                     " is not (N+1)·d_model with d_model=" + std::to_string(d_model));
  TokenSequence seq;
  seq.tokens = Matrix(flat.size() / d_model, d_model);
  std::copy(flat.begin(), flat.end(), seq.tokens.data().begin());
  return seq;
}

EncoderParams EncoderParams::zeros(const EncoderConfig& cfg) {
  EncoderParams p;
  p.config = cfg;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    p.w_q.emplace_back(cfg.d_model, cfg.d_k);
    p.w_k.emplace_back(cfg.d_model, cfg.d_k);
    p.w_v.emplace_back(cfg.d_model, cfg.d_v);
  }
  p.w_o = Matrix(cfg.heads * cfg.d_v, cfg.d_z);
  return p;
}

EncoderParams EncoderParams::random(const EncoderConfig& cfg, Rng& rng) {
  EncoderParams p = zeros(cfg);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const double s_out = 1.0 / std::sqrt(static_cast<double>(cfg.heads * cfg.d_v));
  for (auto& m : p.w_q)
    for (double& x : m.data()) x = rng.normal(0.0, s_in);
  for (auto& m : p.w_k)
    for (double& x : m.data()) x = rng.normal(0.0, s_in);
  for (auto& m : p.w_v)
    for (double& x : m.data()) x = rng.normal(0.0, s_in);
  for (double& x : p.w_o.data()) x = rng.normal(0.0, s_out);
  return p;
}

void EncoderParams::validate() const {
  const auto& c = config;
  if (c.heads == 0 || c.d_model == 0 || c.d_k == 0 || c.d_v == 0 || c.d_z == 0)
    throw ShapeError("EncoderParams: all dimensions must be positive");
  if (w_q.size() != c.heads || w_k.size() != c.heads || w_v.size() != c.heads)
    throw ShapeError("EncoderParams: per-head projection count mismatch");
  for (std::size_t h = 0; h < c.heads; ++h) {
    if (w_q[h].rows() != c.d_model || w_q[h].cols() != c.d_k || w_k[h].rows() != c.d_model ||
        w_k[h].cols() != c.d_k || w_v[h].rows() != c.d_model || w_v[h].cols() != c.d_v)
      throw ShapeError("EncoderParams: head " + std::to_string(h) + " projection shape mismatch");
  }
  if (w_o.rows() != c.heads * c.d_v || w_o.cols() != c.d_z)
    throw ShapeError("EncoderParams: output projection shape mismatch");
}

Matrix self_attention_scores(const Matrix& q, const Matrix& k, std::size_t d_k) {
  if (q.rows() != k.rows() || q.cols() != k.cols() || q.cols() != d_k || d_k == 0)
    throw ShapeError("self_attention_scores: Q and K must both be (N+1)×d_k");
  Matrix a = matmul_transposed(q, k);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (double& x : a.data()) x *= inv;
  return a;
}

Vector flatten_heads(std::span<const Matrix> per_head) {
  if (per_head.empty()) throw ShapeError("flatten_heads: no heads");
  const std::size_t r = per_head.front().rows();
  const std::size_t c = per_head.front().cols();
  Vector out;
  out.reserve(per_head.size() * r * c);
  for (const auto& m : per_head) {
    if (m.rows() != r || m.cols() != c) throw ShapeError("flatten_heads: inconsistent head shapes");
    out.insert(out.end(), m.data().begin(), m.data().end());
  }
  return out;
}

std::vector<Matrix> unflatten_heads(std::span<const double> flat, std::size_t heads,
                                    std::size_t side) {
  if (flat.size() != heads * side * side) throw ShapeError("unflatten_heads: length mismatch");
  std::vector<Matrix> out;
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix m(side, side);
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(h * side * side), side * side,
                m.data().begin());
    out.push_back(std::move(m));
  }
  return out;
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix p = scores;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : row) x /= sum;
  }
  return p;
}

AttentionOutput encoder_forward(const TokenSequence& seq, const EncoderParams& params,
                                EncoderCache* cache) {
  params.validate();
  const auto& cfg = params.config;
  const Matrix& x = seq.tokens;
  if (x.cols() != cfg.d_model || x.rows() < 2)
    throw ShapeError("encoder_forward: tokens must be (N+1)×d_model with N ≥ 1");

  AttentionOutput out;
  Vector concat_cls(cfg.heads * cfg.d_v, 0.0);
  std::vector<Matrix> probs_all;
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c = EncoderCache{};

  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Matrix q = matmul(x, params.w_q[h]);
    Matrix k = matmul(x, params.w_k[h]);
    Matrix v = matmul(x, params.w_v[h]);
    Matrix scores = self_attention_scores(q, k, cfg.d_k);
    Matrix probs = softmax_rows(scores);
    for (std::size_t j = 0; j < x.rows(); ++j)
      for (std::size_t e = 0; e < cfg.d_v; ++e) concat_cls[h * cfg.d_v + e] += probs(0, j) * v(j, e);
    out.per_head.push_back(scores);
    probs_all.push_back(probs);
    c.q.push_back(std::move(q));
    c.k.push_back(std::move(k));
    c.v.push_back(std::move(v));
  }
  out.flattened = cfg.post_softmax_attention ? flatten_heads(probs_all) : flatten_heads(out.per_head);
  const std::size_t side = x.rows();
  if (out.flattened.size() != cfg.heads * side * side)
    throw ShapeError("encoder_forward: attention length does not equal N_H·(N+1)²");
  out.features = matTvec(params.w_o, concat_cls);
  require_finite(out.flattened, "encoder_forward attention");
  require_finite(out.features, "encoder_forward features");
  c.probs = std::move(probs_all);
  c.concat_cls = std::move(concat_cls);
  return out;
}

EncoderParams encoder_backward(const TokenSequence& seq, const EncoderParams& params,
                               const EncoderCache& cache, std::span<const double> grad_features) {
  const auto& cfg = params.config;
  const Matrix& x = seq.tokens;
  if (grad_features.size() != cfg.d_z) throw ShapeError("encoder_backward: gradient length");
  EncoderParams g = EncoderParams::zeros(cfg);
  const std::size_t n = x.rows();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));

  for (std::size_t i = 0; i < g.w_o.rows(); ++i)
    for (std::size_t j = 0; j < cfg.d_z; ++j) g.w_o(i, j) = cache.concat_cls[i] * grad_features[j];
  const Vector d_concat = matvec(params.w_o, grad_features);

  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Matrix& q = cache.q[h];
    const Matrix& k = cache.k[h];
    const Matrix& v = cache.v[h];
    const Matrix& p = cache.probs[h];
    std::span<const double> d_out(d_concat.data() + h * cfg.d_v, cfg.d_v);

    // Only the class-token row of the head output reaches the features.
    Vector d_p(n);
    Matrix d_v(n, cfg.d_v);
    for (std::size_t j = 0; j < n; ++j) {
      d_p[j] = dot(d_out, v.row(j));
      for (std::size_t e = 0; e < cfg.d_v; ++e) d_v(j, e) = p(0, j) * d_out[e];
    }
    double weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) weighted += p(0, j) * d_p[j];
    Vector d_a(n);
    for (std::size_t j = 0; j < n; ++j) d_a[j] = p(0, j) * (d_p[j] - weighted);

    Vector d_q0(cfg.d_k, 0.0);
    Matrix d_k(n, cfg.d_k);
    for (std::size_t j = 0; j < n; ++j) {
      axpy(d_a[j] * inv_scale, k.row(j), d_q0);
      for (std::size_t e = 0; e < cfg.d_k; ++e) d_k(j, e) = d_a[j] * inv_scale * q(0, e);
    }
    for (std::size_t m = 0; m < cfg.d_model; ++m)
      for (std::size_t e = 0; e < cfg.d_k; ++e) g.w_q[h](m, e) = x(0, m) * d_q0[e];
    g.w_k[h] = transposed_matmul(x, d_k);
    g.w_v[h] = transposed_matmul(x, d_v);
  }
  return g;
}

Dictionary compute_prototypes(std::span<const Vector> vectors, std::span<const int> labels) {
  if (vectors.empty()) throw ArgumentError("compute_prototypes: no vectors");
  if (vectors.size() != labels.size())
    throw ArgumentError("compute_prototypes: vectors and labels differ in length");
  const std::size_t dim = vectors.front().size();
  std::map<int, std::pair<Vector, std::size_t>> sums;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim) throw ShapeError("compute_prototypes: vectors differ in length");
    auto& [sum, count] = sums.try_emplace(labels[i], Vector(dim, 0.0), 0).first->second;
    axpy(1.0, vectors[i], sum);
    ++count;
  }
  Dictionary d;
  d.atoms = Matrix(dim, sums.size());
  std::size_t col = 0;
  for (const auto& [label, entry] : sums) {
    const double inv = 1.0 / static_cast<double>(entry.second);
    for (std::size_t r = 0; r < dim; ++r) d.atoms(r, col) = entry.first[r] * inv;
    d.atom_labels.push_back(label);
    ++col;
  }
  return d;
}

}  // namespace uniam
