#pragma once

// Toy single-block multi-head self-attention encoder. Produces the flattened
// pre-softmax attention scores of every head and a class-token feature
// vector, with a hand-written backward pass.

#include <span>
#include <vector>

#include "uniam/numeric.hpp"
#include "uniam/sparse_coding.hpp"

namespace uniam {

/// (N+1) × d_model token matrix; row 0 is the class token.
struct TokenSequence {
  Matrix tokens;

  std::size_t patches() const { return tokens.rows() == 0 ? 0 : tokens.rows() - 1; }

  /// Reshapes a flat input vector of length (N+1)·d_model.
  static TokenSequence from_flat(std::span<const double> flat, std::size_t d_model);
};

struct EncoderConfig {
  std::size_t patches = 3;
  std::size_t d_model = 16;
  std::size_t heads = 2;
  std::size_t d_k = 8;
  std::size_t d_v = 8;
  std::size_t d_z = 16;
  /// Extract attention after the row softmax instead of the raw scores.
  bool post_softmax_attention = false;

  std::size_t attention_dim() const { return heads * (patches + 1) * (patches + 1); }
  std::size_t input_dim() const { return (patches + 1) * d_model; }
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<Matrix> w_q;  // per head, d_model × d_k
  std::vector<Matrix> w_k;  // per head, d_model × d_k
  std::vector<Matrix> w_v;  // per head, d_model × d_v
  Matrix w_o;               // (heads·d_v) × d_z

  static EncoderParams zeros(const EncoderConfig& cfg);
  static EncoderParams random(const EncoderConfig& cfg, Rng& rng);
  void validate() const;

  /// Visits every parameter matrix in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    for (auto& m : w_q) f(m);
    for (auto& m : w_k) f(m);
    for (auto& m : w_v) f(m);
    f(w_o);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& m : w_q) f(m);
    for (const auto& m : w_k) f(m);
    for (const auto& m : w_v) f(m);
    f(w_o);
  }
};

struct AttentionOutput {
  std::vector<Matrix> per_head;  // pre-softmax scaled scores, (N+1)×(N+1)
  Vector flattened;              // head-major, row-major
  Vector features;               // class-token output, length d_z
};

/// Intermediates needed by the backward pass.
struct EncoderCache {
  std::vector<Matrix> q, k, v, probs;
  Vector concat_cls;  // class-token row of the concatenated head outputs
};

/// A = Q Kᵀ / √d_k, no softmax.
Matrix self_attention_scores(const Matrix& q, const Matrix& k, std::size_t d_k);

Vector flatten_heads(std::span<const Matrix> per_head);
std::vector<Matrix> unflatten_heads(std::span<const double> flat, std::size_t heads,
                                    std::size_t side);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& scores);

AttentionOutput encoder_forward(const TokenSequence& seq, const EncoderParams& params,
                                EncoderCache* cache = nullptr);

/// Gradient of a scalar loss w.r.t. every encoder parameter, given
/// dL/dfeatures. Only the feature path is differentiated; the extracted
/// attention vector is treated as a constant.
EncoderParams encoder_backward(const TokenSequence& seq, const EncoderParams& params,
                               const EncoderCache& cache, std::span<const double> grad_features);

/// One atom per distinct label (ascending), each the mean of that label's
/// vectors. Not normalised.
Dictionary compute_prototypes(std::span<const Vector> vectors, std::span<const int> labels);

}  // namespace uniam
