#pragma once

// Trainable components: feature extractor G_f (MLP or toy encoder), label
// classifier G_c (BatchNorm + linear), domain discriminator G_d (3-layer
// ReLU MLP + sigmoid). Forward/backward are explicit per component; the
// trainer composes them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uniam/attention.hpp"
#include "uniam/numeric.hpp"

namespace uniam {

struct Tensor {
  Matrix value;
  Matrix grad;
  Matrix momentum;

  Tensor() = default;
  explicit Tensor(Matrix v)
      : value(std::move(v)), grad(value.rows(), value.cols()), momentum(value.rows(), value.cols()) {}
  Tensor(std::size_t r, std::size_t c) : Tensor(Matrix(r, c)) {}
};

/// y = x W + b, x is batch × in.
struct Linear {
  Tensor weight;  // in × out
  Tensor bias;    // 1 × out

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& grad_out);
};

struct BatchNorm {
  Tensor gamma;  // 1 × d
  Tensor beta;   // 1 × d
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  struct Cache {
    Matrix normalized;
    Vector inv_std;
    bool training = false;
  };

  BatchNorm() = default;
  explicit BatchNorm(std::size_t d);

  /// Training mode normalises by batch statistics and, when
  /// `update_running` is set, folds them into the running estimates
  /// (unbiased variance). Evaluation mode uses the running estimates.
  Matrix forward(const Matrix& x, bool training, bool update_running, Cache* cache);
  Matrix backward(const Cache& cache, const Matrix& grad_out);
};

Matrix relu(const Matrix& x);
/// grad ⊙ 1[pre > 0]
Matrix relu_backward(const Matrix& pre, const Matrix& grad);
double sigmoid(double x);

/// Forward is identity; backward multiplies by −mu.
Vector gradient_reversal(std::span<const double> upstream_grad, double mu);
Matrix gradient_reversal(const Matrix& upstream_grad, double mu);

enum class FeatureKind { mlp, encoder };

struct ModelConfig {
  FeatureKind feature_kind = FeatureKind::mlp;
  std::size_t input_dim = 16;
  /// MLP depth: 1 (linear) or 2 (linear-ReLU-linear).
  int feature_layers = 2;
  std::size_t feature_hidden = 64;
  std::size_t d_z = 16;
  std::size_t num_classes = 2;
  std::size_t disc_hidden1 = 32;
  std::size_t disc_hidden2 = 32;
  EncoderConfig encoder;
};

struct FeatureCache {
  Matrix input;
  Matrix pre_hidden;
  Matrix hidden;
  std::vector<EncoderCache> encoder;
  std::vector<TokenSequence> tokens;
};

struct ClassifierCache {
  Matrix z;
  BatchNorm::Cache bn;
  Matrix normalized;
};

struct DiscriminatorCache {
  Matrix z;
  Matrix pre1, h1, pre2, h2;
  Vector raw_prob;
};

struct ForwardOutput {
  Matrix features;
  Matrix logits;
  Vector domain_prob;
  /// Flattened attention per row (encoder mode only).
  std::vector<Vector> attention;
};

class Model {
 public:
  Model() = default;
  static Model create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// G_f on a batch of inputs (rows). In encoder mode each row is the
  /// flattened token sequence and `attention` receives the per-row
  /// attention vectors.
  Matrix features(const Matrix& inputs, FeatureCache* cache = nullptr,
                  std::vector<Vector>* attention = nullptr) const;
  Matrix logits(const Matrix& z, bool training, bool update_running,
                ClassifierCache* cache = nullptr);
  Matrix logits_eval(const Matrix& z) const;
  /// Sigmoid output clamped to [1e-7, 1 − 1e-7].
  Vector domain_prob(const Matrix& z, DiscriminatorCache* cache = nullptr) const;

  /// Evaluation-mode forward of all three components.
  ForwardOutput forward(const Matrix& inputs) const;

  void backward_features(const FeatureCache& cache, const Matrix& grad_z);
  Matrix backward_classifier(const ClassifierCache& cache, const Matrix& grad_logits);
  Matrix backward_discriminator(const DiscriminatorCache& cache, std::span<const double> grad_prob);

  void zero_grad();

  /// Named parameter tensors in a fixed order. Prefixes: "f." feature
  /// extractor, "c." classifier, "d." discriminator.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

  BatchNorm& classifier_bn() { return c_bn_; }
  const BatchNorm& classifier_bn() const { return c_bn_; }
  Linear& classifier_head() { return c_fc_; }
  Linear& feature_layer(std::size_t i) { return f_layers_.at(i); }

 private:
  EncoderParams encoder_params() const;

  ModelConfig config_;
  std::vector<Linear> f_layers_;
  std::vector<Tensor> f_encoder_;  // w_q.., w_k.., w_v.., w_o in EncoderParams order
  BatchNorm c_bn_;
  Linear c_fc_;
  Linear d_fc1_, d_fc2_, d_fc3_;
};

struct OptimizerState {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Schedule lr = base·(1 + a·i/N)^(−b).
  double schedule_a = 10.0;
  double schedule_b = 0.75;
  std::int64_t step = 0;
  std::int64_t horizon = 1;
};

double lr_at(const OptimizerState& opt, std::int64_t i);

/// v ← m·v + g + wd·p; p ← p − lr(step)·v; step += 1.
void sgd_step(Model& model, OptimizerState& opt);
void sgd_step(std::span<Tensor* const> tensors, OptimizerState& opt);

}  // namespace uniam
