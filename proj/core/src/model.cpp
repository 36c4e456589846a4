#include "uniam/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace uniam {

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = matmul(x, weight.value);
  for (std::size_t r = 0; r < y.rows(); ++r) axpy(1.0, bias.value.row(0), y.row(r));
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_out) {
  const Matrix dw = transposed_matmul(x, grad_out);
  axpy(1.0, dw.data(), weight.grad.data());
  for (std::size_t r = 0; r < grad_out.rows(); ++r) axpy(1.0, grad_out.row(r), bias.grad.row(0));
  return matmul_transposed(grad_out, weight.value);
}

BatchNorm::BatchNorm(std::size_t d)
    : gamma(Matrix(1, d, 1.0)), beta(1, d), running_mean(d, 0.0), running_var(d, 1.0) {}

Matrix BatchNorm::forward(const Matrix& x, bool training, bool update_running, Cache* cache) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (d != running_mean.size()) throw ShapeError("BatchNorm: feature width mismatch");
  Vector mean(d, 0.0);
  Vector var(d, 0.0);
  if (training) {
    if (n == 0) throw ArgumentError("BatchNorm: empty training batch");
    for (std::size_t r = 0; r < n; ++r) axpy(1.0, x.row(r), mean);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double dev = x(r, c) - mean[c];
        var[c] += dev * dev;
      }
    for (double& v : var) v /= static_cast<double>(n);
    if (update_running) {
      const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      for (std::size_t c = 0; c < d; ++c) {
        running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
        running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * unbias;
      }
    }
  } else {
    mean = running_mean;
    var = running_var;
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  c.training = training;
  c.inv_std.resize(d);
  for (std::size_t j = 0; j < d; ++j) c.inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  c.normalized = Matrix(n, d);
  Matrix y(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double xn = (x(r, j) - mean[j]) * c.inv_std[j];
      c.normalized(r, j) = xn;
      y(r, j) = gamma.value(0, j) * xn + beta.value(0, j);
    }
  return y;
}

Matrix BatchNorm::backward(const Cache& cache, const Matrix& grad_out) {
  const std::size_t n = grad_out.rows();
  const std::size_t d = grad_out.cols();
  Matrix dx(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double g = grad_out(r, j);
      gamma.grad(0, j) += g * cache.normalized(r, j);
      beta.grad(0, j) += g;
      const double gx = g * gamma.value(0, j);
      sum_g += gx;
      sum_gx += gx * cache.normalized(r, j);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const double gx = grad_out(r, j) * gamma.value(0, j);
      if (cache.training) {
        dx(r, j) = cache.inv_std[j] / static_cast<double>(n) *
                   (static_cast<double>(n) * gx - sum_g - cache.normalized(r, j) * sum_gx);
      } else {
        dx(r, j) = gx * cache.inv_std[j];
      }
    }
  }
  return dx;
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = std::max(0.0, v);
  return y;
}

Matrix relu_backward(const Matrix& pre, const Matrix& grad) {
  Matrix g = grad;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(pre.data()[i] > 0.0)) g.data()[i] = 0.0;
  return g;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector gradient_reversal(std::span<const double> upstream_grad, double mu) {
  return scaled(upstream_grad, -mu);
}

Matrix gradient_reversal(const Matrix& upstream_grad, double mu) {
  Matrix g = upstream_grad;
  for (double& v : g.data()) v *= -mu;
  return g;
}

namespace {

void init_normal(Matrix& m, Rng& rng, double sigma) {
  for (double& v : m.data()) v = rng.normal(0.0, sigma);
}

double he(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

}  // namespace

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
  if (config.d_z == 0 || config.num_classes == 0 || config.disc_hidden1 == 0 ||
      config.disc_hidden2 == 0)
    throw ArgumentError("ModelConfig: dimensions must be positive");
  Model m;
  m.config_ = config;
  Rng rng(seed, 0x4D4F44);
  if (config.feature_kind == FeatureKind::mlp) {
    if (config.input_dim == 0) throw ArgumentError("ModelConfig: input_dim must be positive");
    if (config.feature_layers == 1) {
      m.f_layers_.emplace_back(config.input_dim, config.d_z);
      init_normal(m.f_layers_[0].weight.value, rng, 1.0 / std::sqrt(static_cast<double>(config.input_dim)));
    } else if (config.feature_layers == 2) {
      m.f_layers_.emplace_back(config.input_dim, config.feature_hidden);
      m.f_layers_.emplace_back(config.feature_hidden, config.d_z);
      init_normal(m.f_layers_[0].weight.value, rng, he(config.input_dim));
      init_normal(m.f_layers_[1].weight.value, rng,
                  1.0 / std::sqrt(static_cast<double>(config.feature_hidden)));
    } else {
      throw ArgumentError("ModelConfig: feature_layers must be 1 or 2");
    }
  } else {
    EncoderConfig ec = config.encoder;
    ec.d_z = config.d_z;
    m.config_.encoder = ec;
    m.config_.input_dim = ec.input_dim();
    EncoderParams p = EncoderParams::random(ec, rng);
    p.for_each([&](const Matrix& w) { m.f_encoder_.emplace_back(w); });
  }
  m.c_bn_ = BatchNorm(config.d_z);
  m.c_fc_ = Linear(config.d_z, config.num_classes);
  init_normal(m.c_fc_.weight.value, rng, 1.0 / std::sqrt(static_cast<double>(config.d_z)));
  m.d_fc1_ = Linear(config.d_z, config.disc_hidden1);
  m.d_fc2_ = Linear(config.disc_hidden1, config.disc_hidden2);
  m.d_fc3_ = Linear(config.disc_hidden2, 1);
  init_normal(m.d_fc1_.weight.value, rng, he(config.d_z));
  init_normal(m.d_fc2_.weight.value, rng, he(config.disc_hidden1));
  init_normal(m.d_fc3_.weight.value, rng, 1.0 / std::sqrt(static_cast<double>(config.disc_hidden2)));
  return m;
}

EncoderParams Model::encoder_params() const {
  EncoderParams p = EncoderParams::zeros(config_.encoder);
  std::size_t i = 0;
  p.for_each([&](Matrix& w) { w = f_encoder_.at(i++).value; });
  return p;
}

Matrix Model::features(const Matrix& inputs, FeatureCache* cache,
                       std::vector<Vector>* attention) const {
  if (inputs.cols() != config_.input_dim)
    throw ShapeError("G_f: input width " + std::to_string(inputs.cols()) + ", expected " +
                     std::to_string(config_.input_dim));
  Matrix z;
  if (config_.feature_kind == FeatureKind::mlp) {
    if (f_layers_.size() == 1) {
      z = f_layers_[0].forward(inputs);
      if (cache) cache->input = inputs;
    } else {
      Matrix pre = f_layers_[0].forward(inputs);
      Matrix hidden = relu(pre);
      z = f_layers_[1].forward(hidden);
      if (cache) {
        cache->input = inputs;
        cache->pre_hidden = std::move(pre);
        cache->hidden = std::move(hidden);
      }
    }
  } else {
    const EncoderParams p = encoder_params();
    z = Matrix(inputs.rows(), config_.d_z);
    if (cache) {
      cache->encoder.assign(inputs.rows(), EncoderCache{});
      cache->tokens.clear();
    }
    if (attention) attention->assign(inputs.rows(), Vector{});
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
      TokenSequence seq = TokenSequence::from_flat(inputs.row(r), config_.encoder.d_model);
      AttentionOutput out = encoder_forward(seq, p, cache ? &cache->encoder[r] : nullptr);
      std::copy(out.features.begin(), out.features.end(), z.row(r).begin());
      if (attention) (*attention)[r] = std::move(out.flattened);
      if (cache) cache->tokens.push_back(std::move(seq));
    }
  }
  require_finite(z.data(), "G_f activations");
  return z;
}

Matrix Model::logits(const Matrix& z, bool training, bool update_running, ClassifierCache* cache) {
  ClassifierCache local;
  ClassifierCache& c = cache ? *cache : local;
  c.z = z;
  c.normalized = c_bn_.forward(z, training, update_running, &c.bn);
  Matrix out = c_fc_.forward(c.normalized);
  require_finite(out.data(), "G_c activations");
  return out;
}

Matrix Model::logits_eval(const Matrix& z) const {
  BatchNorm bn = c_bn_;
  return c_fc_.forward(bn.forward(z, false, false, nullptr));
}

Vector Model::domain_prob(const Matrix& z, DiscriminatorCache* cache) const {
  DiscriminatorCache local;
  DiscriminatorCache& c = cache ? *cache : local;
  c.z = z;
  c.pre1 = d_fc1_.forward(z);
  c.h1 = relu(c.pre1);
  c.pre2 = d_fc2_.forward(c.h1);
  c.h2 = relu(c.pre2);
  const Matrix out = d_fc3_.forward(c.h2);
  require_finite(out.data(), "G_d activations");
  Vector p(z.rows());
  c.raw_prob.resize(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    c.raw_prob[r] = sigmoid(out(r, 0));
    p[r] = std::clamp(c.raw_prob[r], 1e-7, 1.0 - 1e-7);
  }
  return p;
}

ForwardOutput Model::forward(const Matrix& inputs) const {
  ForwardOutput out;
  out.features = features(inputs, nullptr,
                          config_.feature_kind == FeatureKind::encoder ? &out.attention : nullptr);
  out.logits = logits_eval(out.features);
  out.domain_prob = domain_prob(out.features);
  return out;
}

void Model::backward_features(const FeatureCache& cache, const Matrix& grad_z) {
  if (config_.feature_kind == FeatureKind::mlp) {
    if (f_layers_.size() == 1) {
      f_layers_[0].backward(cache.input, grad_z);
    } else {
      const Matrix d_hidden = f_layers_[1].backward(cache.hidden, grad_z);
      f_layers_[0].backward(cache.input, relu_backward(cache.pre_hidden, d_hidden));
    }
    return;
  }
  const EncoderParams p = encoder_params();
  for (std::size_t r = 0; r < grad_z.rows(); ++r) {
    const EncoderParams g = encoder_backward(cache.tokens[r], p, cache.encoder[r], grad_z.row(r));
    std::size_t i = 0;
    g.for_each([&](const Matrix& m) { axpy(1.0, m.data(), f_encoder_.at(i++).grad.data()); });
  }
}

Matrix Model::backward_classifier(const ClassifierCache& cache, const Matrix& grad_logits) {
  const Matrix d_norm = c_fc_.backward(cache.normalized, grad_logits);
  return c_bn_.backward(cache.bn, d_norm);
}

Matrix Model::backward_discriminator(const DiscriminatorCache& cache,
                                     std::span<const double> grad_prob) {
  const std::size_t n = cache.z.rows();
  if (grad_prob.size() != n) throw ShapeError("backward_discriminator: gradient length");
  Matrix d_out(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    const double p = cache.raw_prob[r];
    // Clamped outputs pass no gradient.
    d_out(r, 0) = (p < 1e-7 || p > 1.0 - 1e-7) ? 0.0 : grad_prob[r] * p * (1.0 - p);
  }
  Matrix d_h2 = d_fc3_.backward(cache.h2, d_out);
  Matrix d_h1 = d_fc2_.backward(cache.h1, relu_backward(cache.pre2, d_h2));
  return d_fc1_.backward(cache.z, relu_backward(cache.pre1, d_h1));
}

void Model::zero_grad() {
  for (auto& [name, t] : named_tensors()) t->grad.fill(0.0);
}

std::vector<std::pair<std::string, Tensor*>> Model::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < f_layers_.size(); ++i) {
    out.emplace_back("f.layer" + std::to_string(i) + ".weight", &f_layers_[i].weight);
    out.emplace_back("f.layer" + std::to_string(i) + ".bias", &f_layers_[i].bias);
  }
  for (std::size_t i = 0; i < f_encoder_.size(); ++i)
    out.emplace_back("f.encoder" + std::to_string(i), &f_encoder_[i]);
  out.emplace_back("c.bn.gamma", &c_bn_.gamma);
  out.emplace_back("c.bn.beta", &c_bn_.beta);
  out.emplace_back("c.fc.weight", &c_fc_.weight);
  out.emplace_back("c.fc.bias", &c_fc_.bias);
  out.emplace_back("d.fc1.weight", &d_fc1_.weight);
  out.emplace_back("d.fc1.bias", &d_fc1_.bias);
  out.emplace_back("d.fc2.weight", &d_fc2_.weight);
  out.emplace_back("d.fc2.bias", &d_fc2_.bias);
  out.emplace_back("d.fc3.weight", &d_fc3_.weight);
  out.emplace_back("d.fc3.bias", &d_fc3_.bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_tensors() const {
  auto mut = const_cast<Model*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

double lr_at(const OptimizerState& opt, std::int64_t i) {
  const double horizon = static_cast<double>(std::max<std::int64_t>(opt.horizon, 1));
  return opt.base_lr *
         std::pow(1.0 + opt.schedule_a * static_cast<double>(i) / horizon, -opt.schedule_b);
}

void sgd_step(std::span<Tensor* const> tensors, OptimizerState& opt) {
  const double lr = lr_at(opt, opt.step);
  for (Tensor* t : tensors) {
    auto& p = t->value.data();
    auto& g = t->grad.data();
    auto& v = t->momentum.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = opt.momentum * v[i] + g[i] + opt.weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  }
  ++opt.step;
}

void sgd_step(Model& model, OptimizerState& opt) {
  std::vector<Tensor*> ts;
  for (auto& [name, t] : model.named_tensors()) ts.push_back(t);
  sgd_step(ts, opt);
}

}  // namespace uniam
