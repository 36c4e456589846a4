#pragma once

// Training loop for the joint objective
//   max_{G_d} min_{G_f,G_c}  L_cls + η₁·L_src + η₂·L_tgt − L_adv
// with per-epoch refresh of dictionaries, commonness scores, and target
// clusterings.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "uniam/cam.hpp"
#include "uniam/clustering.hpp"
#include "uniam/dataset.hpp"
#include "uniam/losses.hpp"
#include "uniam/model.hpp"

namespace uniam {

struct TrainConfig {
  double eta1 = 0.5;
  double eta2 = 0.5;
  double lambda = 0.3;
  double alpha = 0.85;
  double beta = 1.0;
  double rho = 0.1;
  double tau = 0.1;
  /// Target clusters; 0 picks (target classes + 2) from the scenario echo, or
  /// (source classes + 2) without one. Capped at the target count.
  int k = 0;
  int batch_size = 36;
  int epochs = 10;
  std::uint64_t seed = 0;
  WeightDirection weight_direction = WeightDirection::complement;
  ThresholdDirection threshold_direction = ThresholdDirection::high_is_common;
  int refresh_period = 1;
  int refine_rounds = 5;
  int kmeans_iterations = 100;

  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double schedule_a = 10.0;
  double schedule_b = 0.75;
  /// Gradient-reversal coefficient.
  double mu = 1.0;
  bool adversarial = true;

  bool contrastive_exclude_anchor = true;
  bool contrastive_log = false;

  bool raw_lasso = false;
  int lasso_max_iter = 2000;
  double lasso_tol = 1e-6;

  int feature_layers = 2;
  int feature_hidden = 64;
  /// 0 means "same as the dataset's feat_dim".
  int feature_dim = 0;
  int disc_hidden1 = 32;
  int disc_hidden2 = 32;
  bool post_softmax_attention = false;

  /// Worker cap for parallel scoring; 0 leaves the runtime default.
  int threads = 0;

  void validate() const;
  LassoOptions lasso() const { return {rho, lasso_max_iter, lasso_tol}; }
  ContrastiveOptions contrastive() const {
    return {tau, contrastive_exclude_anchor, contrastive_log};
  }
};

std::string config_to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are an ArgumentError.
TrainConfig config_from_json(const std::string& text);
std::uint64_t config_hash(const TrainConfig& c);

/// Source and target samples in dataset order plus the label-set echo.
struct TrainData {
  ProtocolSplit split;
  Manifest manifest;
  int num_source_classes = 0;

  static TrainData from(const Dataset& d);
};

ModelConfig model_config_for(const TrainConfig& cfg, const TrainData& data);
Model create_model(const TrainConfig& cfg, const TrainData& data);
std::size_t resolve_k(const TrainConfig& cfg, const TrainData& data);

/// Per-target CAM scoring against source prototypes.
struct TargetScoring {
  Dictionary attn_dictionary;  // normalised P_s
  Dictionary feat_dictionary;  // normalised Q_s
  std::vector<std::vector<double>> target_attn;
  std::vector<std::vector<double>> target_feat;
  std::vector<ResidualVector> attn_residuals;
  std::vector<ResidualVector> feat_residuals;
  std::vector<CommonnessScores> scores;
};

TargetScoring score_targets(const Model& model, const TrainData& data, const TrainConfig& cfg);

/// Everything the losses read during one refresh period. Immutable once
/// built.
struct EpochSnapshot {
  TargetScoring scoring;
  SourceClassWeights class_weights;
  Clustering attn_clusters;
  Clustering feat_clusters;
  ClusterCorrespondence correspondence;
  std::vector<TargetViewScores> target_view;
  Matrix soft_labels;  // n_target × K
};

EpochSnapshot refresh_snapshot(const Model& model, const TrainData& data, const TrainConfig& cfg);

/// Header: id,c_attn,c_feat,c_feat_mapped,o_attn,o_feat. Rows follow the
/// target order of `data`.
void write_cluster_report_csv(std::ostream& os, const TrainData& data, const EpochSnapshot& snapshot);

struct LossTerms {
  double cls = 0.0;
  double adv = 0.0;
  double src = 0.0;
  double tgt = 0.0;
  /// Feature/classifier player's objective: cls + η₁src + η₂tgt − μ·adv.
  double total = 0.0;
  std::size_t cls_correct = 0;
};

/// Evaluates the joint objective on one batch (indices into the source and
/// target lists). With `backward`, accumulates ∂total/∂θ for G_f and G_c and
/// ∂L_adv/∂θ for G_d (the discriminator descends L_adv, i.e. ascends the
/// joint objective) into the model's gradient buffers.
LossTerms batch_objective(Model& model, const TrainData& data, const EpochSnapshot& snapshot,
                          const TrainConfig& cfg, std::span<const std::size_t> source_rows,
                          std::span<const std::size_t> target_rows, bool backward,
                          bool update_running);

struct EpochMetrics {
  int epoch = 0;
  double cls = 0.0;
  double adv = 0.0;
  double src = 0.0;
  double tgt = 0.0;
  double lr = 0.0;
  double source_accuracy = 0.0;
};

std::int64_t steps_per_epoch(const TrainConfig& cfg, const TrainData& data);

EpochMetrics train_epoch(Model& model, OptimizerState& opt, const TrainData& data,
                         const EpochSnapshot& snapshot, const TrainConfig& cfg, int epoch);

struct FitOptions {
  /// Run directory for config.json, history.csv, checkpoint.json,
  /// model.json and clusters.csv. Empty disables persistence.
  std::filesystem::path run_dir;
  bool resume = false;
  /// Stop after this many epochs in this invocation (simulates an
  /// interruption); negative runs to completion.
  int stop_after = -1;
};

struct FitResult {
  Model model;
  OptimizerState optimizer;
  std::vector<EpochMetrics> history;
  int epochs_completed = 0;
};

FitResult fit(Model model, const TrainData& data, const TrainConfig& cfg,
              const FitOptions& options = {});

OptimizerState make_optimizer(const TrainConfig& cfg, const TrainData& data);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);

/// model.json: model config + all tensors + BatchNorm running statistics.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace uniam
