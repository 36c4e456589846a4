#include "uniam/experiment.hpp"

#include <cmath>

#include "uniam/errors.hpp"
#include "uniam/format.hpp"

namespace uniam {

std::vector<double> ScoredTargets::w_t() const {
  std::vector<double> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(s.w_t);
  return out;
}

std::vector<ScoreRow> ScoredTargets::rows(const TrainConfig& cfg, double beta) const {
  std::vector<ScoreRow> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i].id = ids[i];
    out[i].scores = scores[i];
    out[i].decision = decide_common(scores[i].w_t, beta, cfg.threshold_direction) ? predictions[i]
                                                                                   : kUnknownLabel;
  }
  return out;
}

ScoredTargets score_model(const Model& model, const TrainData& data, const TrainConfig& cfg) {
  TargetScoring t = score_targets(model, data, cfg);
  ScoredTargets s;
  for (const auto& smp : data.split.target) s.ids.push_back(smp.id);
  s.scores = std::move(t.scores);
  s.attn_residuals = std::move(t.attn_residuals);
  s.feat_residuals = std::move(t.feat_residuals);
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    s.predictions.push_back(
        predicted_class(s.scores[i], s.attn_residuals[i], s.feat_residuals[i], cfg.lambda));
  Matrix z(t.target_feat.size(), model.config().d_z);
  for (std::size_t i = 0; i < t.target_feat.size(); ++i)
    std::copy(t.target_feat[i].begin(), t.target_feat[i].end(), z.row(i).begin());
  s.logits = model.logits_eval(z);
  s.ground_truth = data.split.target_ground_truth;
  s.common_classes = data.split.common_classes;
  return s;
}

namespace {

bool high_is_common(const TrainConfig& cfg) {
  return cfg.threshold_direction == ThresholdDirection::high_is_common;
}

Matrix pick_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto from = m.row(idx[r]);
    std::copy(from.begin(), from.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> neg_entropy(const Matrix& logits) {
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) out[i] = -softmax_entropy(logits.row(i));
  return out;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace

double calibrate_beta(const ScoredTargets& s, std::span<const std::size_t> validation,
                      const TrainConfig& cfg) {
  if (validation.empty()) throw ArgumentError("calibrate_beta: empty validation slice");
  const auto w = pick(s.w_t(), validation);
  const auto pred = pick(s.predictions, validation);
  const auto gt = pick(s.ground_truth, validation);
  return best_threshold(w, pred, gt, s.common_classes, high_is_common(cfg)).threshold;
}

Evaluation evaluate_at(const ScoredTargets& s, std::span<const std::size_t> indices,
                       const TrainConfig& cfg, double beta) {
  Evaluation e;
  e.beta = beta;
  const auto w = pick(s.w_t(), indices);
  const auto pred = pick(s.predictions, indices);
  const auto gt = pick(s.ground_truth, indices);
  const auto decisions = threshold_decisions(w, pred, beta, high_is_common(cfg));
  // AUROC reads larger as more common; flip for the literal direction.
  std::vector<double> oriented = w;
  if (!high_is_common(cfg))
    for (double& x : oriented) x = -x;
  e.report = evaluate(decisions, gt, s.common_classes, oriented);

  const Matrix logits = pick_rows(s.logits, indices);
  const auto ne = neg_entropy(logits);
  const auto am = argmax_rows(logits);
  const ThresholdChoice b = best_threshold(ne, am, gt, s.common_classes, true);
  e.baseline_threshold = -b.threshold;
  e.baseline = evaluate(entropy_baseline(logits, e.baseline_threshold), gt, s.common_classes, ne);
  return e;
}

Evaluation calibrate_and_evaluate(const ScoredTargets& s, const TrainConfig& cfg) {
  const HoldoutSplit h = holdout_split(s.scores.size());
  return evaluate_at(s, h.test, cfg, calibrate_beta(s, h.validation, cfg));
}

PipelineResult run_pipeline(const Dataset& dataset, const TrainConfig& cfg) {
  const TrainData data = TrainData::from(dataset);
  PipelineResult r{fit(create_model(cfg, data), data, cfg), {}, {}};
  r.scored = score_model(r.fit.model, data, cfg);
  r.evaluation = calibrate_and_evaluate(r.scored, cfg);
  return r;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "beta") return SweepAxis::beta;
  if (s == "alpha") return SweepAxis::alpha;
  if (s == "n_target_private") return SweepAxis::n_target_private;
  if (s == "n_common") return SweepAxis::n_common;
  throw ArgumentError("unknown sweep axis '" + s + "' (beta, alpha, n_target_private, n_common)");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::beta: return "beta";
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::n_target_private: return "n_target_private";
    case SweepAxis::n_common: return "n_common";
  }
  return "beta";
}

bool is_threshold_axis(SweepAxis a) { return a == SweepAxis::beta; }

std::vector<double> parse_range(const std::string& text) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 3) throw ArgumentError("range must be lo:hi:step, got '" + text + "'");
  const double lo = parse_double(fields[0]);
  const double hi = parse_double(fields[1]);
  const double step = parse_double(fields[2]);
  if (!(step > 0.0)) throw ArgumentError("range step must be positive");
  if (hi < lo) throw ArgumentError("range: hi < lo");
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  std::vector<double> out;
  // Rounded to 12 decimals so 0.1 steps print as 0.6, not 0.6000000000000001.
  for (long i = 0; i <= n; ++i)
    out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
  return out;
}

std::vector<SweepRow> sweep_beta(const ScoredTargets& s, const TrainConfig& cfg,
                                 std::span<const double> grid) {
  const HoldoutSplit h = holdout_split(s.scores.size());
  std::vector<SweepRow> rows;
  for (double beta : grid) {
    const Evaluation e = evaluate_at(s, h.test, cfg, beta);
    rows.push_back({beta, e.report.h_score, e.report.common_accuracy, e.report.unknown_accuracy,
                    e.baseline.h_score});
  }
  return rows;
}

std::vector<SweepRow> sweep_retrain(const ScenarioSpec& spec, const TrainConfig& cfg,
                                    SweepAxis axis, std::span<const double> grid) {
  if (axis == SweepAxis::beta) throw ArgumentError("sweep_retrain: beta reuses a trained model");
  std::vector<SweepRow> rows;
  for (double v : grid) {
    ScenarioSpec sp = spec;
    TrainConfig c = cfg;
    switch (axis) {
      case SweepAxis::alpha: c.alpha = v; break;
      case SweepAxis::n_target_private: sp.n_target_private = static_cast<int>(std::lround(v)); break;
      case SweepAxis::n_common: sp.n_common = static_cast<int>(std::lround(v)); break;
      case SweepAxis::beta: break;
    }
    const PipelineResult r = run_pipeline(generate(sp), c);
    const Evaluation& e = r.evaluation;
    rows.push_back({v, e.report.h_score, e.report.common_accuracy, e.report.unknown_accuracy,
                    e.baseline.h_score});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepRow> rows) {
  os << to_string(axis) << ",h_score,common_accuracy,unknown_accuracy,baseline_h_score\n";
  for (const auto& r : rows)
    os << format_shortest(r.value) << ',' << format_double(r.h_score) << ','
       << format_double(r.common_accuracy) << ',' << format_double(r.unknown_accuracy) << ','
       << format_double(r.baseline_h_score) << '\n';
}

}  // namespace uniam
