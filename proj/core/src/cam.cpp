#include "uniam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "uniam/format.hpp"

namespace uniam {

WeightDirection parse_weight_direction(const std::string& s) {
  if (s == "literal") return WeightDirection::literal;
  if (s == "complement") return WeightDirection::complement;
  throw ArgumentError("unknown weight direction '" + s + "' (expected literal|complement)");
}

ThresholdDirection parse_threshold_direction(const std::string& s) {
  if (s == "high_is_common") return ThresholdDirection::high_is_common;
  if (s == "literal") return ThresholdDirection::literal;
  throw ArgumentError("unknown threshold direction '" + s + "' (expected high_is_common|literal)");
}

std::string to_string(WeightDirection d) {
  return d == WeightDirection::literal ? "literal" : "complement";
}

std::string to_string(ThresholdDirection d) {
  return d == ThresholdDirection::literal ? "literal" : "high_is_common";
}

DegreeScore commonness_degree(const ResidualVector& r) {
  const std::size_t n = r.values.size();
  if (n != r.class_ids.size()) throw ShapeError("residual vector: values and ids differ in length");
  if (n < 2) throw ArgumentError("commonness degree needs at least two classes");
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (r.values[i] < r.values[best] ||
        (r.values[i] == r.values[best] && r.class_ids[i] < r.class_ids[best]))
      best = i;
  }
  double rest = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (i != best) rest += r.values[i];
  const double non_match = rest / static_cast<double>(n - 1);
  return {std::max(0.0, non_match - r.values[best]), r.class_ids[best]};
}

double fuse_transferability(double w_attn, double w_feat, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda must lie in [0,1]");
  return lambda * w_attn + (1.0 - lambda) * w_feat;
}

CommonnessScores commonness_scores(const ResidualVector& attn, const ResidualVector& feat,
                                   double lambda) {
  const DegreeScore a = acd(attn);
  const DegreeScore f = fcd(feat);
  CommonnessScores s;
  s.w_attn = a.score;
  s.w_feat = f.score;
  s.w_t = fuse_transferability(a.score, f.score, lambda);
  s.pseudo_label_attn = a.label;
  s.pseudo_label_feat = f.label;
  return s;
}

double SourceClassWeights::weight_for(int class_id) const {
  const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end() || *it != class_id)
    throw ArgumentError("no source class weight for class " + std::to_string(class_id));
  return weights[static_cast<std::size_t>(it - class_ids.begin())];
}

namespace {

Vector summed(std::span<const ResidualVector> rs, const std::vector<int>& ids) {
  Vector sum(ids.size(), 0.0);
  for (const auto& r : rs) {
    if (r.class_ids != ids) throw ArgumentError("source_class_weights: inconsistent class axis");
    axpy(1.0, r.values, sum);
  }
  return sum;
}

}  // namespace

SourceClassWeights source_class_weights(std::span<const ResidualVector> attn_residuals,
                                        std::span<const ResidualVector> feat_residuals,
                                        double lambda, WeightDirection direction) {
  if (attn_residuals.empty() || feat_residuals.empty())
    throw ArgumentError("source_class_weights: empty target set");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda must lie in [0,1]");
  const std::vector<int>& ids = attn_residuals.front().class_ids;
  if (feat_residuals.front().class_ids != ids)
    throw ArgumentError("source_class_weights: attention and feature class axes differ");
  const Vector sa = minmax_normalize(summed(attn_residuals, ids));
  const Vector sf = minmax_normalize(summed(feat_residuals, ids));

  SourceClassWeights w;
  w.class_ids = ids;
  w.direction = direction;
  w.weights.resize(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const double a = direction == WeightDirection::literal ? sa[j] : 1.0 - sa[j];
    const double f = direction == WeightDirection::literal ? sf[j] : 1.0 - sf[j];
    w.weights[j] = std::clamp(lambda * a + (1.0 - lambda) * f, 0.0, 1.0);
  }
  return w;
}

bool decide_common(double w_t, double beta, ThresholdDirection direction) {
  return direction == ThresholdDirection::high_is_common ? w_t >= beta : w_t < beta;
}

namespace {

double residual_of(const ResidualVector& r, int class_id) {
  for (std::size_t i = 0; i < r.class_ids.size(); ++i)
    if (r.class_ids[i] == class_id) return r.values[i];
  throw ArgumentError("class " + std::to_string(class_id) + " missing from residual vector");
}

}  // namespace

int predicted_class(const CommonnessScores& s, const ResidualVector& attn,
                    const ResidualVector& feat, double lambda) {
  if (s.pseudo_label_attn == s.pseudo_label_feat) return s.pseudo_label_attn;
  auto fused = [&](int k) {
    return lambda * residual_of(attn, k) + (1.0 - lambda) * residual_of(feat, k);
  };
  const double ra = fused(s.pseudo_label_attn);
  const double rf = fused(s.pseudo_label_feat);
  if (rf < ra) return s.pseudo_label_feat;
  return s.pseudo_label_attn;
}

int decide(const CommonnessScores& s, const ResidualVector& attn, const ResidualVector& feat,
           double lambda, double beta, ThresholdDirection direction) {
  if (!decide_common(s.w_t, beta, direction)) return kUnknownLabel;
  return predicted_class(s, attn, feat, lambda);
}

TargetViewScores target_view_scores(const ResidualVector& attn_r_tt,
                                    const ResidualVector& feat_r_tt) {
  const DegreeScore a = commonness_degree(attn_r_tt);
  const DegreeScore f = commonness_degree(feat_r_tt);
  return {a.score, f.score, a.label, f.label};
}

void write_scores_csv(std::ostream& os, std::span<const ScoreRow> rows) {
  os << "id,w_attn,w_feat,w_t,pseudo_label_attn,pseudo_label_feat,decision\n";
  for (const auto& r : rows) {
    os << r.id << ',' << format_double(r.scores.w_attn) << ',' << format_double(r.scores.w_feat)
       << ',' << format_double(r.scores.w_t) << ',' << r.scores.pseudo_label_attn << ','
       << r.scores.pseudo_label_feat << ',';
    if (r.decision == kUnknownLabel)
      os << "unknown";
    else
      os << r.decision;
    os << '\n';
  }
}

std::vector<ScoreRow> read_scores_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("scores CSV: empty input");
  if (line != "id,w_attn,w_feat,w_t,pseudo_label_attn,pseudo_label_feat,decision")
    throw DataError("scores CSV line 1: unexpected header");
  std::vector<ScoreRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 7)
      throw DataError("scores CSV line " + std::to_string(line_no) + ": expected 7 fields, got " +
                      std::to_string(fields.size()));
    try {
      ScoreRow r;
      r.id = fields[0];
      r.scores.w_attn = parse_double(fields[1]);
      r.scores.w_feat = parse_double(fields[2]);
      r.scores.w_t = parse_double(fields[3]);
      r.scores.pseudo_label_attn = parse_int(fields[4]);
      r.scores.pseudo_label_feat = parse_int(fields[5]);
      r.decision = fields[6] == "unknown" ? kUnknownLabel : parse_int(fields[6]);
      rows.push_back(std::move(r));
    } catch (const ArgumentError& e) {
      throw DataError("scores CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace uniam
