#include "uniam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "uniam/errors.hpp"
#include "uniam/format.hpp"

namespace uniam {

double h_score(double a, double b) {
  if (!(a >= 0.0 && a <= 1.0) || !(b >= 0.0 && b <= 1.0))
    throw ArgumentError("h_score: accuracies must lie in [0,1]");
  if (a + b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

double auroc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ArgumentError("auroc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::string report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json per_class = json::array();
  for (const auto& c : r.per_class)
    per_class.push_back({{"class_id", c.class_id},
                         {"total", c.total},
                         {"correct", c.correct},
                         {"accuracy", c.accuracy}});
  json confusion = json::array();
  for (const auto& c : r.confusion) {
    json cell{{"ground_truth", c.ground_truth}, {"count", c.count}};
    if (c.predicted == kUnknownLabel)
      cell["predicted"] = "unknown";
    else
      cell["predicted"] = c.predicted;
    confusion.push_back(cell);
  }
  const json j{{"common_accuracy", r.common_accuracy},
               {"unknown_accuracy", r.unknown_accuracy},
               {"h_score", r.h_score},
               {"auroc", r.auroc},
               {"auroc_defined", r.auroc_defined},
               {"n_common", r.n_common},
               {"n_private", r.n_private},
               {"per_class", per_class},
               {"confusion", confusion}};
  return j.dump(2);
}

EvalReport evaluate(std::span<const int> decisions, std::span<const int> ground_truth,
                    std::span<const int> common_classes, std::span<const double> scores) {
  if (decisions.size() != ground_truth.size())
    throw ArgumentError("evaluate: decisions and ground truth differ in length");
  if (!scores.empty() && scores.size() != decisions.size())
    throw ArgumentError("evaluate: scores and decisions differ in length");
  const std::set<int> common(common_classes.begin(), common_classes.end());
  EvalReport r;
  std::size_t common_hits = 0;
  std::size_t private_hits = 0;
  std::map<int, ClassAccuracy> per_class;
  std::map<std::pair<int, int>, std::size_t> confusion;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const int gt = ground_truth[i];
    const bool is_common = common.count(gt) > 0;
    const bool hit = is_common ? decisions[i] == gt : decisions[i] == kUnknownLabel;
    auto& pc = per_class[gt];
    pc.class_id = gt;
    ++pc.total;
    if (hit) ++pc.correct;
    if (is_common) {
      ++r.n_common;
      if (hit) ++common_hits;
    } else {
      ++r.n_private;
      if (hit) ++private_hits;
    }
    ++confusion[{gt, decisions[i]}];
  }
  r.common_accuracy = r.n_common ? static_cast<double>(common_hits) / static_cast<double>(r.n_common) : 0.0;
  r.unknown_accuracy =
      r.n_private ? static_cast<double>(private_hits) / static_cast<double>(r.n_private) : 1.0;
  r.h_score = h_score(r.common_accuracy, r.unknown_accuracy);
  for (auto& [id, pc] : per_class) {
    pc.accuracy = static_cast<double>(pc.correct) / static_cast<double>(pc.total);
    r.per_class.push_back(pc);
  }
  for (const auto& [key, count] : confusion) r.confusion.push_back({key.first, key.second, count});
  if (!scores.empty()) {
    std::vector<bool> pos(ground_truth.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = common.count(ground_truth[i]) > 0;
    r.auroc = auroc(scores, pos);
    r.auroc_defined = r.n_common > 0 && r.n_private > 0;
  }
  return r;
}

double softmax_entropy(std::span<const double> logits) {
  if (logits.empty()) return 0.0;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  const double log_sum = std::log(sum);
  double h = 0.0;
  for (double x : logits) {
    const double lp = x - mx - log_sum;
    h -= std::exp(lp) * lp;
  }
  return h;
}

std::vector<int> entropy_baseline(const Matrix& logits, double threshold) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    if (softmax_entropy(row) > threshold) {
      out[i] = kUnknownLabel;
    } else {
      out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

std::vector<int> threshold_decisions(std::span<const double> scores,
                                     std::span<const int> predictions, double threshold,
                                     bool high_is_common) {
  if (scores.size() != predictions.size())
    throw ArgumentError("threshold_decisions: length mismatch");
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool accept = high_is_common ? scores[i] >= threshold : scores[i] < threshold;
    out[i] = accept ? predictions[i] : kUnknownLabel;
  }
  return out;
}

ThresholdChoice best_threshold(std::span<const double> scores, std::span<const int> predictions,
                               std::span<const int> ground_truth,
                               std::span<const int> common_classes, bool high_is_common) {
  if (scores.empty()) throw ArgumentError("best_threshold: no scores");
  if (ground_truth.size() != scores.size())
    throw ArgumentError("best_threshold: length mismatch");
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> candidates;
  const double pad = std::max(1.0, s.back() - s.front());
  candidates.push_back(s.front() - pad);
  for (std::size_t i = 0; i + 1 < s.size(); ++i) candidates.push_back(0.5 * (s[i] + s[i + 1]));
  candidates.push_back(s.back() + pad);

  ThresholdChoice best{candidates.front(), -1.0};
  for (double t : candidates) {
    const auto d = threshold_decisions(scores, predictions, t, high_is_common);
    const double h = evaluate(d, ground_truth, common_classes).h_score;
    if (h > best.h_score) best = {t, h};
  }
  return best;
}

HoldoutSplit holdout_split(std::size_t n, std::size_t period) {
  if (period < 2) throw ArgumentError("holdout_split: period must be >= 2");
  HoldoutSplit h;
  for (std::size_t i = 0; i < n; ++i) (i % period == 0 ? h.validation : h.test).push_back(i);
  return h;
}

std::vector<HistogramRow> histogram_export(std::span<const ScoreRow> rows,
                                           const std::vector<bool>& is_common, int bins) {
  if (rows.empty()) throw DataError("histogram: no score rows");
  if (bins < 1) throw ArgumentError("histogram: bins must be >= 1");
  if (is_common.size() != rows.size()) throw ArgumentError("histogram: length mismatch");
  const std::pair<const char*, double CommonnessScores::*> columns[] = {
      {"w_attn", &CommonnessScores::w_attn},
      {"w_feat", &CommonnessScores::w_feat},
      {"w_t", &CommonnessScores::w_t}};
  std::vector<HistogramRow> out;
  const auto nb = static_cast<std::size_t>(bins);
  for (const auto& [name, member] : columns) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : rows) {
      const double v = r.scores.*member;
      if (!std::isfinite(v)) throw DataError(std::string("histogram: non-finite ") + name + " for " + r.id);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<HistogramRow> col(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      col[b].score = name;
      col[b].bin_center = width > 0.0 ? lo + (static_cast<double>(b) + 0.5) * width : lo;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = rows[i].scores.*member;
      std::size_t b = 0;
      if (width > 0.0) b = std::min(nb - 1, static_cast<std::size_t>((v - lo) / width));
      (is_common[i] ? col[b].count_common : col[b].count_private) += 1;
    }
    out.insert(out.end(), col.begin(), col.end());
  }
  return out;
}

void write_histogram_csv(std::ostream& os, std::span<const HistogramRow> rows) {
  os << "score,bin_center,count_common,count_private\n";
  for (const auto& r : rows)
    os << r.score << ',' << format_double(r.bin_center) << ',' << r.count_common << ','
       << r.count_private << '\n';
}

}  // namespace uniam
