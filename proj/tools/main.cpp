#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "uniam/dataset.hpp"
#include "uniam/errors.hpp"
#include "uniam/eval.hpp"
#include "uniam/experiment.hpp"
#include "uniam/format.hpp"
#include "uniam/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uniam;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

json parse_json_file(const fs::path& p) {
  try {
    return json::parse(slurp(p));
  } catch (const json::exception& e) {
    throw ArgumentError(p.string() + ": " + e.what());
  }
}

// Leftover "--a.b value" / "--a.b=value" tokens become JSON overrides.
json apply_overrides(json base, const std::vector<std::string>& extras) {
  if (base.is_null()) base = json::object();
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() < 3)
      throw ArgumentError("unexpected argument '" + tok + "'");
    std::string key = tok.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ArgumentError("override --" + key + " needs a value");
      value = extras[++i];
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    std::string pointer = "/" + key;
    for (char& c : pointer)
      if (c == '.') c = '/';
    base[json::json_pointer(pointer)] = parsed;
  }
  return base;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CAM_UNIDA_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  const int v = parse_int(s);
  if (v < 0) throw ArgumentError("CAM_UNIDA_SEED must be non-negative");
  return static_cast<std::uint64_t>(v);
}

// Config precedence: file < CAM_UNIDA_SEED (seed only) < dotted overrides < --seed.
TrainConfig resolve_config(const std::string& config_path, const std::vector<std::string>& extras,
                           std::optional<std::uint64_t> seed_flag) {
  json j = config_path.empty() ? json::object() : parse_json_file(config_path);
  if (!j.is_object()) throw ArgumentError("config must be a JSON object");
  if (!j.contains("seed"))
    if (auto s = env_seed()) j["seed"] = *s;
  j = apply_overrides(j, extras);
  if (seed_flag) j["seed"] = *seed_flag;
  return config_from_json(j.dump());
}

void set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

std::map<std::string, int> ground_truth_by_id(const Dataset& d) {
  std::map<std::string, int> out;
  for (const auto& s : d.samples)
    if (s.domain == Domain::target) out[s.id] = s.ground_truth;
  return out;
}

std::vector<ScoreRow> read_scores(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return read_scores_csv(in);
}

std::vector<int> lookup_truth(const std::vector<ScoreRow>& rows, const Dataset& d) {
  const auto truth = ground_truth_by_id(d);
  std::vector<int> out;
  for (const auto& r : rows) {
    const auto it = truth.find(r.id);
    if (it == truth.end()) throw DataError("scores: id '" + r.id + "' is not a target sample");
    out.push_back(it->second);
  }
  return out;
}

struct Options {
  // gen
  std::string spec_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  // train / score / sweep
  std::string data;
  std::string config;
  std::string run;
  bool resume = false;
  int stop_after = -1;
  int threads = 0;
  std::string beta = "config";
  std::string direction;
  // eval / hist
  std::string scores;
  std::string split = "all";
  int bins = 20;
  // sweep
  std::string axis;
  std::string range;
  bool relative = false;
};

int cmd_gen(const Options& o) {
  ScenarioSpec spec = load_scenario(o.spec_path);
  if (o.seed) spec.seed = *o.seed;
  else if (auto s = env_seed(); s && !parse_json_file(o.spec_path).contains("seed")) spec.seed = *s;
  const Dataset d = generate(spec);
  save(d, o.out);
  const Manifest& m = d.manifest;
  std::cout << "wrote " << o.out << ": " << m.n_source << " source, " << m.n_target
            << " target samples; " << m.common_classes.size() << " common, "
            << m.source_private_classes.size() << " source-private, "
            << m.target_private_classes.size() << " target-private classes; feat_dim "
            << m.feat_dim << ", attn_dim " << m.attn_dim << "\n";
  return kOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& extras) {
  TrainConfig cfg = resolve_config(o.config, extras, o.seed);
  if (o.threads > 0) cfg.threads = o.threads;
  set_threads(cfg.threads);
  const Dataset d = load(o.data);
  const TrainData data = TrainData::from(d);
  FitOptions fo;
  fo.run_dir = o.out;
  fo.resume = o.resume;
  fo.stop_after = o.stop_after;
  const FitResult r = fit(create_model(cfg, data), data, cfg, fo);
  std::cout << "trained " << r.epochs_completed << "/" << cfg.epochs << " epochs into " << o.out
            << "\n";
  if (!r.history.empty()) {
    const auto& h = r.history.back();
    std::cout << "last epoch: L_cls " << h.cls << ", L_adv " << h.adv << ", L_src " << h.src
              << ", L_tgt " << h.tgt << "\n";
  }
  return kOk;
}

struct LoadedRun {
  TrainConfig cfg;
  Model model;
  TrainData data;
};

LoadedRun load_run(const Options& o, const std::vector<std::string>& extras) {
  const fs::path run(o.run);
  json j = parse_json_file(run / "config.json");
  j = apply_overrides(j, extras);
  if (!o.direction.empty()) j["threshold_direction"] = o.direction;
  TrainConfig cfg = config_from_json(j.dump());
  if (o.threads > 0) cfg.threads = o.threads;
  set_threads(cfg.threads);
  Model model = load_model(run / "model.json");
  return {cfg, std::move(model), TrainData::from(load(o.data))};
}

double resolve_beta(const Options& o, const ScoredTargets& s, const TrainConfig& cfg) {
  if (o.beta == "config") return cfg.beta;
  if (o.beta == "auto") return calibrate_beta(s, holdout_split(s.scores.size()).validation, cfg);
  return parse_double(o.beta);
}

int cmd_score(const Options& o, const std::vector<std::string>& extras) {
  const LoadedRun run = load_run(o, extras);
  const ScoredTargets s = score_model(run.model, run.data, run.cfg);
  const double beta = resolve_beta(o, s, run.cfg);
  const auto rows = s.rows(run.cfg, beta);
  std::ostringstream os;
  write_scores_csv(os, rows);
  write_text(o.out, os.str());
  std::cout << "scored " << rows.size() << " target samples at beta " << format_shortest(beta)
            << " (" << to_string(run.cfg.threshold_direction) << ") into " << o.out << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  const auto rows = read_scores(o.scores);
  const Dataset d = load(o.data);
  const auto truth = lookup_truth(rows, d);
  const bool literal = o.direction == "literal";
  if (!o.direction.empty()) parse_threshold_direction(o.direction);

  std::vector<std::size_t> idx;
  if (o.split == "all") {
    for (std::size_t i = 0; i < rows.size(); ++i) idx.push_back(i);
  } else if (o.split == "test") {
    idx = holdout_split(rows.size()).test;
  } else {
    throw ArgumentError("--split must be all or test");
  }
  std::vector<int> decisions, gt;
  std::vector<double> w;
  for (std::size_t i : idx) {
    decisions.push_back(rows[i].decision);
    gt.push_back(truth[i]);
    w.push_back(literal ? -rows[i].scores.w_t : rows[i].scores.w_t);
  }
  const EvalReport r = evaluate(decisions, gt, d.manifest.common_classes, w);
  write_text(o.out, report_to_json(r) + "\n");
  std::cout << "h_score " << r.h_score << " (common " << r.common_accuracy << ", unknown "
            << r.unknown_accuracy << "), auroc " << r.auroc << "\n";
  return kOk;
}

std::vector<double> grid_from(const Options& o) {
  if (o.range.empty()) throw ArgumentError("sweep needs --range lo:hi:step");
  return parse_range(o.range);
}

int cmd_sweep(const Options& o, const std::vector<std::string>& extras) {
  const SweepAxis axis = parse_sweep_axis(o.axis);
  std::vector<double> grid = grid_from(o);
  std::vector<SweepRow> rows;
  if (is_threshold_axis(axis)) {
    if (o.run.empty() || o.data.empty()) throw ArgumentError("beta sweep needs --run and --data");
    const LoadedRun run = load_run(o, extras);
    const ScoredTargets s = score_model(run.model, run.data, run.cfg);
    if (o.relative) {
      const double b = calibrate_beta(s, holdout_split(s.scores.size()).validation, run.cfg);
      for (double& g : grid) g *= b;
    }
    rows = sweep_beta(s, run.cfg, grid);
  } else {
    if (o.spec_path.empty()) throw ArgumentError("scenario sweeps need --spec");
    ScenarioSpec spec = load_scenario(o.spec_path);
    TrainConfig cfg = resolve_config(o.config, extras, o.seed);
    if (o.seed) spec.seed = *o.seed;
    if (o.threads > 0) cfg.threads = o.threads;
    set_threads(cfg.threads);
    rows = sweep_retrain(spec, cfg, axis, grid);
  }
  std::ostringstream os;
  write_sweep_csv(os, axis, rows);
  write_text(o.out, os.str());
  std::cout << "wrote " << rows.size() << " " << to_string(axis) << " rows into " << o.out << "\n";
  return kOk;
}

int cmd_hist(const Options& o) {
  const auto rows = read_scores(o.scores);
  const Dataset d = load(o.data);
  const auto truth = lookup_truth(rows, d);
  std::vector<bool> is_common;
  for (int t : truth)
    is_common.push_back(std::find(d.manifest.common_classes.begin(), d.manifest.common_classes.end(),
                                  t) != d.manifest.common_classes.end());
  const auto hist = histogram_export(rows, is_common, o.bins);
  std::ostringstream os;
  write_histogram_csv(os, hist);
  write_text(o.out, os.str());
  std::cout << "wrote " << hist.size() << " histogram rows into " << o.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uniam: attention-matching universal domain adaptation on synthetic scenarios"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic scenario dataset");
  gen->add_option("--spec", o.spec_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", o.seed, "Override the scenario seed");
  gen->add_option("--out", o.out, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a model; extra --key value pairs override the config");
  train->allow_extras();
  train->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--config", o.config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "Run directory")->required();
  train->add_option("--seed", o.seed, "Training seed");
  train->add_flag("--resume", o.resume, "Continue from the run directory's checkpoint");
  train->add_option("--stop-after", o.stop_after, "Stop after this many epochs (checkpoint kept)");
  train->add_option("--threads", o.threads, "Worker cap");

  auto* score = app.add_subcommand("score", "Score target samples with a trained run");
  score->allow_extras();
  score->add_option("--run", o.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  score->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  score->add_option("--out", o.out, "Scores CSV")->required();
  score->add_option("--beta", o.beta, "Threshold: a number, 'config', or 'auto' (validation-calibrated)");
  score->add_option("--threshold-direction", o.direction, "high_is_common or literal");
  score->add_option("--threads", o.threads, "Worker cap");

  auto* eval = app.add_subcommand("eval", "Evaluate a scores CSV against ground truth");
  eval->add_option("--scores", o.scores, "Scores CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", o.out, "Report JSON")->required();
  eval->add_option("--split", o.split, "all or test (drops the calibration slice)");
  eval->add_option("--threshold-direction", o.direction, "Orientation of w_t for AUROC");

  auto* sweep = app.add_subcommand("sweep", "Sweep beta, alpha, n_target_private or n_common");
  sweep->allow_extras();
  sweep->add_option("--axis", o.axis, "beta, alpha, n_target_private, n_common")->required();
  sweep->add_option("--range", o.range, "lo:hi:step, inclusive")->required();
  sweep->add_option("--out", o.out, "Sweep CSV")->required();
  sweep->add_option("--run", o.run, "Run directory (beta axis)");
  sweep->add_option("--data", o.data, "Dataset directory (beta axis)");
  sweep->add_flag("--relative", o.relative, "Beta grid is a multiple of the calibrated beta");
  sweep->add_option("--spec", o.spec_path, "Scenario JSON (retraining axes)");
  sweep->add_option("--config", o.config, "Training config JSON (retraining axes)");
  sweep->add_option("--seed", o.seed, "Training and scenario seed");
  sweep->add_option("--threads", o.threads, "Worker cap");

  auto* hist = app.add_subcommand("hist", "Histogram w_attn, w_feat and w_t by ground-truth commonness");
  hist->add_option("--scores", o.scores, "Scores CSV")->required()->check(CLI::ExistingFile);
  hist->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  hist->add_option("--bins", o.bins, "Bin count")->check(CLI::PositiveNumber);
  hist->add_option("--out", o.out, "Histogram CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o);
    if (train->parsed()) return cmd_train(o, train->remaining());
    if (score->parsed()) return cmd_score(o, score->remaining());
    if (eval->parsed()) return cmd_eval(o);
    if (sweep->parsed()) return cmd_sweep(o, sweep->remaining());
    if (hist->parsed()) return cmd_hist(o);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
