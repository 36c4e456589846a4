#include "uniam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uniam/errors.hpp"
#include "uniam/format.hpp"

namespace uniam {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(eta1 >= 0.0) || !(eta2 >= 0.0)) throw ArgumentError("config: eta1 and eta2 must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("config: lambda must lie in [0,1]");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw ArgumentError("config: alpha and beta must be finite");
  if (!(rho >= 0.0)) throw ArgumentError("config: rho must be >= 0");
  if (!(tau > 0.0)) throw ArgumentError("config: tau must be > 0");
  if (k < 0 || k == 1) throw ArgumentError("config: k must be 0 (auto) or >= 2");
  if (batch_size < 2) throw ArgumentError("config: batch_size must be >= 2");
  if (epochs < 0) throw ArgumentError("config: epochs must be >= 0");
  if (refresh_period < 1) throw ArgumentError("config: refresh_period must be >= 1");
  if (refine_rounds < 0 || kmeans_iterations < 1)
    throw ArgumentError("config: refine_rounds >= 0 and kmeans_iterations >= 1 required");
  if (!(base_lr > 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0))
    throw ArgumentError("config: invalid optimiser settings");
  if (!(mu >= 0.0)) throw ArgumentError("config: mu must be >= 0");
  if (lasso_max_iter < 1 || !(lasso_tol > 0.0)) throw ArgumentError("config: invalid lasso settings");
  if (feature_layers != 1 && feature_layers != 2)
    throw ArgumentError("config: feature_layers must be 1 or 2");
  if (feature_hidden < 1 || feature_dim < 0 || disc_hidden1 < 1 || disc_hidden2 < 1)
    throw ArgumentError("config: layer widths must be positive");
  if (threads < 0) throw ArgumentError("config: threads must be >= 0");
}

namespace {

json config_json(const TrainConfig& c) {
  return json{{"eta1", c.eta1},
              {"eta2", c.eta2},
              {"lambda", c.lambda},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"rho", c.rho},
              {"tau", c.tau},
              {"k", c.k},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"weight_direction", to_string(c.weight_direction)},
              {"threshold_direction", to_string(c.threshold_direction)},
              {"refresh_period", c.refresh_period},
              {"refine_rounds", c.refine_rounds},
              {"kmeans_iterations", c.kmeans_iterations},
              {"base_lr", c.base_lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"schedule_a", c.schedule_a},
              {"schedule_b", c.schedule_b},
              {"mu", c.mu},
              {"adversarial", c.adversarial},
              {"contrastive_exclude_anchor", c.contrastive_exclude_anchor},
              {"contrastive_log", c.contrastive_log},
              {"raw_lasso", c.raw_lasso},
              {"lasso_max_iter", c.lasso_max_iter},
              {"lasso_tol", c.lasso_tol},
              {"feature_layers", c.feature_layers},
              {"feature_hidden", c.feature_hidden},
              {"feature_dim", c.feature_dim},
              {"disc_hidden1", c.disc_hidden1},
              {"disc_hidden2", c.disc_hidden2},
              {"post_softmax_attention", c.post_softmax_attention},
              {"threads", c.threads}};
}

template <class T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

TrainConfig config_from(const json& j) {
  if (!j.is_object()) throw ArgumentError("config: expected a JSON object");
  const json known = config_json(TrainConfig{});
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ArgumentError("config: unknown key '" + key + "'");
  TrainConfig c;
  read_key(j, "eta1", c.eta1);
  read_key(j, "eta2", c.eta2);
  read_key(j, "lambda", c.lambda);
  read_key(j, "alpha", c.alpha);
  read_key(j, "beta", c.beta);
  read_key(j, "rho", c.rho);
  read_key(j, "tau", c.tau);
  read_key(j, "k", c.k);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "epochs", c.epochs);
  read_key(j, "seed", c.seed);
  if (j.contains("weight_direction"))
    c.weight_direction = parse_weight_direction(j.at("weight_direction").get<std::string>());
  if (j.contains("threshold_direction"))
    c.threshold_direction = parse_threshold_direction(j.at("threshold_direction").get<std::string>());
  read_key(j, "refresh_period", c.refresh_period);
  read_key(j, "refine_rounds", c.refine_rounds);
  read_key(j, "kmeans_iterations", c.kmeans_iterations);
  read_key(j, "base_lr", c.base_lr);
  read_key(j, "momentum", c.momentum);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "schedule_a", c.schedule_a);
  read_key(j, "schedule_b", c.schedule_b);
  read_key(j, "mu", c.mu);
  read_key(j, "adversarial", c.adversarial);
  read_key(j, "contrastive_exclude_anchor", c.contrastive_exclude_anchor);
  read_key(j, "contrastive_log", c.contrastive_log);
  read_key(j, "raw_lasso", c.raw_lasso);
  read_key(j, "lasso_max_iter", c.lasso_max_iter);
  read_key(j, "lasso_tol", c.lasso_tol);
  read_key(j, "feature_layers", c.feature_layers);
  read_key(j, "feature_hidden", c.feature_hidden);
  read_key(j, "feature_dim", c.feature_dim);
  read_key(j, "disc_hidden1", c.disc_hidden1);
  read_key(j, "disc_hidden2", c.disc_hidden2);
  read_key(j, "post_softmax_attention", c.post_softmax_attention);
  read_key(j, "threads", c.threads);
  c.validate();
  return c;
}

json matrix_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.data().size()) throw DataError("model JSON: tensor size mismatch");
  m.data() = data;
  return m;
}

json model_config_json(const ModelConfig& c) {
  return json{{"feature_kind", c.feature_kind == FeatureKind::mlp ? "mlp" : "encoder"},
              {"input_dim", c.input_dim},
              {"feature_layers", c.feature_layers},
              {"feature_hidden", c.feature_hidden},
              {"d_z", c.d_z},
              {"num_classes", c.num_classes},
              {"disc_hidden1", c.disc_hidden1},
              {"disc_hidden2", c.disc_hidden2},
              {"encoder",
               {{"patches", c.encoder.patches},
                {"d_model", c.encoder.d_model},
                {"heads", c.encoder.heads},
                {"d_k", c.encoder.d_k},
                {"d_v", c.encoder.d_v},
                {"d_z", c.encoder.d_z},
                {"post_softmax_attention", c.encoder.post_softmax_attention}}}};
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  const auto kind = j.at("feature_kind").get<std::string>();
  if (kind == "mlp")
    c.feature_kind = FeatureKind::mlp;
  else if (kind == "encoder")
    c.feature_kind = FeatureKind::encoder;
  else
    throw DataError("model JSON: unknown feature_kind '" + kind + "'");
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.feature_layers = j.at("feature_layers").get<int>();
  c.feature_hidden = j.at("feature_hidden").get<std::size_t>();
  c.d_z = j.at("d_z").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.disc_hidden1 = j.at("disc_hidden1").get<std::size_t>();
  c.disc_hidden2 = j.at("disc_hidden2").get<std::size_t>();
  const json& e = j.at("encoder");
  c.encoder.patches = e.at("patches").get<std::size_t>();
  c.encoder.d_model = e.at("d_model").get<std::size_t>();
  c.encoder.heads = e.at("heads").get<std::size_t>();
  c.encoder.d_k = e.at("d_k").get<std::size_t>();
  c.encoder.d_v = e.at("d_v").get<std::size_t>();
  c.encoder.d_z = e.at("d_z").get<std::size_t>();
  c.encoder.post_softmax_attention = e.at("post_softmax_attention").get<bool>();
  return c;
}

json model_json(const Model& m) {
  json tensors = json::object();
  for (const auto& [name, t] : m.named_tensors())
    tensors[name] = {{"value", matrix_json(t->value)}, {"momentum", matrix_json(t->momentum)}};
  return json{{"config", model_config_json(m.config())},
              {"tensors", tensors},
              {"bn_running_mean", m.classifier_bn().running_mean},
              {"bn_running_var", m.classifier_bn().running_var}};
}

Model model_from(const json& j) {
  Model m = Model::create(model_config_from(j.at("config")), 0);
  const json& tensors = j.at("tensors");
  for (auto& [name, t] : m.named_tensors()) {
    if (!tensors.contains(name)) throw DataError("model JSON: missing tensor '" + name + "'");
    Matrix value = matrix_from(tensors.at(name).at("value"));
    Matrix mom = matrix_from(tensors.at(name).at("momentum"));
    if (value.rows() != t->value.rows() || value.cols() != t->value.cols() ||
        mom.rows() != value.rows() || mom.cols() != value.cols())
      throw DataError("model JSON: tensor '" + name + "' has the wrong shape");
    t->value = std::move(value);
    t->momentum = std::move(mom);
  }
  auto mean = j.at("bn_running_mean").get<Vector>();
  auto var = j.at("bn_running_var").get<Vector>();
  if (mean.size() != m.config().d_z || var.size() != m.config().d_z)
    throw DataError("model JSON: BatchNorm statistics have the wrong length");
  m.classifier_bn().running_mean = std::move(mean);
  m.classifier_bn().running_var = std::move(var);
  return m;
}

json optimizer_json(const OptimizerState& o) {
  return json{{"base_lr", o.base_lr},           {"momentum", o.momentum},
              {"weight_decay", o.weight_decay}, {"schedule_a", o.schedule_a},
              {"schedule_b", o.schedule_b},     {"step", o.step},
              {"horizon", o.horizon}};
}

OptimizerState optimizer_from(const json& j) {
  OptimizerState o;
  o.base_lr = j.at("base_lr").get<double>();
  o.momentum = j.at("momentum").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.schedule_a = j.at("schedule_a").get<double>();
  o.schedule_b = j.at("schedule_b").get<double>();
  o.step = j.at("step").get<std::int64_t>();
  o.horizon = j.at("horizon").get<std::int64_t>();
  return o;
}

json metrics_json(const EpochMetrics& m) {
  return json{{"epoch", m.epoch}, {"cls", m.cls}, {"adv", m.adv},
              {"src", m.src},     {"tgt", m.tgt}, {"lr", m.lr},
              {"source_accuracy", m.source_accuracy}};
}

EpochMetrics metrics_from(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.cls = j.at("cls").get<double>();
  m.adv = j.at("adv").get<double>();
  m.src = j.at("src").get<double>();
  m.tgt = j.at("tgt").get<double>();
  m.lr = j.at("lr").get<double>();
  m.source_accuracy = j.at("source_accuracy").get<double>();
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so an interrupted write never clobbers the previous file.
void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Matrix gather_inputs(const std::vector<Sample>& samples, std::span<const std::size_t> rows,
                     std::size_t dim) {
  Matrix m(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Vector& x = model_input(samples[rows[r]]);
    if (x.size() != dim) throw DataError("sample " + samples[rows[r]].id + ": input width mismatch");
    std::copy(x.begin(), x.end(), m.row(r).begin());
  }
  return m;
}

Matrix all_inputs(const std::vector<Sample>& samples, std::size_t dim) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather_inputs(samples, idx, dim);
}

std::vector<Vector> matrix_rows(const Matrix& m) {
  std::vector<Vector> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

Vector unit(const Vector& v) {
  const double n = l2_norm(v);
  if (n == 0.0) return v;
  return scaled(v, 1.0 / n);
}

void check_finite(double v, const char* term, int epoch, std::int64_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + term + " at epoch " + std::to_string(epoch) +
                       " step " + std::to_string(step));
}

}  // namespace

std::string config_to_json(const TrainConfig& c) { return config_json(c).dump(2); }

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("config JSON: ") + e.what());
  }
  try {
    return config_from(j);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("config JSON: ") + e.what());
  }
}

std::uint64_t config_hash(const TrainConfig& c) {
  // FNV-1a over the canonical dump; the worker cap does not affect results.
  json j = config_json(c);
  j.erase("threads");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TrainData TrainData::from(const Dataset& d) {
  TrainData t;
  t.split = split_for_protocol(d);
  t.manifest = d.manifest;
  int max_label = -1;
  for (const auto& s : t.split.source) max_label = std::max(max_label, s.label);
  t.num_source_classes = std::max(max_label + 1, d.manifest.num_source_classes());
  return t;
}

ModelConfig model_config_for(const TrainConfig& cfg, const TrainData& data) {
  ModelConfig mc;
  mc.num_classes = static_cast<std::size_t>(data.num_source_classes);
  const int feat = cfg.feature_dim > 0 ? cfg.feature_dim : data.manifest.feat_dim;
  mc.d_z = static_cast<std::size_t>(feat);
  mc.feature_layers = cfg.feature_layers;
  mc.feature_hidden = static_cast<std::size_t>(cfg.feature_hidden);
  mc.disc_hidden1 = static_cast<std::size_t>(cfg.disc_hidden1);
  mc.disc_hidden2 = static_cast<std::size_t>(cfg.disc_hidden2);
  if (data.manifest.input_dim > 0) {
    if (!data.manifest.spec)
      throw DataError("token-mode dataset lacks the scenario echo needed to size the encoder");
    mc.feature_kind = FeatureKind::encoder;
    mc.encoder.patches = static_cast<std::size_t>(data.manifest.spec->patches);
    mc.encoder.d_model = static_cast<std::size_t>(data.manifest.spec->d_model);
    mc.encoder.d_z = mc.d_z;
    mc.encoder.post_softmax_attention = cfg.post_softmax_attention;
    mc.input_dim = mc.encoder.input_dim();
    if (mc.input_dim != static_cast<std::size_t>(data.manifest.input_dim))
      throw DataError("token-mode input width does not match patches and d_model");
  } else {
    mc.feature_kind = FeatureKind::mlp;
    mc.input_dim = static_cast<std::size_t>(data.manifest.feat_dim);
  }
  return mc;
}

Model create_model(const TrainConfig& cfg, const TrainData& data) {
  return Model::create(model_config_for(cfg, data), splitmix64(cfg.seed ^ 0x6D6F64656CULL));
}

std::size_t resolve_k(const TrainConfig& cfg, const TrainData& data) {
  const std::size_t n = data.split.target.size();
  std::size_t k = static_cast<std::size_t>(data.num_source_classes) + 2;
  if (cfg.k > 0)
    k = static_cast<std::size_t>(cfg.k);
  else if (data.manifest.spec)
    k = static_cast<std::size_t>(data.manifest.spec->n_common + data.manifest.spec->n_target_private) + 2;
  k = std::min(k, n);
  if (k < 2) throw ArgumentError("need at least two target samples to cluster");
  return k;
}

TargetScoring score_targets(const Model& model, const TrainData& data, const TrainConfig& cfg) {
  const auto& src = data.split.source;
  const auto& tgt = data.split.target;
  if (src.empty() || tgt.empty()) throw ArgumentError("score_targets: both domains are required");
  const std::size_t dim = model.config().input_dim;
  const bool encoder = model.config().feature_kind == FeatureKind::encoder;

  std::vector<Vector> src_attn_model, tgt_attn_model;
  const Matrix z_src = model.features(all_inputs(src, dim), nullptr, encoder ? &src_attn_model : nullptr);
  const Matrix z_tgt = model.features(all_inputs(tgt, dim), nullptr, encoder ? &tgt_attn_model : nullptr);

  std::vector<Vector> src_attn, src_feat = matrix_rows(z_src);
  TargetScoring out;
  out.target_feat = matrix_rows(z_tgt);
  if (encoder) {
    src_attn = std::move(src_attn_model);
    out.target_attn = std::move(tgt_attn_model);
  } else {
    for (const auto& s : src) src_attn.push_back(s.attn);
    for (const auto& s : tgt) out.target_attn.push_back(s.attn);
  }
  std::vector<int> labels;
  for (const auto& s : src) labels.push_back(s.label);

  out.attn_dictionary = compute_prototypes(src_attn, labels);
  out.feat_dictionary = compute_prototypes(src_feat, labels);
  if (!cfg.raw_lasso) {
    out.attn_dictionary = normalize_dictionary(out.attn_dictionary);
    out.feat_dictionary = normalize_dictionary(out.feat_dictionary);
  }

  const std::size_t n = tgt.size();
  out.attn_residuals.resize(n);
  out.feat_residuals.resize(n);
  out.scores.resize(n);
  const LassoOptions lasso = cfg.lasso();
  const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < ni; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    out.attn_residuals[i] =
        match_residuals(out.target_attn[i], out.attn_dictionary, lasso, cfg.raw_lasso).residuals;
    out.feat_residuals[i] =
        match_residuals(out.target_feat[i], out.feat_dictionary, lasso, cfg.raw_lasso).residuals;
  }
  for (std::size_t i = 0; i < n; ++i)
    out.scores[i] = commonness_scores(out.attn_residuals[i], out.feat_residuals[i], cfg.lambda);
  return out;
}

EpochSnapshot refresh_snapshot(const Model& model, const TrainData& data, const TrainConfig& cfg) {
  EpochSnapshot snap;
  snap.scoring = score_targets(model, data, cfg);
  snap.class_weights = source_class_weights(snap.scoring.attn_residuals, snap.scoring.feat_residuals,
                                            cfg.lambda, cfg.weight_direction);

  const std::size_t k = resolve_k(cfg, data);
  const LassoOptions lasso = cfg.lasso();
  auto view = [&](const std::vector<Vector>& raw, std::uint64_t stream) {
    std::vector<Vector> vs;
    vs.reserve(raw.size());
    for (const auto& v : raw) vs.push_back(cfg.raw_lasso ? v : unit(v));
    Clustering init = kmeans(vs, k, splitmix64(cfg.seed ^ stream), cfg.kmeans_iterations);
    return std::make_pair(residual_refine(vs, init, lasso, cfg.refine_rounds), vs);
  };
  auto [attn_c, attn_vs] = view(snap.scoring.target_attn, 0xA77);
  auto [feat_c, feat_vs] = view(snap.scoring.target_feat, 0xFEA7);
  snap.attn_clusters = std::move(attn_c);
  snap.feat_clusters = std::move(feat_c);
  snap.correspondence = align_clusterings(snap.attn_clusters, snap.feat_clusters);

  const auto attn_r = cluster_residuals(attn_vs, snap.attn_clusters, lasso);
  const auto feat_r = cluster_residuals(feat_vs, snap.feat_clusters, lasso);
  snap.target_view.resize(attn_r.size());
  for (std::size_t i = 0; i < attn_r.size(); ++i)
    snap.target_view[i] = target_view_scores(attn_r[i], feat_r[i]);
  snap.soft_labels = soft_cluster_labels(snap.target_view, snap.correspondence, k, cfg.lambda);
  return snap;
}

void write_cluster_report_csv(std::ostream& os, const TrainData& data, const EpochSnapshot& snapshot) {
  const auto& view = snapshot.target_view;
  if (view.size() != data.split.target.size())
    throw ArgumentError("cluster report: snapshot does not match the dataset");
  os << "id,c_attn,c_feat,c_feat_mapped,o_attn,o_feat\n";
  for (std::size_t i = 0; i < view.size(); ++i)
    os << data.split.target[i].id << ',' << view[i].cluster_attn << ',' << view[i].cluster_feat << ','
       << snapshot.correspondence.map(view[i].cluster_feat) << ',' << format_double(view[i].o_attn)
       << ',' << format_double(view[i].o_feat) << '\n';
}

LossTerms batch_objective(Model& model, const TrainData& data, const EpochSnapshot& snapshot,
                          const TrainConfig& cfg, std::span<const std::size_t> source_rows,
                          std::span<const std::size_t> target_rows, bool backward,
                          bool update_running) {
  const std::size_t ns = source_rows.size();
  const std::size_t nt = target_rows.size();
  const std::size_t b = ns + nt;
  LossTerms out;
  if (b == 0) return out;
  const std::size_t dim = model.config().input_dim;
  const std::size_t dz = model.config().d_z;

  Matrix inputs(b, dim);
  {
    const Matrix s = gather_inputs(data.split.source, source_rows, dim);
    const Matrix t = gather_inputs(data.split.target, target_rows, dim);
    std::copy(s.data().begin(), s.data().end(), inputs.data().begin());
    std::copy(t.data().begin(), t.data().end(),
              inputs.data().begin() + static_cast<std::ptrdiff_t>(ns * dim));
  }
  FeatureCache fcache;
  const Matrix z = model.features(inputs, backward ? &fcache : nullptr);
  Matrix grad_z(b, dz);

  std::vector<int> src_labels(ns);
  std::vector<double> src_weights(ns);
  for (std::size_t r = 0; r < ns; ++r) {
    src_labels[r] = data.split.source[source_rows[r]].label;
    src_weights[r] = snapshot.class_weights.weight_for(src_labels[r]);
  }

  // L_cls on the source rows.
  if (ns > 0) {
    Matrix z_src(ns, dz);
    std::copy(z.data().begin(), z.data().begin() + static_cast<std::ptrdiff_t>(ns * dz),
              z_src.data().begin());
    ClassifierCache ccache;
    const Matrix logits = model.logits(z_src, true, update_running, backward ? &ccache : nullptr);
    const LossValue cls = gated_cross_entropy(logits, src_labels, src_weights, cfg.alpha);
    out.cls = cls.value;
    for (std::size_t r = 0; r < ns; ++r) {
      auto row = logits.row(r);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == src_labels[r]) ++out.cls_correct;
    }
    if (backward) {
      const Matrix g = model.backward_classifier(ccache, cls.grad);
      for (std::size_t r = 0; r < ns; ++r)
        for (std::size_t c = 0; c < dz; ++c) grad_z(r, c) += g(r, c);
    }
  }

  std::vector<Domain> domains(b, Domain::source);
  for (std::size_t r = ns; r < b; ++r) domains[r] = Domain::target;

  // L_adv: G_d descends it, G_f receives the reversed gradient.
  if (cfg.adversarial && ns > 0 && nt > 0) {
    std::vector<double> w(b);
    for (std::size_t r = 0; r < ns; ++r) w[r] = src_weights[r];
    for (std::size_t r = 0; r < nt; ++r) w[ns + r] = snapshot.scoring.scores[target_rows[r]].w_t;
    for (double& x : w) x = std::max(x, 0.0);
    DiscriminatorCache dcache;
    const Vector probs = model.domain_prob(z, backward ? &dcache : nullptr);
    const LossValue adv = adversarial_loss(probs, domains, w);
    out.adv = adv.value;
    if (backward) {
      const Matrix g = model.backward_discriminator(dcache, adv.grad.data());
      grad_z = [&] {
        Matrix acc = grad_z;
        const Matrix rev = gradient_reversal(g, cfg.mu);
        for (std::size_t i = 0; i < acc.data().size(); ++i) acc.data()[i] += rev.data()[i];
        return acc;
      }();
    }
  }

  // L_src: source anchors over the whole batch.
  if (cfg.eta1 > 0.0 && ns > 0) {
    std::vector<int> labels(b, -1);
    std::vector<TargetPseudoLabel> pseudo(b);
    for (std::size_t r = 0; r < ns; ++r) labels[r] = src_labels[r];
    for (std::size_t r = 0; r < nt; ++r) {
      const auto& s = snapshot.scoring.scores[target_rows[r]];
      pseudo[ns + r] = {s.pseudo_label_attn, s.pseudo_label_feat, s.w_attn, s.w_feat};
    }
    const LossValue src =
        source_contrastive_loss(z, domains, labels, pseudo, cfg.lambda, cfg.contrastive());
    out.src = src.value;
    if (backward)
      for (std::size_t i = 0; i < grad_z.data().size(); ++i)
        grad_z.data()[i] += cfg.eta1 * src.grad.data()[i];
  }

  // L_tgt: target rows only.
  if (cfg.eta2 > 0.0 && nt >= 2) {
    Matrix z_tgt(nt, dz);
    std::copy(z.data().begin() + static_cast<std::ptrdiff_t>(ns * dz), z.data().end(),
              z_tgt.data().begin());
    Matrix soft(nt, snapshot.soft_labels.cols());
    for (std::size_t r = 0; r < nt; ++r) {
      auto from = snapshot.soft_labels.row(target_rows[r]);
      std::copy(from.begin(), from.end(), soft.row(r).begin());
    }
    const LossValue tgt = target_contrastive_loss(z_tgt, soft, cfg.contrastive());
    out.tgt = tgt.value;
    if (backward)
      for (std::size_t r = 0; r < nt; ++r)
        for (std::size_t c = 0; c < dz; ++c) grad_z(ns + r, c) += cfg.eta2 * tgt.grad(r, c);
  }

  out.total = out.cls + cfg.eta1 * out.src + cfg.eta2 * out.tgt - cfg.mu * out.adv;
  if (backward) model.backward_features(fcache, grad_z);
  return out;
}

std::int64_t steps_per_epoch(const TrainConfig& cfg, const TrainData& data) {
  const auto half = static_cast<std::size_t>(cfg.batch_size / 2);
  const std::size_t ns = data.split.source.size();
  if (ns == 0) return 0;
  return static_cast<std::int64_t>((ns + half - 1) / half);
}

OptimizerState make_optimizer(const TrainConfig& cfg, const TrainData& data) {
  OptimizerState o;
  o.base_lr = cfg.base_lr;
  o.momentum = cfg.momentum;
  o.weight_decay = cfg.weight_decay;
  o.schedule_a = cfg.schedule_a;
  o.schedule_b = cfg.schedule_b;
  o.horizon = std::max<std::int64_t>(1, steps_per_epoch(cfg, data) * cfg.epochs);
  return o;
}

EpochMetrics train_epoch(Model& model, OptimizerState& opt, const TrainData& data,
                         const EpochSnapshot& snapshot, const TrainConfig& cfg, int epoch) {
  const std::size_t ns = data.split.source.size();
  const std::size_t nt = data.split.target.size();
  const auto half_src = static_cast<std::size_t>(cfg.batch_size / 2);
  const auto half_tgt = static_cast<std::size_t>(cfg.batch_size) - half_src;

  Rng rng(cfg.seed, 0x45504F00ULL + static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> src_order(ns), tgt_order(nt);
  for (std::size_t i = 0; i < ns; ++i) src_order[i] = i;
  for (std::size_t i = 0; i < nt; ++i) tgt_order[i] = i;
  rng.shuffle(src_order);
  rng.shuffle(tgt_order);

  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr_at(opt, opt.step);
  const std::int64_t steps = steps_per_epoch(cfg, data);
  std::size_t correct = 0;
  std::size_t seen = 0;
  std::size_t tgt_cursor = 0;
  for (std::int64_t step = 0; step < steps; ++step) {
    const std::size_t lo = static_cast<std::size_t>(step) * half_src;
    const std::size_t hi = std::min(ns, lo + half_src);
    std::vector<std::size_t> src_rows(src_order.begin() + static_cast<std::ptrdiff_t>(lo),
                                      src_order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<std::size_t> tgt_rows;
    for (std::size_t r = 0; r < half_tgt && nt > 0; ++r) {
      tgt_rows.push_back(tgt_order[tgt_cursor]);
      tgt_cursor = (tgt_cursor + 1) % nt;
    }
    model.zero_grad();
    LossTerms t;
    try {
      t = batch_objective(model, data, snapshot, cfg, src_rows, tgt_rows, true, true);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                         e.what());
    }
    check_finite(t.cls, "L_cls", epoch, step);
    check_finite(t.adv, "L_adv", epoch, step);
    check_finite(t.src, "L_src", epoch, step);
    check_finite(t.tgt, "L_tgt", epoch, step);
    sgd_step(model, opt);
    m.cls += t.cls;
    m.adv += t.adv;
    m.src += t.src;
    m.tgt += t.tgt;
    correct += t.cls_correct;
    seen += src_rows.size();
  }
  if (steps > 0) {
    const auto s = static_cast<double>(steps);
    m.cls /= s;
    m.adv /= s;
    m.src /= s;
    m.tgt /= s;
  }
  m.source_accuracy = seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
  return m;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,L_cls,L_adv,L_src,L_tgt,lr,source_accuracy\n";
  for (const auto& m : history)
    os << m.epoch << ',' << format_double(m.cls) << ',' << format_double(m.adv) << ','
       << format_double(m.src) << ',' << format_double(m.tgt) << ',' << format_double(m.lr) << ','
       << format_double(m.source_accuracy) << '\n';
  write_file_atomic(path, os.str());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_json(model).dump(1));
}

Model load_model(const std::filesystem::path& path) {
  try {
    return model_from(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

FitResult fit(Model model, const TrainData& data, const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  FitResult r{std::move(model), make_optimizer(cfg, data), {}, 0};
  const bool persist = !options.run_dir.empty();
  const auto ckpt_path = options.run_dir / "checkpoint.json";
  Model refresh_model = r.model;
  int start = 0;

  if (persist) {
    std::filesystem::create_directories(options.run_dir);
    if (options.resume && std::filesystem::exists(ckpt_path)) {
      try {
        const json j = json::parse(read_file(ckpt_path));
        if (j.at("config_hash").get<std::uint64_t>() != config_hash(cfg))
          throw ArgumentError("checkpoint was written with a different configuration");
        r.model = model_from(j.at("model"));
        refresh_model = model_from(j.at("refresh_model"));
        r.optimizer = optimizer_from(j.at("optimizer"));
        for (const auto& h : j.at("history")) r.history.push_back(metrics_from(h));
        start = j.at("epochs_completed").get<int>();
      } catch (const json::exception& e) {
        throw DataError(ckpt_path.string() + ": " + e.what());
      }
    }
    write_file_atomic(options.run_dir / "config.json", config_to_json(cfg) + "\n");
  }
  r.epochs_completed = start;

  EpochSnapshot snapshot;
  if (start < cfg.epochs && start % cfg.refresh_period != 0)
    snapshot = refresh_snapshot(refresh_model, data, cfg);

  int ran = 0;
  for (int epoch = start; epoch < cfg.epochs; ++epoch) {
    if (options.stop_after >= 0 && ran >= options.stop_after) break;
    if (epoch % cfg.refresh_period == 0) {
      snapshot = refresh_snapshot(r.model, data, cfg);
      refresh_model = r.model;
    }
    r.history.push_back(train_epoch(r.model, r.optimizer, data, snapshot, cfg, epoch));
    ++ran;
    r.epochs_completed = epoch + 1;
    if (persist) {
      json hist = json::array();
      for (const auto& h : r.history) hist.push_back(metrics_json(h));
      const json ckpt{{"config_hash", config_hash(cfg)},
                      {"epochs_completed", r.epochs_completed},
                      {"model", model_json(r.model)},
                      {"refresh_model", model_json(refresh_model)},
                      {"optimizer", optimizer_json(r.optimizer)},
                      {"history", hist}};
      write_file_atomic(ckpt_path, ckpt.dump(1));
      write_history_csv(options.run_dir / "history.csv", r.history);
    }
  }
  if (persist) {
    if (r.history.empty()) write_history_csv(options.run_dir / "history.csv", r.history);
    if (r.epochs_completed == cfg.epochs) {
      save_model(r.model, options.run_dir / "model.json");
      std::ostringstream os;
      write_cluster_report_csv(os, data, refresh_snapshot(r.model, data, cfg));
      write_file_atomic(options.run_dir / "clusters.csv", os.str());
    }
  }
  return r;
}

}  // namespace uniam
