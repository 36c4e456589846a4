#include <cmath>

#include "json.hpp"
#include "test_support.hpp"
#include "uniam/trainer.hpp"

using namespace uniam;

namespace {

ScenarioSpec small_scenario(std::uint64_t seed = 0) {
  ScenarioSpec s;
  s.n_common = 3;
  s.n_source_private = 1;
  s.n_target_private = 1;
  s.source_samples_per_class = 12;
  s.target_samples_per_class = 12;
  s.feat_dim = 6;
  s.attn_dim = 8;
  s.seed = seed;
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 12;
  c.epochs = 3;
  c.feature_hidden = 12;
  c.feature_dim = 5;
  c.disc_hidden1 = 8;
  c.disc_hidden2 = 6;
  return c;
}

std::string model_bytes(const Model& m) {
  test::TempDir dir("model_bytes");
  save_model(m, dir / "m.json");
  return test::slurp(dir / "m.json");
}

void randomize_biases(Model& m, Rng& rng) {
  for (auto& [name, t] : m.named_tensors())
    if (name.find("bias") != std::string::npos)
      for (double& v : t->value.data()) v = 0.1 * rng.normal();
}

bool same_snapshot(const EpochSnapshot& a, const EpochSnapshot& b) {
  if (a.scoring.scores.size() != b.scoring.scores.size()) return false;
  for (std::size_t i = 0; i < a.scoring.scores.size(); ++i) {
    const auto& x = a.scoring.scores[i];
    const auto& y = b.scoring.scores[i];
    if (x.w_attn != y.w_attn || x.w_feat != y.w_feat || x.w_t != y.w_t ||
        x.pseudo_label_attn != y.pseudo_label_attn || x.pseudo_label_feat != y.pseudo_label_feat)
      return false;
  }
  return a.class_weights.weights == b.class_weights.weights &&
         a.class_weights.class_ids == b.class_weights.class_ids &&
         a.attn_clusters.assignments == b.attn_clusters.assignments &&
         a.feat_clusters.assignments == b.feat_clusters.assignments &&
         a.correspondence.mapping == b.correspondence.mapping && a.soft_labels == b.soft_labels;
}

// Value of one player's objective under the current parameters.
double player_value(Model& m, const TrainData& data, const EpochSnapshot& snap, const TrainConfig& cfg,
                    const std::vector<std::size_t>& s, const std::vector<std::size_t>& t, bool disc) {
  const LossTerms l = batch_objective(m, data, snap, cfg, s, t, false, false);
  return disc ? l.adv : l.total;
}

}  // namespace

TEST_CASE("config JSON round trip, validation and hashing") {
  TrainConfig c;
  c.eta1 = 0.25;
  c.k = 7;
  c.weight_direction = WeightDirection::literal;
  const TrainConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  TrainConfig d = c;
  d.seed = 1;
  CHECK(config_hash(d) != config_hash(c));
  TrainConfig threaded = c;
  threaded.threads = 3;
  CHECK(config_hash(threaded) == config_hash(c));

  const TrainConfig partial = config_from_json(R"({"epochs": 4})");
  CHECK(partial.epochs == 4);
  CHECK(partial.eta1 == 0.5);
  CHECK(partial.batch_size == 36);
  CHECK(partial.alpha == 0.85);
  CHECK(partial.lambda == 0.3);
  CHECK_THROWS_AS(config_from_json(R"({"epoch": 4})"), ArgumentError);
  CHECK_THROWS_AS(config_from_json("[1]"), ArgumentError);
  CHECK_THROWS_AS(config_from_json("{"), ArgumentError);

  TrainConfig bad;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = TrainConfig{};
  bad.eta2 = -0.1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = TrainConfig{};
  bad.k = 1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("resolve_k and steps_per_epoch") {
  const TrainData data = TrainData::from(generate(small_scenario()));
  TrainConfig c = small_config();
  CHECK(resolve_k(c, data) == 3 + 1 + 2);
  c.k = 3;
  CHECK(resolve_k(c, data) == 3);
  c.k = 1000;
  CHECK(resolve_k(c, data) == data.split.target.size());
  TrainData no_echo = data;
  no_echo.manifest.spec.reset();
  c.k = 0;
  CHECK(resolve_k(c, no_echo) == static_cast<std::size_t>(data.num_source_classes) + 2);

  c.batch_size = 12;
  CHECK(steps_per_epoch(c, data) == 8);  // 48 source rows, 6 per batch
}

TEST_CASE("refresh on a noiseless scenario recovers every common pseudo-label") {
  ScenarioSpec s = small_scenario();
  s.noise_sigma = 0.0;
  s.domain_shift = 0.0;
  const TrainData data = TrainData::from(generate(s));
  const TrainConfig cfg = small_config();
  const Model model = create_model(cfg, data);
  const EpochSnapshot snap = refresh_snapshot(model, data, cfg);
  for (std::size_t i = 0; i < data.split.target.size(); ++i) {
    const int gt = data.split.target_ground_truth[i];
    if (gt >= s.n_common) continue;
    CHECK(snap.scoring.scores[i].pseudo_label_attn == gt);
    CHECK(snap.scoring.scores[i].pseudo_label_feat == gt);
    CHECK(snap.scoring.scores[i].w_attn > 0.0);
    // Identical inputs give identical scores.
    const std::size_t first = static_cast<std::size_t>(gt * s.target_samples_per_class);
    CHECK(snap.scoring.scores[i].w_attn == snap.scoring.scores[first].w_attn);
  }
}

TEST_CASE("refresh is deterministic and finite") {
  const TrainData data = TrainData::from(generate(small_scenario()));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig cfg = small_config();
    cfg.seed = seed;
    const Model model = create_model(cfg, data);
    const EpochSnapshot a = refresh_snapshot(model, data, cfg);
    const EpochSnapshot b = refresh_snapshot(model, data, cfg);
    CHECK(same_snapshot(a, b));
    for (const auto& sc : a.scoring.scores) {
      CHECK(std::isfinite(sc.w_attn));
      CHECK(std::isfinite(sc.w_feat));
      CHECK(std::isfinite(sc.w_t));
    }
    for (double w : a.class_weights.weights) CHECK(std::isfinite(w));
    for (double x : a.soft_labels.data()) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("batch_objective gradients match finite differences for each player") {
  const TrainData data = TrainData::from(generate(small_scenario(3)));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TrainConfig cfg = small_config();
    cfg.seed = seed;
    cfg.alpha = 0.3;
    cfg.feature_layers = seed % 2 == 0 ? 2 : 1;
    Model model = create_model(cfg, data);
    Rng rng(500 + seed);
    randomize_biases(model, rng);
    const EpochSnapshot snap = refresh_snapshot(model, data, cfg);
    std::vector<std::size_t> s, t;
    for (int i = 0; i < 6; ++i) {
      s.push_back(rng.uniform_index(data.split.source.size()));
      t.push_back(rng.uniform_index(data.split.target.size()));
    }
    model.zero_grad();
    batch_objective(model, data, snap, cfg, s, t, true, false);
    for (auto& [name, tensor] : model.named_tensors()) {
      const bool disc = name.rfind("d.", 0) == 0;
      const Vector analytic = tensor->grad.data();
      const Vector saved = tensor->value.data();
      const Vector numeric = finite_diff_grad(
          [&, tp = tensor](const Vector& v) {
            tp->value.data() = v;
            return player_value(model, data, snap, cfg, s, t, disc);
          },
          saved, 1e-6);
      tensor->value.data() = saved;
      INFO(name, " seed ", seed);
      CHECK(test::max_rel_error(analytic, numeric) <= 1e-4);
    }
  }
}

TEST_CASE("saddle smoke test: the players move the adversarial term in opposite directions") {
  const TrainData data = TrainData::from(generate(small_scenario(4)));
  TrainConfig cfg = small_config();
  cfg.eta1 = 0.0;
  cfg.eta2 = 0.0;
  cfg.alpha = 2.0;  // gates out every source row, leaving only the adversarial term
  Model model = create_model(cfg, data);
  const EpochSnapshot snap = refresh_snapshot(model, data, cfg);
  std::vector<std::size_t> s{0, 5, 13, 20, 31, 40}, t{1, 7, 14, 22, 30, 38};
  const double before = batch_objective(model, data, snap, cfg, s, t, false, false).adv;

  auto step_player = [&](const std::string& prefix) {
    Model m = model;
    m.zero_grad();
    batch_objective(m, data, snap, cfg, s, t, true, false);
    for (auto& [name, tensor] : m.named_tensors())
      if (name.rfind(prefix, 0) == 0)
        for (std::size_t i = 0; i < tensor->value.size(); ++i)
          tensor->value.data()[i] -= 1e-3 * tensor->grad.data()[i];
    return batch_objective(m, data, snap, cfg, s, t, false, false).adv;
  };
  CHECK(step_player("d.") < before);
  CHECK(step_player("f.") > before);
}

TEST_CASE("supervised sanity: classifier-only training fits the source") {
  ScenarioSpec s = small_scenario(5);
  s.source_samples_per_class = 20;
  const TrainData data = TrainData::from(generate(s));
  TrainConfig cfg = small_config();
  cfg.eta1 = 0.0;
  cfg.eta2 = 0.0;
  cfg.adversarial = false;
  cfg.alpha = 0.0;
  cfg.epochs = 50;
  const FitResult r = fit(create_model(cfg, data), data, cfg);
  REQUIRE(r.history.size() == 50);
  std::size_t first_perfect = r.history.size();
  for (std::size_t e = 0; e < r.history.size(); ++e)
    if (r.history[e].source_accuracy == 1.0) {
      first_perfect = e;
      break;
    }
  CHECK(first_perfect < 50);
  // Final fit in evaluation mode.
  std::size_t correct = 0;
  for (const auto& smp : data.split.source) {
    Matrix x(1, smp.feat.size());
    std::copy(smp.feat.begin(), smp.feat.end(), x.row(0).begin());
    const auto row = r.model.forward(x).logits.row(0);
    if (std::max_element(row.begin(), row.end()) - row.begin() == smp.label) ++correct;
  }
  CHECK(correct == data.split.source.size());
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += r.history[static_cast<std::size_t>(i)].cls;
    tail += r.history[r.history.size() - 1 - static_cast<std::size_t>(i)].cls;
  }
  CHECK(tail < head);
  for (const auto& h : r.history) {
    CHECK(std::isfinite(h.cls));
    CHECK(h.adv == 0.0);
    CHECK(h.src == 0.0);
    CHECK(h.tgt == 0.0);
  }
}

TEST_CASE("degenerate config reproduces plain classifier training") {
  const TrainData data = TrainData::from(generate(small_scenario(6)));
  TrainConfig cfg = small_config();
  cfg.eta1 = 0.0;
  cfg.eta2 = 0.0;
  cfg.adversarial = false;
  cfg.alpha = 0.0;
  cfg.epochs = 1;
  const Model init = create_model(cfg, data);
  const FitResult r = fit(init, data, cfg);

  // Reference: the same batches through cross-entropy alone.
  Model ref = init;
  OptimizerState opt = make_optimizer(cfg, data);
  const std::size_t ns = data.split.source.size();
  const std::size_t nt = data.split.target.size();
  Rng rng(cfg.seed, 0x45504F00ULL);
  std::vector<std::size_t> src(ns), tgt(nt);
  for (std::size_t i = 0; i < ns; ++i) src[i] = i;
  for (std::size_t i = 0; i < nt; ++i) tgt[i] = i;
  rng.shuffle(src);
  rng.shuffle(tgt);
  const std::size_t half = static_cast<std::size_t>(cfg.batch_size / 2);
  const std::size_t dim = ref.config().input_dim;
  for (std::size_t lo = 0; lo < ns; lo += half) {
    const std::size_t hi = std::min(ns, lo + half);
    Matrix x(hi - lo, dim);
    std::vector<int> labels;
    for (std::size_t r2 = lo; r2 < hi; ++r2) {
      const auto& smp = data.split.source[src[r2]];
      std::copy(smp.feat.begin(), smp.feat.end(), x.row(r2 - lo).begin());
      labels.push_back(smp.label);
    }
    ref.zero_grad();
    FeatureCache fc;
    ClassifierCache cc;
    const Matrix z = ref.features(x, &fc);
    const Matrix logits = ref.logits(z, true, true, &cc);
    const LossValue ce = gated_cross_entropy(logits, labels, Vector(labels.size(), 1.0), 0.0);
    ref.backward_features(fc, ref.backward_classifier(cc, ce.grad));
    sgd_step(ref, opt);
  }
  Model got = r.model;
  for (auto& [name, t] : got.named_tensors()) {
    const Tensor* other = nullptr;
    for (auto& [n2, t2] : ref.named_tensors())
      if (n2 == name) other = t2;
    REQUIRE(other != nullptr);
    INFO(name);
    CHECK(test::max_abs_diff(t->value.data(), other->value.data()) <= 1e-12);
  }
}

TEST_CASE("fit: zero epochs, determinism and bitwise resume") {
  const TrainData data = TrainData::from(generate(small_scenario(7)));
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  const Model init = create_model(cfg, data);
  const FitResult none = fit(init, data, cfg);
  CHECK(model_bytes(none.model) == model_bytes(init));
  CHECK(none.history.empty());

  cfg.epochs = 4;
  cfg.refresh_period = 3;
  const FitResult a = fit(create_model(cfg, data), data, cfg);
  const FitResult b = fit(create_model(cfg, data), data, cfg);
  REQUIRE(a.history.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(a.history[e].cls == b.history[e].cls);
    CHECK(a.history[e].adv == b.history[e].adv);
    CHECK(a.history[e].src == b.history[e].src);
    CHECK(a.history[e].tgt == b.history[e].tgt);
  }
  CHECK(model_bytes(a.model) == model_bytes(b.model));

  test::TempDir full("fit_full"), part("fit_part");
  fit(create_model(cfg, data), data, cfg, {full.path(), false, -1});
  const FitResult stopped = fit(create_model(cfg, data), data, cfg, {part.path(), false, 2});
  CHECK(stopped.epochs_completed == 2);
  CHECK_FALSE(std::filesystem::exists(part / "model.json"));
  const FitResult resumed = fit(create_model(cfg, data), data, cfg, {part.path(), true, -1});
  CHECK(resumed.epochs_completed == 4);
  CHECK(model_bytes(resumed.model) == model_bytes(a.model));
  for (const char* f : {"history.csv", "model.json", "clusters.csv", "config.json"})
    CHECK(test::slurp(full / f) == test::slurp(part / f));

  TrainConfig other = cfg;
  other.eta1 = 0.1;
  CHECK_THROWS_AS(fit(create_model(other, data), data, other, {part.path(), true, -1}), ArgumentError);
}

TEST_CASE("history and cluster report files") {
  const TrainData data = TrainData::from(generate(small_scenario(8)));
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  test::TempDir dir("history");
  fit(create_model(cfg, data), data, cfg, {dir.path(), false, -1});
  const std::string hist = test::slurp(dir / "history.csv");
  CHECK(hist.rfind("epoch,L_cls,L_adv,L_src,L_tgt,lr,source_accuracy\n", 0) == 0);
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 3);
  const std::string clusters = test::slurp(dir / "clusters.csv");
  CHECK(clusters.rfind("id,c_attn,c_feat,c_feat_mapped,o_attn,o_feat\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(clusters.begin(), clusters.end(), '\n')) ==
        data.split.target.size() + 1);
  const auto j = nlohmann::json::parse(test::slurp(dir / "config.json"));
  CHECK(j.at("epochs").get<int>() == 2);
}

TEST_CASE("model save/load round trip") {
  const TrainData data = TrainData::from(generate(small_scenario(9)));
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  const FitResult r = fit(create_model(cfg, data), data, cfg);
  test::TempDir dir("model_rt");
  save_model(r.model, dir / "model.json");
  const Model back = load_model(dir / "model.json");
  Matrix x(3, back.config().input_dim);
  for (std::size_t i = 0; i < 3; ++i)
    std::copy(data.split.target[i].feat.begin(), data.split.target[i].feat.end(), x.row(i).begin());
  CHECK(back.forward(x).logits == r.model.forward(x).logits);
  test::write_text(dir / "broken.json", "{}");
  CHECK_THROWS_AS(load_model(dir / "broken.json"), DataError);
  CHECK_THROWS_AS(load_model(dir / "missing.json"), DataError);
}

TEST_CASE("a diverging run aborts naming the loss term") {
  const TrainData data = TrainData::from(generate(small_scenario(10)));
  TrainConfig cfg = small_config();
  cfg.base_lr = 1e150;
  cfg.epochs = 3;
  try {
    fit(create_model(cfg, data), data, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    INFO(msg);
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("epoch ") != std::string::npos);
  }
}
