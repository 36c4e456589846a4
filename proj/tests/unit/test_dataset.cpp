#include <omp.h>

#include <algorithm>
#include <set>

#include "test_support.hpp"
#include "uniam/attention.hpp"
#include "uniam/dataset.hpp"
#include "uniam/sparse_coding.hpp"

using namespace uniam;

namespace {

const std::filesystem::path kFixtures = UNIAM_FIXTURES_DIR;

ScenarioSpec small_spec(int c, int sp, int tp) {
  ScenarioSpec s;
  s.n_common = c;
  s.n_source_private = sp;
  s.n_target_private = tp;
  s.source_samples_per_class = 8;
  s.target_samples_per_class = 8;
  s.feat_dim = 6;
  s.attn_dim = 8;
  return s;
}

std::set<int> classes_of(const Dataset& d, Domain dom) {
  std::set<int> out;
  for (const auto& s : d.samples)
    if (s.domain == dom) out.insert(s.ground_truth);
  return out;
}

std::string error_of(const std::filesystem::path& dir) {
  try {
    load(dir);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("generate: label-set sizes for 5/5/5") {
  const Dataset d = generate(small_spec(5, 5, 5));
  const auto src = classes_of(d, Domain::source);
  const auto tgt = classes_of(d, Domain::target);
  std::vector<int> overlap;
  std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(overlap));
  CHECK(src.size() == 10);
  CHECK(tgt.size() == 10);
  CHECK(overlap.size() == 5);
  CHECK(d.manifest.num_source_classes() == 10);
}

TEST_CASE("property: label-set algebra holds for any class counts") {
  for (int c = 0; c <= 3; ++c)
    for (int sp = 0; sp <= 3; ++sp)
      for (int tp = 0; tp <= 3; ++tp) {
        if (c + sp == 0) continue;
        if (c + tp == 0) continue;
        const Dataset d = generate(small_spec(c, sp, tp));
        const Manifest& m = d.manifest;
        const auto src = classes_of(d, Domain::source);
        const auto tgt = classes_of(d, Domain::target);
        std::set<int> ls(m.common_classes.begin(), m.common_classes.end());
        ls.insert(m.source_private_classes.begin(), m.source_private_classes.end());
        std::set<int> lt(m.common_classes.begin(), m.common_classes.end());
        lt.insert(m.target_private_classes.begin(), m.target_private_classes.end());
        CHECK(src == ls);
        CHECK(tgt == lt);
        for (int k : m.source_private_classes)
          CHECK(std::find(m.target_private_classes.begin(), m.target_private_classes.end(), k) ==
                m.target_private_classes.end());
        CHECK(m.n_source == (c + sp) * 8);
        CHECK(m.n_target == (c + tp) * 8);
      }
}

TEST_CASE("generate: source samples carry their labels, target labels are hidden") {
  const Dataset d = generate(small_spec(2, 1, 1));
  for (const auto& s : d.samples) {
    if (s.domain == Domain::source)
      CHECK(s.label == s.ground_truth);
    else
      CHECK(s.label == -1);
    CHECK(s.feat.size() == 6);
    CHECK(s.attn.size() == 8);
  }
}

TEST_CASE("generate: prototypes respect the separation") {
  ScenarioSpec s = small_spec(3, 2, 2);
  s.noise_sigma = 0.0;
  s.domain_shift = 0.0;
  s.class_separation = 2.5;
  const Dataset d = generate(s);
  std::vector<Vector> protos(7);
  for (const auto& smp : d.samples) protos[static_cast<std::size_t>(smp.ground_truth)] = smp.feat;
  for (std::size_t i = 0; i < protos.size(); ++i)
    for (std::size_t j = i + 1; j < protos.size(); ++j)
      CHECK(std::sqrt(squared_distance(protos[i], protos[j])) >= 2.5);
}

TEST_CASE("generate: impossible geometry is a generation error") {
  ScenarioSpec s = small_spec(20, 0, 0);
  s.feat_dim = 1;
  s.class_separation = 50.0;
  CHECK_THROWS_AS(generate(s), GenerationError);
  ScenarioSpec bad = small_spec(0, 0, 2);
  CHECK_THROWS_AS(generate(bad), ArgumentError);
}

TEST_CASE("generate: noiseless limit puts common targets on source prototypes") {
  ScenarioSpec s = small_spec(3, 2, 2);
  s.noise_sigma = 0.0;
  s.domain_shift = 0.0;
  const Dataset d = generate(s);
  const ProtocolSplit split = split_for_protocol(d);
  std::vector<Vector> fa;
  std::vector<int> labels;
  for (const auto& smp : split.source) {
    fa.push_back(smp.attn);
    labels.push_back(smp.label);
  }
  const Dictionary dict = normalize_dictionary(compute_prototypes(fa, labels));
  LassoOptions exact;
  exact.rho = 0.0;
  exact.tol = 1e-12;
  exact.max_iter = 20000;
  for (std::size_t i = 0; i < split.target.size(); ++i) {
    const int gt = split.target_ground_truth[i];
    if (gt >= 3) continue;
    const auto& t = split.target[i];
    const auto src = std::find_if(split.source.begin(), split.source.end(),
                                  [&](const Sample& x) { return x.label == gt; });
    CHECK(t.attn == src->attn);
    const ResidualVector r = match_residuals(t.attn, dict, exact).residuals;
    for (std::size_t k = 0; k < r.class_ids.size(); ++k)
      if (r.class_ids[k] == gt) CHECK(r.values[k] <= 1e-9);
  }
}

TEST_CASE("generate: same seed gives byte-identical files") {
  const Dataset d = generate(small_spec(2, 2, 2));
  test::TempDir a("gen_a"), b("gen_b");
  save(d, a.path());
  save(generate(small_spec(2, 2, 2)), b.path());
  CHECK(test::slurp(a / "samples.csv") == test::slurp(b / "samples.csv"));
  CHECK(test::slurp(a / "manifest.json") == test::slurp(b / "manifest.json"));

  ScenarioSpec other = small_spec(2, 2, 2);
  other.seed = 1;
  CHECK_FALSE(generate(other) == d);
}

TEST_CASE("generate: independent of the thread count") {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Dataset one = generate(small_spec(2, 1, 1));
  omp_set_num_threads(4);
  const Dataset four = generate(small_spec(2, 1, 1));
  omp_set_num_threads(saved);
  CHECK(one == four);
}

TEST_CASE("save/load round trip") {
  test::TempDir dir("roundtrip");
  ScenarioSpec s = small_spec(2, 1, 2);
  s.noise_sigma = 0.7;
  const Dataset d = generate(s);
  save(d, dir.path());
  const Dataset back = load(dir.path());
  CHECK(back == d);
  REQUIRE(back.manifest.spec.has_value());
  CHECK(scenario_to_json(*back.manifest.spec) == scenario_to_json(s));
}

TEST_CASE("save/load round trip in token mode") {
  ScenarioSpec s = small_spec(2, 1, 1);
  s.mode = GenerationMode::token;
  s.patches = 2;
  s.d_model = 4;
  EncoderConfig ec;
  ec.patches = 2;
  ec.d_model = 4;
  s.attn_dim = static_cast<int>(ec.attention_dim());
  const Dataset d = generate(s);
  CHECK(d.manifest.input_dim == 12);
  CHECK(d.samples[0].input.size() == 12);
  CHECK(&model_input(d.samples[0]) == &d.samples[0].input);
  test::TempDir dir("token");
  save(d, dir.path());
  CHECK(load(dir.path()) == d);

  s.attn_dim += 1;
  CHECK_THROWS_AS(generate(s), GenerationError);
}

TEST_CASE("load parses a hand-written two-sample fixture") {
  const Dataset d = load(kFixtures / "two_samples");
  CHECK(d.manifest.class_names == std::vector<std::string>{"cat", "dog"});
  CHECK(d.manifest.target_private_classes == std::vector<int>{1});
  CHECK_FALSE(d.manifest.spec.has_value());
  REQUIRE(d.samples.size() == 2);
  const Sample& a = d.samples[0];
  CHECK(a.id == "a");
  CHECK(a.domain == Domain::source);
  CHECK(a.label == 0);
  CHECK(a.ground_truth == 0);
  CHECK(a.feat == Vector{0.5, -1.25});
  CHECK(a.attn == Vector{1.0, 0.0, 0.1});
  CHECK(a.input.empty());
  CHECK(&model_input(a) == &a.feat);
  const Sample& b = d.samples[1];
  CHECK(b.domain == Domain::target);
  CHECK(b.label == -1);
  CHECK(b.ground_truth == 1);
  CHECK(b.feat == Vector{0.03, 2.0});
  CHECK(b.attn == Vector{-0.5, 0.25, 7.0});
}

TEST_CASE("load: a short row is a data error naming the row") {
  const std::string msg = error_of(kFixtures / "short_row");
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("feat_dim=4") != std::string::npos);
}

TEST_CASE("load: malformed inputs are data errors") {
  test::TempDir dir("bad");
  const std::string manifest = test::slurp(kFixtures / "two_samples" / "manifest.json");
  const std::string header = "id,domain,label,ground_truth,feat_0,feat_1,attn_0,attn_1,attn_2\n";

  CHECK_FALSE(error_of(dir / "missing").empty());

  test::write_text(dir / "manifest.json", "{ not json");
  test::write_text(dir / "samples.csv", header);
  CHECK_FALSE(error_of(dir.path()).empty());

  std::string v2 = manifest;
  v2.replace(v2.find("\"format_version\": 1"), 19, "\"format_version\": 2");
  test::write_text(dir / "manifest.json", v2);
  CHECK(error_of(dir.path()).find("format_version") != std::string::npos);

  test::write_text(dir / "manifest.json", manifest);
  test::write_text(dir / "samples.csv", header + "a,source,0,0,x,1,1,1,1\nb,target,-1,1,1,1,1,1,1\n");
  CHECK(error_of(dir.path()).find("line 2") != std::string::npos);

  test::write_text(dir / "samples.csv", header + "a,source,0,0,1,1,1,1,1\nb,elsewhere,-1,1,1,1,1,1,1\n");
  CHECK(error_of(dir.path()).find("line 3") != std::string::npos);

  test::write_text(dir / "samples.csv", header + "a,source,0,0,1,1,1,1,1\nb,target,1,1,1,1,1,1,1\n");
  CHECK(error_of(dir.path()).find("line 3") != std::string::npos);

  test::write_text(dir / "samples.csv", header + "a,source,0,0,1,1,1,1,1\n");
  CHECK(error_of(dir.path()).find("counts") != std::string::npos);

  test::write_text(dir / "samples.csv", "id,domain\n");
  CHECK(error_of(dir.path()).find("line 1") != std::string::npos);
}

TEST_CASE("split_for_protocol") {
  const Dataset d = generate(small_spec(5, 5, 5));
  const ProtocolSplit s = split_for_protocol(d);
  CHECK(static_cast<int>(s.source.size()) == d.manifest.n_source);
  CHECK(static_cast<int>(s.target.size()) == d.manifest.n_target);
  for (const auto& t : s.target) CHECK(t.label == -1);
  for (const auto& x : s.source) CHECK(x.label == x.ground_truth);
  REQUIRE(s.target_ground_truth.size() == s.target.size());
  std::size_t ti = 0;
  for (const auto& smp : d.samples)
    if (smp.domain == Domain::target) CHECK(s.target_ground_truth[ti++] == smp.ground_truth);
  CHECK(s.common_classes == std::vector<int>{0, 1, 2, 3, 4});

  Dataset only_source = d;
  std::erase_if(only_source.samples, [](const Sample& x) { return x.domain == Domain::target; });
  CHECK_THROWS_AS(split_for_protocol(only_source), ArgumentError);
}

TEST_CASE("scenario JSON") {
  const ScenarioSpec s = scenario_from_json(R"({"n_common": 2, "samples_per_class": 7, "seed": 9})");
  CHECK(s.n_common == 2);
  CHECK(s.source_samples_per_class == 7);
  CHECK(s.target_samples_per_class == 7);
  CHECK(s.seed == 9);
  CHECK(s.n_source_private == 3);
  CHECK(scenario_to_json(scenario_from_json(scenario_to_json(s))) == scenario_to_json(s));
  CHECK_THROWS_AS(scenario_from_json("{"), DataError);
  CHECK_THROWS_AS(scenario_from_json(R"({"mode": "pixels"})"), ArgumentError);
  CHECK_THROWS_AS(load_scenario("/nonexistent/spec.json"), ArgumentError);
}
