#include "uniam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uniam/attention.hpp"
#include "uniam/format.hpp"

namespace uniam {

using nlohmann::json;

void ScenarioSpec::validate() const {
  if (n_common < 0 || n_source_private < 0 || n_target_private < 0)
    throw ArgumentError("scenario: class counts must be non-negative");
  if (n_common + n_source_private < 1)
    throw ArgumentError("scenario: need at least one source class");
  if (source_samples_per_class < 1 || target_samples_per_class < 1)
    throw ArgumentError("scenario: samples_per_class must be positive");
  if (feat_dim < 1 || attn_dim < 1) throw ArgumentError("scenario: dimensions must be positive");
  if (!(class_separation >= 0.0) || !(domain_shift >= 0.0) || !(noise_sigma >= 0.0))
    throw ArgumentError("scenario: separation, shift and noise must be non-negative");
  if (mode == GenerationMode::token && (patches < 1 || d_model < 1))
    throw ArgumentError("scenario: token mode needs patches >= 1 and d_model >= 1");
}

void to_json(json& j, const ScenarioSpec& s) {
  j = json{{"n_common", s.n_common},
           {"n_source_private", s.n_source_private},
           {"n_target_private", s.n_target_private},
           {"source_samples_per_class", s.source_samples_per_class},
           {"target_samples_per_class", s.target_samples_per_class},
           {"feat_dim", s.feat_dim},
           {"attn_dim", s.attn_dim},
           {"class_separation", s.class_separation},
           {"domain_shift", s.domain_shift},
           {"noise_sigma", s.noise_sigma},
           {"seed", s.seed},
           {"mode", s.mode == GenerationMode::token ? "token" : "embedding"},
           {"patches", s.patches},
           {"d_model", s.d_model}};
}

void from_json(const json& j, ScenarioSpec& s) {
  ScenarioSpec d;
  s.n_common = j.value("n_common", d.n_common);
  s.n_source_private = j.value("n_source_private", d.n_source_private);
  s.n_target_private = j.value("n_target_private", d.n_target_private);
  if (j.contains("samples_per_class")) {
    s.source_samples_per_class = s.target_samples_per_class = j.at("samples_per_class").get<int>();
  } else {
    s.source_samples_per_class = j.value("source_samples_per_class", d.source_samples_per_class);
    s.target_samples_per_class = j.value("target_samples_per_class", d.target_samples_per_class);
  }
  s.feat_dim = j.value("feat_dim", d.feat_dim);
  s.attn_dim = j.value("attn_dim", d.attn_dim);
  s.class_separation = j.value("class_separation", d.class_separation);
  s.domain_shift = j.value("domain_shift", d.domain_shift);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.seed = j.value("seed", d.seed);
  const std::string mode = j.value("mode", std::string("embedding"));
  if (mode == "embedding")
    s.mode = GenerationMode::embedding;
  else if (mode == "token")
    s.mode = GenerationMode::token;
  else
    throw ArgumentError("scenario: unknown mode '" + mode + "'");
  s.patches = j.value("patches", d.patches);
  s.d_model = j.value("d_model", d.d_model);
}

ScenarioSpec scenario_from_json(const std::string& text) {
  try {
    ScenarioSpec s = json::parse(text).get<ScenarioSpec>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("scenario JSON: ") + e.what());
  }
}

std::string scenario_to_json(const ScenarioSpec& spec) { return json(spec).dump(2); }

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open scenario file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

bool Manifest::operator==(const Manifest& o) const {
  auto spec_json = [](const std::optional<ScenarioSpec>& s) {
    return s ? scenario_to_json(*s) : std::string();
  };
  return format_version == o.format_version && feat_dim == o.feat_dim && attn_dim == o.attn_dim &&
         input_dim == o.input_dim && n_source == o.n_source && n_target == o.n_target &&
         class_names == o.class_names && common_classes == o.common_classes &&
         source_private_classes == o.source_private_classes &&
         target_private_classes == o.target_private_classes && spec_json(spec) == spec_json(o.spec);
}

namespace {

Vector gaussian(Rng& rng, int dim, double sigma) {
  Vector v(static_cast<std::size_t>(dim));
  for (double& x : v) x = rng.normal(0.0, sigma);
  return v;
}

// Draws `count` prototypes with pairwise distance ≥ separation.
std::vector<Vector> draw_prototypes(Rng& rng, int count, int dim, double separation,
                                    const char* view) {
  constexpr int kMaxRetries = 1000;
  std::vector<Vector> out;
  for (int c = 0; c < count; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      Vector p = gaussian(rng, dim, 1.0);
      const bool ok = std::all_of(out.begin(), out.end(), [&](const Vector& q) {
        return std::sqrt(squared_distance(p, q)) >= separation;
      });
      if (ok) {
        out.push_back(std::move(p));
        placed = true;
      }
    }
    if (!placed)
      throw GenerationError(std::string("cannot place ") + view + " prototype " +
                            std::to_string(c) + " at separation " + std::to_string(separation) +
                            " in dimension " + std::to_string(dim));
  }
  return out;
}

// Translation plus a rotation of every consecutive coordinate pair by the
// same angle.
struct DomainTransform {
  Vector translation;
  double angle = 0.0;

  Vector apply(const Vector& x) const {
    Vector y = x;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (std::size_t i = 0; i + 1 < y.size(); i += 2) {
      y[i] = c * x[i] - s * x[i + 1];
      y[i + 1] = s * x[i] + c * x[i + 1];
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += translation[i];
    return y;
  }
};

DomainTransform make_transform(Rng& rng, int dim, double shift) {
  DomainTransform t;
  t.translation = Vector(static_cast<std::size_t>(dim), 0.0);
  t.angle = ScenarioSpec::kRotationPerShift * shift;
  if (shift > 0.0) {
    Vector dir = gaussian(rng, dim, 1.0);
    const double n = l2_norm(dir);
    for (std::size_t i = 0; i < dir.size(); ++i) t.translation[i] = shift * dir[i] / n;
  }
  return t;
}

Vector add_noise(const Vector& base, Rng& rng, double sigma) {
  Vector v = base;
  if (sigma > 0.0)
    for (double& x : v) x += rng.normal(0.0, sigma);
  return v;
}

std::string sample_id(char prefix, std::size_t i) {
  std::ostringstream os;
  os << prefix << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

Dataset generate(const ScenarioSpec& spec) {
  spec.validate();
  Rng proto_rng(spec.seed, 1);
  Rng shift_rng(spec.seed, 2);
  Rng noise_rng(spec.seed, 3);

  const int n_src_classes = spec.n_common + spec.n_source_private;
  const int n_classes = n_src_classes + spec.n_target_private;
  const bool token = spec.mode == GenerationMode::token;

  Dataset d;
  Manifest& m = d.manifest;
  for (int c = 0; c < spec.n_common; ++c) {
    m.class_names.push_back("common_" + std::to_string(c));
    m.common_classes.push_back(c);
  }
  for (int c = 0; c < spec.n_source_private; ++c) {
    m.class_names.push_back("source_private_" + std::to_string(c));
    m.source_private_classes.push_back(spec.n_common + c);
  }
  for (int c = 0; c < spec.n_target_private; ++c) {
    m.class_names.push_back("target_private_" + std::to_string(c));
    m.target_private_classes.push_back(n_src_classes + c);
  }

  // Class prototypes in each view; in token mode the "view" is the flattened
  // token matrix and feat/attn come from a fixed reference encoder.
  const int token_dim = (spec.patches + 1) * spec.d_model;
  std::vector<Vector> feat_protos, attn_protos, token_protos;
  if (token) {
    token_protos = draw_prototypes(proto_rng, n_classes, token_dim, spec.class_separation, "token");
  } else {
    feat_protos = draw_prototypes(proto_rng, n_classes, spec.feat_dim, spec.class_separation, "feature");
    attn_protos = draw_prototypes(proto_rng, n_classes, spec.attn_dim, spec.class_separation, "attention");
  }
  const DomainTransform feat_shift = make_transform(shift_rng, spec.feat_dim, spec.domain_shift);
  const DomainTransform attn_shift = make_transform(shift_rng, spec.attn_dim, spec.domain_shift);
  const DomainTransform token_shift = make_transform(shift_rng, token_dim, spec.domain_shift);

  EncoderParams reference;
  if (token) {
    EncoderConfig ec;
    ec.patches = static_cast<std::size_t>(spec.patches);
    ec.d_model = static_cast<std::size_t>(spec.d_model);
    ec.d_z = static_cast<std::size_t>(spec.feat_dim);
    if (static_cast<int>(ec.attention_dim()) != spec.attn_dim)
      throw GenerationError("token mode: attn_dim must equal heads·(patches+1)² = " +
                            std::to_string(ec.attention_dim()));
    Rng enc_rng(spec.seed, 4);
    reference = EncoderParams::random(ec, enc_rng);
    m.input_dim = token_dim;
  }

  auto emit = [&](Domain dom, int cls, std::size_t index) {
    Sample s;
    s.domain = dom;
    s.id = sample_id(dom == Domain::source ? 's' : 't', index);
    s.ground_truth = cls;
    s.label = dom == Domain::source ? cls : -1;
    const auto c = static_cast<std::size_t>(cls);
    if (token) {
      const Vector base = dom == Domain::source ? token_protos[c] : token_shift.apply(token_protos[c]);
      s.input = add_noise(base, noise_rng, spec.noise_sigma);
      const AttentionOutput out = encoder_forward(
          TokenSequence::from_flat(s.input, static_cast<std::size_t>(spec.d_model)), reference);
      s.feat = out.features;
      s.attn = out.flattened;
    } else {
      const Vector fb = dom == Domain::source ? feat_protos[c] : feat_shift.apply(feat_protos[c]);
      const Vector ab = dom == Domain::source ? attn_protos[c] : attn_shift.apply(attn_protos[c]);
      s.feat = add_noise(fb, noise_rng, spec.noise_sigma);
      s.attn = add_noise(ab, noise_rng, spec.noise_sigma);
    }
    d.samples.push_back(std::move(s));
  };

  std::size_t src_index = 0;
  for (int cls = 0; cls < n_src_classes; ++cls)
    for (int i = 0; i < spec.source_samples_per_class; ++i) emit(Domain::source, cls, src_index++);
  std::size_t tgt_index = 0;
  std::vector<int> target_classes(m.common_classes);
  target_classes.insert(target_classes.end(), m.target_private_classes.begin(),
                        m.target_private_classes.end());
  for (int cls : target_classes)
    for (int i = 0; i < spec.target_samples_per_class; ++i) emit(Domain::target, cls, tgt_index++);

  m.feat_dim = spec.feat_dim;
  m.attn_dim = spec.attn_dim;
  m.n_source = static_cast<int>(src_index);
  m.n_target = static_cast<int>(tgt_index);
  m.spec = spec;
  return d;
}

namespace {

json manifest_to_json(const Manifest& m) {
  json j{{"format_version", m.format_version},
         {"feat_dim", m.feat_dim},
         {"attn_dim", m.attn_dim},
         {"input_dim", m.input_dim},
         {"n_source", m.n_source},
         {"n_target", m.n_target},
         {"class_names", m.class_names},
         {"common_classes", m.common_classes},
         {"source_private_classes", m.source_private_classes},
         {"target_private_classes", m.target_private_classes}};
  if (m.spec) j["spec"] = *m.spec;
  return j;
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1)
    throw DataError("manifest: unsupported format_version " + std::to_string(m.format_version));
  m.feat_dim = j.at("feat_dim").get<int>();
  m.attn_dim = j.at("attn_dim").get<int>();
  m.input_dim = j.value("input_dim", 0);
  m.n_source = j.at("n_source").get<int>();
  m.n_target = j.at("n_target").get<int>();
  m.class_names = j.value("class_names", std::vector<std::string>{});
  m.common_classes = j.value("common_classes", std::vector<int>{});
  m.source_private_classes = j.value("source_private_classes", std::vector<int>{});
  m.target_private_classes = j.value("target_private_classes", std::vector<int>{});
  if (j.contains("spec")) m.spec = j.at("spec").get<ScenarioSpec>();
  return m;
}

}  // namespace

void save(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest_to_json(d.manifest).dump(2) << '\n';
  }
  std::ofstream out(dir / "samples.csv");
  if (!out) throw DataError("cannot write " + (dir / "samples.csv").string());
  const Manifest& m = d.manifest;
  out << "id,domain,label,ground_truth";
  for (int i = 0; i < m.feat_dim; ++i) out << ",feat_" << i;
  for (int i = 0; i < m.attn_dim; ++i) out << ",attn_" << i;
  for (int i = 0; i < m.input_dim; ++i) out << ",input_" << i;
  out << '\n';
  for (const auto& s : d.samples) {
    out << s.id << ',' << to_string(s.domain) << ',' << s.label << ',' << s.ground_truth;
    for (double x : s.feat) out << ',' << format_double(x);
    for (double x : s.attn) out << ',' << format_double(x);
    for (double x : s.input) out << ',' << format_double(x);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + (dir / "samples.csv").string());
}

Dataset load(const std::filesystem::path& dir) {
  Dataset d;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
    try {
      d.manifest = manifest_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw DataError("manifest.json: " + std::string(e.what()));
    }
  }
  const Manifest& m = d.manifest;
  if (m.feat_dim < 1 || m.attn_dim < 1 || m.input_dim < 0)
    throw DataError("manifest.json: dimensions must be positive");
  std::ifstream in(dir / "samples.csv");
  if (!in) throw DataError("cannot open " + (dir / "samples.csv").string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("samples.csv line 1: missing header");
  const std::size_t expected = 4 + static_cast<std::size_t>(m.feat_dim + m.attn_dim + m.input_dim);
  const auto header = split_csv_line(line);
  if (header.size() != expected)
    throw DataError("samples.csv line 1: header has " + std::to_string(header.size()) +
                    " columns, manifest implies " + std::to_string(expected));
  std::size_t line_no = 1;
  int n_source = 0;
  int n_target = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = "samples.csv line " + std::to_string(line_no);
    if (f.size() != expected)
      throw DataError(where + ": expected " + std::to_string(expected) + " columns, got " +
                      std::to_string(f.size()) + " (feat_dim=" + std::to_string(m.feat_dim) +
                      ", attn_dim=" + std::to_string(m.attn_dim) + ")");
    try {
      Sample s;
      s.id = f[0];
      if (f[1] == "source")
        s.domain = Domain::source;
      else if (f[1] == "target")
        s.domain = Domain::target;
      else
        throw ArgumentError("unknown domain '" + f[1] + "'");
      s.label = parse_int(f[2]);
      s.ground_truth = parse_int(f[3]);
      std::size_t col = 4;
      auto read = [&](Vector& v, int n) {
        v.resize(static_cast<std::size_t>(n));
        for (double& x : v) x = parse_double(f[col++]);
      };
      read(s.feat, m.feat_dim);
      read(s.attn, m.attn_dim);
      read(s.input, m.input_dim);
      if (s.domain == Domain::source && s.label != s.ground_truth)
        throw ArgumentError("source label differs from ground truth");
      if (s.domain == Domain::target && s.label != -1)
        throw ArgumentError("target label must be -1");
      (s.domain == Domain::source ? n_source : n_target) += 1;
      d.samples.push_back(std::move(s));
    } catch (const ArgumentError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (n_source != m.n_source || n_target != m.n_target)
    throw DataError("samples.csv: counts (" + std::to_string(n_source) + " source, " +
                    std::to_string(n_target) + " target) differ from manifest (" +
                    std::to_string(m.n_source) + ", " + std::to_string(m.n_target) + ")");
  return d;
}

ProtocolSplit split_for_protocol(const Dataset& d) {
  ProtocolSplit out;
  std::set<int> source_classes;
  std::set<int> target_classes;
  for (const auto& s : d.samples) {
    if (s.domain == Domain::source) {
      out.source.push_back(s);
      source_classes.insert(s.ground_truth);
    } else {
      Sample t = s;
      t.label = -1;
      out.target_ground_truth.push_back(s.ground_truth);
      target_classes.insert(s.ground_truth);
      out.target.push_back(std::move(t));
    }
  }
  if (out.source.empty() || out.target.empty())
    throw ArgumentError("split_for_protocol: dataset needs both source and target samples");
  std::set_intersection(source_classes.begin(), source_classes.end(), target_classes.begin(),
                        target_classes.end(), std::back_inserter(out.common_classes));
  return out;
}

const Vector& model_input(const Sample& s) { return s.input.empty() ? s.feat : s.input; }

}  // namespace uniam
