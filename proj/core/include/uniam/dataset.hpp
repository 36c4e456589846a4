#pragma once

// Synthetic universal-DA scenarios and the on-disk dataset format
// (manifest.json + samples.csv).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uniam/domain.hpp"
#include "uniam/numeric.hpp"

namespace uniam {

enum class GenerationMode { embedding, token };

struct ScenarioSpec {
  int n_common = 5;
  int n_source_private = 3;
  int n_target_private = 3;
  int source_samples_per_class = 100;
  int target_samples_per_class = 100;
  int feat_dim = 16;
  int attn_dim = 32;
  /// Minimum pairwise distance between class prototypes (per view).
  double class_separation = 3.0;
  /// Norm of the target translation; the rotation angle is
  /// kRotationPerShift·domain_shift radians.
  double domain_shift = 1.0;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;
  GenerationMode mode = GenerationMode::embedding;
  /// Token mode only: patch count and token width of the generated inputs.
  int patches = 3;
  int d_model = 16;

  static constexpr double kRotationPerShift = 0.2;

  int num_source_classes() const { return n_common + n_source_private; }
  void validate() const;
};

ScenarioSpec scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec load_scenario(const std::filesystem::path& path);

struct Sample {
  std::string id;
  Domain domain = Domain::source;
  /// −1 for target samples (hidden).
  int label = -1;
  int ground_truth = -1;
  Vector feat;
  Vector attn;
  /// Raw G_f input in token mode (flattened tokens); empty otherwise.
  Vector input;

  bool operator==(const Sample&) const = default;
};

struct Manifest {
  int format_version = 1;
  int feat_dim = 0;
  int attn_dim = 0;
  int input_dim = 0;
  int n_source = 0;  // m
  int n_target = 0;  // n
  /// Indexed by class id.
  std::vector<std::string> class_names;
  std::vector<int> common_classes;
  std::vector<int> source_private_classes;
  std::vector<int> target_private_classes;
  std::optional<ScenarioSpec> spec;

  int num_source_classes() const {
    return static_cast<int>(common_classes.size() + source_private_classes.size());
  }
  bool operator==(const Manifest&) const;
};

struct Dataset {
  Manifest manifest;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

Dataset generate(const ScenarioSpec& spec);

void save(const Dataset& d, const std::filesystem::path& dir);
Dataset load(const std::filesystem::path& dir);

/// Source samples keep labels; target samples have label −1 and their
/// ground truth moves to `target_ground_truth`, which only evaluation reads.
struct ProtocolSplit {
  std::vector<Sample> source;
  std::vector<Sample> target;
  std::vector<int> target_ground_truth;
  std::vector<int> common_classes;
};

ProtocolSplit split_for_protocol(const Dataset& d);

/// Input rows for G_f: `input` when present, else `feat`.
const Vector& model_input(const Sample& s);

}  // namespace uniam
