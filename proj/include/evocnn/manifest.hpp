#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "evocnn/engine.hpp"
#include "evocnn/nn.hpp"

namespace evocnn {

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  // "shape": no data, surrogate runs only. "synthetic": generated patterns.
  // "cifar10": binary batch files under `directory`.
  std::string kind = "shape";
  int height = 32, width = 32, channels = 3, classes = 10;
  // synthetic / cifar10 fields
  int train_per_class = 100;
  int val_per_class = 50;
  int test_per_class = 0;
  double noise = 0.25;          // synthetic only
  int downsample_to = 0;        // cifar10 only; 0 keeps 32x32
  std::string directory;        // cifar10 only
};

// Everything a run needs, parsed from one JSON file. The same file plus the
// same seed reproduces the same run under the surrogate evaluator.
struct RunManifest {
  ExperimentConfig cfg;
  std::string evaluator_kind = "surrogate";  // surrogate | cnn
  SurrogateParams surrogate;
  TrainHyper training;
  std::string fitness_split = "validation";  // validation | test
  DatasetSpec dataset;
  std::string output_dir;
};

RunManifest parse_manifest_text(const std::string& text);

struct LoadedManifest {
  RunManifest manifest;
  std::string raw_text;
  std::uint64_t hash = 0;  // fnv1a64 of the raw bytes
};

LoadedManifest load_manifest_file(const std::filesystem::path& path);

std::uint64_t manifest_hash(const std::string& raw_text);

// base | regularised | partial | combined, from (C > 0, schedule mode)
std::string approach_label(const ExperimentConfig& cfg);

}  // namespace evocnn
