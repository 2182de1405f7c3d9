#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fatsim/data.hpp"
#include "fatsim/federation.hpp"
#include "fatsim/model.hpp"

namespace fatsim {

struct DataConfig {
  enum class Source { Blobs, Idx };

  Source source = Source::Blobs;
  // Blob generation; image shape and class count come from the model.
  double spread = 0.5;
  double contrast = 0.1;
  std::size_t train_per_class = 60;
  std::size_t test_per_class = 20;
  std::uint64_t seed = 0;
  // IDX ingestion.
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t test_limit = 0;  // evaluate on the first n test examples; 0 = all
  PartitionSpec partition;
};

std::string to_string(DataConfig::Source source);

struct OutputConfig {
  enum class Checkpoints { None, Final, Every };

  Checkpoints checkpoints = Checkpoints::Final;
  bool drift = false;                    // write drift.csv (SVCCA between server and clients)
  std::vector<std::size_t> drift_layers;  // empty: {0, depth - 1}
  std::size_t drift_samples = 64;
};

std::string to_string(OutputConfig::Checkpoints c);

struct ExperimentConfig {
  ModelConfig model;
  FedConfig fed;
  DataConfig data;
  OutputConfig output;

  void validate() const;
};

// Parses a config document (or a run manifest, whose "config" member is
// used). Missing keys take defaults, unknown keys are rejected. Unset data
// and partition seeds follow fed.seed; `seed` overrides fed.seed.
ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed = std::nullopt);

// Fully resolved config as JSON text; parse_config of the result
// reproduces the same config.
std::string config_to_json(const ExperimentConfig& cfg, int indent = 2);

}  // namespace fatsim
