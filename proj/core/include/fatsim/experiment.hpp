#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fatsim/config.hpp"
#include "fatsim/federation.hpp"

namespace fatsim {

const char* version();

// Process exit statuses used by the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,      // bad arguments or config
  kExitIo = 2,         // unreadable / unwritable files, malformed binary input
  kExitNumerical = 3,  // NaN or Inf in aggregated parameters
  kExitFailure = 4,    // anything else
};

struct ExperimentData {
  Dataset train;
  Dataset test;
};

ExperimentData load_data(const ExperimentConfig& cfg);

// "%.17g"; round-trips every finite double.
std::string format_real(double v);

// Column layout of metrics.csv; bumped whenever columns change.
inline constexpr int kMetricsSchema = 1;
std::string metrics_header();
std::string metrics_row(const RoundRecord& r);
std::string weights_header();
std::vector<std::string> weights_rows(const RoundRecord& r);

// Runs one federation and writes manifest.json, metrics.csv, weights.csv,
// timings.csv, optional checkpoints and drift.csv into out_dir (created if
// needed). NumericalError propagates after the manifest records the abort.
std::vector<RoundRecord> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                        std::ostream* log = nullptr);

// Same config once per aggregator, each in out_dir/<aggregator name>.
void run_strategy_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Per-client shard sizes and label counts as CSV.
std::string partition_report(const ExperimentConfig& cfg);

struct EvalReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// spec: "test", "train", or "idx:<images>:<labels>".
Dataset resolve_data_spec(const std::string& spec, const ExperimentConfig& cfg);
EvalReport evaluate(const ParameterSet& params, const ExperimentConfig& cfg, const Dataset& data);

}  // namespace fatsim
