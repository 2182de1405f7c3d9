#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fatsim/checkpoint.hpp"
#include "fatsim/errors.hpp"
#include "fatsim/experiment.hpp"

namespace fs = std::filesystem;
using namespace fatsim;

namespace {

int run_command(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
                bool sweep, bool quiet) {
  const ExperimentConfig cfg = load_config(config_path, seed);
  std::ostream* log = quiet ? nullptr : &std::cerr;
  if (sweep) {
    run_strategy_sweep(cfg, out_dir, log);
  } else {
    run_experiment(cfg, out_dir, log);
  }
  return kExitOk;
}

int eval_command(const std::string& checkpoint, const std::string& data_spec, std::string config_path) {
  if (config_path.empty()) {
    config_path = (fs::path(checkpoint).parent_path() / "manifest.json").string();
    if (!fs::exists(config_path)) {
      throw ConfigError("no --config given and no manifest.json next to " + checkpoint);
    }
  }
  const ExperimentConfig cfg = load_config(config_path);
  const ParameterSet params = load_checkpoint(checkpoint);
  const Dataset data = resolve_data_spec(data_spec, cfg);
  const EvalReport r = evaluate(params, cfg, data);
  std::cout << "{\"samples\": " << r.samples << ", \"accuracy\": " << format_real(r.accuracy)
            << ", \"robust_accuracy\": " << format_real(r.robust_accuracy) << "}\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated adversarial training simulator"};
  app.set_version_flag("--version", std::string("fatsim ") + version());
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, data_spec;
  std::optional<std::uint64_t> seed;
  bool sweep = false, quiet = false;

  auto* run = app.add_subcommand("run", "Run a federated training experiment");
  run->add_option("--config", config_path, "JSON config or run manifest")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed, "Override fed.seed (and any data seed left unset)");
  run->add_flag("--strategy-sweep", sweep, "Run every aggregator, one subdirectory each");
  run->add_flag("-q,--quiet", quiet, "No per-round progress on stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_spec, "test, train, or idx:<images>:<labels>")->required();
  eval->add_option("--config", config_path, "Config or manifest (default: manifest.json beside the checkpoint)");

  auto* report = app.add_subcommand("partition-report", "Print per-client shard sizes and labels");
  report->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return run_command(config_path, out_dir, seed, sweep, quiet);
    if (*eval) return eval_command(checkpoint, data_spec, config_path);
    if (*report) {
      std::cout << partition_report(load_config(config_path));
      return kExitOk;
    }
  } catch (const NumericalError& e) {
    std::cerr << "fatsim: aborted: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const FormatError& e) {
    std::cerr << "fatsim: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "fatsim: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FeasibilityError& e) {
    std::cerr << "fatsim: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "fatsim: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
