#include "fatsim/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "fatsim/analysis.hpp"
#include "fatsim/checkpoint.hpp"
#include "fatsim/errors.hpp"
#include "json.hpp"

#ifndef FATSIM_VERSION
#define FATSIM_VERSION "0.0.0"
#endif

namespace fatsim {

using Json = nlohmann::ordered_json;

const char* version() { return FATSIM_VERSION; }

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  return out;
}

void check_stream(const std::ostream& out, const std::filesystem::path& path) {
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

template <typename T, typename Fn>
std::string joined(const std::vector<T>& xs, Fn fmt) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) s += ';';
    s += fmt(xs[i]);
  }
  return s;
}

// List-valued fields are ';'-separated inside a quoted CSV field.
std::string quoted(const std::string& s) { return "\"" + s + "\""; }

Dataset take_first(Dataset ds, std::size_t n) {
  if (n > 0 && n < ds.examples.size()) ds.examples.resize(n);
  return ds;
}

void check_images(const Dataset& ds, const ModelConfig& m, const std::string& what) {
  if (ds.empty()) throw ConfigError(what + " set is empty");
  const Shape& s = ds.examples.front().image.shape();
  if (s != Shape{m.image_h, m.image_w, m.channels}) {
    throw ConfigError(what + " images are " + shape_str(s) + " but the model expects " +
                      shape_str(Shape{m.image_h, m.image_w, m.channels}));
  }
  if (ds.num_classes > static_cast<int>(m.num_classes)) {
    throw ConfigError(what + " set has " + std::to_string(ds.num_classes) + " classes but model.num_classes is " +
                      std::to_string(m.num_classes));
  }
}

Json manifest_base(const ExperimentConfig& cfg, const std::string& started) {
  Json m;
  m["format"] = "fatsim-manifest";
  m["software"] = std::string("fatsim ") + version();
  m["metrics_schema"] = kMetricsSchema;
  m["seed"] = cfg.fed.seed;
  m["config"] = Json::parse(config_to_json(cfg));
  m["derived"] = {{"aggregator", cfg.fed.aggregator.label()},
                  {"partition", to_string(cfg.data.partition)},
                  {"clients_per_round", cfg.fed.clients_per_round()},
                  {"adversarial_per_batch", adversarial_count(cfg.fed.batch_size, cfg.fed.adv_ratio)},
                  {"gradient_clipping", "none"},
                  {"robust_eval_attack", "training attack config"}};
  m["started"] = started;
  return m;
}

void write_json(const Json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  check_stream(out, path);
}

std::vector<std::size_t> strided_indices(std::size_t size, std::size_t n) {
  n = std::min(n, size);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back(i * size / n);
  return idx;
}

// SVCCA drift between the aggregated model and clients 1 and 4 (1-based,
// matching the usual plot labels) on a fixed probe sample.
class DriftWriter {
 public:
  DriftWriter(const ExperimentConfig& cfg, const Dataset& test, const std::filesystem::path& path)
      : cfg_(cfg), path_(path), out_(open_out(path)) {
    for (std::size_t i : strided_indices(test.size(), cfg.output.drift_samples)) probe_.examples.push_back(test.examples[i]);
    probe_.num_classes = test.num_classes;
    out_ << "round,layer,pair,mean_correlation,retained\n";
  }

  void record(const RoundContext& ctx) {
    const ParameterSet* client1 = nullptr;
    const ParameterSet* client4 = nullptr;
    for (const auto& c : ctx.result.clients) {
      if (c.id == 0) client1 = &c.params;
      if (c.id == 3) client4 = &c.params;
    }
    for (std::size_t layer : cfg_.output.drift_layers) {
      const Tensor server = collect_activations(ctx.server.params, cfg_.model, probe_, layer);
      Tensor a1, a4;
      if (client1 != nullptr) a1 = collect_activations(*client1, cfg_.model, probe_, layer);
      if (client4 != nullptr) a4 = collect_activations(*client4, cfg_.model, probe_, layer);
      if (client1 != nullptr && client4 != nullptr) write(ctx.record.round, layer, "client1-vs-client4", a1, a4);
      if (client1 != nullptr) write(ctx.record.round, layer, "server-vs-client1", server, a1);
      if (client4 != nullptr) write(ctx.record.round, layer, "server-vs-client4", server, a4);
    }
    out_.flush();
    check_stream(out_, path_);
  }

 private:
  void write(int round, std::size_t layer, const char* pair, const Tensor& a, const Tensor& b) {
    std::string mean = "nan";
    std::size_t retained = 0;
    try {
      const SVCCAReport r = svcca(a, b);
      mean = format_real(r.mean_correlation);
      retained = r.retained;
    } catch (const InvalidArgument&) {
      // Constant activations have no directions to compare.
    }
    out_ << round << ',' << layer << ',' << pair << ',' << mean << ',' << retained << '\n';
  }

  const ExperimentConfig& cfg_;
  std::filesystem::path path_;
  std::ofstream out_;
  Dataset probe_;
};

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metrics_header() {
  return "round,train_loss,test_accuracy,robust_accuracy,lr,clients,similarities,weights";
}

std::string metrics_row(const RoundRecord& r) {
  std::ostringstream os;
  os << r.round << ',' << format_real(r.train_loss) << ',' << format_real(r.test_accuracy) << ','
     << format_real(r.robust_accuracy) << ',' << format_real(r.lr) << ','
     << quoted(joined(r.clients, [](std::size_t c) { return std::to_string(c); })) << ','
     << quoted(joined(r.similarities, format_real)) << ',' << quoted(joined(r.weights, format_real));
  return os.str();
}

std::string weights_header() { return "round,client,similarity,weight"; }

std::vector<std::string> weights_rows(const RoundRecord& r) {
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < r.clients.size(); ++i) {
    const double sim = i < r.similarities.size() ? r.similarities[i] : std::nan("");
    const double w = i < r.weights.size() ? r.weights[i] : std::nan("");
    rows.push_back(std::to_string(r.round) + "," + std::to_string(r.clients[i]) + "," + format_real(sim) + "," +
                   format_real(w));
  }
  return rows;
}

ExperimentData load_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  const ModelConfig& m = cfg.model;
  if (cfg.data.source == DataConfig::Source::Blobs) {
    BlobConfig b;
    b.num_classes = static_cast<int>(m.num_classes);
    b.height = m.image_h;
    b.width = m.image_w;
    b.channels = m.channels;
    b.spread = cfg.data.spread;
    b.contrast = cfg.data.contrast;
    b.seed = cfg.data.seed;
    d.train = generate_blobs(b, cfg.data.train_per_class, 0);
    d.test = generate_blobs(b, cfg.data.test_per_class, 1);
  } else {
    d.train = load_idx(cfg.data.train_images, cfg.data.train_labels);
    d.test = load_idx(cfg.data.test_images, cfg.data.test_labels);
  }
  d.test = take_first(std::move(d.test), cfg.data.test_limit);
  check_images(d.train, m, "training");
  check_images(d.test, m, "test");
  return d;
}

std::vector<RoundRecord> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                        std::ostream* log) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatError(FormatError::Kind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  const ExperimentData data = load_data(cfg);
  Json manifest = manifest_base(cfg, utc_now());
  manifest["status"] = "running";
  write_json(manifest, out_dir / "manifest.json");

  const auto metrics_path = out_dir / "metrics.csv";
  const auto weights_path = out_dir / "weights.csv";
  const auto timings_path = out_dir / "timings.csv";
  auto metrics = open_out(metrics_path);
  auto weights = open_out(weights_path);
  auto timings = open_out(timings_path);
  metrics << metrics_header() << '\n';
  weights << weights_header() << '\n';
  timings << "round,wall_ms\n";

  std::unique_ptr<DriftWriter> drift;
  if (cfg.output.drift) drift = std::make_unique<DriftWriter>(cfg, data.test, out_dir / "drift.csv");
  if (cfg.output.checkpoints == OutputConfig::Checkpoints::Every) {
    std::filesystem::create_directories(out_dir / "checkpoints", ec);
    if (ec) throw FormatError(FormatError::Kind::Io, "cannot create checkpoint directory: " + ec.message());
  }

  ParameterSet final_params;
  const auto observer = [&](const RoundContext& ctx) {
    const RoundRecord& r = ctx.record;
    metrics << metrics_row(r) << '\n';
    for (const auto& row : weights_rows(r)) weights << row << '\n';
    timings << r.round << ',' << format_real(r.wall_ms) << '\n';
    metrics.flush();
    weights.flush();
    timings.flush();
    check_stream(metrics, metrics_path);
    check_stream(weights, weights_path);
    check_stream(timings, timings_path);
    if (drift) drift->record(ctx);
    if (cfg.output.checkpoints == OutputConfig::Checkpoints::Every) {
      char name[32];
      std::snprintf(name, sizeof(name), "round_%04d.fatc", r.round);
      save_checkpoint(ctx.server.params, out_dir / "checkpoints" / name);
    }
    if (r.round == cfg.fed.rounds) final_params = ctx.server.params;
    if (log != nullptr) {
      *log << cfg.fed.aggregator.label() << " round " << r.round << "/" << cfg.fed.rounds << "  loss "
           << r.train_loss << "  acc " << r.test_accuracy << "  robust " << r.robust_accuracy << std::endl;
    }
  };

  std::vector<RoundRecord> records;
  try {
    records = run_federation(cfg.model, cfg.fed, cfg.data.partition, data.train, data.test, observer);
  } catch (const NumericalError& e) {
    manifest["status"] = "aborted";
    manifest["error"] = e.what();
    manifest["aborted_round"] = e.round();
    manifest["finished"] = utc_now();
    write_json(manifest, out_dir / "manifest.json");
    throw;
  }

  if (cfg.output.checkpoints != OutputConfig::Checkpoints::None) save_checkpoint(final_params, out_dir / "checkpoint.fatc");
  const RoundRecord& last = records.back();
  double best_robust = 0.0;
  for (const auto& r : records) best_robust = std::max(best_robust, r.robust_accuracy);
  manifest["status"] = "ok";
  manifest["finished"] = utc_now();
  manifest["summary"] = {{"rounds", records.size()},
                         {"final_train_loss", last.train_loss},
                         {"final_accuracy", last.test_accuracy},
                         {"final_robust_accuracy", last.robust_accuracy},
                         {"best_robust_accuracy", best_robust}};
  write_json(manifest, out_dir / "manifest.json");
  return records;
}

void run_strategy_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log) {
  using K = Aggregator::Kind;
  for (K kind : {K::FedAvg, K::FedProx, K::FedGate, K::Scaffold, K::FedWAvg}) {
    ExperimentConfig c = cfg;
    c.fed.aggregator.kind = kind;
    run_experiment(c, out_dir / c.fed.aggregator.name(), log);
  }
}

std::string partition_report(const ExperimentConfig& cfg) {
  const ExperimentData data = load_data(cfg);
  const auto shards = partition(data.train, cfg.fed.clients, cfg.data.partition);
  std::ostringstream os;
  os << "client,samples,num_labels,label_counts\n";
  for (std::size_t k = 0; k < shards.size(); ++k) {
    std::map<int, std::size_t> counts;
    for (const auto& e : shards[k].examples) ++counts[e.label];
    std::string hist;
    for (const auto& [label, n] : counts) {
      if (!hist.empty()) hist += ';';
      hist += std::to_string(label) + ":" + std::to_string(n);
    }
    os << k << ',' << shards[k].size() << ',' << counts.size() << ',' << quoted(hist) << '\n';
  }
  return os.str();
}

Dataset resolve_data_spec(const std::string& spec, const ExperimentConfig& cfg) {
  Dataset ds;
  if (spec == "test") {
    ds = load_data(cfg).test;
  } else if (spec == "train") {
    ds = load_data(cfg).train;
  } else if (spec.starts_with("idx:")) {
    const std::string rest = spec.substr(4);
    const auto colon = rest.find(':');
    if (colon == std::string::npos) throw ConfigError("data spec 'idx:' needs <images>:<labels>");
    ds = load_idx(rest.substr(0, colon), rest.substr(colon + 1));
  } else {
    throw ConfigError("unknown data spec '" + spec + "' (expected test, train or idx:<images>:<labels>)");
  }
  check_images(ds, cfg.model, "evaluation");
  return ds;
}

EvalReport evaluate(const ParameterSet& params, const ExperimentConfig& cfg, const Dataset& data) {
  EvalReport r;
  r.samples = data.size();
  r.accuracy = accuracy(params, cfg.model, data);
  Rng rng = eval_stream(cfg.fed, 0);
  r.robust_accuracy = robust_accuracy(params, cfg.model, data, cfg.fed.attack, rng);
  return r;
}

}  // namespace fatsim
