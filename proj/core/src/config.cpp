#include "fatsim/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fatsim/errors.hpp"
#include "json.hpp"

namespace fatsim {

using Json = nlohmann::ordered_json;

std::string to_string(DataConfig::Source source) { return source == DataConfig::Source::Blobs ? "blobs" : "idx"; }

std::string to_string(OutputConfig::Checkpoints c) {
  switch (c) {
    case OutputConfig::Checkpoints::None:
      return "none";
    case OutputConfig::Checkpoints::Final:
      return "final";
    case OutputConfig::Checkpoints::Every:
      return "every";
  }
  return "?";
}

namespace {

// One JSON object of the config; remembers which members were read so the
// leftovers can be reported as unknown keys.
class Section {
 public:
  Section(const Json* obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (obj_ != nullptr && !obj_->is_object()) throw ConfigError(prefix_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_ != nullptr && obj_->contains(key);
  }

  const Json* child(const std::string& key) { return has(key) ? &obj_->at(key) : nullptr; }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  template <typename T>
  bool read_unsigned(const std::string& key, T& out) {
    if (!has(key)) return false;
    const Json& v = obj_->at(key);
    if (!v.is_number_unsigned()) throw ConfigError(path(key) + ": expected a non-negative integer");
    out = static_cast<T>(v.get<std::uint64_t>());
    return true;
  }

  bool read_int(const std::string& key, int& out) {
    if (!has(key)) return false;
    const Json& v = obj_->at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < -1000000000 || x > 1000000000) throw ConfigError(path(key) + ": value out of range");
    out = static_cast<int>(x);
    return true;
  }

  // Numbers, or a fraction string such as "8/255".
  bool read_real(const std::string& key, double& out) {
    if (!has(key)) return false;
    const Json& v = obj_->at(key);
    if (v.is_number()) {
      out = v.get<double>();
    } else if (v.is_string()) {
      out = parse_fraction(v.get<std::string>(), path(key));
    } else {
      throw ConfigError(path(key) + ": expected a number");
    }
    return true;
  }

  bool read_bool(const std::string& key, bool& out) {
    if (!has(key)) return false;
    const Json& v = obj_->at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
    out = v.get<bool>();
    return true;
  }

  bool read_string(const std::string& key, std::string& out) {
    if (!has(key)) return false;
    const Json& v = obj_->at(key);
    if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
    out = v.get<std::string>();
    return true;
  }

  void reject_unknown() const {
    if (obj_ == nullptr) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

 private:
  static double parse_number(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(where + ": cannot parse '" + std::string(s) + "' as a number");
    }
    return v;
  }

  static double parse_fraction(const std::string& s, const std::string& where) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return parse_number(s, where);
    const double den = parse_number(std::string_view(s).substr(slash + 1), where);
    if (den == 0.0) throw ConfigError(where + ": zero denominator in '" + s + "'");
    return parse_number(std::string_view(s).substr(0, slash), where) / den;
  }

  const Json* obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void parse_model(Section s, ModelConfig& m) {
  std::size_t size = 0;
  if (s.read_unsigned("image_size", size)) {
    if (s.has("image_height") || s.has("image_width")) {
      throw ConfigError("model.image_size cannot be combined with model.image_height/image_width");
    }
    m.image_h = m.image_w = size;
  }
  s.read_unsigned("image_height", m.image_h);
  s.read_unsigned("image_width", m.image_w);
  s.read_unsigned("channels", m.channels);
  s.read_unsigned("patch_size", m.patch_size);
  s.read_unsigned("embed_dim", m.embed_dim);
  s.read_unsigned("num_heads", m.num_heads);
  s.read_unsigned("depth", m.depth);
  s.read_unsigned("num_classes", m.num_classes);
  std::string head;
  if (s.read_string("head", head)) m.head = parse_head_type(head);
  s.reject_unknown();
}

void parse_attack(Section s, AttackConfig& a) {
  s.read_real("epsilon", a.epsilon);
  s.read_real("alpha", a.alpha);
  s.read_int("steps", a.steps);
  s.read_bool("random_start", a.random_start);
  s.reject_unknown();
}

struct FedExplicit {
  bool lr = false, lr_decay = false;
};

FedExplicit parse_fed(Section s, FedConfig& f) {
  FedExplicit ex;
  s.read_unsigned("clients", f.clients);
  s.read_real("fraction", f.fraction);
  s.read_int("rounds", f.rounds);
  s.read_int("local_epochs", f.local_epochs);
  s.read_unsigned("batch_size", f.batch_size);
  ex.lr = s.read_real("lr", f.lr);
  ex.lr_decay = s.read_real("lr_decay", f.lr_decay);
  s.read_real("momentum", f.momentum);
  s.read_real("adv_ratio", f.adv_ratio);
  std::string agg;
  if (s.read_string("aggregator", agg)) f.aggregator.kind = parse_aggregator_kind(agg);
  s.read_real("mu", f.aggregator.mu);
  s.read_real("q", f.aggregator.q);
  s.read_unsigned("seed", f.seed);
  s.read_bool("shuffle_batches", f.shuffle_batches);
  s.read_bool("last_layer_bias", f.last_layer_bias);
  s.read_bool("momentum_aware_controls", f.momentum_aware_controls);
  s.read_unsigned("threads", f.threads);
  s.reject_unknown();
  return ex;
}

struct DataExplicit {
  bool seed = false, partition_seed = false;
};

DataExplicit parse_data(Section s, DataConfig& d) {
  DataExplicit ex;
  std::string source;
  if (s.read_string("source", source)) {
    if (source == "blobs") {
      d.source = DataConfig::Source::Blobs;
    } else if (source == "idx") {
      d.source = DataConfig::Source::Idx;
    } else {
      throw ConfigError("data.source: expected 'blobs' or 'idx', got '" + source + "'");
    }
  }
  s.read_real("spread", d.spread);
  s.read_real("contrast", d.contrast);
  s.read_unsigned("train_per_class", d.train_per_class);
  s.read_unsigned("test_per_class", d.test_per_class);
  ex.seed = s.read_unsigned("seed", d.seed);
  s.read_string("train_images", d.train_images);
  s.read_string("train_labels", d.train_labels);
  s.read_string("test_images", d.test_images);
  s.read_string("test_labels", d.test_labels);
  s.read_unsigned("test_limit", d.test_limit);

  std::string partition = "iid";
  s.read_string("partition", partition);
  int c = 0;
  const bool has_c = s.read_int("classes_per_client", c);
  if (partition == "iid") {
    if (has_c) throw ConfigError("data.classes_per_client is only valid with partition 'non-iid'");
    d.partition.kind = PartitionSpec::Kind::Iid;
    d.partition.classes_per_client = 0;
  } else if (partition == "non-iid") {
    if (!has_c) throw ConfigError("data.partition 'non-iid' requires data.classes_per_client");
    d.partition.kind = PartitionSpec::Kind::ClassRestricted;
    d.partition.classes_per_client = c;
  } else if (partition.starts_with("non-iid(") && partition.ends_with(")")) {
    const std::string inner = partition.substr(8, partition.size() - 9);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(inner.data(), inner.data() + inner.size(), v);
    if (ec != std::errc() || ptr != inner.data() + inner.size()) {
      throw ConfigError("data.partition: cannot parse '" + partition + "'");
    }
    if (has_c && c != v) throw ConfigError("data.partition and data.classes_per_client disagree");
    d.partition.kind = PartitionSpec::Kind::ClassRestricted;
    d.partition.classes_per_client = v;
  } else {
    throw ConfigError("data.partition: expected 'iid', 'non-iid' or 'non-iid(c)', got '" + partition + "'");
  }
  ex.partition_seed = s.read_unsigned("partition_seed", d.partition.seed);
  s.reject_unknown();
  return ex;
}

void parse_output(Section s, OutputConfig& o) {
  std::string ck;
  if (s.read_string("checkpoints", ck)) {
    if (ck == "none") {
      o.checkpoints = OutputConfig::Checkpoints::None;
    } else if (ck == "final") {
      o.checkpoints = OutputConfig::Checkpoints::Final;
    } else if (ck == "every") {
      o.checkpoints = OutputConfig::Checkpoints::Every;
    } else {
      throw ConfigError("output.checkpoints: expected 'none', 'final' or 'every', got '" + ck + "'");
    }
  }
  s.read_bool("drift", o.drift);
  if (const Json* layers = s.child("drift_layers")) {
    if (!layers->is_array()) throw ConfigError("output.drift_layers: expected an array of layer indices");
    o.drift_layers.clear();
    for (const auto& v : *layers) {
      if (!v.is_number_unsigned()) throw ConfigError("output.drift_layers: expected non-negative integers");
      o.drift_layers.push_back(v.get<std::size_t>());
    }
  }
  s.read_unsigned("drift_samples", o.drift_samples);
  s.reject_unknown();
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  fed.validate();
  if (data.source == DataConfig::Source::Blobs) {
    if (data.train_per_class == 0 || data.test_per_class == 0) {
      throw ConfigError("data.train_per_class and data.test_per_class must be >= 1");
    }
    if (!std::isfinite(data.spread) || data.spread < 0.0) throw ConfigError("data.spread must be finite and >= 0");
    if (!std::isfinite(data.contrast) || data.contrast <= 0.0) {
      throw ConfigError("data.contrast must be finite and > 0");
    }
  } else if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
             data.test_labels.empty()) {
    throw ConfigError("data.source 'idx' requires train_images, train_labels, test_images and test_labels");
  }
  if (data.partition.kind == PartitionSpec::Kind::ClassRestricted) {
    const int c = data.partition.classes_per_client;
    const auto nc = static_cast<int>(model.num_classes);
    if (c < 1 || c > nc) {
      throw ConfigError("data.classes_per_client must lie in [1, " + std::to_string(nc) + "]");
    }
    if (static_cast<std::size_t>(c) * fed.clients < model.num_classes) {
      throw ConfigError("non-iid(" + std::to_string(c) + ") with " + std::to_string(fed.clients) +
                        " clients cannot cover " + std::to_string(nc) + " classes");
    }
  }
  for (std::size_t l : output.drift_layers) {
    if (l >= model.depth) {
      throw ConfigError("output.drift_layers: layer " + std::to_string(l) + " outside depth " +
                        std::to_string(model.depth));
    }
  }
  if (output.drift && output.drift_samples == 0) throw ConfigError("output.drift_samples must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  // A run manifest carries the resolved config under "config".
  if (doc.contains("format") && doc["format"] == "fatsim-manifest") {
    if (!doc.contains("config")) throw ConfigError("manifest has no 'config' member");
    doc = Json(doc["config"]);
  }

  ExperimentConfig cfg;
  Section root(&doc, "");
  parse_model(Section(root.child("model"), "model"), cfg.model);
  parse_attack(Section(root.child("attack"), "attack"), cfg.fed.attack);
  const FedExplicit fed_ex = parse_fed(Section(root.child("fed"), "fed"), cfg.fed);
  const DataExplicit data_ex = parse_data(Section(root.child("data"), "data"), cfg.data);
  parse_output(Section(root.child("output"), "output"), cfg.output);
  root.reject_unknown();

  if (seed) cfg.fed.seed = *seed;
  if (!data_ex.seed) cfg.data.seed = cfg.fed.seed;
  if (!data_ex.partition_seed) cfg.data.partition.seed = cfg.fed.seed;
  // Natural (r = 0) training defaults to the smaller schedule.
  const bool natural = cfg.fed.adv_ratio == 0.0;
  if (!fed_ex.lr) cfg.fed.lr = natural ? 0.03 : 0.1;
  if (!fed_ex.lr_decay) cfg.fed.lr_decay = natural ? 0.035 : 0.05;
  if (cfg.output.drift_layers.empty() && cfg.model.depth > 0) {
    cfg.output.drift_layers = {0};
    if (cfg.model.depth > 1) cfg.output.drift_layers.push_back(cfg.model.depth - 1);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed);
}

std::string config_to_json(const ExperimentConfig& cfg, int indent) {
  Json j;
  const ModelConfig& m = cfg.model;
  j["model"] = {{"image_height", m.image_h}, {"image_width", m.image_w}, {"channels", m.channels},
                {"patch_size", m.patch_size}, {"embed_dim", m.embed_dim},  {"num_heads", m.num_heads},
                {"depth", m.depth},           {"num_classes", m.num_classes}, {"head", to_string(m.head)}};
  const FedConfig& f = cfg.fed;
  j["fed"] = {{"clients", f.clients},
              {"fraction", f.fraction},
              {"rounds", f.rounds},
              {"local_epochs", f.local_epochs},
              {"batch_size", f.batch_size},
              {"lr", f.lr},
              {"lr_decay", f.lr_decay},
              {"momentum", f.momentum},
              {"adv_ratio", f.adv_ratio},
              {"aggregator", f.aggregator.name()},
              {"mu", f.aggregator.mu},
              {"q", f.aggregator.q},
              {"seed", f.seed},
              {"shuffle_batches", f.shuffle_batches},
              {"last_layer_bias", f.last_layer_bias},
              {"momentum_aware_controls", f.momentum_aware_controls},
              {"threads", f.threads}};
  j["attack"] = {{"epsilon", f.attack.epsilon},
                 {"alpha", f.attack.alpha},
                 {"steps", f.attack.steps},
                 {"random_start", f.attack.random_start}};
  const DataConfig& d = cfg.data;
  Json data = {{"source", to_string(d.source)}};
  if (d.source == DataConfig::Source::Blobs) {
    data["spread"] = d.spread;
    data["contrast"] = d.contrast;
    data["train_per_class"] = d.train_per_class;
    data["test_per_class"] = d.test_per_class;
    data["seed"] = d.seed;
  } else {
    data["train_images"] = d.train_images;
    data["train_labels"] = d.train_labels;
    data["test_images"] = d.test_images;
    data["test_labels"] = d.test_labels;
  }
  data["test_limit"] = d.test_limit;
  if (d.partition.kind == PartitionSpec::Kind::Iid) {
    data["partition"] = "iid";
  } else {
    data["partition"] = "non-iid";
    data["classes_per_client"] = d.partition.classes_per_client;
  }
  data["partition_seed"] = d.partition.seed;
  j["data"] = std::move(data);
  j["output"] = {{"checkpoints", to_string(cfg.output.checkpoints)},
                 {"drift", cfg.output.drift},
                 {"drift_layers", cfg.output.drift_layers},
                 {"drift_samples", cfg.output.drift_samples}};
  return j.dump(indent);
}

}  // namespace fatsim
