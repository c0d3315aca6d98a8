#include "iskd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "iskd/format.hpp"
#include "iskd/json_io.hpp"

namespace iskd {

using nlohmann::json;

nlohmann::json config_to_json(const RunConfig& c) {
  const DatasetSpec& d = c.dataset;
  json dataset{{"kind", d.kind}, {"seed", d.seed}, {"mean", d.mean}, {"std", d.std}};
  if (d.kind == "synth") {
    dataset["n"] = d.n;
    dataset["image_size"] = d.image_size;
  } else {
    dataset["train_images"] = d.train_images;
    dataset["train_labels"] = d.train_labels;
    dataset["test_images"] = d.test_images;
    dataset["test_labels"] = d.test_labels;
    dataset["class_count"] = d.class_count;
  }
  return json{
      {"arch", c.arch},
      {"dataset", std::move(dataset)},
      {"epochs_per_iteration", c.epochs_per_iteration},
      {"max_iterations", c.max_iterations},
      {"kd", {{"alpha", c.kd.alpha}, {"temperature", c.kd.temperature}, {"t2_scale", c.kd.t2_scale}}},
      {"optim",
       {{"lr", c.optim.lr ? json(*c.optim.lr) : json(nullptr)},
        {"momentum", c.optim.momentum},
        {"weight_decay", c.optim.weight_decay},
        {"batch_size", c.optim.batch_size}}},
      {"epsilon", c.epsilon},
      {"seed", c.seed},
      {"save_epoch_checkpoints", c.save_epoch_checkpoints},
      {"baseline_total_epochs",
       c.baseline_total_epochs ? json(*c.baseline_total_epochs) : json(nullptr)},
      {"sweep", {{"alphas", c.alphas}, {"iteration", c.sweep_iteration}}},
      {"ts_relation", {{"baseline", c.ts_baseline}}},
  };
}

namespace {

/// Walks one JSON object, consuming known keys and rejecting the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("expected an object", prefix_.empty() ? "<root>" : prefix_);
  }

  /// Rejects any key that was never asked for.
  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key", path(key));
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError("expected a string", path(key));
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) out = number(*v, key);
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", path(key));
      out = v->get<bool>();
    }
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  void read(const std::string& key, U& out) {
    if (const json* v = find(key)) out = static_cast<U>(unsigned_int(*v, key));
  }

  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = find(key)) out = v->is_null() ? std::nullopt : std::optional(number(*v, key));
  }

  void read(const std::string& key, std::optional<std::size_t>& out) {
    if (const json* v = find(key)) {
      out = v->is_null() ? std::nullopt : std::optional<std::size_t>(unsigned_int(*v, key));
    }
  }

  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError("expected an array of numbers", path(key));
      out.clear();
      for (const auto& e : *v) out.push_back(number(e, key));
    }
  }

 private:
  double number(const json& v, const std::string& key) const {
    if (!v.is_number()) throw ConfigError("expected a number", path(key));
    return v.get<double>();
  }

  std::uint64_t unsigned_int(const json& v, const std::string& key) const {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) throw ConfigError("must be nonnegative", path(key));
    throw ConfigError("expected a nonnegative integer", path(key));
  }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  ObjectReader r(j, "dataset");
  r.read("kind", d.kind);
  r.read("n", d.n);
  r.read("image_size", d.image_size);
  r.read("seed", d.seed);
  r.read("train_images", d.train_images);
  r.read("train_labels", d.train_labels);
  r.read("test_images", d.test_images);
  r.read("test_labels", d.test_labels);
  r.read("mean", d.mean);
  r.read("std", d.std);
  r.read("class_count", d.class_count);
  r.finish();
  return d;
}

RunConfig read_config(const json& j) {
  RunConfig c;
  {
    ObjectReader r(j, "");
    r.read("arch", c.arch);
    if (const json* d = r.find("dataset")) c.dataset = dataset_from_json(*d);
    r.read("epochs_per_iteration", c.epochs_per_iteration);
    r.read("max_iterations", c.max_iterations);
    if (const json* kd = r.find("kd")) {
      ObjectReader k(*kd, "kd");
      k.read("alpha", c.kd.alpha);
      k.read("temperature", c.kd.temperature);
      k.read("t2_scale", c.kd.t2_scale);
      k.finish();
    }
    if (const json* o = r.find("optim")) {
      ObjectReader k(*o, "optim");
      k.read("lr", c.optim.lr);
      k.read("momentum", c.optim.momentum);
      k.read("weight_decay", c.optim.weight_decay);
      k.read("batch_size", c.optim.batch_size);
      k.finish();
    }
    r.read("epsilon", c.epsilon);
    r.read("seed", c.seed);
    r.read("save_epoch_checkpoints", c.save_epoch_checkpoints);
    r.read("baseline_total_epochs", c.baseline_total_epochs);
    if (const json* s = r.find("sweep")) {
      ObjectReader k(*s, "sweep");
      k.read("alphas", c.alphas);
      k.read("iteration", c.sweep_iteration);
      k.finish();
    }
    if (const json* t = r.find("ts_relation")) {
      ObjectReader k(*t, "ts_relation");
      k.read("baseline", c.ts_baseline);
      k.finish();
    }
    r.finish();
  }
  return c;
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c = read_config(j);
  c.validate();
  return c;
}

DatasetSpec parse_dataset_spec(std::string_view spec) {
  const auto colon = spec.find(':');
  DatasetSpec d;
  d.kind = std::string(spec.substr(0, colon));
  if (d.kind != "synth" && d.kind != "idx") {
    throw ConfigError("dataset spec must start with 'synth' or 'idx', got '" + std::string(spec) + "'",
                      "dataset");
  }
  if (colon == std::string_view::npos) return d;

  std::string_view rest = spec.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("expected key=value, got '" + std::string(item) + "'", "dataset");
    }
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    const auto as_uint = [&](const std::string& k) -> std::uint64_t {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(value, &used);
        if (used != value.size() || value.front() == '-') throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw ConfigError("expected a nonnegative integer, got '" + value + "'", "dataset." + k);
      }
    };
    const auto as_double = [&](const std::string& k) {
      try {
        return parse_double(value);
      } catch (const FormatError&) {
        throw ConfigError("expected a number, got '" + value + "'", "dataset." + k);
      }
    };
    if (key == "n") d.n = as_uint("n");
    else if (key == "size" || key == "image_size") d.image_size = as_uint("image_size");
    else if (key == "seed") d.seed = as_uint("seed");
    else if (key == "mean") d.mean = as_double("mean");
    else if (key == "std") d.std = as_double("std");
    else if (key == "classes" || key == "class_count") d.class_count = as_uint("class_count");
    else if (key == "train_images") d.train_images = value;
    else if (key == "train_labels") d.train_labels = value;
    else if (key == "test_images") d.test_images = value;
    else if (key == "test_labels") d.test_labels = value;
    else throw ConfigError("unknown key", "dataset." + key);
  }
  return d;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const ConfigOverrides& overrides) {
  json j = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file " + path->string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  RunConfig c = read_config(j);
  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.alpha) c.kd.alpha = *overrides.alpha;
  if (overrides.epochs) c.epochs_per_iteration = *overrides.epochs;
  if (overrides.arch) c.arch = *overrides.arch;
  if (overrides.dataset) c.dataset = parse_dataset_spec(*overrides.dataset);
  if (overrides.alphas) c.alphas = *overrides.alphas;
  if (overrides.epsilon) c.epsilon = *overrides.epsilon;
  if (overrides.max_iterations) c.max_iterations = *overrides.max_iterations;
  if (overrides.save_epoch_checkpoints) c.save_epoch_checkpoints = *overrides.save_epoch_checkpoints;
  if (overrides.total_epochs) c.baseline_total_epochs = *overrides.total_epochs;
  c.validate();
  return c;
}

}  // namespace iskd
