#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "iskd/distill.hpp"

namespace iskd {

/// Command-line values that take precedence over the config file. Each maps
/// to exactly one RunConfig field.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;           // seed
  std::optional<double> alpha;                 // kd.alpha
  std::optional<std::size_t> epochs;           // epochs_per_iteration
  std::optional<std::string> arch;             // arch
  std::optional<std::string> dataset;          // dataset (spec string)
  std::optional<std::vector<double>> alphas;   // sweep.alphas
  std::optional<double> epsilon;               // epsilon
  std::optional<std::size_t> max_iterations;   // max_iterations
  std::optional<bool> save_epoch_checkpoints;  // save_epoch_checkpoints
  std::optional<std::size_t> total_epochs;     // baseline_total_epochs
};

/// Strict reader: unknown keys, wrong types and constraint violations
/// throw ConfigError naming the dotted key. Missing keys take defaults.
RunConfig config_from_json(const nlohmann::json& j);

/// "synth[:n=6000,size=16,seed=7,mean=0.5,std=0.25]" or
/// "idx:train_images=PATH,train_labels=PATH[,test_images=PATH,test_labels=PATH,mean=F,std=F,classes=N]"
DatasetSpec parse_dataset_spec(std::string_view spec);

/// Reads `path` (if any), applies defaults, then overrides, then validates.
RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const ConfigOverrides& overrides = {});

}  // namespace iskd
