#pragma once

#include <optional>
#include <string>

#include "json.hpp"

#include "crl/training.hpp"

namespace crl {

/// Everything `crl train` needs: the training hyperparameters, where the data
/// lives and where results go. Relative paths are taken relative to the
/// directory holding the config file.
struct RunConfig {
  TrainConfig train;
  std::string train_data;
  std::optional<std::string> validation_data;
  std::optional<std::string> test_data;
  std::optional<int> num_classes;  // inferred from the labels when absent
  std::string out_dir = "out";

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict: unknown keys are rejected at every level.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Loads and validates a run config, resolving relative paths against the
/// config file's directory.
RunConfig load_run_config(const std::string& path);

}  // namespace crl
