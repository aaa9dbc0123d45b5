#pragma once

#include <optional>
#include <string>

#include "json.hpp"

#include "crl/model.hpp"
#include "crl/training.hpp"

namespace crl {

/// A saved model plus the training config and epoch it came from.
struct Checkpoint {
  CrlModel model;
  std::optional<TrainConfig> config;
  int epoch = 0;
};

/// Versioned JSON document. Doubles are written in shortest round-trip form,
/// so save followed by load reproduces every parameter exactly.
nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
/// Throws crl::Error (config) on schema violations and (fingerprint) when the
/// stored fingerprint does not match the decoded parameters.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Reads a whole JSON file; io errors for missing files, config errors for bad syntax.
nlohmann::json read_json_file(const std::string& path);
/// Writes `j.dump(2)` plus a trailing newline.
void write_json_file(const nlohmann::json& j, const std::string& path);

}  // namespace crl
