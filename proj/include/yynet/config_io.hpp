#pragma once

// Flat JSON documents whose keys are the ModelConfig / TrainConfig field names.
// An optional "preset" key selects the starting point; every other key
// overrides one field. Unknown keys are rejected.

#include <filesystem>
#include <string>

#include "yynet/model.hpp"
#include "yynet/optim.hpp"

namespace yynet {

struct RunConfig {
  ModelConfig model = cifar10_preset(16);
  TrainConfig train;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ConfigError on malformed JSON, unknown keys or bad values.
RunConfig parse_run_config(const std::string& json_text);
/// Accepts a file path or "preset:NAME".
RunConfig load_run_config(const std::string& path_or_preset);
/// Single-line JSON with every field, keys sorted.
std::string to_json(const RunConfig& cfg);
std::string to_json(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& json_text);

}  // namespace yynet
