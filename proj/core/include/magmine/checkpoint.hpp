#pragma once

// Model checkpoint file:
//   bytes 0..3  magic "MMCK"
//   bytes 4..7  JSON header length L (LE u32)
//   L bytes     JSON header: model config, block shapes, free-form meta
//   then one FVEC record (header + float32 payload) per non-empty parameter
//   block, in declaration order.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "magmine/nn.hpp"

namespace magmine {

struct Checkpoint {
  ScorerModel model;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const ScorerModel& model,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters rounded through float32, i.e. what a save/load round trip yields.
ScorerModel quantize_to_float(const ScorerModel& model);

}  // namespace magmine
