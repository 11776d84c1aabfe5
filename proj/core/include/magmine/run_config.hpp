#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/common.hpp"
#include "magmine/mil_trainer.hpp"
#include "magmine/mining.hpp"
#include "magmine/supervised_trainer.hpp"
#include "magmine/synthgen.hpp"

namespace magmine {

// Reads keys of one JSON object with type checks; finish() rejects any key
// that was never read.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where);

  void read(const char* key, int& out);
  void read(const char* key, double& out);
  void read(const char* key, bool& out);
  void read(const char* key, std::string& out);
  void read(const char* key, std::uint64_t& out);
  bool has(const char* key) const { return obj_.contains(key); }
  const nlohmann::json& raw(const char* key);
  void finish() const;

 private:
  const nlohmann::json* lookup(const char* key);
  const nlohmann::json& obj_;
  std::string where_;
  std::vector<std::string> seen_;
};

struct ExperimentSettings {
  int iters = 1;
  std::string split = "test";
};

struct RunConfig {
  std::uint64_t seed = 0;  // master seed
  SynthConfig synth;
  MilConfig mil;
  SupConfig sup;
  MiningConfig mining;
  ExperimentSettings experiment;
};

nlohmann::json mil_config_to_json(const MilConfig& c);
MilConfig mil_config_from_json(const nlohmann::json& j, MilConfig base = {});
nlohmann::json sup_config_to_json(const SupConfig& c);
SupConfig sup_config_from_json(const nlohmann::json& j, SupConfig base = {});
nlohmann::json mining_config_to_json(const MiningConfig& c);
MiningConfig mining_config_from_json(const nlohmann::json& j, MiningConfig base = {});

// Fully resolved form: every field present, every seed explicit.
nlohmann::json run_config_to_json(const RunConfig& cfg);

// `overrides` are dotted paths like "mil.lr" with raw string values; a value
// that parses as JSON is used as such, anything else as a string. Sections
// without an explicit seed get one derived from the master seed.
RunConfig resolve_run_config(const nlohmann::json& doc,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace magmine
