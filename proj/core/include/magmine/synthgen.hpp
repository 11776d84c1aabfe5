#pragma once

// Synthetic snippet-feature corpora with exact per-frame ground truth.
// Normal snippets ~ N(mu0, sigma^2 I), abnormal ~ N(mu1, sigma^2 I) with
// ||mu1 - mu0|| = separation, distractors ~ N((mu0 + mu1)/2, sigma^2 I).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/feature_store.hpp"

namespace magmine {

struct SynthConfig {
  std::string name = "synthetic";
  int num_abnormal = 40;  // train split
  int num_normal = 160;
  int num_val_abnormal = 10;
  int num_val_normal = 30;
  int num_test_abnormal = 20;
  int num_test_normal = 60;
  int dim = 32;
  int min_snippets = 64;
  int max_snippets = 256;
  int snippet_len = kDefaultSnippetLen;
  double abnormal_fraction = 0.2;
  double separation = 2.0;
  double noise_sigma = 1.0;
  double distractor_rate = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
// Unknown keys and type mismatches raise ConfigError.
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

struct SyntheticTruth {
  std::vector<double> mu_normal;
  std::vector<double> mu_abnormal;
  // Distractor-mode snippet indices per normal video, ascending.
  std::map<std::string, std::vector<int>> distractors;

  bool is_distractor(const std::string& video_id, int snippet) const;
};

struct GeneratedCorpus {
  DatasetManifest manifest;
  SyntheticTruth truth;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTruthFile = "ground_truth.json";

// Writes features/<video_id>.fvec, manifest.json and ground_truth.json into
// out_dir. Output is a pure function of the config.
GeneratedCorpus generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir);

SyntheticTruth load_truth(const std::filesystem::path& path);

// Places `count` positives into `runs` (1..3) non-overlapping, non-adjacent
// runs inside [0, length). Exposed for tests.
std::vector<std::pair<int, int>> place_runs(int length, int count, int runs, std::uint64_t seed);

}  // namespace magmine
