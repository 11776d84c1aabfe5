#pragma once

// Reproduction recipes: each runs a fixed set of training stages on one
// corpus and writes summary.csv / summary.json into the output directory.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/run_config.hpp"
#include "magmine/synthgen.hpp"

namespace magmine {

inline constexpr const char* kRecipes[] = {"compare_ad_ar", "ablate_neck", "iterate", "single"};

struct SummaryRow {
  std::string name;
  std::vector<std::pair<std::string, double>> values;  // insertion order is output order

  std::optional<double> get(const std::string& metric) const;
};

// better >= worse + min_gap (or > when strict).
struct DirectionalCheck {
  std::string name;
  std::string better;
  std::string worse;
  std::string metric = "frame_auc";
  double min_gap = 0.0;
  bool strict = false;
  std::optional<double> better_value;
  std::optional<double> worse_value;
  bool passed = false;
};

struct ExperimentSummary {
  std::string recipe;
  nlohmann::json config;
  nlohmann::json inputs;
  std::vector<SummaryRow> rows;
  std::vector<DirectionalCheck> checks;
  std::vector<std::string> failures;  // stages that threw
  std::vector<std::string> warnings;

  const SummaryRow* row(const std::string& name) const;
  // 0 all good, 1 a stage failed, 2 a directional check failed.
  int exit_code() const;
};

struct MiningQuality {
  std::size_t positives = 0;
  std::size_t true_positives = 0;
  std::size_t hard_negatives = 0;
  std::size_t distractor_negatives = 0;

  double purity() const;
  double distractor_fraction() const;
};

// Positive purity counts mined positives inside ground-truth spans; the
// distractor fraction is taken over negatives flagged hard.
MiningQuality mining_quality(const DatasetManifest& manifest, const SampleManifest& samples,
                             const SyntheticTruth& truth);

// Content hashes of the manifest file and of every feature file it lists.
nlohmann::json input_hashes(const std::filesystem::path& manifest_path, const DatasetManifest& manifest);

std::string summary_to_csv(const ExperimentSummary& s);
nlohmann::json summary_to_json(const ExperimentSummary& s);

// Generates a corpus from cfg.synth under out_dir/corpus when no manifest is
// given. Writes summary.csv and summary.json; never throws for stage errors.
ExperimentSummary run_experiment(const std::string& recipe, const RunConfig& cfg, const std::filesystem::path& out_dir,
                                 const std::optional<std::filesystem::path>& manifest_path = std::nullopt);

}  // namespace magmine
