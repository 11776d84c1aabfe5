#pragma once

// Turns a trained anomaly detector into supervised training data: reliable
// positives from abnormal videos, hard negatives from normal videos, balanced
// counts. Also hosts the iterative detect -> mine -> recognize loop.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/evaluation.hpp"
#include "magmine/feature_store.hpp"
#include "magmine/mil_trainer.hpp"
#include "magmine/supervised_trainer.hpp"

namespace magmine {

struct MiningConfig {
  double pos_threshold = 0.995;
  double neg_threshold = 0.5;
  double balance_ratio = 1.0;  // negatives per positive
  double decay_step = 0.005;
  double decay_floor = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleEntry {
  std::string video_id;
  int snippet = 0;
  int label = 0;
  double score = 0.0;
  bool hard = true;  // false for uniform fills

  bool operator==(const SampleEntry&) const = default;
};

struct SampleManifest {
  std::vector<SampleEntry> entries;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t count(int label) const;
};

nlohmann::json sample_manifest_to_json(const SampleManifest& m);
SampleManifest sample_manifest_from_json(const nlohmann::json& j);
void save_sample_manifest(const SampleManifest& m, const std::filesystem::path& path);
SampleManifest load_sample_manifest(const std::filesystem::path& path);

// Snippets of abnormal videos with score > threshold.
std::vector<SampleEntry> mine_positives(std::span<const ScoredVideo> videos, double threshold);

// Snippets of normal videos with score > threshold; when fewer than
// `required`, the rest is filled with uniformly drawn remaining normal
// snippets flagged hard = false.
std::vector<SampleEntry> mine_hard_negatives(std::span<const ScoredVideo> videos, double threshold,
                                             std::size_t required, std::uint64_t seed);

// Uniform fills from normal snippets not already in `taken`.
std::vector<SampleEntry> fill_negatives(std::span<const ScoredVideo> videos, std::span<const SampleEntry> taken,
                                        std::size_t count, std::uint64_t seed);

// Trims negatives to ceil(|pos| * ratio) keeping the highest scores (ties:
// video_id asc, snippet asc), or fills up to it from `videos`.
SampleManifest balance(std::vector<SampleEntry> positives, std::vector<SampleEntry> negatives,
                       const MiningConfig& cfg, std::span<const ScoredVideo> videos = {});

struct PositiveMining {
  std::vector<SampleEntry> entries;
  double threshold = 0.0;
  bool decayed = false;
};

// Lowers the threshold by decay_step (down to decay_floor) until at least
// max(10, #abnormal videos) positives are found or the floor is reached.
PositiveMining mine_positives_with_fallback(std::span<const ScoredVideo> videos, const MiningConfig& cfg);

struct MiningOutcome {
  SampleManifest samples;
  std::vector<std::string> warnings;
};

// Scores the train split with `model` and runs the full mining pipeline.
MiningOutcome mine_training_samples(const DatasetManifest& manifest, const ScorerModel& model,
                                    const MiningConfig& cfg, const std::string& model_id = {});

struct IterationResult {
  int iter = 0;
  MilResult ad;
  EvalReport ad_report;
  SampleManifest samples;
  std::optional<SupResult> ar;
  std::optional<EvalReport> ar_report;
  std::vector<std::string> warnings;

  bool completed() const { return ar.has_value(); }
};

// AD training -> mining -> AR training on the mined samples -> test-split
// evaluation of both. Artifacts go to out_dir when it is non-empty.
IterationResult run_iteration(const DatasetManifest& manifest, const MilConfig& mil_cfg, const SupConfig& sup_cfg,
                              const MiningConfig& mining_cfg, int iter_index,
                              const std::filesystem::path& out_dir = {}, Split eval_split = Split::kTest);

// Writes hidden2-dimensional per-snippet features (the AR head's penultimate
// activations) for every video and a manifest describing them.
DatasetManifest regenerate_features(const DatasetManifest& manifest, const ScorerModel& ar_model,
                                    const std::filesystem::path& out_dir);

}  // namespace magmine
