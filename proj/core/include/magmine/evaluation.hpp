#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/feature_store.hpp"
#include "magmine/nn.hpp"

namespace magmine {

// P(s_pos > s_neg) + 0.5 P(s_pos == s_neg) via midranks, O(N log N).
// Throws MetricError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Step-wise, non-interpolated AP with ties ordered by index ascending.
// Throws MetricError when there is no positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct ScoredVideo {
  VideoRecord record;
  std::vector<double> snippet_scores;
};

struct EvalReport {
  double frame_auc = 0.0;
  double frame_map = 0.0;
  std::optional<double> clip_accuracy;
  std::vector<std::pair<std::string, double>> per_video_auc;  // videos with both classes only
  std::size_t num_videos = 0;
  std::int64_t num_frames = 0;
  std::int64_t num_positive_frames = 0;
  std::string split;
  std::string checkpoint_id;
  nlohmann::json config = nlohmann::json::object();
};

// Concatenates frame-expanded scores and frame labels over all videos.
EvalReport evaluate_scored(std::span<const ScoredVideo> videos);

std::vector<ScoredVideo> score_split(const DatasetManifest& manifest, Split split, const ScorerModel& model);

EvalReport evaluate_frames(const DatasetManifest& manifest, Split split, const ScorerModel& model);

nlohmann::json report_to_json(const EvalReport& report);
// One "metric,value" row per scalar metric.
std::string report_to_csv(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& json_path);

}  // namespace magmine
