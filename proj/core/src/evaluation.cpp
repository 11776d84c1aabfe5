#include "magmine/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "magmine/mil_trainer.hpp"
#include "magmine/temporal.hpp"

namespace magmine {
namespace {

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("roc_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // twice_rank_sum = 2 * sum of positive midranks (1-based), kept integral.
  std::int64_t twice_rank_sum = 0;
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::int64_t group_pos = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]] ? 1 : 0;
      ++j;
    }
    twice_rank_sum += group_pos * static_cast<std::int64_t>(i + 1 + j);
    positives += group_pos;
    i = j;
  }
  const std::int64_t negatives = static_cast<std::int64_t>(n) - positives;
  if (positives == 0 || negatives == 0) throw MetricError("roc_auc: undefined for single-class labels");
  const std::int64_t twice_wins = twice_rank_sum - positives * (positives + 1);
  const std::int64_t twice_pairs = 2 * positives * negatives;
  // Dividing on the >= 0.5 side and complementing otherwise makes
  // auc(s, y) + auc(s, 1 - y) == 1 hold exactly in floating point.
  if (2 * twice_wins >= twice_pairs) {
    return static_cast<double>(twice_wins) / static_cast<double>(twice_pairs);
  }
  return 1.0 - static_cast<double>(twice_pairs - twice_wins) / static_cast<double>(twice_pairs);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("average_precision: size mismatch");
  const auto order = descending_order(scores);
  double sum = 0.0;
  std::int64_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw MetricError("average_precision: undefined without positives");
  return sum / static_cast<double>(hits);
}

EvalReport evaluate_scored(std::span<const ScoredVideo> videos) {
  EvalReport report;
  std::vector<double> all_scores;
  std::vector<std::uint8_t> all_labels;
  for (const auto& v : videos) {
    const auto frames = expand_to_frames(v.snippet_scores, v.record.snippet_len, v.record.num_frames);
    const auto labels = frame_labels_from_spans(v.record);
    all_scores.insert(all_scores.end(), frames.begin(), frames.end());
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    const auto pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
    if (pos > 0 && pos < static_cast<std::ptrdiff_t>(labels.size())) {
      report.per_video_auc.emplace_back(v.record.video_id, roc_auc(frames, labels));
    }
  }
  report.num_videos = videos.size();
  report.num_frames = static_cast<std::int64_t>(all_labels.size());
  report.num_positive_frames = std::count(all_labels.begin(), all_labels.end(), std::uint8_t{1});
  if (report.num_positive_frames == 0) throw MetricError("evaluate: split has no positive frame");
  report.frame_auc = roc_auc(all_scores, all_labels);
  report.frame_map = average_precision(all_scores, all_labels);
  return report;
}

std::vector<ScoredVideo> score_split(const DatasetManifest& manifest, Split split, const ScorerModel& model) {
  const auto& records = manifest.split(split);
  std::vector<ScoredVideo> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const FeatureMatrix features = load_video_features(manifest, records[i]);
    const Vector scores = score_video(features, model);
    out[i].record = records[i];
    out[i].snippet_scores.assign(scores.data(), scores.data() + scores.size());
  });
  return out;
}

EvalReport evaluate_frames(const DatasetManifest& manifest, Split split, const ScorerModel& model) {
  const auto scored = score_split(manifest, split, model);
  EvalReport report = evaluate_scored(scored);
  report.split = split_name(split);
  return report;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per_video = nlohmann::json::array();
  for (const auto& [id, auc] : r.per_video_auc) per_video.push_back({{"video_id", id}, {"auc", auc}});
  nlohmann::json j = {{"frame_auc", r.frame_auc},
                      {"frame_map", r.frame_map},
                      {"clip_accuracy", r.clip_accuracy ? nlohmann::json(*r.clip_accuracy) : nlohmann::json()},
                      {"num_videos", r.num_videos},
                      {"num_frames", r.num_frames},
                      {"num_positive_frames", r.num_positive_frames},
                      {"split", r.split},
                      {"checkpoint_id", r.checkpoint_id},
                      {"per_video_auc", per_video},
                      {"config", r.config}};
  return j;
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "frame_auc," << format_double(r.frame_auc) << '\n';
  os << "frame_map," << format_double(r.frame_map) << '\n';
  if (r.clip_accuracy) os << "clip_accuracy," << format_double(*r.clip_accuracy) << '\n';
  os << "num_videos," << r.num_videos << '\n';
  os << "num_frames," << r.num_frames << '\n';
  os << "num_positive_frames," << r.num_positive_frames << '\n';
  return os.str();
}

void write_report(const EvalReport& report, const std::string& json_path) {
  std::filesystem::path path(json_path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << report_to_json(report).dump(2) << '\n';
  auto csv = path;
  csv.replace_extension(".csv");
  std::ofstream(csv) << report_to_csv(report);
}

}  // namespace magmine
