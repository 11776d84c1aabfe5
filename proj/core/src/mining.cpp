#include "magmine/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>

#include "magmine/checkpoint.hpp"

namespace magmine {
namespace {

bool by_score_then_position(const SampleEntry& a, const SampleEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  return a.snippet < b.snippet;
}

}  // namespace

void MiningConfig::validate() const {
  if (!(0.0 < neg_threshold && neg_threshold < pos_threshold && pos_threshold < 1.0)) {
    throw ConfigError("mining: need 0 < neg_threshold < pos_threshold < 1");
  }
  if (!(balance_ratio > 0.0)) throw ConfigError("mining: balance_ratio must be > 0");
  if (!(decay_step > 0.0)) throw ConfigError("mining: decay_step must be > 0");
  if (!(decay_floor > 0.0 && decay_floor <= pos_threshold)) {
    throw ConfigError("mining: decay_floor must lie in (0, pos_threshold]");
  }
}

std::size_t SampleManifest::count(int label) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const SampleEntry& e) { return e.label == label; }));
}

nlohmann::json sample_manifest_to_json(const SampleManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back(
        {{"video_id", e.video_id}, {"snippet", e.snippet}, {"label", e.label}, {"score", e.score}, {"hard", e.hard}});
  }
  return {{"provenance", m.provenance}, {"entries", entries}};
}

SampleManifest sample_manifest_from_json(const nlohmann::json& j) {
  SampleManifest m;
  try {
    m.provenance = j.value("provenance", nlohmann::json::object());
    for (const auto& e : j.at("entries")) {
      SampleEntry entry;
      entry.video_id = e.at("video_id").get<std::string>();
      entry.snippet = e.at("snippet").get<int>();
      entry.label = e.at("label").get<int>();
      entry.score = e.at("score").get<double>();
      entry.hard = e.value("hard", true);
      if (entry.label != 0 && entry.label != 1) throw FormatError("sample manifest: label must be 0 or 1");
      if (entry.snippet < 0) throw FormatError("sample manifest: snippet must be >= 0");
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sample manifest: ") + e.what());
  }
  return m;
}

void save_sample_manifest(const SampleManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << sample_manifest_to_json(m).dump(1) << '\n';
}

SampleManifest load_sample_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return sample_manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("sample manifest: invalid JSON: ") + e.what());
  }
}

std::vector<SampleEntry> mine_positives(std::span<const ScoredVideo> videos, double threshold) {
  std::vector<SampleEntry> out;
  for (const auto& v : videos) {
    if (v.record.label != 1) continue;
    for (std::size_t i = 0; i < v.snippet_scores.size(); ++i) {
      if (v.snippet_scores[i] > threshold) {
        out.push_back({v.record.video_id, static_cast<int>(i), 1, v.snippet_scores[i], true});
      }
    }
  }
  return out;
}

std::vector<SampleEntry> fill_negatives(std::span<const ScoredVideo> videos, std::span<const SampleEntry> taken,
                                        std::size_t count, std::uint64_t seed) {
  std::set<std::pair<std::string, int>> used;
  for (const auto& e : taken) used.emplace(e.video_id, e.snippet);
  std::vector<SampleEntry> pool;
  for (const auto& v : videos) {
    if (v.record.label != 0) continue;
    for (std::size_t i = 0; i < v.snippet_scores.size(); ++i) {
      if (!used.count({v.record.video_id, static_cast<int>(i)})) {
        pool.push_back({v.record.video_id, static_cast<int>(i), 0, v.snippet_scores[i], false});
      }
    }
  }
  count = std::min(count, pool.size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

std::vector<SampleEntry> mine_hard_negatives(std::span<const ScoredVideo> videos, double threshold,
                                             std::size_t required, std::uint64_t seed) {
  std::vector<SampleEntry> out;
  for (const auto& v : videos) {
    if (v.record.label != 0) continue;
    for (std::size_t i = 0; i < v.snippet_scores.size(); ++i) {
      if (v.snippet_scores[i] > threshold) {
        out.push_back({v.record.video_id, static_cast<int>(i), 0, v.snippet_scores[i], true});
      }
    }
  }
  if (out.size() < required) {
    auto fills = fill_negatives(videos, out, required - out.size(), seed);
    out.insert(out.end(), fills.begin(), fills.end());
  }
  return out;
}

SampleManifest balance(std::vector<SampleEntry> positives, std::vector<SampleEntry> negatives,
                       const MiningConfig& cfg, std::span<const ScoredVideo> videos) {
  if (positives.empty()) throw ValidationError("balance: no positives");
  const auto target = static_cast<std::size_t>(std::ceil(static_cast<double>(positives.size()) * cfg.balance_ratio));
  double effective_threshold = cfg.neg_threshold;
  std::size_t filled = 0;
  if (negatives.size() > target) {
    std::sort(negatives.begin(), negatives.end(), by_score_then_position);
    negatives.resize(target);
    effective_threshold = std::max(effective_threshold, negatives.back().score);
  } else if (negatives.size() < target && !videos.empty()) {
    auto fills = fill_negatives(videos, negatives, target - negatives.size(), derive_seed(cfg.seed, "balance-fill"));
    filled = fills.size();
    negatives.insert(negatives.end(), fills.begin(), fills.end());
  }
  SampleManifest m;
  m.entries = std::move(positives);
  m.entries.insert(m.entries.end(), negatives.begin(), negatives.end());
  std::size_t hard = 0;
  for (const auto& e : m.entries) hard += (e.label == 0 && e.hard) ? 1 : 0;
  m.provenance = {{"pos_threshold", cfg.pos_threshold},
                  {"neg_threshold", cfg.neg_threshold},
                  {"neg_threshold_effective", effective_threshold},
                  {"balance_ratio", cfg.balance_ratio},
                  {"positives", m.count(1)},
                  {"negatives", m.count(0)},
                  {"hard_negatives", hard},
                  {"balance_fills", filled}};
  return m;
}

PositiveMining mine_positives_with_fallback(std::span<const ScoredVideo> videos, const MiningConfig& cfg) {
  const auto abnormal_videos = static_cast<std::size_t>(
      std::count_if(videos.begin(), videos.end(), [](const ScoredVideo& v) { return v.record.label == 1; }));
  const std::size_t wanted = std::max<std::size_t>(10, abnormal_videos);
  PositiveMining out;
  out.threshold = cfg.pos_threshold;
  out.entries = mine_positives(videos, out.threshold);
  // Integer step counter avoids drift from repeated subtraction.
  for (int step = 1; out.entries.size() < wanted; ++step) {
    const double next = cfg.pos_threshold - step * cfg.decay_step;
    if (next < cfg.decay_floor - 1e-12) break;
    out.threshold = next;
    out.decayed = true;
    out.entries = mine_positives(videos, out.threshold);
  }
  return out;
}

MiningOutcome mine_training_samples(const DatasetManifest& manifest, const ScorerModel& model,
                                    const MiningConfig& cfg, const std::string& model_id) {
  cfg.validate();
  MiningOutcome outcome;
  const auto scored = score_split(manifest, Split::kTrain, model);
  auto pos = mine_positives_with_fallback(scored, cfg);
  if (pos.decayed) {
    outcome.warnings.push_back("positive threshold decayed from " + std::to_string(cfg.pos_threshold) + " to " +
                               std::to_string(pos.threshold));
  }
  if (pos.entries.empty()) {
    outcome.warnings.push_back("no positive snippet scored above the threshold floor " +
                               std::to_string(cfg.decay_floor));
    outcome.samples.provenance = {{"model", model_id}, {"pos_threshold", cfg.pos_threshold},
                                  {"pos_threshold_used", pos.threshold}, {"positives", 0}, {"negatives", 0}};
    return outcome;
  }
  const auto target = static_cast<std::size_t>(std::ceil(static_cast<double>(pos.entries.size()) * cfg.balance_ratio));
  auto neg = mine_hard_negatives(scored, cfg.neg_threshold, target, derive_seed(cfg.seed, "hard-fill"));
  outcome.samples = balance(std::move(pos.entries), std::move(neg), cfg, scored);
  outcome.samples.provenance["model"] = model_id;
  outcome.samples.provenance["pos_threshold_used"] = pos.threshold;
  outcome.samples.provenance["pos_threshold_decayed"] = pos.decayed;
  return outcome;
}

IterationResult run_iteration(const DatasetManifest& manifest, const MilConfig& mil_cfg, const SupConfig& sup_cfg,
                              const MiningConfig& mining_cfg, int iter_index, const std::filesystem::path& out_dir,
                              Split eval_split) {
  IterationResult result;
  result.iter = iter_index;
  const std::filesystem::path dir = out_dir.empty() ? out_dir : out_dir / ("iter_" + std::to_string(iter_index));
  std::ofstream ad_log;
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    ad_log.open(dir / "ad_train_log.jsonl");
  }

  result.ad = train_mil(manifest, mil_cfg, [&](const EpochRecord& r) {
    if (ad_log) ad_log << r.to_json().dump() << '\n';
  });
  result.ad_report = evaluate_frames(manifest, eval_split, result.ad.best_model);
  const std::string ad_id = "iter" + std::to_string(iter_index) + "/ad";
  result.ad_report.checkpoint_id = ad_id;
  if (!dir.empty()) {
    save_checkpoint(dir / "ad.ckpt", result.ad.best_model,
                    {{"kind", "anomaly_detector"}, {"iter", iter_index}, {"best_epoch", result.ad.best_epoch},
                     {"seed", mil_cfg.seed}, {"step", result.ad.state.step}});
    write_report(result.ad_report, (dir / "ad_report.json").string());
  }

  auto mined = mine_training_samples(manifest, result.ad.best_model, mining_cfg, ad_id);
  result.samples = std::move(mined.samples);
  result.samples.provenance["iter"] = iter_index;
  result.warnings = std::move(mined.warnings);
  if (!dir.empty()) save_sample_manifest(result.samples, dir / "samples.json");
  for (const auto& w : result.warnings) std::cerr << "iteration " << iter_index << ": " << w << '\n';
  if (result.samples.count(1) == 0 || result.samples.count(0) == 0) {
    result.warnings.push_back("action-recognition stage skipped: mined sample set lacks a class");
    std::cerr << "iteration " << iter_index << ": " << result.warnings.back() << '\n';
    return result;
  }

  SupConfig ar_cfg = sup_cfg;
  ar_cfg.mode = SupMode::kMinedManifest;
  const SampleSet set = build_supervised_samples(manifest, SupMode::kMinedManifest, &result.samples);
  std::ofstream ar_log;
  if (!dir.empty()) ar_log.open(dir / "ar_train_log.jsonl");
  result.ar = train_supervised(manifest, set, ar_cfg, [&](const SupEpochRecord& r) {
    if (ar_log) ar_log << r.to_json().dump() << '\n';
  });
  result.ar_report = evaluate_frames(manifest, eval_split, result.ar->best_model);
  result.ar_report->checkpoint_id = "iter" + std::to_string(iter_index) + "/ar";
  if (!dir.empty()) {
    save_checkpoint(dir / "ar.ckpt", result.ar->best_model,
                    {{"kind", "action_recognizer"}, {"iter", iter_index}, {"best_epoch", result.ar->best_epoch},
                     {"seed", ar_cfg.seed}, {"samples", set.count_report()}});
    write_report(*result.ar_report, (dir / "ar_report.json").string());
  }
  return result;
}

DatasetManifest regenerate_features(const DatasetManifest& manifest, const ScorerModel& ar_model,
                                    const std::filesystem::path& out_dir) {
  DatasetManifest out;
  out.name = manifest.name + "+regen";
  out.dim = ar_model.config().hidden2;
  out.snippet_len = manifest.snippet_len;
  out.base_dir = out_dir;
  std::filesystem::create_directories(out_dir / "features");
  for (const auto& [split, records] : manifest.splits) {
    auto& dst = out.splits[split];
    dst.resize(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
      const auto& r = records[i];
      const Matrix snippets = load_video_features(manifest, r).as_double();
      FeatureMatrix regen;
      regen.video_id = r.video_id;
      regen.data = head_penultimate(ar_model, neck_forward(ar_model, snippets)).cast<float>();
      VideoRecord rec = r;
      rec.feature_path = "features/" + r.video_id + ".fvec";
      write_features(regen, out_dir / rec.feature_path);
      dst[i] = std::move(rec);
    });
  }
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

}  // namespace magmine
