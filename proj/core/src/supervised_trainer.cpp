#include "magmine/supervised_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "magmine/evaluation.hpp"
#include "magmine/mining.hpp"

namespace magmine {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

int snippet_count(const VideoRecord& r) { return expected_snippets(r.num_frames, r.snippet_len); }

}  // namespace

const char* to_string(SupMode mode) {
  switch (mode) {
    case SupMode::kTrimmedGt: return "trimmed_gt";
    case SupMode::kMinedManifest: return "mined_manifest";
    case SupMode::kWholeVideo: return "whole_video";
  }
  return "?";
}

const char* to_string(Selection selection) {
  switch (selection) {
    case Selection::kAllSnippetMean: return "all_snippet_mean";
    case Selection::kRandomSegment: return "random_segment";
    case Selection::kSingleSnippet: return "single_snippet";
  }
  return "?";
}

SupMode parse_sup_mode(const std::string& text) {
  if (text == "trimmed_gt") return SupMode::kTrimmedGt;
  if (text == "mined_manifest") return SupMode::kMinedManifest;
  if (text == "whole_video") return SupMode::kWholeVideo;
  throw ConfigError("sup: unknown mode \"" + text + "\"");
}

Selection parse_selection(const std::string& text) {
  if (text == "all_snippet_mean") return Selection::kAllSnippetMean;
  if (text == "random_segment") return Selection::kRandomSegment;
  if (text == "single_snippet") return Selection::kSingleSnippet;
  throw ConfigError("sup: unknown selection \"" + text + "\"");
}

void SupConfig::validate() const {
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("sup: plateau_factor must lie in (0,1)");
  if (plateau_patience < 1) throw ConfigError("sup: plateau_patience must be >= 1");
  if (multiset_sets < 1) throw ConfigError("sup: multiset_sets must be >= 1");
  if (epochs < 0) throw ConfigError("sup: epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("sup: lr must be > 0");
  if (batch_size < 1) throw ConfigError("sup: batch_size must be >= 1");
  if (num_segments < 1 || single_snippet_segments < 1) throw ConfigError("sup: segment counts must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("sup: weight_decay must be >= 0");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("sup: dropout_rate must lie in [0,1)");
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("sup: hidden sizes must be >= 1");
}

ModelConfig SupConfig::model_config(int dim) const {
  return ModelConfig{dim, use_neck, hidden1, hidden2, dropout_rate};
}

nlohmann::json SampleSet::count_report() const {
  return {{"samples", samples.size()},
          {"positives", positives},
          {"negatives", negatives},
          {"positive_snippets", positive_snippets},
          {"negative_snippets", negative_snippets}};
}

std::vector<SnippetRange> span_snippet_runs(const VideoRecord& record) {
  const std::int64_t len = record.snippet_len;
  const int t = snippet_count(record);
  std::vector<SnippetRange> runs;
  for (const auto& s : record.spans) {
    const auto first = static_cast<int>((s.start_frame + len - 1) / len);
    const auto last = static_cast<int>(std::min<std::int64_t>(s.end_frame / len, t));
    if (last > first) runs.push_back({first, last});
  }
  return runs;
}

SampleSet build_supervised_samples(const DatasetManifest& manifest, SupMode mode, const SampleManifest* mined) {
  SampleSet set;
  auto add = [&](const std::string& id, SnippetRange range, int label) {
    set.samples.push_back({id, range, label});
    (label ? set.positives : set.negatives) += 1;
    (label ? set.positive_snippets : set.negative_snippets) += static_cast<std::size_t>(range.size());
  };
  const auto& train = manifest.split(Split::kTrain);
  switch (mode) {
    case SupMode::kTrimmedGt:
      for (const auto& r : train) {
        if (r.label == 1) {
          for (const auto& run : span_snippet_runs(r)) add(r.video_id, run, 1);
        } else {
          add(r.video_id, {0, snippet_count(r)}, 0);
        }
      }
      break;
    case SupMode::kWholeVideo:
      for (const auto& r : train) add(r.video_id, {0, snippet_count(r)}, r.label);
      break;
    case SupMode::kMinedManifest: {
      if (!mined) throw ValidationError("build_supervised_samples: mined_manifest mode needs a sample manifest");
      std::map<std::string, const VideoRecord*> by_id;
      for (const auto& r : train) by_id[r.video_id] = &r;
      for (const auto& e : mined->entries) {
        auto it = by_id.find(e.video_id);
        if (it == by_id.end()) {
          throw ValidationError("sample manifest references unknown train video \"" + e.video_id + "\"");
        }
        if (e.snippet < 0 || e.snippet >= snippet_count(*it->second)) {
          throw ValidationError("sample manifest snippet out of range for \"" + e.video_id + "\"");
        }
        add(e.video_id, {e.snippet, e.snippet + 1}, e.label);
      }
      break;
    }
  }
  if (set.positives == 0) throw ValidationError("build_supervised_samples: empty positive set");
  if (set.negatives == 0) throw ValidationError("build_supervised_samples: empty negative set");
  return set;
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience)
    : lr_(lr), factor_(factor), patience_(patience) {}

bool PlateauScheduler::step(double metric) {
  if (metric > best_) {
    best_ = metric;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    bad_epochs_ = 0;
    return true;
  }
  return false;
}

nlohmann::json SupEpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss},
          {"train_accuracy", train_accuracy},
          {"val_metric", val_metric},
          {"val_metric_name", val_metric_name},
          {"lr", lr}};
}

Matrix sample_representation(const Matrix& snippets, const SupervisedSample& sample, const SupConfig& cfg,
                             std::uint64_t seed) {
  const Matrix rows = snippets.middleRows(sample.range.begin, sample.range.size());
  std::mt19937_64 rng(seed);
  auto pooled = [&](const Matrix& pool) -> Matrix {
    if (cfg.multiset_sets > 1) return multiset_average(pool, cfg.multiset_sets, rng()).transpose();
    return pool.colwise().mean();
  };
  switch (cfg.selection) {
    case Selection::kAllSnippetMean:
      return pooled(rows);
    case Selection::kRandomSegment: {
      const auto bounds = segment_boundaries(static_cast<int>(rows.rows()), cfg.num_segments);
      std::uniform_int_distribution<int> pick(0, cfg.num_segments - 1);
      const auto& seg = bounds[pick(rng)];
      return pooled(rows.middleRows(seg.begin, seg.size()));
    }
    case Selection::kSingleSnippet: {
      const auto bounds = segment_boundaries(static_cast<int>(rows.rows()), cfg.single_snippet_segments);
      Matrix out(cfg.single_snippet_segments, rows.cols());
      for (int j = 0; j < cfg.single_snippet_segments; ++j) {
        std::uniform_int_distribution<int> pick(bounds[j].begin, bounds[j].end - 1);
        out.row(j) = rows.row(pick(rng));
      }
      return out;
    }
  }
  return rows;
}

double clip_accuracy(const ScorerModel& model, const std::vector<LabeledClip>& clips, int multiset_sets,
                     std::uint64_t seed) {
  if (clips.empty()) throw MetricError("clip_accuracy: no clips");
  std::vector<int> correct(clips.size(), 0);
  parallel_for(clips.size(), [&](std::size_t i) {
    const auto& clip = clips[i];
    Matrix rep = multiset_sets > 1
                     ? Matrix(multiset_average(clip.snippets, multiset_sets, derive_seed(seed, i)).transpose())
                     : Matrix(clip.snippets.colwise().mean());
    const double score = head_forward(model, neck_forward(model, rep))[0];
    correct[i] = ((score > 0.5 ? 1 : 0) == clip.label) ? 1 : 0;
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / static_cast<double>(clips.size());
}

SupResult train_supervised(const DatasetManifest& manifest, const SampleSet& set, const SupConfig& cfg,
                           const SupEpochCallback& on_epoch) {
  cfg.validate();
  if (set.positives == 0 || set.negatives == 0) throw ValidationError("train_supervised: need both classes");

  // Features of every referenced train video, loaded once.
  std::map<std::string, std::size_t> slot;
  std::vector<const VideoRecord*> needed;
  for (const auto& r : manifest.split(Split::kTrain)) {
    slot.emplace(r.video_id, needed.size());
    needed.push_back(&r);
  }
  std::vector<Matrix> features(needed.size());
  std::vector<char> used(needed.size(), 0);
  for (const auto& s : set.samples) {
    auto it = slot.find(s.video_id);
    if (it == slot.end()) throw ValidationError("train_supervised: unknown video \"" + s.video_id + "\"");
    used[it->second] = 1;
  }
  parallel_for(needed.size(), [&](std::size_t i) {
    if (used[i]) features[i] = load_video_features(manifest, *needed[i]).as_double();
  });
  std::vector<std::size_t> sample_slot(set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) sample_slot[i] = slot.at(set.samples[i].video_id);

  // Validation: frame AUC when frame labels exist, else clip accuracy.
  const auto& val_records = manifest.split(Split::kVal);
  std::vector<Matrix> val_features(val_records.size());
  parallel_for(val_records.size(), [&](std::size_t i) {
    val_features[i] = load_video_features(manifest, val_records[i]).as_double();
  });
  const bool val_has_frames = std::any_of(val_records.begin(), val_records.end(),
                                          [](const VideoRecord& r) { return !r.spans.empty(); });
  std::vector<LabeledClip> val_clips;
  if (!val_has_frames) {
    for (std::size_t i = 0; i < val_records.size(); ++i) val_clips.push_back({val_features[i], val_records[i].label});
  }
  auto validate = [&](const ScorerModel& model) -> std::pair<double, const char*> {
    if (val_has_frames) {
      std::vector<ScoredVideo> scored(val_records.size());
      parallel_for(val_records.size(), [&](std::size_t i) {
        const Vector s = score_video(val_features[i], model);
        scored[i].record = val_records[i];
        scored[i].snippet_scores.assign(s.data(), s.data() + s.size());
      });
      return {evaluate_scored(scored).frame_auc, "frame_auc"};
    }
    if (!val_clips.empty()) return {clip_accuracy(model, val_clips, cfg.multiset_sets, derive_seed(cfg.seed, "val")), "clip_accuracy"};
    return {0.0, "none"};
  };

  SupResult result;
  result.model = ScorerModel::initialized(cfg.model_config(manifest.dim), derive_seed(cfg.seed, "init"));
  result.best_model = result.model;
  bool have_best = false;
  AdamState opt;
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  PlateauScheduler plateau(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
  AlignedBuffer grad(result.model.num_params());
  std::vector<std::size_t> order(set.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(derive_seed(cfg.seed, "epoch"), static_cast<std::uint64_t>(epoch));
    {
      std::mt19937_64 rng(derive_seed(epoch_seed, "order"));
      std::shuffle(order.begin(), order.end(), rng);
    }
    SupEpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr;
    double loss_sum = 0.0;
    std::size_t rows_seen = 0, rows_correct = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t count = end - begin;
      std::vector<Matrix> reps(count);
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t idx = order[begin + b];
        reps[b] = sample_representation(features[sample_slot[idx]], set.samples[idx], cfg,
                                        derive_seed(epoch_seed, static_cast<std::uint64_t>(idx)));
      }
      Eigen::Index total_rows = 0;
      for (const auto& r : reps) total_rows += r.rows();
      const double scale = 1.0 / static_cast<double>(total_rows);
      const std::uint64_t dropout_seed = derive_seed(derive_seed(cfg.seed, "dropout"), static_cast<std::uint64_t>(step));

      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss_value = 0.0;
      if (!cfg.use_neck) {
        // Without the neck rows are independent: one stacked head pass.
        Matrix stacked(total_rows, manifest.dim);
        Vector labels(total_rows);
        Eigen::Index at = 0;
        for (std::size_t b = 0; b < count; ++b) {
          stacked.middleRows(at, reps[b].rows()) = reps[b];
          labels.segment(at, reps[b].rows()).setConstant(set.samples[order[begin + b]].label);
          at += reps[b].rows();
        }
        HeadCache cache;
        head_forward(result.model, stacked, dropout_seed, &cache);
        Vector d_logits(total_rows);
        for (Eigen::Index i = 0; i < total_rows; ++i) {
          const double z = cache.logits[i];
          batch_loss_value += (labels[i] > 0.5 ? softplus(-z) : softplus(z)) * scale;
          d_logits[i] = (cache.scores[i] - labels[i]) * scale;
          rows_correct += ((cache.scores[i] > 0.5) == (labels[i] > 0.5)) ? 1 : 0;
        }
        head_backward(result.model, cache, d_logits, grad, nullptr);
      } else {
        std::vector<AlignedBuffer> per_sample(count);
        std::vector<double> losses(count, 0.0);
        std::vector<std::size_t> correct(count, 0);
        parallel_for(count, [&](std::size_t b) {
          const double label = set.samples[order[begin + b]].label;
          NeckCache neck;
          HeadCache head;
          const Matrix out = neck_forward(result.model, reps[b], &neck);
          head_forward(result.model, out, derive_seed(dropout_seed, static_cast<std::uint64_t>(b)), &head);
          Vector d_logits(out.rows());
          for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const double z = head.logits[i];
            losses[b] += (label > 0.5 ? softplus(-z) : softplus(z)) * scale;
            d_logits[i] = (head.scores[i] - label) * scale;
            correct[b] += ((head.scores[i] > 0.5) == (label > 0.5)) ? 1 : 0;
          }
          auto& buf = per_sample[b];
          buf.assign(result.model.num_params(), 0.0);
          Matrix d_out;
          head_backward(result.model, head, d_logits, buf, &d_out);
          neck_backward(result.model, neck, d_out, buf);
        });
        for (std::size_t b = 0; b < count; ++b) {
          batch_loss_value += losses[b];
          rows_correct += correct[b];
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += per_sample[b][i];
        }
      }
      if (!std::isfinite(batch_loss_value)) {
        throw NumericError("train_supervised: non-finite loss at epoch " + std::to_string(epoch));
      }
      adam_step(opt, adam, result.model.params(), grad);
      ++step;
      loss_sum += batch_loss_value * static_cast<double>(total_rows);
      rows_seen += static_cast<std::size_t>(total_rows);
    }
    rec.loss = rows_seen ? loss_sum / static_cast<double>(rows_seen) : 0.0;
    rec.train_accuracy = rows_seen ? static_cast<double>(rows_correct) / static_cast<double>(rows_seen) : 0.0;
    const auto [metric, name] = validate(result.model);
    rec.val_metric = metric;
    rec.val_metric_name = name;
    if (!have_best || metric > result.best_val_metric) {
      have_best = true;
      result.best_val_metric = metric;
      result.best_epoch = epoch;
      result.best_model = result.model;
    }
    plateau.step(metric);
    adam.lr = plateau.lr();
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!have_best) result.best_model = result.model;
  return result;
}

}  // namespace magmine
