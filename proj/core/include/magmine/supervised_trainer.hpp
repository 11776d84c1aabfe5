#pragma once

// Supervised recognition head trained with plain BCE on labelled snippet
// runs: ground-truth trimmed positives, mined samples, or whole-video labels.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/feature_store.hpp"
#include "magmine/mil_trainer.hpp"
#include "magmine/nn.hpp"
#include "magmine/temporal.hpp"

namespace magmine {

struct SampleManifest;

enum class SupMode { kTrimmedGt, kMinedManifest, kWholeVideo };
enum class Selection { kAllSnippetMean, kRandomSegment, kSingleSnippet };

const char* to_string(SupMode mode);
const char* to_string(Selection selection);
SupMode parse_sup_mode(const std::string& text);
Selection parse_selection(const std::string& text);

struct SupConfig {
  SupMode mode = SupMode::kTrimmedGt;
  Selection selection = Selection::kAllSnippetMean;
  bool use_neck = false;
  int multiset_sets = 1;  // > 1 replaces plain means by multi-set averages
  int epochs = 60;
  double lr = 1e-5;
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  int batch_size = 16;
  int num_segments = kDefaultSegments;  // random_segment
  int single_snippet_segments = 8;      // single_snippet
  double weight_decay = 5e-4;
  int hidden1 = 512;
  int hidden2 = 128;
  double dropout_rate = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
  ModelConfig model_config(int dim) const;
};

struct SupervisedSample {
  std::string video_id;
  SnippetRange range;
  int label = 0;
};

struct SampleSet {
  std::vector<SupervisedSample> samples;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t positive_snippets = 0;
  std::size_t negative_snippets = 0;

  nlohmann::json count_report() const;
};

// Snippets of a span run are those whose frames lie entirely inside it.
std::vector<SnippetRange> span_snippet_runs(const VideoRecord& record);

// Draws from the train split. mined_manifest requires `mined`.
SampleSet build_supervised_samples(const DatasetManifest& manifest, SupMode mode,
                                   const SampleManifest* mined = nullptr);

// Reduce-on-plateau for a metric that should increase.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience);
  // Returns true when this call lowered the learning rate.
  bool step(double metric);
  double lr() const { return lr_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

struct SupEpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double val_metric = 0.0;
  std::string val_metric_name;
  double lr = 0.0;

  nlohmann::json to_json() const;
};

struct SupResult {
  ScorerModel model;  // final
  ScorerModel best_model;
  double best_val_metric = 0.0;
  int best_epoch = 0;
  std::vector<SupEpochRecord> trace;
};

using SupEpochCallback = std::function<void(const SupEpochRecord&)>;

// One representation per sample per epoch (see Selection); the rows are run
// through the neck when enabled, then the head with dropout, then BCE.
SupResult train_supervised(const DatasetManifest& manifest, const SampleSet& samples, const SupConfig& cfg,
                           const SupEpochCallback& on_epoch = {});

// Representation rows for one sample in one epoch.
Matrix sample_representation(const Matrix& snippets, const SupervisedSample& sample, const SupConfig& cfg,
                             std::uint64_t seed);

struct LabeledClip {
  Matrix snippets;
  int label = 0;
};

// Score = head on the clip's mean feature (multiset average when
// multiset_sets > 1); predicts abnormal iff score > 0.5.
double clip_accuracy(const ScorerModel& model, const std::vector<LabeledClip>& clips, int multiset_sets,
                     std::uint64_t seed = 0);

}  // namespace magmine
