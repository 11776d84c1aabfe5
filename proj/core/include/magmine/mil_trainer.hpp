#pragma once

// Weakly supervised anomaly detection: top-k feature-magnitude MIL training
// over 32-segment bags with paired abnormal/normal batches.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/feature_store.hpp"
#include "magmine/nn.hpp"

namespace magmine {

struct LossWeights {
  double bce = 1.0;
  double magnitude = 1.0;
  double smooth = 8e-5;
  double sparse = 8e-5;
};

struct MilConfig {
  int k = 3;
  double margin = 100.0;
  double lambda_smooth = 8e-5;
  double lambda_sparse = 8e-5;
  int num_segments = 32;
  int batch_pairs = 16;
  int epochs = 100;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  bool use_neck = true;
  int hidden1 = 512;
  int hidden2 = 128;
  double dropout_rate = 0.7;
  bool zero_init = false;  // all-zero start: every score 0.5, no gradient through the head
  std::uint64_t seed = 0;

  void validate() const;
  ModelConfig model_config(int dim) const;
  LossWeights loss_weights() const { return {1.0, 1.0, lambda_smooth, lambda_sparse}; }
};

struct TopK {
  std::vector<int> indices;  // descending by value, ties -> lower index first
  double mean = 0.0;
};

TopK topk_select(std::span<const double> magnitudes, int k);

// Hinge max(0, m - (mag_abnormal - mag_normal)) for the (1, 0) label pair,
// zero for every other pair.
double magnitude_loss(double mag_abnormal, double mag_normal, int y_i, int y_j, double margin);

double smoothness_loss(std::span<const double> scores);
double sparsity_loss(std::span<const double> scores);

struct LossBreakdown {
  double total = 0.0;
  double bce = 0.0;
  double magnitude = 0.0;
  double smooth = 0.0;
  double sparse = 0.0;
};

// Four-term objective over B abnormal and B normal segment bags (S x D each);
// abnormal[i] is paired with normal[i] for the magnitude hinge. When `grad` is
// non-empty it receives the full parameter gradient (overwritten, not added).
// Dropout runs iff dropout_seed is set.
LossBreakdown batch_loss(const ScorerModel& model, std::span<const Matrix> abnormal, std::span<const Matrix> normal,
                         int k, double margin, const LossWeights& weights,
                         std::optional<std::uint64_t> dropout_seed = std::nullopt,
                         std::span<double> grad = {});

// Central-difference check of batch_loss with dropout off.
GradCheckResult mil_gradient_check(const ScorerModel& model, std::span<const Matrix> abnormal,
                                   std::span<const Matrix> normal, int k, double margin,
                                   const LossWeights& weights, std::size_t num_samples, std::uint64_t seed,
                                   double h = 1e-5);

// Neck over the whole snippet sequence, then the head in eval mode.
Vector score_video(const Matrix& snippets, const ScorerModel& model);
Vector score_video(const FeatureMatrix& matrix, const ScorerModel& model);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // mean over the epoch's steps
  std::optional<double> val_auc;
  double lr = 0.0;

  nlohmann::json to_json() const;
};

struct TrainState {
  ScorerModel model;
  AdamState optimizer;
  int epoch = 0;
  std::int64_t step = 0;
  std::vector<EpochRecord> trace;
};

struct MilResult {
  TrainState state;
  ScorerModel best_model;  // best validation frame AUC, or the final model without validation data
  std::optional<double> best_val_auc;
  int best_epoch = 0;
  int batch_pairs_used = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

MilResult train_mil(const DatasetManifest& manifest, const MilConfig& cfg, const EpochCallback& on_epoch = {});

// Draws indices from a shuffled permutation, reshuffling when exhausted.
class CyclicShuffler {
 public:
  CyclicShuffler(std::size_t n, std::uint64_t seed);
  std::size_t next();
  std::size_t size() const { return order_.size(); }

 private:
  void reshuffle();
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t seed_;
  std::uint64_t round_ = 0;
};

}  // namespace magmine
