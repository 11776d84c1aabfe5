#pragma once

// Scoring network: an optional single-scale non-local temporal neck followed
// by a D -> 512 -> 128 -> 1 MLP head. Forward and backward passes are written
// out by hand; parameters live in one flat buffer so that the optimizer,
// checkpointing and gradient checks can treat them uniformly.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magmine/common.hpp"

namespace magmine {

struct ModelConfig {
  int dim = 0;
  bool use_neck = true;
  int hidden1 = 512;
  int hidden2 = 128;
  double dropout_rate = 0.7;

  int neck_width() const { return dim / 4 > 1 ? dim / 4 : 1; }
};

enum class Param : int {
  kConvPrev,    // D x D, tap applied to snippet t-1
  kConvCenter,  // D x D
  kConvNext,    // D x D, tap applied to snippet t+1
  kTheta,       // D' x D
  kPhi,         // D' x D
  kG,           // D' x D
  kOut,         // D x D'
  kW1,          // H1 x D
  kB1,          // 1 x H1
  kW2,          // H2 x H1
  kB2,          // 1 x H2
  kW3,          // 1 x H2
  kB3,          // 1 x 1
  kCount
};

inline constexpr int kNumParamBlocks = static_cast<int>(Param::kCount);

struct ParamBlock {
  const char* name = "";
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Neck blocks have zero size when the neck is disabled.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelConfig& cfg);

  const ParamBlock& block(Param p) const { return blocks_[static_cast<int>(p)]; }
  const std::array<ParamBlock, kNumParamBlocks>& blocks() const { return blocks_; }
  std::size_t size() const { return size_; }

 private:
  std::array<ParamBlock, kNumParamBlocks> blocks_{};
  std::size_t size_ = 0;
};

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

MatrixMap block_view(std::span<double> buffer, const ParamLayout& layout, Param p);
ConstMatrixMap block_view(std::span<const double> buffer, const ParamLayout& layout, Param p);

class ScorerModel {
 public:
  ScorerModel() = default;

  // All parameters zero: every score is 0.5 and the neck is the identity.
  explicit ScorerModel(ModelConfig cfg);

  // Fan-in uniform init for theta/phi/g and the head weights; conv taps,
  // the attention output map and all biases start at zero.
  static ScorerModel initialized(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  AlignedBuffer& params() { return params_; }
  const AlignedBuffer& params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  MatrixMap block(Param p) { return block_view(std::span<double>(params_), layout_, p); }
  ConstMatrixMap block(Param p) const { return block_view(std::span<const double>(params_), layout_, p); }

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  AlignedBuffer params_;
};

struct NeckCache {
  Matrix input;  // N x D
  Matrix x;      // input + conv3(input)
  Matrix p, q, g;
  Matrix attn;  // N x N, rows sum to 1
  Matrix ctx;   // attn * g
};

struct HeadCache {
  Matrix input;
  Matrix z1, h1, z2, h2;
  Matrix mask1, mask2;  // inverted-dropout multipliers; empty in eval mode
  Vector logits;
  Vector scores;
};

// out = S + W_out * softmax((theta X)(phi X)^T / sqrt(D')) (g X), X = S + conv3(S).
// Returns the input unchanged when the neck is disabled.
Matrix neck_forward(const ScorerModel& model, const Matrix& features, NeckCache* cache = nullptr);

// Per-row scores in (0,1). Dropout is active iff dropout_seed is set.
Vector head_forward(const ScorerModel& model, const Matrix& features,
                    std::optional<std::uint64_t> dropout_seed = std::nullopt, HeadCache* cache = nullptr);

// Eval-mode activations of the last hidden layer (N x hidden2).
Matrix head_penultimate(const ScorerModel& model, const Matrix& features);

// Numerically safe logistic, clamped strictly inside (0,1).
double sigmoid(double z);

Vector l2_magnitudes(const Matrix& features);

// d||x||/dx = x/||x||, zero for the zero row.
Matrix l2_magnitudes_backward(const Matrix& features, const Vector& magnitudes, const Vector& grad_magnitudes);

// Accumulates parameter gradients into `grad`; writes d(loss)/d(features)
// into grad_input when non-null.
void head_backward(const ScorerModel& model, const HeadCache& cache, const Vector& grad_logits,
                   std::span<double> grad, Matrix* grad_input);

void neck_backward(const ScorerModel& model, const NeckCache& cache, const Matrix& grad_output,
                   std::span<double> grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// Bias-corrected Adam with decoupled weight decay (p -= lr*wd*p first).
// Throws NumericError on a non-finite gradient before touching anything.
void adam_step(AdamState& state, const AdamConfig& cfg, std::span<double> params, std::span<const double> grads);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool passed(double tolerance = 1e-4) const { return max_rel_error < tolerance; }
};

// Central differences on the listed parameter indices. Relative error is
// |analytic - numeric| / max(1, |numeric|). `params` is restored on return.
GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<double> params, std::span<const double> analytic,
                                  std::span<const std::size_t> indices, double h = 1e-5);

// At least `per_block` indices from every non-empty block, topped up
// uniformly to `total`. Sorted, unique, deterministic in seed.
std::vector<std::size_t> sample_param_indices(const ParamLayout& layout, std::size_t total,
                                              std::size_t per_block, std::uint64_t seed);

}  // namespace magmine
