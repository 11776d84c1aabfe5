#include "magmine/mil_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "magmine/evaluation.hpp"
#include "magmine/temporal.hpp"

namespace magmine {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

struct VideoPass {
  NeckCache neck;
  HeadCache head;
  Matrix features;  // neck output
  Vector magnitudes;
  TopK topk;
};

}  // namespace

void MilConfig::validate() const {
  if (num_segments < 1) throw ConfigError("mil: num_segments must be >= 1");
  if (k < 1 || k > num_segments) throw ConfigError("mil: k must satisfy 1 <= k <= num_segments");
  if (!(margin > 0.0)) throw ConfigError("mil: margin must be > 0");
  if (lambda_smooth < 0.0 || lambda_sparse < 0.0) throw ConfigError("mil: lambdas must be >= 0");
  if (batch_pairs < 1) throw ConfigError("mil: batch_pairs must be >= 1");
  if (epochs < 0) throw ConfigError("mil: epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("mil: lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("mil: weight_decay must be >= 0");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("mil: dropout_rate must lie in [0,1)");
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("mil: hidden sizes must be >= 1");
}

ModelConfig MilConfig::model_config(int dim) const {
  return ModelConfig{dim, use_neck, hidden1, hidden2, dropout_rate};
}

TopK topk_select(std::span<const double> magnitudes, int k) {
  const int n = static_cast<int>(magnitudes.size());
  if (k < 1 || k > n) throw ValidationError("topk_select: need 1 <= k <= size");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return magnitudes[a] > magnitudes[b] || (magnitudes[a] == magnitudes[b] && a < b);
  });
  TopK out;
  out.indices.assign(order.begin(), order.begin() + k);
  double sum = 0.0;
  for (int i : out.indices) sum += magnitudes[i];
  out.mean = sum / k;
  return out;
}

double magnitude_loss(double mag_abnormal, double mag_normal, int y_i, int y_j, double margin) {
  if (y_i != 1 || y_j != 0) return 0.0;
  return std::max(0.0, margin - (mag_abnormal - mag_normal));
}

double smoothness_loss(std::span<const double> scores) {
  double sum = 0.0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    const double d = scores[j] - scores[j - 1];
    sum += d * d;
  }
  return sum;
}

double sparsity_loss(std::span<const double> scores) {
  if (scores.empty()) return 0.0;
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

LossBreakdown batch_loss(const ScorerModel& model, std::span<const Matrix> abnormal, std::span<const Matrix> normal,
                         int k, double margin, const LossWeights& w, std::optional<std::uint64_t> dropout_seed,
                         std::span<double> grad) {
  if (abnormal.size() != normal.size() || abnormal.empty()) {
    throw ValidationError("batch_loss: need equal, non-zero abnormal and normal batch sizes");
  }
  const std::size_t pairs = abnormal.size();
  const std::size_t videos = 2 * pairs;
  auto input = [&](std::size_t v) -> const Matrix& { return v < pairs ? abnormal[v] : normal[v - pairs]; };

  std::vector<VideoPass> pass(videos);
  parallel_for(videos, [&](std::size_t v) {
    auto& p = pass[v];
    p.features = neck_forward(model, input(v), &p.neck);
    p.magnitudes = l2_magnitudes(p.features);
    p.topk = topk_select(std::span<const double>(p.magnitudes.data(), p.magnitudes.size()), k);
    std::optional<std::uint64_t> seed;
    if (dropout_seed) seed = derive_seed(*dropout_seed, static_cast<std::uint64_t>(v));
    head_forward(model, p.features, seed, &p.head);
  });

  LossBreakdown out;
  std::vector<Vector> d_logits(videos);
  std::vector<Vector> d_mags(videos);
  const double bce_scale = 1.0 / (static_cast<double>(videos) * k);
  const double pair_scale = 1.0 / static_cast<double>(pairs);
  for (std::size_t v = 0; v < videos; ++v) {
    const auto& p = pass[v];
    const bool is_abnormal = v < pairs;
    const Eigen::Index segs = p.head.logits.size();
    d_logits[v] = Vector::Zero(segs);
    d_mags[v] = Vector::Zero(segs);
    for (int idx : p.topk.indices) {
      const double z = p.head.logits[idx];
      out.bce += (is_abnormal ? softplus(-z) : softplus(z)) * bce_scale;
      d_logits[v][idx] += w.bce * bce_scale * (p.head.scores[idx] - (is_abnormal ? 1.0 : 0.0));
    }
    if (is_abnormal) {
      const auto& s = p.head.scores;
      const std::span<const double> sv(s.data(), s.size());
      out.smooth += smoothness_loss(sv) * pair_scale;
      out.sparse += sparsity_loss(sv) * pair_scale;
      for (Eigen::Index j = 0; j < segs; ++j) {
        double ds = w.sparse * pair_scale / static_cast<double>(segs);
        if (j > 0) ds += w.smooth * pair_scale * 2.0 * (s[j] - s[j - 1]);
        if (j + 1 < segs) ds -= w.smooth * pair_scale * 2.0 * (s[j + 1] - s[j]);
        d_logits[v][j] += ds * s[j] * (1.0 - s[j]);
      }
    }
  }
  for (std::size_t i = 0; i < pairs; ++i) {
    const double hinge = magnitude_loss(pass[i].topk.mean, pass[pairs + i].topk.mean, 1, 0, margin);
    out.magnitude += hinge * pair_scale;
    if (hinge > 0.0) {
      const double g = w.magnitude * pair_scale / k;
      for (int idx : pass[i].topk.indices) d_mags[i][idx] -= g;
      for (int idx : pass[pairs + i].topk.indices) d_mags[pairs + i][idx] += g;
    }
  }
  out.total = w.bce * out.bce + w.magnitude * out.magnitude + w.smooth * out.smooth + w.sparse * out.sparse;
  if (!std::isfinite(out.total)) throw NumericError("batch_loss: non-finite loss");

  if (!grad.empty()) {
    if (grad.size() != model.num_params()) throw ValidationError("batch_loss: gradient buffer size mismatch");
    std::vector<AlignedBuffer> per_video(videos);
    parallel_for(videos, [&](std::size_t v) {
      auto& buf = per_video[v];
      buf.assign(model.num_params(), 0.0);
      const auto& p = pass[v];
      Matrix d_features;
      head_backward(model, p.head, d_logits[v], buf, &d_features);
      d_features += l2_magnitudes_backward(p.features, p.magnitudes, d_mags[v]);
      neck_backward(model, p.neck, d_features, buf);
    });
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& buf : per_video) {
      for (std::size_t i = 0; i < buf.size(); ++i) grad[i] += buf[i];
    }
  }
  return out;
}

GradCheckResult mil_gradient_check(const ScorerModel& model, std::span<const Matrix> abnormal,
                                   std::span<const Matrix> normal, int k, double margin, const LossWeights& weights,
                                   std::size_t num_samples, std::uint64_t seed, double h) {
  std::vector<double> analytic(model.num_params());
  batch_loss(model, abnormal, normal, k, margin, weights, std::nullopt, analytic);
  ScorerModel probe = model;
  auto loss = [&](std::span<const double> params) {
    std::copy(params.begin(), params.end(), probe.params().begin());
    return batch_loss(probe, abnormal, normal, k, margin, weights).total;
  };
  std::vector<double> params(model.params().begin(), model.params().end());
  const auto indices = sample_param_indices(model.layout(), num_samples, 16, seed);
  return finite_diff_check(loss, params, analytic, indices, h);
}

Vector score_video(const Matrix& snippets, const ScorerModel& model) {
  if (snippets.cols() != model.config().dim) {
    throw ValidationError("score_video: feature dim " + std::to_string(snippets.cols()) + " != model dim " +
                          std::to_string(model.config().dim));
  }
  return head_forward(model, neck_forward(model, snippets));
}

Vector score_video(const FeatureMatrix& matrix, const ScorerModel& model) {
  return score_video(matrix.as_double(), model);
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"loss", loss.total},
          {"bce", loss.bce},
          {"magnitude", loss.magnitude},
          {"smooth", loss.smooth},
          {"sparse", loss.sparse},
          {"val_auc", val_auc ? nlohmann::json(*val_auc) : nlohmann::json()},
          {"lr", lr}};
}

CyclicShuffler::CyclicShuffler(std::size_t n, std::uint64_t seed) : order_(n), seed_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void CyclicShuffler::reshuffle() {
  std::mt19937_64 rng(derive_seed(seed_, round_++));
  std::shuffle(order_.begin(), order_.end(), rng);
  pos_ = 0;
}

std::size_t CyclicShuffler::next() {
  if (pos_ == order_.size()) reshuffle();
  return order_[pos_++];
}

MilResult train_mil(const DatasetManifest& manifest, const MilConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<Matrix> abnormal, normal;
  for (const auto& r : manifest.split(Split::kTrain)) {
    (r.label == 1 ? abnormal : normal).emplace_back();
  }
  if (abnormal.empty() || normal.empty()) throw ValidationError("train_mil: train split needs both classes");
  {
    const auto& train = manifest.split(Split::kTrain);
    std::vector<std::pair<int, std::size_t>> slots;
    std::size_t a = 0, n = 0;
    for (const auto& r : train) slots.emplace_back(r.label, r.label == 1 ? a++ : n++);
    parallel_for(train.size(), [&](std::size_t i) {
      Matrix& dst = slots[i].first == 1 ? abnormal[slots[i].second] : normal[slots[i].second];
      dst = aggregate_segments(load_video_features(manifest, train[i]), cfg.num_segments).features;
    });
  }

  const auto& val_records = manifest.split(Split::kVal);
  std::vector<Matrix> val_features(val_records.size());
  parallel_for(val_records.size(), [&](std::size_t i) {
    val_features[i] = load_video_features(manifest, val_records[i]).as_double();
  });
  const bool has_val = std::any_of(val_records.begin(), val_records.end(), [](const VideoRecord& r) {
    return !r.spans.empty();
  });

  MilResult result;
  const int pairs = std::min<int>({cfg.batch_pairs, static_cast<int>(abnormal.size()), static_cast<int>(normal.size())});
  if (pairs < cfg.batch_pairs) {
    std::cerr << "train_mil: batch_pairs reduced from " << cfg.batch_pairs << " to " << pairs << '\n';
  }
  result.batch_pairs_used = pairs;

  TrainState& st = result.state;
  st.model = cfg.zero_init ? ScorerModel(cfg.model_config(manifest.dim))
                           : ScorerModel::initialized(cfg.model_config(manifest.dim), derive_seed(cfg.seed, "init"));
  result.best_model = st.model;
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;

  CyclicShuffler abn_iter(abnormal.size(), derive_seed(cfg.seed, "abnormal-order"));
  CyclicShuffler nrm_iter(normal.size(), derive_seed(cfg.seed, "normal-order"));
  const std::size_t longer = std::max(abnormal.size(), normal.size());
  const std::size_t steps_per_epoch = (longer + pairs - 1) / pairs;
  const LossWeights weights = cfg.loss_weights();
  AlignedBuffer grad(st.model.num_params());
  std::vector<Matrix> abn_batch(pairs), nrm_batch(pairs);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      for (int i = 0; i < pairs; ++i) {
        abn_batch[i] = abnormal[abn_iter.next()];
        nrm_batch[i] = normal[nrm_iter.next()];
      }
      const auto dropout_seed = derive_seed(derive_seed(cfg.seed, "dropout"), static_cast<std::uint64_t>(st.step));
      LossBreakdown loss;
      try {
        loss = batch_loss(st.model, abn_batch, nrm_batch, cfg.k, cfg.margin, weights, dropout_seed, grad);
        adam_step(st.optimizer, adam, st.model.params(), grad);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ")");
      }
      ++st.step;
      const double inv = 1.0 / static_cast<double>(steps_per_epoch);
      rec.loss.total += loss.total * inv;
      rec.loss.bce += loss.bce * inv;
      rec.loss.magnitude += loss.magnitude * inv;
      rec.loss.smooth += loss.smooth * inv;
      rec.loss.sparse += loss.sparse * inv;
    }
    st.epoch = epoch;
    if (has_val) {
      std::vector<ScoredVideo> scored(val_records.size());
      parallel_for(val_records.size(), [&](std::size_t i) {
        const Vector s = score_video(val_features[i], st.model);
        scored[i].record = val_records[i];
        scored[i].snippet_scores.assign(s.data(), s.data() + s.size());
      });
      rec.val_auc = evaluate_scored(scored).frame_auc;
      if (!result.best_val_auc || *rec.val_auc > *result.best_val_auc) {
        result.best_val_auc = rec.val_auc;
        result.best_epoch = epoch;
        result.best_model = st.model;
      }
    }
    st.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!has_val) {
    result.best_model = st.model;
    result.best_epoch = st.epoch;
  }
  return result;
}

}  // namespace magmine
