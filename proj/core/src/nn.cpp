#include "magmine/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace magmine {
namespace {

constexpr double kMinScore = std::numeric_limits<double>::min();
const double kMaxScore = std::nextafter(1.0, 0.0);

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix dropout_mask(int rows, int cols, double rate, std::mt19937_64& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  if (cfg.dim < 1) throw ValidationError("model: dim must be positive");
  if (cfg.hidden1 < 1 || cfg.hidden2 < 1) throw ValidationError("model: hidden sizes must be positive");
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0) {
    throw ValidationError("model: dropout_rate must lie in [0,1)");
  }
  const int d = cfg.dim;
  const int dn = cfg.use_neck ? cfg.neck_width() : 0;
  const int dd = cfg.use_neck ? d : 0;
  auto set = [&](Param p, const char* name, int rows, int cols) {
    blocks_[static_cast<int>(p)] = ParamBlock{name, rows, cols, 0};
  };
  set(Param::kConvPrev, "neck.conv_prev", dd, dd);
  set(Param::kConvCenter, "neck.conv_center", dd, dd);
  set(Param::kConvNext, "neck.conv_next", dd, dd);
  set(Param::kTheta, "neck.theta", dn, dd);
  set(Param::kPhi, "neck.phi", dn, dd);
  set(Param::kG, "neck.g", dn, dd);
  set(Param::kOut, "neck.out", dd, dn);
  set(Param::kW1, "head.w1", cfg.hidden1, d);
  set(Param::kB1, "head.b1", 1, cfg.hidden1);
  set(Param::kW2, "head.w2", cfg.hidden2, cfg.hidden1);
  set(Param::kB2, "head.b2", 1, cfg.hidden2);
  set(Param::kW3, "head.w3", 1, cfg.hidden2);
  set(Param::kB3, "head.b3", 1, 1);
  std::size_t offset = 0;
  for (auto& b : blocks_) {
    b.offset = offset;
    offset += b.size();
  }
  size_ = offset;
}

MatrixMap block_view(std::span<double> buffer, const ParamLayout& layout, Param p) {
  const auto& b = layout.block(p);
  return MatrixMap(buffer.data() + b.offset, b.rows, b.cols);
}

ConstMatrixMap block_view(std::span<const double> buffer, const ParamLayout& layout, Param p) {
  const auto& b = layout.block(p);
  return ConstMatrixMap(buffer.data() + b.offset, b.rows, b.cols);
}

ScorerModel::ScorerModel(ModelConfig cfg) : cfg_(cfg), layout_(cfg), params_(layout_.size(), 0.0) {}

ScorerModel ScorerModel::initialized(const ModelConfig& cfg, std::uint64_t seed) {
  ScorerModel model(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&](Param p) {
    auto w = model.block(p);
    if (w.size() == 0) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  };
  for (Param p : {Param::kTheta, Param::kPhi, Param::kG, Param::kW1, Param::kW2, Param::kW3}) fill(p);
  return model;
}

double sigmoid(double z) {
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, kMinScore, kMaxScore);
}

Matrix neck_forward(const ScorerModel& model, const Matrix& s, NeckCache* cache) {
  if (!model.config().use_neck) {
    if (cache) cache->input = s;
    return s;
  }
  const Eigen::Index n = s.rows();
  Matrix x = s + s * model.block(Param::kConvCenter).transpose();
  if (n > 1) {
    x.bottomRows(n - 1).noalias() += s.topRows(n - 1) * model.block(Param::kConvPrev).transpose();
    x.topRows(n - 1).noalias() += s.bottomRows(n - 1) * model.block(Param::kConvNext).transpose();
  }
  Matrix p = x * model.block(Param::kTheta).transpose();
  Matrix q = x * model.block(Param::kPhi).transpose();
  Matrix g = x * model.block(Param::kG).transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.config().neck_width()));
  Matrix attn = (p * q.transpose()) * scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = attn.row(i);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  Matrix ctx = attn * g;
  Matrix out = s + ctx * model.block(Param::kOut).transpose();
  if (cache) {
    cache->input = s;
    cache->x = std::move(x);
    cache->p = std::move(p);
    cache->q = std::move(q);
    cache->g = std::move(g);
    cache->attn = std::move(attn);
    cache->ctx = std::move(ctx);
  }
  return out;
}

Vector head_forward(const ScorerModel& model, const Matrix& features, std::optional<std::uint64_t> dropout_seed,
                    HeadCache* cache) {
  if (features.cols() != model.config().dim) {
    throw ValidationError("head: feature dim " + std::to_string(features.cols()) + " != model dim " +
                          std::to_string(model.config().dim));
  }
  const auto w1 = model.block(Param::kW1);
  const auto w2 = model.block(Param::kW2);
  const auto w3 = model.block(Param::kW3);
  const double rate = model.config().dropout_rate;
  const bool dropout = dropout_seed.has_value() && rate > 0.0;

  Matrix z1 = features * w1.transpose();
  z1.rowwise() += model.block(Param::kB1).row(0);
  Matrix h1 = relu(z1);
  Matrix mask1, mask2;
  std::mt19937_64 rng(dropout_seed.value_or(0));
  if (dropout) {
    mask1 = dropout_mask(static_cast<int>(h1.rows()), static_cast<int>(h1.cols()), rate, rng);
    h1.array() *= mask1.array();
  }
  Matrix z2 = h1 * w2.transpose();
  z2.rowwise() += model.block(Param::kB2).row(0);
  Matrix h2 = relu(z2);
  if (dropout) {
    mask2 = dropout_mask(static_cast<int>(h2.rows()), static_cast<int>(h2.cols()), rate, rng);
    h2.array() *= mask2.array();
  }
  Vector logits = h2 * w3.row(0).transpose();
  logits.array() += model.block(Param::kB3)(0, 0);
  Vector scores = logits.unaryExpr([](double z) { return sigmoid(z); });
  if (cache) {
    cache->input = features;
    cache->z1 = std::move(z1);
    cache->h1 = std::move(h1);
    cache->z2 = std::move(z2);
    cache->h2 = std::move(h2);
    cache->mask1 = std::move(mask1);
    cache->mask2 = std::move(mask2);
    cache->logits = std::move(logits);
    cache->scores = scores;
  }
  return scores;
}

Matrix head_penultimate(const ScorerModel& model, const Matrix& features) {
  Matrix z1 = features * model.block(Param::kW1).transpose();
  z1.rowwise() += model.block(Param::kB1).row(0);
  Matrix z2 = relu(z1) * model.block(Param::kW2).transpose();
  z2.rowwise() += model.block(Param::kB2).row(0);
  return relu(z2);
}

Vector l2_magnitudes(const Matrix& features) { return features.rowwise().norm(); }

Matrix l2_magnitudes_backward(const Matrix& features, const Vector& magnitudes, const Vector& grad_magnitudes) {
  Matrix grad = Matrix::Zero(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (grad_magnitudes[i] != 0.0 && magnitudes[i] > 0.0) {
      grad.row(i) = features.row(i) * (grad_magnitudes[i] / magnitudes[i]);
    }
  }
  return grad;
}

void head_backward(const ScorerModel& model, const HeadCache& c, const Vector& grad_logits, std::span<double> grad,
                   Matrix* grad_input) {
  const auto& layout = model.layout();
  block_view(grad, layout, Param::kW3).row(0).noalias() += grad_logits.transpose() * c.h2;
  block_view(grad, layout, Param::kB3)(0, 0) += grad_logits.sum();

  Matrix dz2 = grad_logits * model.block(Param::kW3).row(0);
  if (c.mask2.size() > 0) dz2.array() *= c.mask2.array();
  dz2 = (c.z2.array() > 0.0).select(dz2, 0.0);
  block_view(grad, layout, Param::kW2).noalias() += dz2.transpose() * c.h1;
  block_view(grad, layout, Param::kB2).row(0) += dz2.colwise().sum();

  Matrix dz1 = dz2 * model.block(Param::kW2);
  if (c.mask1.size() > 0) dz1.array() *= c.mask1.array();
  dz1 = (c.z1.array() > 0.0).select(dz1, 0.0);
  block_view(grad, layout, Param::kW1).noalias() += dz1.transpose() * c.input;
  block_view(grad, layout, Param::kB1).row(0) += dz1.colwise().sum();

  if (grad_input) *grad_input = dz1 * model.block(Param::kW1);
}

void neck_backward(const ScorerModel& model, const NeckCache& c, const Matrix& grad_output, std::span<double> grad) {
  if (!model.config().use_neck) return;
  const auto& layout = model.layout();
  const Eigen::Index n = c.input.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.config().neck_width()));

  block_view(grad, layout, Param::kOut).noalias() += grad_output.transpose() * c.ctx;
  const Matrix d_ctx = grad_output * model.block(Param::kOut);
  const Matrix d_attn = d_ctx * c.g.transpose();
  const Matrix d_g = c.attn.transpose() * d_ctx;
  // Softmax Jacobian, row by row.
  Matrix d_logits = c.attn.array() * (d_attn.colwise() - (d_attn.cwiseProduct(c.attn)).rowwise().sum()).array();
  d_logits *= scale;
  const Matrix d_p = d_logits * c.q;
  const Matrix d_q = d_logits.transpose() * c.p;

  block_view(grad, layout, Param::kTheta).noalias() += d_p.transpose() * c.x;
  block_view(grad, layout, Param::kPhi).noalias() += d_q.transpose() * c.x;
  block_view(grad, layout, Param::kG).noalias() += d_g.transpose() * c.x;

  Matrix d_x = d_p * model.block(Param::kTheta);
  d_x.noalias() += d_q * model.block(Param::kPhi);
  d_x.noalias() += d_g * model.block(Param::kG);

  block_view(grad, layout, Param::kConvCenter).noalias() += d_x.transpose() * c.input;
  if (n > 1) {
    block_view(grad, layout, Param::kConvPrev).noalias() += d_x.bottomRows(n - 1).transpose() * c.input.topRows(n - 1);
    block_view(grad, layout, Param::kConvNext).noalias() += d_x.topRows(n - 1).transpose() * c.input.bottomRows(n - 1);
  }
}

void adam_step(AdamState& state, const AdamConfig& cfg, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) throw ValidationError("adam: parameter/gradient size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam: non-finite gradient at parameter " + std::to_string(i));
    }
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw ValidationError("adam: state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<double> params, std::span<const double> analytic,
                                  std::span<const std::size_t> indices, double h) {
  GradCheckResult result;
  for (std::size_t idx : indices) {
    const double saved = params[idx];
    params[idx] = saved + h;
    const double up = loss(params);
    params[idx] = saved - h;
    const double down = loss(params);
    params[idx] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite loss at parameter " + std::to_string(idx));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[idx] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error || result.checked == 0) {
      result.max_rel_error = err;
      result.worst_index = idx;
      result.worst_analytic = analytic[idx];
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

std::vector<std::size_t> sample_param_indices(const ParamLayout& layout, std::size_t total, std::size_t per_block,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<std::size_t> chosen;
  for (const auto& b : layout.blocks()) {
    if (b.size() == 0) continue;
    std::uniform_int_distribution<std::size_t> pick(b.offset, b.offset + b.size() - 1);
    const std::size_t want = std::min(per_block, b.size());
    for (std::size_t added = 0; added < want;) {
      if (chosen.insert(pick(rng)).second) ++added;
    }
  }
  const std::size_t cap = std::min(total, layout.size());
  std::uniform_int_distribution<std::size_t> pick(0, layout.size() - 1);
  while (chosen.size() < cap) chosen.insert(pick(rng));
  return {chosen.begin(), chosen.end()};
}

}  // namespace magmine
