#include <doctest.h>

#include <cmath>
#include <random>

#include "magmine/nn.hpp"
#include "support.hpp"

using namespace magmine;

namespace {

// Every block filled with small random values, including the zero-init ones.
ScorerModel random_model(int dim, bool neck, std::uint64_t seed, int h1 = 16, int h2 = 8) {
  ModelConfig cfg{dim, neck, h1, h2, 0.5};
  ScorerModel m(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : m.params()) p = n(rng);
  return m;
}

// Loss = sum_i w_i * score_i over the neck -> head pipeline.
double pipeline_loss(const ScorerModel& model, const Matrix& x, const Vector& w) {
  return w.dot(head_forward(model, neck_forward(model, x)));
}

std::vector<double> pipeline_grad(const ScorerModel& model, const Matrix& x, const Vector& w) {
  std::vector<double> grad(model.num_params(), 0.0);
  NeckCache nc;
  HeadCache hc;
  const Matrix f = neck_forward(model, x, &nc);
  const Vector s = head_forward(model, f, std::nullopt, &hc);
  const Vector dlogits = (w.array() * s.array() * (1.0 - s.array())).matrix();
  Matrix dfeat;
  head_backward(model, hc, dlogits, grad, &dfeat);
  neck_backward(model, nc, dfeat, grad);
  return grad;
}

GradCheckResult check_pipeline(ScorerModel model, const Matrix& x, const Vector& w) {
  const auto analytic = pipeline_grad(model, x, w);
  std::vector<std::size_t> idx(model.num_params());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ScorerModel probe = model;
  auto loss = [&](std::span<const double> p) {
    std::copy(p.begin(), p.end(), probe.params().begin());
    return pipeline_loss(probe, x, w);
  };
  return finite_diff_check(loss, model.params(), analytic, idx);
}

}  // namespace

TEST_CASE("parameter layout sizes") {
  const ParamLayout with(ModelConfig{32, true, 512, 128, 0.7});
  CHECK(with.block(Param::kConvPrev).size() == 32u * 32u);
  CHECK(with.block(Param::kTheta).rows == 8);
  CHECK(with.block(Param::kOut).cols == 8);
  CHECK(with.block(Param::kW1).size() == 512u * 32u);
  CHECK(with.block(Param::kW3).size() == 128u);
  const std::size_t expected = 3 * 32 * 32 + 3 * 8 * 32 + 32 * 8 + 512 * 32 + 512 + 128 * 512 + 128 + 128 + 1;
  CHECK(with.size() == expected);

  const ParamLayout without(ModelConfig{32, false, 512, 128, 0.7});
  CHECK(without.block(Param::kTheta).size() == 0);
  CHECK(without.size() == expected - (3 * 32 * 32 + 3 * 8 * 32 + 32 * 8));
  CHECK(ModelConfig{3, true}.neck_width() == 1);
}

TEST_CASE("zero model: neck is the identity and every score is 0.5") {
  const ScorerModel m(ModelConfig{6, true, 16, 8, 0.7});
  std::mt19937_64 rng(1);
  const Matrix x = testing::random_matrix(9, 6, rng);
  CHECK(neck_forward(m, x) == x);
  for (double s : head_forward(m, x)) CHECK(s == 0.5);
}

TEST_CASE("initialized model keeps the neck identity") {
  const auto m = ScorerModel::initialized(ModelConfig{8, true, 16, 8, 0.7}, 3);
  std::mt19937_64 rng(2);
  const Matrix x = testing::random_matrix(5, 8, rng);
  CHECK((neck_forward(m, x) - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.block(Param::kTheta).cwiseAbs().maxCoeff() > 0.0);
  CHECK(m.block(Param::kTheta).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
  CHECK(m.block(Param::kConvCenter).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ScorerModel::initialized(m.config(), 3).params() == m.params());
}

TEST_CASE("attention rows are a probability distribution") {
  const auto m = random_model(8, true, 4);
  std::mt19937_64 rng(5);
  NeckCache c;
  neck_forward(m, testing::random_matrix(4, 8, rng), &c);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(c.attn.row(i).sum() - 1.0) < 1e-12);
    CHECK(c.attn.row(i).minCoeff() >= 0.0);
  }
  neck_forward(m, testing::random_matrix(1, 8, rng), &c);
  REQUIRE(c.attn.rows() == 1);
  CHECK(c.attn(0, 0) == 1.0);

  // Large inputs must not overflow the softmax.
  neck_forward(m, testing::random_matrix(30, 8, rng, 1e3), &c);
  CHECK(c.attn.allFinite());
  for (int i = 0; i < 30; ++i) CHECK(std::abs(c.attn.row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("dropout: rate 0 equals eval mode, fixed seed is deterministic") {
  auto m = random_model(6, false, 6);
  std::mt19937_64 rng(7);
  const Matrix x = testing::random_matrix(10, 6, rng);
  const Vector eval = head_forward(m, x);
  CHECK(head_forward(m, x, 11) == head_forward(m, x, 11));
  CHECK(head_forward(m, x, 11) != eval);
  ModelConfig no_drop = m.config();
  no_drop.dropout_rate = 0.0;
  ScorerModel m0(no_drop);
  m0.params() = m.params();
  CHECK(head_forward(m0, x, 11) == head_forward(m0, x));
}

TEST_CASE("scores stay strictly inside (0,1) for huge inputs") {
  const auto m = random_model(4, true, 8);
  std::mt19937_64 rng(9);
  const Vector s = head_forward(m, neck_forward(m, testing::random_matrix(20, 4, rng, 1e6)));
  for (double v : s) {
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(sigmoid(1e6) < 1.0);
  CHECK(sigmoid(-1e6) > 0.0);
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("l2 magnitudes and their subgradient") {
  Matrix x(3, 2);
  x << 3, 4, 0, 0, -6, 8;
  const Vector n = l2_magnitudes(x);
  CHECK(n(0) == 5.0);
  CHECK(n(1) == 0.0);
  CHECK(n(2) == 10.0);
  Matrix scaled = x;
  scaled.row(2) *= 2.5;
  CHECK(l2_magnitudes(scaled)(2) == doctest::Approx(25.0));
  const Matrix g = l2_magnitudes_backward(x, n, Vector::Ones(3));
  CHECK(g(0, 0) == doctest::Approx(0.6));
  CHECK(g(0, 1) == doctest::Approx(0.8));
  CHECK(g(1, 0) == 0.0);
  CHECK(g(1, 1) == 0.0);
}

TEST_CASE("neck and head gradients match central differences") {
  std::mt19937_64 rng(10);
  for (bool neck : {true, false}) {
    for (int n : {1, 2, 7}) {
      const auto m = random_model(5, neck, 100 + n);
      const Matrix x = testing::random_matrix(n, 5, rng);
      Vector w(n);
      for (int i = 0; i < n; ++i) w(i) = std::normal_distribution<double>(0, 1)(rng);
      const auto r = check_pipeline(m, x, w);
      INFO("neck=" << neck << " n=" << n << " worst=" << r.worst_index);
      CHECK(r.max_rel_error < 1e-6);
      CHECK(r.checked == m.num_params());
    }
  }
}

TEST_CASE("finite_diff_check: quadratic is exact and a corrupted gradient fails") {
  std::vector<double> p{0.3, -1.2, 2.0, 0.7};
  const std::vector<double> a{1.0, -2.0, 0.5, 3.0};
  auto loss = [&](std::span<const double> q) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += 0.5 * a[i] * q[i] * q[i];
    return s;
  };
  std::vector<double> grad(4);
  for (std::size_t i = 0; i < 4; ++i) grad[i] = a[i] * p[i];
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto ok = finite_diff_check(loss, p, grad, idx);
  CHECK(ok.max_rel_error < 1e-9);
  CHECK(p == std::vector<double>{0.3, -1.2, 2.0, 0.7});

  grad[2] *= 2.0;
  const auto bad = finite_diff_check(loss, p, grad, idx);
  CHECK_FALSE(bad.passed());
  CHECK(bad.worst_index == 2);

  // Same negative control on the network itself.
  const auto m = random_model(4, true, 12);
  std::mt19937_64 rng(13);
  const Matrix x = testing::random_matrix(3, 4, rng);
  const Vector w = Vector::Ones(3);
  auto analytic = pipeline_grad(m, x, w);
  const std::size_t target = m.layout().block(Param::kW1).offset + 1;
  analytic[target] *= 2.0;
  ScorerModel probe = m;
  auto net_loss = [&](std::span<const double> q) {
    std::copy(q.begin(), q.end(), probe.params().begin());
    return pipeline_loss(probe, x, w);
  };
  ScorerModel copy = m;
  const std::vector<std::size_t> one{target};
  if (std::abs(analytic[target]) > 1e-3) CHECK_FALSE(finite_diff_check(net_loss, copy.params(), analytic, one).passed());
}

TEST_CASE("sample_param_indices covers every block") {
  const ParamLayout layout(ModelConfig{8, true, 16, 8, 0.7});
  const auto idx = sample_param_indices(layout, 200, 16, 1);
  CHECK(idx.size() >= 200);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  for (const auto& b : layout.blocks()) {
    if (b.size() == 0) continue;
    const auto n = std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return i >= b.offset && i < b.offset + b.size(); });
    CHECK(n >= static_cast<long>(std::min<std::size_t>(16, b.size())));
  }
  CHECK(sample_param_indices(layout, 200, 16, 1) == idx);
}

TEST_CASE("adam: zero gradient without decay leaves parameters alone") {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  AdamState st;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step(st, cfg, p, g);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(st.step == 1);
}

TEST_CASE("adam: first step moves by lr against the gradient sign") {
  std::vector<double> p{0.5, 0.5, 0.5, 0.5};
  const std::vector<double> g{3.0, -0.01, 1e-3, -40.0};
  AdamState st;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 1e-2;
  adam_step(st, cfg, p, g);
  for (std::size_t i = 0; i < 4; ++i) {
    const double sign = g[i] > 0 ? 1.0 : -1.0;
    CHECK(p[i] == doctest::Approx(0.5 - cfg.lr * sign).epsilon(1e-4));
  }
}

TEST_CASE("adam: decoupled weight decay and determinism") {
  std::vector<double> p{2.0};
  const std::vector<double> g{0.0};
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  adam_step(st, cfg, p, g);
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.05)));

  std::mt19937_64 rng(3);
  std::vector<double> a(50), b, grads(50);
  for (auto& x : a) x = std::normal_distribution<double>(0, 1)(rng);
  b = a;
  AdamState sa, sb;
  for (int step = 0; step < 20; ++step) {
    for (auto& x : grads) x = std::normal_distribution<double>(0, 1)(rng);
    adam_step(sa, AdamConfig{}, a, grads);
    adam_step(sb, AdamConfig{}, b, grads);
  }
  CHECK(a == b);
}

TEST_CASE("adam rejects non-finite gradients without modifying state") {
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{0.1, std::nan("")};
  AdamState st;
  CHECK_THROWS_AS(adam_step(st, AdamConfig{}, p, g), NumericError);
  CHECK(p == std::vector<double>{1.0, 2.0});
  CHECK(st.step == 0);
}
