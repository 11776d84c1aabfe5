#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "magmine/evaluation.hpp"
#include "magmine/mil_trainer.hpp"
#include "support.hpp"

using namespace magmine;

namespace {

ScorerModel random_model(int dim, bool neck, std::uint64_t seed) {
  ScorerModel m(ModelConfig{dim, neck, 16, 8, 0.5});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : m.params()) p = n(rng);
  return m;
}

std::vector<Matrix> random_bags(int count, int segs, int dim, std::mt19937_64& rng) {
  std::vector<Matrix> out;
  for (int i = 0; i < count; ++i) out.push_back(testing::random_matrix(segs, dim, rng));
  return out;
}

double bce(double score, int y) { return y ? -std::log(score) : -std::log(1.0 - score); }

}  // namespace

TEST_CASE("topk_select examples") {
  const std::vector<double> m{1.0, 5.0, 3.0, 5.0};
  const auto t = topk_select(m, 2);
  CHECK(t.indices == std::vector<int>{1, 3});
  CHECK(t.mean == 5.0);
  const auto t3 = topk_select(m, 3);
  CHECK(t3.indices == std::vector<int>{1, 3, 2});
  CHECK(t3.mean == doctest::Approx(13.0 / 3.0));
  CHECK(topk_select(m, 4).indices.size() == 4);
  CHECK_THROWS(topk_select(m, 0));
  CHECK_THROWS(topk_select(m, 5));
}

TEST_CASE("topk_select agrees with a full stable sort") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 64)(rng);
    const int k = std::uniform_int_distribution<int>(1, n)(rng);
    std::vector<double> v(n);
    // Small integer range so ties are common.
    for (auto& x : v) x = std::uniform_int_distribution<int>(0, 9)(rng) * 0.5;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] > v[b]; });
    order.resize(k);
    const auto t = topk_select(v, k);
    REQUIRE(t.indices == order);
    double sum = 0.0;
    for (int i : order) sum += v[i];
    CHECK(t.mean == doctest::Approx(sum / k).epsilon(1e-12));
  }
}

TEST_CASE("magnitude hinge") {
  CHECK(magnitude_loss(10.0, 2.0, 1, 0, 100.0) == 92.0);
  CHECK(magnitude_loss(150.0, 2.0, 1, 0, 100.0) == 0.0);
  CHECK(magnitude_loss(10.0, 2.0, 0, 0, 100.0) == 0.0);
  CHECK(magnitude_loss(10.0, 2.0, 1, 1, 100.0) == 0.0);
  CHECK(magnitude_loss(10.0, 2.0, 0, 1, 100.0) == 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 120.0);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng), n = u(rng), da = u(rng) * 0.1;
    CHECK(magnitude_loss(a + da, n, 1, 0, 100.0) <= magnitude_loss(a, n, 1, 0, 100.0));
    CHECK(magnitude_loss(a, n + da, 1, 0, 100.0) >= magnitude_loss(a, n, 1, 0, 100.0));
  }
}

TEST_CASE("smoothness and sparsity terms") {
  const std::vector<double> s{0.1, 0.4, 0.4, 0.0};
  CHECK(smoothness_loss(s) == doctest::Approx(0.09 + 0.0 + 0.16));
  CHECK(sparsity_loss(s) == doctest::Approx(0.225));
  CHECK(smoothness_loss(std::vector<double>{0.3}) == 0.0);
}

TEST_CASE("zero model: BCE is ln 2 per selected segment") {
  const ScorerModel m(ModelConfig{6, true, 16, 8, 0.7});
  std::mt19937_64 rng(1);
  const auto a = random_bags(3, 32, 6, rng);
  const auto n = random_bags(3, 32, 6, rng);
  const auto l = batch_loss(m, a, n, 3, 100.0, LossWeights{});
  CHECK(l.bce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(l.smooth == 0.0);
  CHECK(l.sparse == doctest::Approx(0.5));
}

TEST_CASE("degenerate weights leave pure top-k BCE") {
  const auto m = random_model(5, true, 2);
  std::mt19937_64 rng(2);
  const auto a = random_bags(2, 16, 5, rng);
  const auto n = random_bags(2, 16, 5, rng);
  const auto l = batch_loss(m, a, n, 3, 1e-12, LossWeights{1.0, 1.0, 0.0, 0.0});
  CHECK(l.magnitude < 1e-9);
  CHECK(l.total == doctest::Approx(l.bce).epsilon(1e-9));

  // Independent top-k BCE.
  double expect = 0.0;
  for (int v = 0; v < 4; ++v) {
    const Matrix& x = v < 2 ? a[v] : n[v - 2];
    const Matrix f = neck_forward(m, x);
    const Vector mags = f.rowwise().norm();
    const Vector s = head_forward(m, f);
    std::vector<int> order(16);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return mags(i) > mags(j); });
    for (int r = 0; r < 3; ++r) expect += bce(s(order[r]), v < 2);
  }
  CHECK(l.bce == doctest::Approx(expect / 12.0).epsilon(1e-9));
}

TEST_CASE("k = S reduces to plain mean BCE plus the hinge") {
  const auto m = random_model(4, false, 3);
  std::mt19937_64 rng(3);
  const int segs = 8;
  const auto a = random_bags(3, segs, 4, rng);
  const auto n = random_bags(3, segs, 4, rng);
  const double margin = 5.0;
  const auto l = batch_loss(m, a, n, segs, margin, LossWeights{1.0, 1.0, 0.0, 0.0});
  double plain = 0.0;
  int count = 0;
  double hinge = 0.0;
  for (int i = 0; i < 3; ++i) {
    const Vector sa = head_forward(m, a[i]);
    const Vector sn = head_forward(m, n[i]);
    for (int j = 0; j < segs; ++j) {
      plain += bce(sa(j), 1) + bce(sn(j), 0);
      count += 2;
    }
    hinge += std::max(0.0, margin - (a[i].rowwise().norm().mean() - n[i].rowwise().norm().mean()));
  }
  CHECK(l.bce == doctest::Approx(plain / count).epsilon(1e-10));
  CHECK(l.magnitude == doctest::Approx(hinge / 3).epsilon(1e-10));
  CHECK(l.total == doctest::Approx(plain / count + hinge / 3).epsilon(1e-10));
}

TEST_CASE("batch_loss is invariant to a joint permutation of the pairs") {
  const auto m = random_model(6, true, 4);
  std::mt19937_64 rng(4);
  auto a = random_bags(4, 12, 6, rng);
  auto n = random_bags(4, 12, 6, rng);
  std::vector<double> g1(m.num_params()), g2(m.num_params());
  const auto l1 = batch_loss(m, a, n, 3, 10.0, LossWeights{}, std::nullopt, g1);
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<Matrix> pa, pn;
  for (int i : perm) {
    pa.push_back(a[i]);
    pn.push_back(n[i]);
  }
  const auto l2 = batch_loss(m, pa, pn, 3, 10.0, LossWeights{}, std::nullopt, g2);
  CHECK(l2.total == doctest::Approx(l1.total).epsilon(1e-12));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-9));
}

// Smallest |pre-activation| over both hidden layers; central differences are
// only meaningful when no ReLU sits within the step of its kink.
double kink_distance(const ScorerModel& m, const std::vector<Matrix>& bags) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x : bags) {
    HeadCache c;
    head_forward(m, neck_forward(m, x), std::nullopt, &c);
    best = std::min({best, c.z1.cwiseAbs().minCoeff(), c.z2.cwiseAbs().minCoeff()});
  }
  return best;
}

TEST_CASE("full MIL loss gradient matches central differences") {
  std::mt19937_64 rng(5);
  for (bool neck : {true, false}) {
    const auto m = random_model(8, neck, 6);
    std::vector<Matrix> a, n;
    for (int attempt = 0; attempt < 50; ++attempt) {
      a = random_bags(2, 32, 8, rng);
      n = random_bags(2, 32, 8, rng);
      std::vector<Matrix> all = a;
      all.insert(all.end(), n.begin(), n.end());
      if (kink_distance(m, all) > 1e-3) break;
    }
    // Margin above the magnitude gap so the hinge is active.
    const auto r = mil_gradient_check(m, a, n, 3, 100.0, LossWeights{1.0, 1.0, 0.3, 0.3}, 400, 7);
    INFO("neck=" << neck << " worst=" << r.worst_index << " a=" << r.worst_analytic << " n=" << r.worst_numeric);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("BCE gradient ignores segments outside the top-k") {
  const auto m = random_model(4, false, 8);
  std::mt19937_64 rng(8);
  auto a = random_bags(1, 10, 4, rng);
  auto n = random_bags(1, 10, 4, rng);
  const LossWeights only_bce{1.0, 0.0, 0.0, 0.0};
  std::vector<double> g1(m.num_params()), g2(m.num_params());
  batch_loss(m, a, n, 3, 1.0, only_bce, std::nullopt, g1);
  const Vector mags = a[0].rowwise().norm();
  const auto top = topk_select(std::vector<double>(mags.data(), mags.data() + mags.size()), 3);
  int outside = 0;
  while (std::find(top.indices.begin(), top.indices.end(), outside) != top.indices.end()) ++outside;
  a[0].row(outside) *= 0.5;  // shrinks its magnitude, stays outside
  batch_loss(m, a, n, 3, 1.0, only_bce, std::nullopt, g2);
  CHECK(g1 == g2);
}

TEST_CASE("score_video") {
  const ScorerModel zero(ModelConfig{4, true, 8, 4, 0.7});
  std::mt19937_64 rng(9);
  for (double s : score_video(testing::random_matrix(7, 4, rng), zero)) CHECK(s == 0.5);
  // Initialized conv taps are zero, so the neck treats both ends alike.
  auto m = ScorerModel::initialized(ModelConfig{4, true, 8, 4, 0.7}, 10);
  Matrix constant(9, 4);
  constant.rowwise() = testing::random_matrix(1, 4, rng).row(0);
  const Vector fwd = score_video(constant, m);
  const Vector rev = score_video(Matrix(constant.colwise().reverse()), m);
  for (int i = 0; i < 9; ++i) CHECK(rev(i) == doctest::Approx(fwd(8 - i)).epsilon(1e-12));
  CHECK_THROWS(score_video(testing::random_matrix(3, 5, rng), m));
}

TEST_CASE("CyclicShuffler visits each index once per round") {
  CyclicShuffler s(7, 3);
  for (int round = 0; round < 3; ++round) {
    std::vector<std::size_t> seen;
    for (int i = 0; i < 7; ++i) seen.push_back(s.next());
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  }
}

TEST_CASE("train_mil: deterministic, batch reduction, no signal at zero separation") {
  testing::ScratchDir dir("mil");
  auto synth = testing::tiny_synth(11);
  const auto corpus = generate_corpus(synth, dir.path());
  MilConfig cfg;
  cfg.epochs = 3;
  cfg.hidden1 = 32;
  cfg.hidden2 = 16;
  cfg.seed = 5;
  const auto r1 = train_mil(corpus.manifest, cfg);
  const auto r2 = train_mil(corpus.manifest, cfg);
  CHECK(r1.state.model.params() == r2.state.model.params());
  CHECK(r1.best_model.params() == r2.best_model.params());
  REQUIRE(r1.state.trace.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r1.state.trace[i].loss.total == r2.state.trace[i].loss.total);
    CHECK(std::isfinite(r1.state.trace[i].loss.total));
  }
  CHECK(r1.batch_pairs_used == 8);  // 8 abnormal train videos < 16
  CHECK(r1.best_val_auc.has_value());

  cfg.seed = 6;
  CHECK(train_mil(corpus.manifest, cfg).state.model.params() != r1.state.model.params());

  testing::ScratchDir flat_dir("mil_flat");
  synth.separation = 0.0;
  synth.num_test_abnormal = 12;
  synth.num_test_normal = 24;
  const auto flat = generate_corpus(synth, flat_dir.path());
  cfg.epochs = 10;
  const auto rf = train_mil(flat.manifest, cfg);
  const double auc = evaluate_frames(flat.manifest, Split::kTest, rf.best_model).frame_auc;
  CHECK(auc >= 0.4);
  CHECK(auc <= 0.6);
}

TEST_CASE("MilConfig validation") {
  MilConfig c;
  CHECK_NOTHROW(c.validate());
  c.k = 33;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MilConfig{};
  c.margin = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MilConfig{};
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
