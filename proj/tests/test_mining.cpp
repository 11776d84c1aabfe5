#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "magmine/mining.hpp"
#include "support.hpp"

using namespace magmine;

namespace {

ScoredVideo scored(const std::string& id, int label, std::vector<double> scores) {
  ScoredVideo v;
  v.record.video_id = id;
  v.record.label = label;
  v.record.num_frames = static_cast<std::int64_t>(scores.size()) * 16;
  if (label == 1) v.record.spans = {{0, 16}};
  v.snippet_scores = std::move(scores);
  return v;
}

std::vector<SampleEntry> entries(int label, int n, std::mt19937_64& rng) {
  std::vector<SampleEntry> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) out.push_back({"v" + std::to_string(i % 7), i, label, u(rng)});
  return out;
}

// Several normal videos with plenty of snippets for fills.
std::vector<ScoredVideo> normal_pool(int videos, int snippets, double score) {
  std::vector<ScoredVideo> out;
  for (int v = 0; v < videos; ++v) out.push_back(scored("n" + std::to_string(v), 0, std::vector<double>(snippets, score)));
  return out;
}

}  // namespace

TEST_CASE("mine_positives examples") {
  const std::vector<ScoredVideo> v{scored("a", 1, {0.99, 0.997, 0.5}), scored("n", 0, {0.999, 0.999})};
  const auto pos = mine_positives(v, 0.995);
  REQUIRE(pos.size() == 1);
  CHECK(pos[0].video_id == "a");
  CHECK(pos[0].snippet == 1);
  CHECK(pos[0].label == 1);
  CHECK(pos[0].score == 0.997);
  CHECK(mine_positives(v, 0.0).size() == 3);
}

TEST_CASE("mine_hard_negatives examples and fill rule") {
  const std::vector<ScoredVideo> v{scored("n", 0, {0.1, 0.7, 0.6}), scored("a", 1, {0.9, 0.9})};
  const auto neg = mine_hard_negatives(v, 0.5, 0, 1);
  REQUIRE(neg.size() == 2);
  CHECK(neg[0].snippet == 1);
  CHECK(neg[1].snippet == 2);
  for (const auto& e : neg) {
    CHECK(e.label == 0);
    CHECK(e.hard);
  }

  const auto pool = normal_pool(4, 5, 0.2);
  const auto filled = mine_hard_negatives(pool, 0.5, 10, 3);
  CHECK(filled.size() == 10);
  std::set<std::pair<std::string, int>> unique;
  for (const auto& e : filled) {
    CHECK_FALSE(e.hard);
    CHECK(e.label == 0);
    unique.insert({e.video_id, e.snippet});
  }
  CHECK(unique.size() == 10);
  CHECK(mine_hard_negatives(pool, 0.5, 10, 3) == filled);
  // More fills requested than exist: everything, once.
  CHECK(mine_hard_negatives(pool, 0.5, 100, 3).size() == 20);
}

TEST_CASE("balance examples") {
  std::mt19937_64 rng(1);
  const auto pos = entries(1, 100, rng);
  MiningConfig cfg;

  auto neg300 = entries(0, 300, rng);
  const auto b = balance(pos, neg300, cfg);
  CHECK(b.count(1) == 100);
  REQUIRE(b.count(0) == 100);
  std::vector<double> scores;
  for (const auto& e : neg300) scores.push_back(e.score);
  std::sort(scores.rbegin(), scores.rend());
  double min_kept = 1.0;
  for (const auto& e : b.entries)
    if (e.label == 0) min_kept = std::min(min_kept, e.score);
  CHECK(min_kept == scores[99]);

  const auto pool = normal_pool(10, 20, 0.1);
  const auto b60 = balance(pos, entries(0, 60, rng), cfg, pool);
  CHECK(b60.count(0) == 100);
  std::size_t fills = 0;
  for (const auto& e : b60.entries) fills += (e.label == 0 && !e.hard);
  CHECK(fills == 40);

  cfg.balance_ratio = 0.5;
  CHECK(balance(pos, neg300, cfg).count(0) == 50);
  cfg.balance_ratio = 0.33;
  CHECK(balance(pos, neg300, cfg).count(0) == 33);
}

TEST_CASE("balance tie-break is score desc, video_id asc, snippet asc") {
  std::vector<SampleEntry> pos{{"a", 0, 1, 0.999}, {"a", 1, 1, 0.999}};
  std::vector<SampleEntry> neg{{"n2", 0, 0, 0.6}, {"n1", 4, 0, 0.6}, {"n1", 2, 0, 0.6}, {"n0", 0, 0, 0.55}};
  const auto b = balance(pos, neg, MiningConfig{});
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& e : b.entries)
    if (e.label == 0) kept.emplace_back(e.video_id, e.snippet);
  std::sort(kept.begin(), kept.end());
  CHECK(kept == std::vector<std::pair<std::string, int>>{{"n1", 2}, {"n1", 4}});
}

TEST_CASE("balance count property") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int np = std::uniform_int_distribution<int>(1, 50)(rng);
    const int nn = std::uniform_int_distribution<int>(0, 120)(rng);
    MiningConfig cfg;
    cfg.balance_ratio = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
    const auto pool = normal_pool(10, 30, 0.1);
    const auto b = balance(entries(1, np, rng), entries(0, nn, rng), cfg, pool);
    const double want = std::ceil(np * cfg.balance_ratio);
    CHECK(std::abs(static_cast<double>(b.count(0)) - want) <= 1.0);
  }
}

TEST_CASE("raising the positive threshold never grows the positive set") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoredVideo> v;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> s(50);
    for (auto& x : s) x = u(rng);
    v.push_back(scored("a" + std::to_string(i), 1, s));
  }
  std::size_t prev = mine_positives(v, 0.0).size();
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const auto now = mine_positives(v, t).size();
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("threshold decay fallback") {
  std::vector<ScoredVideo> v{scored("a", 1, std::vector<double>(20, 0.97)), scored("n", 0, {0.3})};
  MiningConfig cfg;
  const auto p = mine_positives_with_fallback(v, cfg);
  CHECK(p.decayed);
  CHECK(p.threshold == doctest::Approx(0.965));
  CHECK(p.entries.size() == 20);

  std::vector<ScoredVideo> flat{scored("a", 1, std::vector<double>(20, 0.5))};
  const auto none = mine_positives_with_fallback(flat, cfg);
  CHECK(none.entries.empty());
  CHECK(none.threshold == doctest::Approx(0.9));
}

TEST_CASE("mining on a real corpus: label sources, recorded scores, degenerate detector") {
  testing::ScratchDir dir("mining");
  const auto corpus = generate_corpus(testing::tiny_synth(21), dir.path());
  const auto& m = corpus.manifest;
  std::map<std::string, int> label_of;
  for (const auto& r : m.split(Split::kTrain)) label_of[r.video_id] = r.label;

  // Degenerate AD: all scores 0.5 -> fallback hits the floor, empty set, warning.
  const ScorerModel zero(ModelConfig{m.dim, true, 16, 8, 0.7});
  const auto empty = mine_training_samples(m, zero, MiningConfig{});
  CHECK(empty.samples.entries.empty());
  CHECK(empty.warnings.size() == 2);

  // An untrained detector with a low threshold still gives a valid, auditable set.
  MiningConfig low;
  low.pos_threshold = 0.6;
  low.neg_threshold = 0.4;
  low.decay_floor = 0.05;
  low.decay_step = 0.05;
  const auto model = ScorerModel::initialized(ModelConfig{m.dim, true, 16, 8, 0.7}, 4);
  const auto out = mine_training_samples(m, model, low);
  REQUIRE(out.samples.count(1) > 0);
  const auto scored_train = score_split(m, Split::kTrain, model);
  std::map<std::string, const ScoredVideo*> by_id;
  for (const auto& s : scored_train) by_id[s.record.video_id] = &s;
  for (const auto& e : out.samples.entries) {
    CHECK(label_of.at(e.video_id) == e.label);
    CHECK(by_id.at(e.video_id)->snippet_scores[e.snippet] == e.score);
  }

  testing::ScratchDir io("mining_io");
  save_sample_manifest(out.samples, io / "s.json");
  const auto back = load_sample_manifest(io / "s.json");
  CHECK(back.entries == out.samples.entries);
  CHECK(back.provenance == out.samples.provenance);
}

TEST_CASE("sample manifest JSON is validated") {
  nlohmann::json j = {{"provenance", nlohmann::json::object()},
                      {"entries", {{{"video_id", "a"}, {"snippet", 1}, {"label", 1}, {"score", 0.9}, {"hard", true}}}}};
  CHECK(sample_manifest_from_json(j).entries.size() == 1);
  auto bad = j;
  bad["entries"][0]["label"] = 2;
  CHECK_THROWS(sample_manifest_from_json(bad));
  bad = j;
  bad["entries"][0]["snippet"] = -1;
  CHECK_THROWS(sample_manifest_from_json(bad));
  bad = j;
  bad["entries"][0].erase("score");
  CHECK_THROWS(sample_manifest_from_json(bad));
}

TEST_CASE("run_iteration and feature regeneration") {
  testing::ScratchDir dir("iter");
  auto synth = testing::tiny_synth(22);
  synth.separation = 4.0;
  const auto corpus = generate_corpus(synth, dir / "corpus");
  MilConfig mil;
  mil.epochs = 8;
  mil.hidden1 = 32;
  mil.hidden2 = 16;
  mil.margin = 10.0;
  SupConfig sup;
  sup.epochs = 3;
  sup.hidden1 = 32;
  sup.lr = 1e-3;
  MiningConfig mining;
  mining.pos_threshold = 0.9;
  mining.decay_floor = 0.5;
  mining.decay_step = 0.05;
  const auto r = run_iteration(corpus.manifest, mil, sup, mining, 1, dir / "out");
  REQUIRE(r.completed());
  for (const char* f : {"ad_train_log.jsonl", "ad.ckpt", "ad_report.json", "samples.json", "ar_train_log.jsonl",
                        "ar.ckpt", "ar_report.json"})
    CHECK(std::filesystem::exists(dir / "out" / "iter_1" / f));
  CHECK(r.samples.provenance["iter"] == 1);
  CHECK(std::isfinite(r.ar_report->frame_auc));

  const auto regen = regenerate_features(corpus.manifest, r.ar->best_model, dir / "regen");
  CHECK(regen.dim == 128);
  const auto reloaded = load_manifest(dir / "regen" / kManifestFile, true);
  for (const auto& [split, records] : reloaded.splits) {
    CHECK(records.size() == corpus.manifest.split(split).size());
    for (const auto& rec : records) CHECK(load_video_features(reloaded, rec).dim() == 128);
  }

  const auto again = run_iteration(corpus.manifest, mil, sup, mining, 1);
  CHECK(again.samples.entries == r.samples.entries);
  CHECK(again.ar->model.params() == r.ar->model.params());
}

TEST_CASE("MiningConfig validation") {
  MiningConfig c;
  CHECK_NOTHROW(c.validate());
  c.neg_threshold = 0.999;
  CHECK_THROWS(c.validate());
  c = MiningConfig{};
  c.pos_threshold = 1.0;
  CHECK_THROWS(c.validate());
  c = MiningConfig{};
  c.balance_ratio = 0.0;
  CHECK_THROWS(c.validate());
}
