#include "magmine/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "magmine/run_config.hpp"

namespace magmine {

void SynthConfig::validate() const {
  if (num_abnormal < 1 || num_normal < 1) throw ConfigError("synth: need >= 1 abnormal and >= 1 normal train video");
  if (num_val_abnormal < 0 || num_val_normal < 0 || num_test_abnormal < 0 || num_test_normal < 0) {
    throw ConfigError("synth: split counts must be >= 0");
  }
  if (dim < 1) throw ConfigError("synth: dim must be >= 1");
  if (min_snippets < 1 || max_snippets < min_snippets) throw ConfigError("synth: need 1 <= min_snippets <= max_snippets");
  if (snippet_len < 1) throw ConfigError("synth: snippet_len must be >= 1");
  if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0)) throw ConfigError("synth: abnormal_fraction must lie in (0,1)");
  if (abnormal_fraction * min_snippets < 1.0) {
    throw ConfigError("synth: abnormal_fraction * min_snippets < 1 leaves short videos without an abnormal span");
  }
  if (separation < 0.0) throw ConfigError("synth: separation must be >= 0");
  if (!(noise_sigma > 0.0)) throw ConfigError("synth: noise_sigma must be > 0");
  if (distractor_rate < 0.0 || distractor_rate >= 1.0) throw ConfigError("synth: distractor_rate must lie in [0,1)");
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"name", c.name},
          {"num_abnormal", c.num_abnormal},
          {"num_normal", c.num_normal},
          {"num_val_abnormal", c.num_val_abnormal},
          {"num_val_normal", c.num_val_normal},
          {"num_test_abnormal", c.num_test_abnormal},
          {"num_test_normal", c.num_test_normal},
          {"dim", c.dim},
          {"min_snippets", c.min_snippets},
          {"max_snippets", c.max_snippets},
          {"snippet_len", c.snippet_len},
          {"abnormal_fraction", c.abnormal_fraction},
          {"separation", c.separation},
          {"noise_sigma", c.noise_sigma},
          {"distractor_rate", c.distractor_rate},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c) {
  StrictObject obj(j, "synth");
  obj.read("name", c.name);
  obj.read("num_abnormal", c.num_abnormal);
  obj.read("num_normal", c.num_normal);
  obj.read("num_val_abnormal", c.num_val_abnormal);
  obj.read("num_val_normal", c.num_val_normal);
  obj.read("num_test_abnormal", c.num_test_abnormal);
  obj.read("num_test_normal", c.num_test_normal);
  obj.read("dim", c.dim);
  obj.read("min_snippets", c.min_snippets);
  obj.read("max_snippets", c.max_snippets);
  obj.read("snippet_len", c.snippet_len);
  obj.read("abnormal_fraction", c.abnormal_fraction);
  obj.read("separation", c.separation);
  obj.read("noise_sigma", c.noise_sigma);
  obj.read("distractor_rate", c.distractor_rate);
  obj.read("seed", c.seed);
  obj.finish();
  return c;
}

bool SyntheticTruth::is_distractor(const std::string& video_id, int snippet) const {
  auto it = distractors.find(video_id);
  if (it == distractors.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), snippet);
}

std::vector<std::pair<int, int>> place_runs(int length, int count, int runs, std::uint64_t seed) {
  if (count <= 0) return {};
  if (count > length) throw ValidationError("place_runs: count exceeds length");
  runs = std::clamp(runs, 1, count);
  // Interior gaps need at least one free snippet each.
  while (runs > 1 && length - count < runs - 1) --runs;
  std::mt19937_64 rng(seed);

  // Split `count` into `runs` positive parts.
  std::vector<int> sizes(runs, 1);
  {
    std::uniform_int_distribution<int> pick(0, runs - 1);
    for (int left = count - runs; left > 0; --left) ++sizes[pick(rng)];
  }
  // Split the free snippets into runs+1 gaps, interior gaps >= 1.
  const int free_slots = length - count - (runs - 1);
  std::vector<int> cuts(runs);
  std::uniform_int_distribution<int> cut(0, free_slots);
  for (auto& c : cuts) c = cut(rng);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::pair<int, int>> out;
  int pos = 0;
  int prev_cut = 0;
  for (int r = 0; r < runs; ++r) {
    pos += cuts[r] - prev_cut + (r > 0 ? 1 : 0);
    prev_cut = cuts[r];
    out.emplace_back(pos, pos + sizes[r]);
    pos += sizes[r];
  }
  return out;
}

namespace {

struct VideoPlan {
  std::string id;
  Split split;
  int label;
};

}  // namespace

GeneratedCorpus generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const int d = cfg.dim;
  GeneratedCorpus corpus;
  auto& truth = corpus.truth;

  // mu0 = 0, mu1 = separation * u for a seeded random unit direction u.
  std::vector<double> direction(d);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, "direction"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : direction) {
        x = gauss(rng);
        norm += x * x;
      }
    } while (norm == 0.0);
    for (auto& x : direction) x /= std::sqrt(norm);
  }
  truth.mu_normal.assign(d, 0.0);
  truth.mu_abnormal.resize(d);
  for (int i = 0; i < d; ++i) truth.mu_abnormal[i] = cfg.separation * direction[i];

  std::vector<VideoPlan> plan;
  auto add = [&](Split split, int label, int count) {
    for (int i = 0; i < count; ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_%s_%04d", label ? "abn" : "nrm", split_name(split), i);
      plan.push_back({buf, split, label});
    }
  };
  add(Split::kTrain, 1, cfg.num_abnormal);
  add(Split::kTrain, 0, cfg.num_normal);
  add(Split::kVal, 1, cfg.num_val_abnormal);
  add(Split::kVal, 0, cfg.num_val_normal);
  add(Split::kTest, 1, cfg.num_test_abnormal);
  add(Split::kTest, 0, cfg.num_test_normal);

  std::vector<VideoRecord> records(plan.size());
  std::vector<std::vector<int>> distractors(plan.size());
  std::filesystem::create_directories(out_dir / "features");

  parallel_for(plan.size(), [&](std::size_t v) {
    const auto& p = plan[v];
    std::mt19937_64 rng(derive_seed(cfg.seed, p.id));
    std::uniform_int_distribution<int> length_dist(cfg.min_snippets, cfg.max_snippets);
    std::uniform_int_distribution<int> remainder_dist(0, cfg.snippet_len - 1);
    std::uniform_int_distribution<int> runs_dist(1, 3);
    const int t = length_dist(rng);
    const std::int64_t frames = static_cast<std::int64_t>(t) * cfg.snippet_len + remainder_dist(rng);

    // 0 = normal mode, 1 = abnormal mode, 2 = distractor mode
    std::vector<std::uint8_t> mode(t, 0);
    VideoRecord rec;
    rec.video_id = p.id;
    rec.label = p.label;
    rec.num_frames = frames;
    rec.snippet_len = cfg.snippet_len;
    rec.feature_path = "features/" + p.id + ".fvec";
    if (p.label == 1) {
      const int count = std::max(1, static_cast<int>(std::lround(cfg.abnormal_fraction * t)));
      const int runs = runs_dist(rng);
      const std::uint64_t placement_seed = rng();
      for (auto [b, e] : place_runs(t, count, runs, placement_seed)) {
        std::fill(mode.begin() + b, mode.begin() + e, std::uint8_t{1});
        rec.spans.push_back({static_cast<std::int64_t>(b) * cfg.snippet_len,
                             static_cast<std::int64_t>(e) * cfg.snippet_len});
      }
    } else {
      const int count = static_cast<int>(std::lround(cfg.distractor_rate * t));
      const int runs = runs_dist(rng);
      const std::uint64_t placement_seed = rng();
      for (auto [b, e] : place_runs(t, count, runs, placement_seed)) {
        std::fill(mode.begin() + b, mode.begin() + e, std::uint8_t{2});
        for (int i = b; i < e; ++i) distractors[v].push_back(i);
      }
    }

    FeatureMatrix m;
    m.video_id = p.id;
    m.data.resize(t, d);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (int i = 0; i < t; ++i) {
      const double shift = mode[i] == 1 ? cfg.separation : mode[i] == 2 ? 0.5 * cfg.separation : 0.0;
      for (int j = 0; j < d; ++j) {
        m.data(i, j) = static_cast<float>(shift * direction[j] + noise(rng));
      }
    }
    write_features(m, out_dir / rec.feature_path);
    records[v] = std::move(rec);
  });

  auto& manifest = corpus.manifest;
  manifest.name = cfg.name;
  manifest.dim = d;
  manifest.snippet_len = cfg.snippet_len;
  manifest.base_dir = out_dir;
  for (std::size_t v = 0; v < plan.size(); ++v) {
    manifest.splits[plan[v].split].push_back(records[v]);
    if (plan[v].label == 0) truth.distractors[plan[v].id] = distractors[v];
  }
  save_manifest(manifest, out_dir / kManifestFile);

  nlohmann::json jt = {{"mu_normal", truth.mu_normal},
                       {"mu_abnormal", truth.mu_abnormal},
                       {"distractors", truth.distractors},
                       {"config", synth_config_to_json(cfg)}};
  std::ofstream(out_dir / kTruthFile) << jt.dump() << '\n';
  return corpus;
}

SyntheticTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("ground truth: invalid JSON: ") + e.what());
  }
  SyntheticTruth t;
  t.mu_normal = j.at("mu_normal").get<std::vector<double>>();
  t.mu_abnormal = j.at("mu_abnormal").get<std::vector<double>>();
  t.distractors = j.at("distractors").get<std::map<std::string, std::vector<int>>>();
  return t;
}

}  // namespace magmine
