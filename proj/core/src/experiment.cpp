#include "magmine/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "magmine/checkpoint.hpp"
#include "magmine/evaluation.hpp"
#include "magmine/mining.hpp"

namespace magmine {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

SummaryRow eval_row(const std::string& name, const EvalReport& report) {
  SummaryRow row{name, {}};
  row.values.emplace_back("frame_auc", report.frame_auc);
  row.values.emplace_back("frame_ap", report.frame_map);
  return row;
}

struct Runner {
  const RunConfig& cfg;
  std::filesystem::path out_dir;
  DatasetManifest manifest;
  std::optional<SyntheticTruth> truth;
  Split eval_split;
  ExperimentSummary summary;

  // Runs one stage; exceptions become recorded failures.
  void stage(const std::string& name, const std::function<void()>& body) {
    std::cerr << "[" << summary.recipe << "] " << name << '\n';
    try {
      body();
    } catch (const std::exception& e) {
      summary.failures.push_back(name + ": " + e.what());
      std::cerr << "[" << summary.recipe << "] " << name << " failed: " << e.what() << '\n';
    }
  }

  void mil_stage(const std::string& name, MilConfig mil) {
    stage(name, [&] {
      const auto dir = out_dir / name;
      std::filesystem::create_directories(dir);
      std::ofstream log(dir / "train_log.jsonl");
      auto result = train_mil(manifest, mil, [&](const EpochRecord& r) { log << r.to_json().dump() << '\n'; });
      auto report = evaluate_frames(manifest, eval_split, result.best_model);
      report.checkpoint_id = name;
      report.config = mil_config_to_json(mil);
      save_checkpoint(dir / "model.ckpt", result.best_model,
                      {{"config", mil_config_to_json(mil)}, {"best_epoch", result.best_epoch}});
      write_report(report, (dir / "report.json").string());
      auto row = eval_row(name, report);
      row.values.emplace_back("best_epoch", result.best_epoch);
      if (result.best_val_auc) row.values.emplace_back("best_val_auc", *result.best_val_auc);
      summary.rows.push_back(std::move(row));
    });
  }

  void sup_stage(const std::string& name, SupConfig sup, const SampleManifest* mined = nullptr) {
    stage(name, [&] {
      const auto dir = out_dir / name;
      std::filesystem::create_directories(dir);
      const SampleSet set = build_supervised_samples(manifest, sup.mode, mined);
      std::ofstream log(dir / "train_log.jsonl");
      auto result = train_supervised(manifest, set, sup, [&](const SupEpochRecord& r) { log << r.to_json().dump() << '\n'; });
      auto report = evaluate_frames(manifest, eval_split, result.best_model);
      report.checkpoint_id = name;
      report.config = sup_config_to_json(sup);
      save_checkpoint(dir / "model.ckpt", result.best_model,
                      {{"config", sup_config_to_json(sup)}, {"best_epoch", result.best_epoch},
                       {"samples", set.count_report()}});
      write_report(report, (dir / "report.json").string());
      auto row = eval_row(name, report);
      row.values.emplace_back("best_epoch", result.best_epoch);
      row.values.emplace_back("positives", static_cast<double>(set.positives));
      row.values.emplace_back("negatives", static_cast<double>(set.negatives));
      summary.rows.push_back(std::move(row));
    });
  }

  void check(std::string name, std::string better, std::string worse, double gap, bool strict) {
    DirectionalCheck c;
    c.name = std::move(name);
    c.better = std::move(better);
    c.worse = std::move(worse);
    c.min_gap = gap;
    c.strict = strict;
    if (const auto* b = summary.row(c.better)) c.better_value = b->get(c.metric);
    if (const auto* w = summary.row(c.worse)) c.worse_value = w->get(c.metric);
    if (c.better_value && c.worse_value) {
      const double diff = *c.better_value - *c.worse_value;
      c.passed = c.strict ? diff > c.min_gap : diff >= c.min_gap;
    }
    summary.checks.push_back(std::move(c));
  }

  void recipe_single() { mil_stage("mil", cfg.mil); }

  void recipe_ablate_neck() {
    MilConfig with = cfg.mil, without = cfg.mil;
    with.use_neck = true;
    without.use_neck = false;
    mil_stage("mil_neck", with);
    mil_stage("mil_no_neck", without);
    check("neck_helps", "mil_neck", "mil_no_neck", 0.0, false);
  }

  void recipe_compare_ad_ar() {
    recipe_ablate_neck();
    SupConfig sup = cfg.sup;
    sup.mode = SupMode::kTrimmedGt;
    for (auto sel : {Selection::kAllSnippetMean, Selection::kRandomSegment, Selection::kSingleSnippet}) {
      sup.selection = sel;
      sup_stage(std::string("ar_") + to_string(sel), sup);
    }
    check("all_snippets_beat_single_snippet", "ar_all_snippet_mean", "ar_single_snippet", 0.0, false);
  }

  void recipe_iterate() {
    for (int it = 1; it <= cfg.experiment.iters; ++it) {
      const std::string tag = "iter_" + std::to_string(it);
      std::optional<IterationResult> res;
      MilConfig mil = cfg.mil;
      SupConfig sup = cfg.sup;
      MiningConfig mining = cfg.mining;
      if (it > 1) {
        mil.seed = derive_seed(cfg.mil.seed, static_cast<std::uint64_t>(it));
        sup.seed = derive_seed(cfg.sup.seed, static_cast<std::uint64_t>(it));
        mining.seed = derive_seed(cfg.mining.seed, static_cast<std::uint64_t>(it));
      }
      stage(tag, [&] { res = run_iteration(manifest, mil, sup, mining, it, out_dir, eval_split); });
      if (!res) break;
      for (const auto& w : res->warnings) summary.warnings.push_back(tag + ": " + w);

      auto ad = eval_row(tag + "_ad", res->ad_report);
      ad.values.emplace_back("best_epoch", res->ad.best_epoch);
      summary.rows.push_back(std::move(ad));

      SummaryRow mined{tag + "_mining", {}};
      mined.values.emplace_back("positives", static_cast<double>(res->samples.count(1)));
      mined.values.emplace_back("negatives", static_cast<double>(res->samples.count(0)));
      if (truth) {
        const auto q = mining_quality(manifest, res->samples, *truth);
        mined.values.emplace_back("positive_purity", q.purity());
        mined.values.emplace_back("hard_negatives", static_cast<double>(q.hard_negatives));
        mined.values.emplace_back("distractor_fraction", q.distractor_fraction());
      }
      summary.rows.push_back(std::move(mined));

      if (!res->completed()) {
        summary.failures.push_back(tag + ": action-recognition stage skipped");
        break;
      }
      auto ar = eval_row(tag + "_ar", *res->ar_report);
      ar.values.emplace_back("best_epoch", res->ar->best_epoch);
      summary.rows.push_back(std::move(ar));

      if (it == 1) {
        SupConfig whole = cfg.sup;
        whole.mode = SupMode::kWholeVideo;
        sup_stage("ar_whole_video", whole);
        check("mined_beats_whole_video", "iter_1_ar", "ar_whole_video", 0.0, true);
      }
      if (it < cfg.experiment.iters) {
        stage(tag + "_regenerate", [&] {
          manifest = regenerate_features(manifest, res->ar->best_model, out_dir / tag / "regenerated");
        });
      }
    }
  }
};

}  // namespace

std::optional<double> SummaryRow::get(const std::string& metric) const {
  for (const auto& [k, v] : values) {
    if (k == metric) return v;
  }
  return std::nullopt;
}

const SummaryRow* ExperimentSummary::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

int ExperimentSummary::exit_code() const {
  if (!failures.empty()) return 1;
  for (const auto& c : checks) {
    if (!c.passed) return 2;
  }
  return 0;
}

double MiningQuality::purity() const {
  return positives == 0 ? 0.0 : static_cast<double>(true_positives) / static_cast<double>(positives);
}

double MiningQuality::distractor_fraction() const {
  return hard_negatives == 0 ? 0.0 : static_cast<double>(distractor_negatives) / static_cast<double>(hard_negatives);
}

MiningQuality mining_quality(const DatasetManifest& manifest, const SampleManifest& samples,
                             const SyntheticTruth& truth) {
  std::map<std::string, std::set<int>> inside;
  for (const auto& r : manifest.split(Split::kTrain)) {
    if (r.label != 1) continue;
    auto& s = inside[r.video_id];
    for (const auto& run : span_snippet_runs(r)) {
      for (int i = run.begin; i < run.end; ++i) s.insert(i);
    }
  }
  MiningQuality q;
  for (const auto& e : samples.entries) {
    if (e.label == 1) {
      ++q.positives;
      auto it = inside.find(e.video_id);
      if (it != inside.end() && it->second.count(e.snippet)) ++q.true_positives;
    } else if (e.hard) {
      ++q.hard_negatives;
      if (truth.is_distractor(e.video_id, e.snippet)) ++q.distractor_negatives;
    }
  }
  return q;
}

nlohmann::json input_hashes(const std::filesystem::path& manifest_path, const DatasetManifest& manifest) {
  std::string listing;
  for (const auto& [split, records] : manifest.splits) {
    for (const auto& r : records) {
      listing += git_blob_hash_file(manifest.feature_file(r).string());
      listing += ' ';
      listing += r.video_id;
      listing += '\n';
    }
  }
  return {{"manifest", git_blob_hash_file(manifest_path.string())}, {"features", git_blob_hash(listing)}};
}

std::string summary_to_csv(const ExperimentSummary& s) {
  std::ostringstream out;
  out << "row,metric,value\n";
  for (const auto& r : s.rows) {
    for (const auto& [k, v] : r.values) out << r.name << ',' << k << ',' << fmt(v) << '\n';
  }
  for (const auto& c : s.checks) out << "check:" << c.name << ",passed," << (c.passed ? 1 : 0) << '\n';
  return out.str();
}

nlohmann::json summary_to_json(const ExperimentSummary& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [k, v] : r.values) values[k] = v;
    rows.push_back({{"name", r.name}, {"values", values}});
  }
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : s.checks) {
    checks.push_back({{"name", c.name},
                      {"better", c.better},
                      {"worse", c.worse},
                      {"metric", c.metric},
                      {"min_gap", c.min_gap},
                      {"strict", c.strict},
                      {"better_value", c.better_value ? nlohmann::json(*c.better_value) : nlohmann::json()},
                      {"worse_value", c.worse_value ? nlohmann::json(*c.worse_value) : nlohmann::json()},
                      {"passed", c.passed}});
  }
  return {{"recipe", s.recipe},   {"config", s.config},     {"inputs", s.inputs},
          {"rows", rows},         {"checks", checks},       {"failures", s.failures},
          {"warnings", s.warnings}, {"exit_code", s.exit_code()}};
}

ExperimentSummary run_experiment(const std::string& recipe, const RunConfig& cfg, const std::filesystem::path& out_dir,
                                 const std::optional<std::filesystem::path>& manifest_path) {
  if (std::find(std::begin(kRecipes), std::end(kRecipes), recipe) == std::end(kRecipes)) {
    throw ConfigError("unknown recipe '" + recipe + "'");
  }
  std::filesystem::create_directories(out_dir);
  Runner run{cfg, out_dir, {}, std::nullopt, parse_split(cfg.experiment.split), {}};
  run.summary.recipe = recipe;
  run.summary.config = run_config_to_json(cfg);

  std::filesystem::path mpath;
  run.stage("corpus", [&] {
    if (manifest_path) {
      mpath = *manifest_path;
      run.manifest = load_manifest(mpath);
    } else {
      auto corpus = generate_corpus(cfg.synth, out_dir / "corpus");
      mpath = out_dir / "corpus" / kManifestFile;
      run.manifest = std::move(corpus.manifest);
    }
    const auto truth_path = mpath.parent_path() / kTruthFile;
    if (std::filesystem::exists(truth_path)) run.truth = load_truth(truth_path);
    run.summary.inputs = input_hashes(mpath, run.manifest);
  });

  if (run.summary.failures.empty()) {
    if (recipe == "single") run.recipe_single();
    if (recipe == "ablate_neck") run.recipe_ablate_neck();
    if (recipe == "compare_ad_ar") run.recipe_compare_ad_ar();
    if (recipe == "iterate") run.recipe_iterate();
  }

  write_text(out_dir / "summary.csv", summary_to_csv(run.summary));
  write_text(out_dir / "summary.json", summary_to_json(run.summary).dump(2) + "\n");
  return std::move(run.summary);
}

}  // namespace magmine
