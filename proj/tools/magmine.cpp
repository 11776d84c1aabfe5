// magmine command-line entry point.
//
// Any `--section.key value` (or `--section.key=value`) argument overrides the
// corresponding field of the loaded run config, e.g. `--mil.lr 1e-4`.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "magmine/checkpoint.hpp"
#include "magmine/evaluation.hpp"
#include "magmine/experiment.hpp"
#include "magmine/feature_store.hpp"
#include "magmine/mining.hpp"
#include "magmine/run_config.hpp"
#include "magmine/synthgen.hpp"

namespace fs = std::filesystem;
using namespace magmine;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

bool is_override(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return false;
  const auto key = arg.substr(2, arg.find('=') == std::string::npos ? std::string::npos : arg.find('=') - 2);
  const auto dot = key.find('.');
  if (dot == std::string::npos) return false;
  const auto head = key.substr(0, dot);
  return head == "synth" || head == "mil" || head == "sup" || head == "mining" || head == "experiment";
}

// Pulls dotted overrides out of argv; the rest goes to CLI11.
std::vector<std::string> split_overrides(int argc, char** argv, Overrides& out) {
  std::vector<std::string> rest;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (!is_override(arg)) {
      rest.push_back(arg);
      continue;
    }
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
    } else {
      if (i + 1 >= argc) throw ConfigError("missing value for " + arg);
      out.emplace_back(arg.substr(2), argv[++i]);
    }
  }
  return rest;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  Overrides overrides;

  RunConfig resolve(bool bare_synth_allowed = false) const {
    nlohmann::json doc = config_path.empty() ? nlohmann::json::object() : read_json(config_path);
    if (bare_synth_allowed && doc.is_object()) {
      bool sectioned = false;
      for (const char* k : {"synth", "mil", "sup", "mining", "experiment"}) sectioned |= doc.contains(k);
      if (!sectioned && !doc.empty()) doc = {{"synth", doc}};
    }
    auto ov = overrides;
    if (seed) ov.emplace_back("seed", std::to_string(*seed));
    return resolve_run_config(doc, ov);
  }
};

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_synth(const Common& c, const std::string& out) {
  const RunConfig cfg = c.resolve(true);
  auto corpus = generate_corpus(cfg.synth, out);
  std::size_t videos = 0;
  for (const auto& [s, r] : corpus.manifest.splits) videos += r.size();
  write_json(fs::path(out) / "config.json", run_config_to_json(cfg));
  std::cout << "wrote " << videos << " videos to " << out << '\n';
  return 0;
}

int cmd_train_ad(const Common& c, const std::string& manifest_path, const std::string& out) {
  const RunConfig cfg = c.resolve();
  const auto manifest = load_manifest(manifest_path);
  const fs::path dir(out);
  fs::create_directories(dir);
  const auto hashes = input_hashes(manifest_path, manifest);
  write_json(dir / "config.json", {{"config", run_config_to_json(cfg)}, {"inputs", hashes}});
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  auto result = train_mil(manifest, cfg.mil, [&](const EpochRecord& r) {
    log << r.to_json().dump() << '\n';
    log.flush();
  });
  const nlohmann::json meta = {{"kind", "anomaly_detector"}, {"config", mil_config_to_json(cfg.mil)},
                               {"inputs", hashes}, {"seed", cfg.mil.seed}, {"step", result.state.step}};
  auto best_meta = meta;
  best_meta["epoch"] = result.best_epoch;
  auto last_meta = meta;
  last_meta["epoch"] = result.state.epoch;
  save_checkpoint(dir / "model.ckpt", result.best_model, best_meta);
  save_checkpoint(dir / "last.ckpt", result.state.model, last_meta);
  std::cout << "best epoch " << result.best_epoch;
  if (result.best_val_auc) std::cout << ", validation frame AUC " << *result.best_val_auc;
  std::cout << '\n';
  return 0;
}

int cmd_train_ar(const Common& c, const std::string& manifest_path, const std::string& samples_path,
                 const std::string& out) {
  RunConfig cfg = c.resolve();
  const auto manifest = load_manifest(manifest_path);
  std::optional<SampleManifest> mined;
  if (!samples_path.empty()) {
    mined = load_sample_manifest(samples_path);
    cfg.sup.mode = SupMode::kMinedManifest;
  }
  const fs::path dir(out);
  fs::create_directories(dir);
  nlohmann::json hashes = input_hashes(manifest_path, manifest);
  if (mined) hashes["samples"] = git_blob_hash_file(samples_path);
  write_json(dir / "config.json", {{"config", run_config_to_json(cfg)}, {"inputs", hashes}});
  const SampleSet set = build_supervised_samples(manifest, cfg.sup.mode, mined ? &*mined : nullptr);
  std::cerr << "samples: " << set.count_report().dump() << '\n';
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  auto result = train_supervised(manifest, set, cfg.sup, [&](const SupEpochRecord& r) {
    log << r.to_json().dump() << '\n';
    log.flush();
  });
  const nlohmann::json meta = {{"kind", "action_recognizer"}, {"config", sup_config_to_json(cfg.sup)},
                               {"inputs", hashes}, {"seed", cfg.sup.seed}, {"samples", set.count_report()}};
  auto best_meta = meta;
  best_meta["epoch"] = result.best_epoch;
  save_checkpoint(dir / "model.ckpt", result.best_model, best_meta);
  save_checkpoint(dir / "last.ckpt", result.model, meta);
  std::cout << "best epoch " << result.best_epoch << ", validation metric " << result.best_val_metric << '\n';
  return 0;
}

int cmd_mine(const Common& c, const std::string& manifest_path, const std::string& ckpt, const std::string& out) {
  const RunConfig cfg = c.resolve();
  const auto manifest = load_manifest(manifest_path);
  const auto model = load_checkpoint(ckpt).model;
  auto outcome = mine_training_samples(manifest, model, cfg.mining, git_blob_hash_file(ckpt));
  for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << '\n';
  outcome.samples.provenance["config"] = mining_config_to_json(cfg.mining);
  outcome.samples.provenance["inputs"] = input_hashes(manifest_path, manifest);
  save_sample_manifest(outcome.samples, out);
  std::cout << outcome.samples.count(1) << " positives, " << outcome.samples.count(0) << " negatives\n";
  return outcome.samples.count(1) == 0 ? 1 : 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& ckpt, const std::string& split,
             const std::string& out) {
  const auto manifest = load_manifest(manifest_path);
  const auto loaded = load_checkpoint(ckpt);
  auto report = evaluate_frames(manifest, parse_split(split), loaded.model);
  report.checkpoint_id = git_blob_hash_file(ckpt);
  report.config = {{"checkpoint", loaded.meta}, {"inputs", input_hashes(manifest_path, manifest)}};
  if (!out.empty()) write_report(report, out);
  std::cout << "frame AUC " << report.frame_auc << ", frame AP " << report.frame_map << '\n';
  return 0;
}

int cmd_experiment(const Common& c, const std::string& recipe, const std::string& manifest_path,
                   const std::string& out, std::optional<int> iters) {
  RunConfig cfg = c.resolve();
  if (iters) {
    if (*iters < 1) throw ConfigError("--iters must be >= 1");
    cfg.experiment.iters = *iters;
  }
  std::optional<fs::path> manifest;
  if (!manifest_path.empty()) manifest = manifest_path;
  const auto summary = run_experiment(recipe, cfg, out, manifest);
  std::cout << summary_to_csv(summary);
  for (const auto& f : summary.failures) std::cerr << "stage failed: " << f << '\n';
  for (const auto& ch : summary.checks) {
    if (!ch.passed) std::cerr << "check failed: " << ch.name << '\n';
  }
  return summary.exit_code();
}

int cmd_inspect(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (fs::path(p).extension() == ".json") {
      const auto m = load_manifest(p, false);
      std::cout << p << ": manifest '" << m.name << "', dim " << m.dim << ", snippet_len " << m.snippet_len << '\n';
      for (const auto& [split, records] : m.splits) {
        std::size_t abnormal = 0;
        std::int64_t frames = 0;
        std::int64_t positive = 0;
        for (const auto& r : records) {
          abnormal += r.label == 1 ? 1 : 0;
          frames += r.num_frames;
          for (const auto& s : r.spans) positive += s.length();
        }
        std::cout << "  " << split_name(split) << ": " << records.size() << " videos (" << abnormal
                  << " abnormal), " << frames << " frames, " << positive << " annotated frames\n";
      }
    } else {
      const auto h = read_fvec_header(p);
      std::cout << p << ": FVEC v" << h.version << ", T=" << h.rows << ", D=" << h.cols << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Common common;
  std::vector<std::string> args;
  try {
    args = split_overrides(argc, argv, common.overrides);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  CLI::App app{"magmine: magnitude-based anomaly detection and sample mining over snippet features"};
  app.require_subcommand(1);
  app.footer("Config fields can be overridden with --<section>.<key> <value>, e.g. --mil.epochs 50.\n"
             "MAGMINE_THREADS caps the worker threads.");
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "run config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "master seed");
  };

  std::string manifest, out, ckpt, samples, recipe, split = "test";
  std::optional<int> iters;
  std::vector<std::string> inspect_paths;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  add_common(synth);
  synth->add_option("--out", out, "output directory")->required();

  auto* train_ad = app.add_subcommand("train-ad", "train the MIL anomaly detector");
  add_common(train_ad);
  train_ad->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  train_ad->add_option("--out", out, "checkpoint directory")->required();

  auto* train_ar = app.add_subcommand("train-ar", "train the supervised recognition head");
  add_common(train_ar);
  train_ar->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  train_ar->add_option("--samples", samples, "mined sample manifest (selects mined_manifest mode)")
      ->check(CLI::ExistingFile);
  train_ar->add_option("--out", out, "checkpoint directory")->required();

  auto* mine = app.add_subcommand("mine", "mine training samples with a detector checkpoint");
  add_common(mine);
  mine->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  mine->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  mine->add_option("--out", out, "sample manifest path")->required();

  auto* eval = app.add_subcommand("eval", "frame-level AUC / AP of a checkpoint");
  eval->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out, "report JSON path (a .csv is written next to it)");

  auto* iterate = app.add_subcommand("iterate", "detect, mine, recognize for N iterations");
  add_common(iterate);
  iterate->add_option("--manifest", manifest, "corpus (generated from the synth section if absent)");
  iterate->add_option("--iters", iters);
  iterate->add_option("--out", out, "artifact directory")->required();

  auto* experiment = app.add_subcommand("experiment", "run a reproduction recipe");
  add_common(experiment);
  experiment->add_option("--recipe", recipe)
      ->required()
      ->check(CLI::IsMember({"compare_ad_ar", "ablate_neck", "iterate", "single"}));
  experiment->add_option("--manifest", manifest, "corpus (generated from the synth section if absent)");
  experiment->add_option("--iters", iters);
  experiment->add_option("--out", out, "artifact directory")->required();

  auto* inspect = app.add_subcommand("inspect", "print FVEC headers and manifest stats");
  inspect->add_option("paths", inspect_paths, "FVEC files or manifest JSON")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(common, out);
    if (*train_ad) return cmd_train_ad(common, manifest, out);
    if (*train_ar) return cmd_train_ar(common, manifest, samples, out);
    if (*mine) return cmd_mine(common, manifest, ckpt, out);
    if (*eval) return cmd_eval(manifest, ckpt, split, out);
    if (*iterate) return cmd_experiment(common, "iterate", manifest, out, iters);
    if (*experiment) return cmd_experiment(common, recipe, manifest, out, iters);
    if (*inspect) return cmd_inspect(inspect_paths);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
