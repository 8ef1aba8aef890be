// affdet: command-line driver for the pooling / affinity / pruning workflow.
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdio>
#include <iostream>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <set>

#include "affdet/config.hpp"
#include "affdet/digest.hpp"
#include "affdet/errors.hpp"
#include "affdet/evaluator.hpp"
#include "affdet/pipeline.hpp"
#include "affdet/synth.hpp"
#include "affdet/text_io.hpp"
#include "affdet/trainer.hpp"

namespace fs = std::filesystem;
using namespace affdet;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string log_level = "info";
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config.empty()) cfg = load_config(g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.align.slice.seed = *g.seed;
    cfg.train.seed = *g.seed;
    if (cfg.synth) cfg.synth->seed = *g.seed;
  }
  if (g.deterministic) cfg.deterministic = true;
  cfg.train.deterministic = cfg.deterministic;
  if (cfg.deterministic) {
    cv::setNumThreads(1);
    Eigen::setNbThreads(1);
  }
  return cfg;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ValidationError(std::string(what) + " not found: " + p.string());
}

// Digest mismatches mean the inputs do not belong together.
void check_digest(const std::string& expected, const fs::path& file, const char* what) {
  if (expected.empty()) return;
  const auto actual = sha256_file(file);
  if (actual != expected) {
    throw ValidationError(std::string(what) + " digest mismatch: " + file.string() + " is " + actual +
                          ", expected " + expected);
  }
}

void cmd_synth(const Globals& g, const fs::path& out) {
  const auto cfg = load(g);
  if (!cfg.synth) throw ValidationError("synth: config has no synth section");
  const auto pool = generate_pool(*cfg.synth, out);
  std::vector<std::string> ids = pool.manifest.dataset_ids();
  ids.push_back("target");
  write_text_file(out / "taxonomy.yaml", synthetic_taxonomy_yaml(ids));
  json summary = {{"seed", cfg.synth->seed}, {"sources", json::array()}};
  for (const auto& d : pool.sources) {
    summary["sources"].push_back({{"id", d.dataset_id},
                                  {"affinity_index", d.affinity_index},
                                  {"annotations", fs::relative(d.annotation_path, fs::absolute(out)).generic_string()}});
  }
  summary["eval_images"] = pool.eval_manifest.records.size();
  summary["holdout_images"] = pool.holdout_manifest.records.size();
  write_text_file(out / "synth.json", summary.dump(2) + "\n");
  spdlog::info("synth: {} pool images, {} eval images -> {}", pool.manifest.records.size(),
               pool.eval_manifest.records.size(), out.string());
}

struct AlignFlags {
  std::string set = "pool";
  std::string taxonomy;
  std::optional<int> patch_min, patch_max;
  std::optional<double> overlap;
};

void cmd_align(const Globals& g, const AlignFlags& f, const fs::path& out) {
  auto cfg = load(g);
  if (f.patch_min) cfg.align.slice.patch_min = *f.patch_min;
  if (f.patch_max) cfg.align.slice.patch_max = *f.patch_max;
  if (f.overlap) cfg.align.slice.overlap_ratio = *f.overlap;
  cfg.align.slice.validate();
  const fs::path tax_path = f.taxonomy.empty() ? cfg.taxonomy_path : fs::path(f.taxonomy);
  if (tax_path.empty()) throw ValidationError("align: no taxonomy given (--taxonomy or align.taxonomy)");
  require_file(tax_path, "taxonomy");
  auto it = cfg.align_sets.find(f.set);
  if (it == cfg.align_sets.end()) throw ValidationError("align: config has no set '" + f.set + "'");
  for (const auto& s : it->second) require_file(s.descriptor.annotation_path, "annotation file");
  const auto taxonomy = load_taxonomy_file(tax_path.string());
  const auto manifest = align_pool(it->second, taxonomy, cfg.align, out);
  write_manifest(manifest, out / "manifest.jsonl");
  write_text_file(out / "balance.csv", balance_csv(balance_report(manifest)));
  spdlog::info("align: {} records -> {}", manifest.records.size(), (out / "manifest.jsonl").string());
}

void cmd_train(const Globals& g, const fs::path& manifest_path, const fs::path& out, const std::string& log_path,
               std::optional<int> epochs, std::optional<std::int64_t> max_steps) {
  auto cfg = load(g);
  require_file(manifest_path, "manifest");
  if (epochs) cfg.train.epochs = *epochs;
  if (max_steps) cfg.train.max_steps = *max_steps;
  cfg.train.validate();
  const auto manifest = read_manifest(manifest_path);
  DetectorConfig det = cfg.detector;
  det.num_classes = static_cast<int>(manifest.super_categories.size());
  det.num_datasets = static_cast<int>(manifest.num_datasets());
  det.validate();
  std::string log_text;
  auto outcome = train(manifest, det, cfg.train, [&](const StepLog& s) { log_text += step_log_json(s) + "\n"; },
                       sha256_file(manifest_path));
  save_checkpoint(outcome.checkpoint, out);
  write_text_file(log_path.empty() ? fs::path(out.string() + ".log.jsonl") : fs::path(log_path), log_text);
  spdlog::info("train: {} steps -> {}", outcome.checkpoint.metadata.steps, out.string());
}

void cmd_detect(const Globals& g, const fs::path& ckpt_path, const fs::path& manifest_path, const fs::path& out,
                std::optional<double> conf) {
  auto cfg = load(g);
  require_file(ckpt_path, "checkpoint");
  require_file(manifest_path, "manifest");
  if (conf) cfg.detect.conf_threshold = *conf;
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto manifest = read_manifest(manifest_path);
  const auto file =
      detect_manifest(ckpt, manifest, cfg.detect, sha256_file(ckpt_path), sha256_file(manifest_path));
  write_detections(file, out);
  std::size_t n = 0;
  for (const auto& im : file.images) n += im.detections.size();
  spdlog::info("detect: {} detections over {} images -> {}", n, file.images.size(), out.string());
}

std::pair<DetectionsFile, PooledManifest> load_pair(const fs::path& dets_path, const fs::path& manifest_path) {
  require_file(dets_path, "detections file");
  require_file(manifest_path, "manifest");
  auto dets = read_detections(dets_path);
  check_digest(dets.manifest_digest, manifest_path, "manifest");
  return {std::move(dets), read_manifest(manifest_path)};
}

void cmd_eval(const Globals& g, const fs::path& dets_path, const fs::path& manifest_path, const fs::path& out) {
  load(g);
  const auto [dets, manifest] = load_pair(dets_path, manifest_path);
  const auto per_image = detections_for(dets, manifest);
  const auto result = map_range(per_image, manifest.records, static_cast<int>(manifest.super_categories.size()));
  write_text_file(out / "map.csv", map_csv(result));
  write_text_file(out / "map.json", map_json(result));
  std::printf("mAP@.5 %s  mAP@.5:.95 %s\n", result.map50 ? fmt::format("{:.4f}", *result.map50).c_str() : "-",
              result.map50_95 ? fmt::format("{:.4f}", *result.map50_95).c_str() : "-");
}

void cmd_analyze(const Globals& g, const fs::path& dets_path, const fs::path& manifest_path, const fs::path& out,
                 std::optional<double> iou, std::optional<int> k) {
  auto cfg = load(g);
  const auto [dets, manifest] = load_pair(dets_path, manifest_path);
  const auto per_image = detections_for(dets, manifest);
  auto report = affinity_distribution(per_image, manifest.records, static_cast<int>(dets.dataset_ids.size()),
                                      iou.value_or(cfg.analyze_iou));
  report.dataset_ids = dets.dataset_ids;
  const int kk = std::min<int>(k.value_or(cfg.prune_k), static_cast<int>(dets.dataset_ids.size()));
  prune_pool(report, kk);
  if (report.empty()) spdlog::warn("analyze: no true positives; the report is empty");
  write_text_file(out / "affinity.json", affinity_report_json(report));
  write_text_file(out / "affinity.csv", affinity_report_csv(report));
  write_text_file(out / "affinity.svg", affinity_report_svg(report));
  for (std::size_t d = 0; d < report.histogram.size(); ++d) {
    std::printf("%-16s %6.1f%%\n", report.dataset_ids[d].c_str(), 100.0 * report.histogram[d]);
  }
}

void cmd_prune(const Globals& g, const fs::path& report_path, const fs::path& manifest_path, const fs::path& out,
               std::optional<int> k) {
  auto cfg = load(g);
  require_file(report_path, "affinity report");
  require_file(manifest_path, "manifest");
  auto report = affinity_report_from_json(read_text_file(report_path));
  const auto manifest = read_manifest(manifest_path);
  if (report.histogram.size() != manifest.num_datasets()) {
    throw ValidationError("prune: the report covers " + std::to_string(report.histogram.size()) +
                          " datasets, the manifest " + std::to_string(manifest.num_datasets()));
  }
  if (!report.dataset_ids.empty() && report.dataset_ids != manifest.dataset_ids()) {
    throw ValidationError("prune: the report's datasets do not match the manifest's");
  }
  if (report.empty()) throw ValidationError("prune: the affinity report has no true positives");
  const auto split = prune_pool(report, k.value_or(cfg.prune_k));
  const auto ids = manifest.dataset_ids();
  json summary = {{"k", split.top_k.size()}, {"top_k", json::array()}, {"remainder", json::array()}};
  for (int i : split.top_k) summary["top_k"].push_back(ids[static_cast<std::size_t>(i)]);
  for (int i : split.remainder) summary["remainder"].push_back(ids[static_cast<std::size_t>(i)]);
  const auto top = make_subpool(manifest, {split.top_k.begin(), split.top_k.end()});
  write_manifest(top, out / "top_k" / "manifest.jsonl");
  if (!split.remainder.empty()) {
    const auto rest = make_subpool(manifest, {split.remainder.begin(), split.remainder.end()});
    write_manifest(rest, out / "remainder" / "manifest.jsonl");
  }
  write_text_file(out / "prune.json", summary.dump(2) + "\n");
  std::printf("top_k: %s\nremainder: %s\n", summary["top_k"].dump().c_str(), summary["remainder"].dump().c_str());
}

void cmd_report(const Globals& g, const std::vector<std::string>& runs, const fs::path& out) {
  load(g);
  std::vector<RunResult> results;
  for (const auto& spec : runs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("report: --run expects LABEL=DIR, got " + spec);
    const fs::path dir = spec.substr(eq + 1);
    require_file(dir / "map.json", "map result");
    require_file(dir / "affinity.json", "affinity report");
    RunResult r;
    r.label = spec.substr(0, eq);
    const auto m = map_from_json(read_text_file(dir / "map.json"));
    r.map50 = m.map50;
    r.map50_95 = m.map50_95;
    r.report = affinity_report_from_json(read_text_file(dir / "affinity.json"));
    r.pool = r.report.dataset_ids;
    results.push_back(std::move(r));
  }
  const auto table = compare_runs(results);
  const auto csv = comparison_csv(table);
  write_text_file(out, csv);
  std::fputs(csv.c_str(), stdout);
}

void emit_error(const char* kind, const std::string& command, const std::string& message) {
  const json rec = {{"error", {{"kind", kind}, {"command", command}, {"message", message}}}};
  std::cerr << rec.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset-affinity detector toolkit: synth, align, train, detect, eval, analyze, prune, report"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (YAML)");
  app.add_option("--seed", g.seed, "Seed for every stochastic step (overrides the config)");
  app.add_flag("--deterministic", g.deterministic, "Serial execution for bit-identical outputs");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off");

  std::string out, manifest, ckpt, dets, report_path, log_path;
  std::optional<int> epochs, k;
  std::optional<std::int64_t> max_steps;
  std::optional<double> conf, iou;
  AlignFlags align_flags;
  std::vector<std::string> runs;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic source datasets and eval set");
  synth->add_option("--out", out, "Output directory")->required();

  auto* align = app.add_subcommand("align", "Taxonomy mapping, subsampling, masking and slicing into a manifest");
  align->add_option("--out", out, "Output directory")->required();
  align->add_option("--set", align_flags.set, "Dataset set from align.sets");
  align->add_option("--taxonomy", align_flags.taxonomy, "Taxonomy file (overrides align.taxonomy)");
  align->add_option("--patch-min", align_flags.patch_min, "Smallest patch side in pixels");
  align->add_option("--patch-max", align_flags.patch_max, "Largest patch side in pixels");
  align->add_option("--overlap", align_flags.overlap, "Patch overlap ratio");
  align->add_option("--seed", g.seed, "Seed (same as the global flag)");

  auto* train_cmd = app.add_subcommand("train", "Train a detector on a manifest");
  train_cmd->add_option("--manifest", manifest, "Training manifest")->required();
  train_cmd->add_option("--out", out, "Checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "Training log (default: <out>.log.jsonl)");
  train_cmd->add_option("--epochs", epochs, "Override train.epochs");
  train_cmd->add_option("--max-steps", max_steps, "Stop after this many steps");

  auto* detect = app.add_subcommand("detect", "Run a checkpoint over a manifest");
  detect->add_option("--checkpoint", ckpt, "Checkpoint")->required();
  detect->add_option("--manifest", manifest, "Manifest to run on")->required();
  detect->add_option("--out", out, "Detections file")->required();
  detect->add_option("--conf", conf, "Objectness threshold");

  auto* eval = app.add_subcommand("eval", "mAP@.5 and mAP@.5:.95");
  eval->add_option("--detections", dets, "Detections file")->required();
  eval->add_option("--manifest", manifest, "Ground-truth manifest")->required();
  eval->add_option("--out", out, "Output directory")->required();

  auto* analyze = app.add_subcommand("analyze", "Affinity histogram over true positives");
  analyze->add_option("--detections", dets, "Detections file")->required();
  analyze->add_option("--manifest", manifest, "Ground-truth manifest")->required();
  analyze->add_option("--out", out, "Output directory")->required();
  analyze->add_option("--iou", iou, "IoU threshold for true positives");
  analyze->add_option("--k", k, "Datasets to mark as selected");

  auto* prune = app.add_subcommand("prune", "Split a pool into top-k and remainder manifests");
  prune->add_option("--report", report_path, "affinity.json from analyze")->required();
  prune->add_option("--manifest", manifest, "Pool manifest")->required();
  prune->add_option("--out", out, "Output directory")->required();
  prune->add_option("--k", k, "Datasets to keep");

  auto* report = app.add_subcommand("report", "Comparison table across runs");
  report->add_option("--run", runs, "LABEL=DIR holding map.json and affinity.json")->required();
  report->add_option("--out", out, "CSV path")->required();

  std::string command = "affdet";
  try {
    app.parse(argc, argv);
    command = app.get_subcommands().front()->get_name();
    spdlog::set_level(spdlog::level::from_str(g.log_level));
    spdlog::set_pattern("[%l] %v");
    if (*synth) cmd_synth(g, out);
    else if (*align) cmd_align(g, align_flags, out);
    else if (*train_cmd) cmd_train(g, manifest, out, log_path, epochs, max_steps);
    else if (*detect) cmd_detect(g, ckpt, manifest, out, conf);
    else if (*eval) cmd_eval(g, dets, manifest, out);
    else if (*analyze) cmd_analyze(g, dets, manifest, out, iou, k);
    else if (*prune) cmd_prune(g, report_path, manifest, out, k);
    else if (*report) cmd_report(g, runs, out);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", command, e.what());
    return 2;
  } catch (const ValidationError& e) {
    emit_error("validation", command, e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error("runtime", command, e.what());
    return 3;
  }
}
