// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   affdet_acceptance --workdir DIR [--only 1,2,...]
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "affdet/evaluator.hpp"
#include "affdet/text_io.hpp"
#include "alignment_checks.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace affdet;

#ifndef AFFDET_CLI_PATH
#error "AFFDET_CLI_PATH must name the affdet executable"
#endif
#ifndef AFFDET_SOURCE_DIR
#error "AFFDET_SOURCE_DIR must name the source tree"
#endif

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---- criterion 1 ---------------------------------------------------------

Outcome loss_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const LossWeights one_hot[] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  const std::pair<int, int> shapes[] = {{1, 2}, {2, 1}};
  double worst = 0.0;
  std::size_t probes = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto [classes, datasets] = shapes[trial % 2];
    const auto m = checks::micro_case(rng, classes, datasets, 1 + trial % 3);
    for (const auto& w : one_hot) {
      const auto gc = checks::check_head_gradients(m, w);
      worst = std::max(worst, gc.worst);
      probes += gc.checked;
    }
    const auto gc = checks::check_head_gradients(m, LossWeights{});
    worst = std::max(worst, gc.worst);
    probes += gc.checked;
  }
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto gc = checks::check_network_gradients(seed);
    worst = std::max(worst, gc.worst);
    probes += gc.checked;
  }

  // total == 0.7 L_obj + 0.3 L_cls + 0.05 L_loc + 0.3 L_aff, bit for bit
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto m = checks::micro_case(rng, testutil::irand(rng, 1, 3), testutil::irand(rng, 1, 4),
                                      testutil::irand(rng, 0, 4));
    const auto r = total_loss(m.out, m.targets, m.cfg);
    const auto& c = r.components;
    if (r.total != 0.7 * c.obj + 0.3 * c.cls + 0.05 * c.loc + 0.3 * c.aff) ++mismatches;
  }
  const double secs = seconds_since(t0);
  const bool ok = worst <= checks::kFdRelTol && mismatches == 0 && secs < 60.0;
  return {ok, fmt::format("{} FD probes, worst rel err {:.2e} (tol 1e-4); weighted-sum mismatches {}; {:.1f}s",
                          probes, worst, mismatches, secs)};
}

// ---- criterion 2 ---------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::size_t label_mismatch = 0, instances = 0;
  double worst_ap = 0.0;
  while (instances < 50) {
    AnnotatedImage t;
    t.width = t.height = 128;
    const int g = testutil::irand(rng, 1, 6);
    for (int i = 0; i < g; ++i) {
      t.boxes.push_back({testutil::urand(rng, 10, 118), testutil::urand(rng, 10, 118), testutil::urand(rng, 6, 30),
                         testutil::urand(rng, 6, 30)});
      t.class_ids.push_back(0);
    }
    std::vector<Detection> dets;
    const int n = testutil::irand(rng, 0, 10);
    for (int i = 0; i < n; ++i) {
      Box b;
      if (rng() % 3) {
        const Box& gt = t.boxes[static_cast<std::size_t>(testutil::irand(rng, 0, g - 1))];
        b = {gt.cx + testutil::urand(rng, -5, 5), gt.cy + testutil::urand(rng, -5, 5),
             gt.w * testutil::urand(rng, 0.7, 1.3), gt.h * testutil::urand(rng, 0.7, 1.3)};
      } else {
        b = {testutil::urand(rng, 10, 118), testutil::urand(rng, 10, 118), testutil::urand(rng, 6, 30),
             testutil::urand(rng, 6, 30)};
      }
      dets.push_back(testutil::make_det(testutil::urand(rng, 0, 1), b));
    }
    ++instances;
    const auto labels = oracle::greedy_labels(dets, t, 0.5);
    const auto m = match_detections(dets, t, 0.5);
    std::vector<ScoredMatch> scored;
    std::vector<std::pair<double, bool>> oracle_scored;
    for (const auto& d : m.detections) {
      if (d.is_tp != labels[d.detection].tp || d.matched_gt != labels[d.detection].gt) ++label_mismatch;
      scored.push_back({d.objectness, d.is_tp});
    }
    for (std::size_t i = 0; i < dets.size(); ++i) oracle_scored.push_back({dets[i].objectness, labels[i].tp});
    const double ap = *average_precision(scored, t.boxes.size());
    worst_ap = std::max(worst_ap, std::abs(ap - oracle::exact_ap(oracle_scored, t.boxes.size())));
  }
  const double secs = seconds_since(t0);
  const bool ok = label_mismatch == 0 && worst_ap <= 0.01 && secs < 60.0;
  return {ok, fmt::format("{} instances, label mismatches {}, worst |AP - exact| {:.4f} (tol 0.01); {:.2f}s",
                          instances, label_mismatch, worst_ap, secs)};
}

// ---- criterion 5 ---------------------------------------------------------

Outcome alignment_invariants() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  std::string first_failure;
  int failures = 0;
  for (int i = 0; i < 500; ++i) {
    const auto c = checks::random_slice_case(rng);
    const auto msg = checks::check_slicing(c, static_cast<std::uint64_t>(i));
    if (!msg.empty()) {
      ++failures;
      if (first_failure.empty()) first_failure = fmt::format("slice case {}: {}", i, msg);
    }
  }
  for (int i = 0; i < 200; ++i) {
    const auto msg = checks::check_subsample(rng, 20);
    if (!msg.empty() && first_failure.empty()) first_failure = "subsample: " + msg;
    failures += !msg.empty();
  }
  for (int i = 0; i < 300; ++i) {
    const auto msg = checks::check_masking(rng);
    if (!msg.empty() && first_failure.empty()) first_failure = "mask: " + msg;
    failures += !msg.empty();
  }
  const double secs = seconds_since(t0);
  const bool ok = failures == 0 && secs < 120.0;
  return {ok, fmt::format("500 slicing cases, 200 subsample (stride 20), 300 masking; failures {}{}; {:.1f}s",
                          failures, first_failure.empty() ? "" : " (" + first_failure + ")", secs)};
}

// ---- CLI pipeline --------------------------------------------------------

class Cli {
 public:
  Cli(fs::path dir, std::string config, bool deterministic)
      : dir_(std::move(dir)), config_(std::move(config)), deterministic_(deterministic) {}

  // Runs one command inside dir_; throws with the tail of the log on failure.
  void operator()(const std::string& args) {
    const std::string cmd =
        fmt::format("cd '{}' && '{}' --config '{}' {} --log-level warn {} >> cli.log 2>&1", dir_.string(),
                    AFFDET_CLI_PATH, config_, deterministic_ ? "--deterministic" : "", args);
    if (std::system(cmd.c_str()) != 0) {
      throw std::runtime_error("command failed: affdet " + args + "\n" + tail(read_text_file(dir_ / "cli.log")));
    }
  }

  const fs::path& dir() const { return dir_; }

 private:
  static std::string tail(const std::string& s) {
    return s.size() > 2000 ? s.substr(s.size() - 2000) : s;
  }

  fs::path dir_;
  std::string config_;
  bool deterministic_;
};

fs::path fresh_dir(const fs::path& dir, const std::string& config_name) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::copy_file(fs::path(AFFDET_SOURCE_DIR) / "config" / config_name, dir / config_name);
  return dir;
}

MapResult read_map(const fs::path& p) { return map_from_json(read_text_file(p)); }

// train -> detect on target -> eval -> analyze, results under <run>/.
double train_and_score(Cli& cli, const std::string& run, const std::string& manifest) {
  const auto t0 = Clock::now();
  cli(fmt::format("train --manifest {} --out {}/model.ckpt", manifest, run));
  const double train_secs = seconds_since(t0);
  cli(fmt::format("detect --checkpoint {0}/model.ckpt --manifest target/manifest.jsonl --out {0}/target.det.jsonl",
                  run));
  cli(fmt::format("eval --detections {0}/target.det.jsonl --manifest target/manifest.jsonl --out {0}", run));
  cli(fmt::format("analyze --detections {0}/target.det.jsonl --manifest target/manifest.jsonl --out {0}", run));
  return train_secs;
}

struct ExperimentResult {
  double accuracy = 0.0;
  AffinityAccuracy acc;
  double full = 0.0, top = 0.0, rem = 0.0;
  double full_train = 0.0, top_train = 0.0, rem_train = 0.0;
  std::vector<std::string> top_ids, rem_ids;
  std::string histogram;
  std::size_t pool_images = 0;
};

// The whole workflow: synth, align, full-pool training, analysis, pruning,
// retraining on both subpools, comparison report.
ExperimentResult run_workflow(Cli& cli) {
  ExperimentResult r;
  cli("synth --out data");
  for (const char* set : {"pool", "holdout", "target"}) cli(fmt::format("align --set {0} --out {0}", set));
  r.pool_images = read_manifest(cli.dir() / "pool/manifest.jsonl").records.size();

  r.full_train = train_and_score(cli, "full", "pool/manifest.jsonl");
  cli("detect --checkpoint full/model.ckpt --manifest holdout/manifest.jsonl --out full/holdout.det.jsonl");
  const auto holdout = read_manifest(cli.dir() / "holdout/manifest.jsonl");
  const auto dets = read_detections(cli.dir() / "full/holdout.det.jsonl");
  r.acc = affinity_accuracy(detections_for(dets, holdout), holdout.records, 0.5);
  r.accuracy = r.acc.value();

  cli("prune --report full/affinity.json --manifest pool/manifest.jsonl --out prune");
  const auto prune = nlohmann::json::parse(read_text_file(cli.dir() / "prune/prune.json"));
  r.top_ids = prune["top_k"].get<std::vector<std::string>>();
  r.rem_ids = prune["remainder"].get<std::vector<std::string>>();
  r.top_train = train_and_score(cli, "top", "prune/top_k/manifest.jsonl");
  if (!r.rem_ids.empty()) r.rem_train = train_and_score(cli, "rem", "prune/remainder/manifest.jsonl");
  cli(fmt::format("report --run full=full --run top2=top {} --out report.csv",
                  r.rem_ids.empty() ? "" : "--run remainder=rem"));

  const auto report = affinity_report_from_json(read_text_file(cli.dir() / "full/affinity.json"));
  for (std::size_t d = 0; d < report.histogram.size(); ++d) {
    r.histogram += fmt::format("{}{}={:.1f}%", d ? " " : "", report.dataset_ids[d], 100 * report.histogram[d]);
  }
  r.full = read_map(cli.dir() / "full/map.json").map50.value_or(0.0);
  r.top = read_map(cli.dir() / "top/map.json").map50.value_or(0.0);
  r.rem = r.rem_ids.empty() ? 0.0 : read_map(cli.dir() / "rem/map.json").map50.value_or(0.0);
  return r;
}

// ---- criterion 6 ---------------------------------------------------------

std::map<std::string, std::string> digest_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    if (rel == "cli.log") continue;  // timestamps
    out[rel] = testutil::slurp(e.path());
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  const auto t0 = Clock::now();
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* name : {"det_a", "det_b"}) {
    Cli cli(fresh_dir(work / name, "smoke.yaml"), "smoke.yaml", true);
    run_workflow(cli);
    trees.push_back(digest_tree(cli.dir()));
  }
  std::vector<std::string> differing;
  std::set<std::string> names;
  for (const auto& t : trees) {
    for (const auto& [k, v] : t) names.insert(k);
  }
  std::size_t checkpoints = 0, manifests = 0, detections = 0, reports = 0;
  for (const auto& n : names) {
    const auto a = trees[0].find(n), b = trees[1].find(n);
    if (a == trees[0].end() || b == trees[1].end() || a->second != b->second) differing.push_back(n);
    checkpoints += n.ends_with(".ckpt");
    manifests += n.ends_with("manifest.jsonl");
    detections += n.ends_with(".det.jsonl");
    reports += n.ends_with("affinity.json") || n.ends_with("map.json") || n == "report.csv";
  }
  const bool covered = checkpoints >= 3 && manifests >= 5 && detections >= 4 && reports >= 7;
  const bool ok = differing.empty() && covered;
  return {ok, fmt::format("{} files compared ({} manifests, {} checkpoints, {} detection files, {} reports); "
                          "differing {}{}; {:.0f}s",
                          names.size(), manifests, checkpoints, detections, reports, differing.size(),
                          differing.empty() ? "" : " first " + differing.front(), seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  fs::path work = fs::temp_directory_path() / "affdet_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      fmt::print(stderr, "usage: {} [--workdir DIR] [--only 1,2,...]\n", argv[0]);
      return 2;
    }
  }
  work = fs::absolute(work);
  fs::create_directories(work);
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

  int failed = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    fmt::print("criterion {} [{}] {}: {}\n", id, o.pass ? "PASS" : "FAIL", name, o.detail);
    std::fflush(stdout);
    failed += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, "loss correctness", guarded(loss_correctness));
  if (wanted(2)) report(2, "metric oracle equivalence", guarded(metric_oracles));

  if (wanted(3) || wanted(4)) {
    ExperimentResult r;
    std::string error;
    const auto t0 = Clock::now();
    try {
      Cli cli(fresh_dir(work / "experiment", "experiment.yaml"), "experiment.yaml", false);
      r = run_workflow(cli);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double total = seconds_since(t0);
    if (wanted(3)) {
      Outcome o;
      if (!error.empty()) {
        o = {false, "error: " + error};
      } else {
        o.pass = r.accuracy >= 0.85 && r.full_train <= 30 * 60;
        o.detail = fmt::format("held-out TP affinity accuracy {:.3f} ({}/{}, need >= 0.85); {} pool images; "
                               "full-pool training {:.0f}s (limit 1800s)",
                               r.accuracy, r.acc.correct, r.acc.total, r.pool_images, r.full_train);
      }
      report(3, "affinity recovery", o);
    }
    if (wanted(4)) {
      Outcome o;
      if (!error.empty()) {
        o = {false, "error: " + error};
      } else {
        const double top_ratio = r.full > 0 ? r.top / r.full : 0.0;
        const double rem_ratio = r.full > 0 ? r.rem / r.full : 1.0;
        const double train_total = r.full_train + r.top_train + r.rem_train;
        o.pass = r.full > 0 && top_ratio >= 0.95 && rem_ratio <= 0.80 && !r.rem_ids.empty() &&
                 train_total <= 90 * 60;
        o.detail = fmt::format(
            "target histogram [{}]; top-2 {{{}}} remainder {{{}}}; mAP@.5 full {:.4f} top-2 {:.4f} "
            "remainder {:.4f}; ratios {:.3f} (need >= 0.95) and {:.3f} (need <= 0.80); training {:.0f}s "
            "(limit 5400s), workflow {:.0f}s",
            r.histogram, fmt::join(r.top_ids, ","), fmt::join(r.rem_ids, ","), r.full, r.top, r.rem, top_ratio,
            rem_ratio, train_total, total);
      }
      report(4, "pruning behavior", o);
    }
  }

  if (wanted(5)) report(5, "alignment invariants", guarded(alignment_invariants));
  if (wanted(6)) report(6, "determinism", guarded([&] { return determinism(work); }));

  fmt::print("{}\n", failed == 0 ? "ACCEPTANCE PASS" : fmt::format("ACCEPTANCE FAIL ({} criteria)", failed));
  return failed == 0 ? 0 : 1;
}
