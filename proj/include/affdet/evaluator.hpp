#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affdet/corpus.hpp"
#include "affdet/model.hpp"

namespace affdet {

struct DetectionMatch {
  std::size_t detection = 0;  // index into the input list
  bool is_tp = false;
  std::optional<std::size_t> matched_gt;
  // Unmatched and centered in an ignore region: neither TP nor FP.
  bool in_ignore_region = false;
  double objectness = 0.0;
};

struct MatchResult {
  std::vector<DetectionMatch> detections;  // descending objectness
  std::size_t num_gt = 0;
  std::size_t unmatched_gt = 0;

  std::size_t true_positives() const;
  std::size_t false_positives() const;
};

// Greedy matching: detections in descending objectness (stable), each takes
// the unmatched ground truth of the same class with the highest IoU if that
// IoU is >= iou_threshold. With class_filter set, only detections and boxes of
// that class take part.
MatchResult match_detections(std::span<const Detection> detections, const AnnotatedImage& truth,
                             double iou_threshold, std::optional<int> class_filter = {});

struct ScoredMatch {
  double score = 0.0;
  bool is_tp = false;
};

// 101-point interpolated AP over the confidence-ranked PR curve. Absent when
// num_gt == 0.
std::optional<double> average_precision(std::vector<ScoredMatch> matches, std::size_t num_gt);

inline constexpr std::array<double, 10> kIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                       0.75, 0.80, 0.85, 0.90, 0.95};

struct MapResult {
  std::optional<double> map50;
  std::optional<double> map50_95;
  std::array<std::optional<double>, 10> per_threshold{};
};

// Mean over classes with ground truth, per threshold; map50_95 averages the
// ten thresholds. detections[i] belongs to truth[i].
MapResult map_range(std::span<const std::vector<Detection>> detections,
                    std::span<const AnnotatedImage> truth, int num_classes);

struct AffinityReport {
  std::vector<std::string> dataset_ids;  // may be empty
  std::vector<double> histogram;         // fraction of TPs per dataset
  std::vector<std::size_t> counts;
  std::size_t tp_count = 0;
  std::vector<int> top_k;      // descending fraction
  std::vector<int> remainder;  // ascending index

  bool empty() const { return tp_count == 0; }
};

// Histogram of argmax(affinity) over assigned indices.
AffinityReport affinity_histogram(std::span<const int> assigned, int num_datasets);

// TPs at iou_threshold over the evaluation set, assigned by argmax of the
// affinity vector (ties to the lowest index).
AffinityReport affinity_distribution(std::span<const std::vector<Detection>> detections,
                                     std::span<const AnnotatedImage> truth, int num_datasets,
                                     double iou_threshold = 0.5);

struct PoolSplit {
  std::vector<int> top_k;
  std::vector<int> remainder;
};

// k datasets with the largest fraction (ties to the lowest index). Also fills
// report.top_k / report.remainder when a mutable report is given.
PoolSplit prune_pool(const AffinityReport& report, int k = 2);
PoolSplit prune_pool(AffinityReport& report, int k = 2);

struct AffinityAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;

  double value() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

// Fraction of TPs whose argmax affinity equals the record's source_dataset.
AffinityAccuracy affinity_accuracy(std::span<const std::vector<Detection>> detections,
                                   std::span<const AnnotatedImage> truth,
                                   double iou_threshold = 0.5);

struct RunResult {
  std::string label;
  std::vector<std::string> pool;  // dataset ids, by affinity index
  std::optional<double> map50;
  std::optional<double> map50_95;
  AffinityReport report;
};

struct ComparisonRow {
  std::string label;
  std::vector<std::string> pool;
  // One per table column; absent when the dataset is not in this run's pool.
  std::vector<std::optional<double>> assigned_percent;
  std::optional<double> map50;
  std::optional<double> map50_95;
};

struct ComparisonTable {
  std::vector<std::string> dataset_columns;  // first-seen order across runs
  std::vector<ComparisonRow> rows;
};

ComparisonTable compare_runs(std::span<const RunResult> runs);
std::string comparison_csv(const ComparisonTable& table);

std::string affinity_report_csv(const AffinityReport& report);
std::string affinity_report_json(const AffinityReport& report);
AffinityReport affinity_report_from_json(const std::string& text);
std::string affinity_report_svg(const AffinityReport& report, const std::string& title = {});

std::string map_csv(const MapResult& result);
std::string map_json(const MapResult& result);
MapResult map_from_json(const std::string& text);

// Detections file: a header line, then one line per detection.
struct ImageDetections {
  std::string image_id;
  std::vector<Detection> detections;
};

struct DetectionsFile {
  std::string checkpoint_digest;
  std::string manifest_digest;
  std::vector<std::string> dataset_ids;
  std::vector<std::string> super_categories;
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
  std::vector<ImageDetections> images;  // manifest order, including images without detections
};

std::string serialize_detections(const DetectionsFile& file);
DetectionsFile parse_detections(const std::string& text);
void write_detections(const DetectionsFile& file, const std::filesystem::path& path);
DetectionsFile read_detections(const std::filesystem::path& path);

// Lines detections up with the manifest's records by image_id.
std::vector<std::vector<Detection>> detections_for(const DetectionsFile& file,
                                                   const PooledManifest& manifest);

}  // namespace affdet
