#include "affdet/evaluator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "affdet/errors.hpp"
#include "affdet/serialization.hpp"
#include "affdet/text_io.hpp"

namespace affdet {

using nlohmann::json;

std::size_t MatchResult::true_positives() const {
  return static_cast<std::size_t>(
      std::count_if(detections.begin(), detections.end(), [](const auto& m) { return m.is_tp; }));
}

std::size_t MatchResult::false_positives() const {
  return static_cast<std::size_t>(std::count_if(detections.begin(), detections.end(), [](const auto& m) {
    return !m.is_tp && !m.in_ignore_region;
  }));
}

MatchResult match_detections(std::span<const Detection> detections, const AnnotatedImage& truth,
                             double iou_threshold, std::optional<int> class_filter) {
  MatchResult result;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (!class_filter || detections[i].class_id == *class_filter) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].objectness > detections[b].objectness;
  });

  std::vector<bool> eligible(truth.boxes.size());
  for (std::size_t g = 0; g < truth.boxes.size(); ++g) {
    eligible[g] = !class_filter || truth.class_ids[g] == *class_filter;
    if (eligible[g]) ++result.num_gt;
  }
  std::vector<bool> taken(truth.boxes.size(), false);

  for (std::size_t i : order) {
    const Detection& d = detections[i];
    DetectionMatch m;
    m.detection = i;
    m.objectness = d.objectness;
    double best = -1.0;
    for (std::size_t g = 0; g < truth.boxes.size(); ++g) {
      if (!eligible[g] || taken[g] || truth.class_ids[g] != d.class_id) continue;
      const double v = iou(d.box, truth.boxes[g]);
      if (v >= iou_threshold && v > best) {
        best = v;
        m.matched_gt = g;
      }
    }
    if (m.matched_gt) {
      m.is_tp = true;
      taken[*m.matched_gt] = true;
    } else {
      for (const auto& region : truth.ignore_regions) {
        if (region.contains(d.box.cx, d.box.cy)) {
          m.in_ignore_region = true;
          break;
        }
      }
    }
    result.detections.push_back(m);
  }
  result.unmatched_gt = result.num_gt - result.true_positives();
  return result;
}

std::optional<double> average_precision(std::vector<ScoredMatch> matches, std::size_t num_gt) {
  if (num_gt == 0) return std::nullopt;
  std::stable_sort(matches.begin(), matches.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  const std::size_t n = matches.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (matches[i].is_tp) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  std::size_t k = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (k < n && recall[k] < level) ++k;
    if (k < n) sum += precision[k];
  }
  return sum / 101.0;
}

MapResult map_range(std::span<const std::vector<Detection>> detections,
                    std::span<const AnnotatedImage> truth, int num_classes) {
  if (detections.size() != truth.size()) {
    throw ValidationError("map_range: detections and ground truth differ in image count");
  }
  MapResult result;
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    double class_sum = 0.0;
    int classes = 0;
    for (int c = 0; c < num_classes; ++c) {
      std::vector<ScoredMatch> scored;
      std::size_t num_gt = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto m = match_detections(detections[i], truth[i], kIouThresholds[t], c);
        num_gt += m.num_gt;
        for (const auto& d : m.detections) {
          if (!d.in_ignore_region) scored.push_back({d.objectness, d.is_tp});
        }
      }
      if (auto ap = average_precision(std::move(scored), num_gt)) {
        class_sum += *ap;
        ++classes;
      }
    }
    if (classes > 0) {
      result.per_threshold[t] = class_sum / classes;
      total += *result.per_threshold[t];
      ++defined;
    }
  }
  if (defined == kIouThresholds.size()) {
    result.map50 = result.per_threshold[0];
    result.map50_95 = total / static_cast<double>(kIouThresholds.size());
  }
  return result;
}

AffinityReport affinity_histogram(std::span<const int> assigned, int num_datasets) {
  if (num_datasets < 1) throw ValidationError("affinity: pool must hold at least one dataset");
  AffinityReport report;
  report.counts.assign(static_cast<std::size_t>(num_datasets), 0);
  report.histogram.assign(static_cast<std::size_t>(num_datasets), 0.0);
  for (int a : assigned) {
    if (a < 0 || a >= num_datasets) {
      throw ValidationError("affinity: assigned dataset " + std::to_string(a) + " outside the pool");
    }
    ++report.counts[static_cast<std::size_t>(a)];
  }
  report.tp_count = assigned.size();
  if (report.tp_count > 0) {
    for (std::size_t d = 0; d < report.counts.size(); ++d) {
      report.histogram[d] = static_cast<double>(report.counts[d]) / static_cast<double>(report.tp_count);
    }
  }
  return report;
}

namespace {

int assigned_of(const Detection& d) {
  return d.affinity.empty() ? d.assigned_dataset : argmax(d.affinity);
}

template <typename Fn>
void for_each_tp(std::span<const std::vector<Detection>> detections,
                 std::span<const AnnotatedImage> truth, double iou_threshold, Fn&& fn) {
  if (detections.size() != truth.size()) {
    throw ValidationError("affinity: detections and ground truth differ in image count");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto m = match_detections(detections[i], truth[i], iou_threshold);
    for (const auto& d : m.detections) {
      if (d.is_tp) fn(detections[i][d.detection], truth[i]);
    }
  }
}

}  // namespace

AffinityReport affinity_distribution(std::span<const std::vector<Detection>> detections,
                                     std::span<const AnnotatedImage> truth, int num_datasets,
                                     double iou_threshold) {
  std::vector<int> assigned;
  for_each_tp(detections, truth, iou_threshold,
              [&](const Detection& d, const AnnotatedImage&) { assigned.push_back(assigned_of(d)); });
  return affinity_histogram(assigned, num_datasets);
}

AffinityAccuracy affinity_accuracy(std::span<const std::vector<Detection>> detections,
                                   std::span<const AnnotatedImage> truth, double iou_threshold) {
  AffinityAccuracy acc;
  for_each_tp(detections, truth, iou_threshold, [&](const Detection& d, const AnnotatedImage& gt) {
    ++acc.total;
    if (assigned_of(d) == gt.source_dataset) ++acc.correct;
  });
  return acc;
}

PoolSplit prune_pool(const AffinityReport& report, int k) {
  const int n = static_cast<int>(report.histogram.size());
  if (k < 1 || k > n) {
    throw ValidationError("prune: k must be in [1, " + std::to_string(n) + "], got " + std::to_string(k));
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return report.histogram[static_cast<std::size_t>(a)] > report.histogram[static_cast<std::size_t>(b)];
  });
  PoolSplit split;
  split.top_k.assign(order.begin(), order.begin() + k);
  split.remainder.assign(order.begin() + k, order.end());
  std::sort(split.remainder.begin(), split.remainder.end());
  return split;
}

PoolSplit prune_pool(AffinityReport& report, int k) {
  auto split = prune_pool(static_cast<const AffinityReport&>(report), k);
  report.top_k = split.top_k;
  report.remainder = split.remainder;
  return split;
}

ComparisonTable compare_runs(std::span<const RunResult> runs) {
  if (runs.size() < 2) throw ValidationError("report: at least two runs are needed for a comparison");
  ComparisonTable table;
  for (const auto& run : runs) {
    if (run.report.histogram.size() != run.pool.size()) {
      throw ValidationError("report: run '" + run.label + "' has a histogram of size " +
                            std::to_string(run.report.histogram.size()) + " for a pool of " +
                            std::to_string(run.pool.size()));
    }
    for (const auto& id : run.pool) {
      if (std::find(table.dataset_columns.begin(), table.dataset_columns.end(), id) ==
          table.dataset_columns.end()) {
        table.dataset_columns.push_back(id);
      }
    }
  }
  for (const auto& run : runs) {
    ComparisonRow row;
    row.label = run.label;
    row.pool = run.pool;
    row.map50 = run.map50;
    row.map50_95 = run.map50_95;
    for (const auto& col : table.dataset_columns) {
      auto it = std::find(run.pool.begin(), run.pool.end(), col);
      if (it == run.pool.end()) {
        row.assigned_percent.emplace_back();
      } else {
        row.assigned_percent.emplace_back(100.0 * run.report.histogram[static_cast<std::size_t>(it - run.pool.begin())]);
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace {

std::string opt_num(const std::optional<double>& v, const char* fmtstr) {
  return v ? fmt::format(fmt::runtime(fmtstr), *v) : std::string("-");
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string comparison_csv(const ComparisonTable& table) {
  std::ostringstream os;
  os << "run,pool";
  for (const auto& c : table.dataset_columns) os << "," << c;
  os << ",map50,map50_95\n";
  for (const auto& row : table.rows) {
    os << row.label << "," << join(row.pool, "+");
    for (const auto& p : row.assigned_percent) os << "," << opt_num(p, "{:.1f}");
    os << "," << opt_num(row.map50, "{:.4f}") << "," << opt_num(row.map50_95, "{:.4f}") << "\n";
  }
  return os.str();
}

std::string affinity_report_csv(const AffinityReport& report) {
  std::ostringstream os;
  os << "affinity_index,dataset_id,count,fraction,selected\n";
  for (std::size_t d = 0; d < report.histogram.size(); ++d) {
    const bool selected =
        std::find(report.top_k.begin(), report.top_k.end(), static_cast<int>(d)) != report.top_k.end();
    os << d << "," << (d < report.dataset_ids.size() ? report.dataset_ids[d] : "") << ","
       << report.counts[d] << "," << fmt::format("{:.6f}", report.histogram[d]) << ","
       << (selected ? 1 : 0) << "\n";
  }
  return os.str();
}

std::string affinity_report_json(const AffinityReport& report) {
  const json j = {{"kind", "affinity_report"},
                  {"dataset_ids", report.dataset_ids},
                  {"histogram", report.histogram},
                  {"counts", report.counts},
                  {"tp_count", report.tp_count},
                  {"empty", report.empty()},
                  {"top_k", report.top_k},
                  {"remainder", report.remainder}};
  return j.dump(2) + "\n";
}

AffinityReport affinity_report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("kind", "") != "affinity_report") throw ValidationError("not an affinity report");
    AffinityReport r;
    r.dataset_ids = j.at("dataset_ids").get<std::vector<std::string>>();
    r.histogram = j.at("histogram").get<std::vector<double>>();
    r.counts = j.at("counts").get<std::vector<std::size_t>>();
    r.tp_count = j.at("tp_count").get<std::size_t>();
    r.top_k = j.at("top_k").get<std::vector<int>>();
    r.remainder = j.at("remainder").get<std::vector<int>>();
    if (r.counts.size() != r.histogram.size()) throw ValidationError("histogram/count size mismatch");
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("affinity report: ") + e.what());
  }
}

std::string affinity_report_svg(const AffinityReport& report, const std::string& title) {
  const int bar_w = 60, gap = 20, chart_h = 200, top = 40, left = 50;
  const int n = static_cast<int>(report.histogram.size());
  const int width = left + n * (bar_w + gap) + gap;
  const int height = top + chart_h + 60;
  std::ostringstream os;
  os << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n",
      width, height);
  os << fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", width, height);
  os << fmt::format("<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n", left,
                    xml_escape(title.empty() ? fmt::format("Assigned datasets over {} TPs", report.tp_count)
                                             : title));
  os << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top,
                    top + chart_h);
  for (int tick = 0; tick <= 4; ++tick) {
    const int y = top + chart_h - tick * chart_h / 4;
    os << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}%</text>\n", left - 4, y + 4, tick * 25);
  }
  for (int d = 0; d < n; ++d) {
    const double f = report.histogram[static_cast<std::size_t>(d)];
    const int h = static_cast<int>(f * chart_h + 0.5);
    const int x = left + gap + d * (bar_w + gap);
    const bool selected = std::find(report.top_k.begin(), report.top_k.end(), d) != report.top_k.end();
    os << fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n", x,
                      top + chart_h - h, bar_w, h, selected ? "#3b6ea8" : "#9aa5b1");
    os << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.1f}%</text>\n", x + bar_w / 2,
                      top + chart_h - h - 4, 100.0 * f);
    const std::string label = static_cast<std::size_t>(d) < report.dataset_ids.size()
                                  ? report.dataset_ids[static_cast<std::size_t>(d)]
                                  : std::to_string(d);
    os << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", x + bar_w / 2,
                      top + chart_h + 16, xml_escape(label));
  }
  os << "</svg>\n";
  return os.str();
}

std::string map_csv(const MapResult& result) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "map50," << opt_num(result.map50, "{:.6f}") << "\n";
  os << "map50_95," << opt_num(result.map50_95, "{:.6f}") << "\n";
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    os << fmt::format("ap@{:.2f},", kIouThresholds[t]) << opt_num(result.per_threshold[t], "{:.6f}") << "\n";
  }
  return os.str();
}

std::string map_json(const MapResult& result) {
  json per = json::array();
  for (const auto& v : result.per_threshold) per.push_back(opt_json(v));
  const json j = {{"kind", "map"},
                  {"map50", opt_json(result.map50)},
                  {"map50_95", opt_json(result.map50_95)},
                  {"thresholds", kIouThresholds},
                  {"per_threshold", per}};
  return j.dump(2) + "\n";
}

MapResult map_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("kind", "") != "map") throw ValidationError("not a map result");
    MapResult r;
    r.map50 = opt_from(j.at("map50"));
    r.map50_95 = opt_from(j.at("map50_95"));
    const auto& per = j.at("per_threshold");
    if (per.size() != r.per_threshold.size()) throw ValidationError("per_threshold must have 10 entries");
    for (std::size_t t = 0; t < per.size(); ++t) r.per_threshold[t] = opt_from(per[t]);
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("map result: ") + e.what());
  }
}

std::string serialize_detections(const DetectionsFile& file) {
  std::vector<std::string> ids;
  ids.reserve(file.images.size());
  for (const auto& im : file.images) ids.push_back(im.image_id);
  const json header = {{"kind", "detections"},
                       {"version", 1},
                       {"checkpoint_digest", file.checkpoint_digest},
                       {"manifest_digest", file.manifest_digest},
                       {"dataset_ids", file.dataset_ids},
                       {"super_categories", file.super_categories},
                       {"conf_threshold", file.conf_threshold},
                       {"nms_iou", file.nms_iou},
                       {"image_ids", ids}};
  std::string out = header.dump() + "\n";
  for (const auto& im : file.images) {
    for (const auto& d : im.detections) {
      json rec = detection_to_json(d);
      rec["image_id"] = im.image_id;
      out += rec.dump();
      out += "\n";
    }
  }
  return out;
}

DetectionsFile parse_detections(const std::string& text) {
  DetectionsFile file;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::unordered_map<std::string, std::size_t> index;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("kind", "") != "detections") throw ValidationError("missing detections header");
        if (j.at("version").get<int>() != 1) throw ValidationError("unsupported detections version");
        file.checkpoint_digest = j.at("checkpoint_digest").get<std::string>();
        file.manifest_digest = j.at("manifest_digest").get<std::string>();
        file.dataset_ids = j.at("dataset_ids").get<std::vector<std::string>>();
        file.super_categories = j.at("super_categories").get<std::vector<std::string>>();
        file.conf_threshold = j.at("conf_threshold").get<double>();
        file.nms_iou = j.at("nms_iou").get<double>();
        for (const auto& id : j.at("image_ids")) {
          const auto s = id.get<std::string>();
          if (!index.emplace(s, file.images.size()).second) {
            throw ValidationError("duplicate image id " + s);
          }
          file.images.push_back({s, {}});
        }
        have_header = true;
        continue;
      }
      const auto id = j.at("image_id").get<std::string>();
      auto it = index.find(id);
      if (it == index.end()) throw ValidationError("detection for unlisted image " + id);
      Detection d = detection_from_json(j);
      if (d.affinity.size() != file.dataset_ids.size()) {
        throw ValidationError("affinity vector size does not match the pool");
      }
      file.images[it->second].detections.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw ValidationError("detections: line " + std::to_string(line_no) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("detections: line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_header) throw ValidationError("detections: empty file");
  return file;
}

void write_detections(const DetectionsFile& file, const std::filesystem::path& path) {
  write_text_file(path, serialize_detections(file));
}

DetectionsFile read_detections(const std::filesystem::path& path) {
  return parse_detections(read_text_file(path));
}

std::vector<std::vector<Detection>> detections_for(const DetectionsFile& file,
                                                   const PooledManifest& manifest) {
  std::unordered_map<std::string, const ImageDetections*> by_id;
  for (const auto& im : file.images) by_id.emplace(im.image_id, &im);
  std::vector<std::vector<Detection>> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    auto it = by_id.find(r.image_id);
    if (it == by_id.end()) {
      throw ValidationError("detections file has no entry for image " + r.image_id);
    }
    out.push_back(it->second->detections);
  }
  return out;
}

}  // namespace affdet
