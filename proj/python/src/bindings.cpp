#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "affdet/checkpoint.hpp"
#include "affdet/errors.hpp"
#include "affdet/evaluator.hpp"
#include "affdet/losses.hpp"
#include "affdet/pipeline.hpp"

namespace py = pybind11;
using namespace affdet;

namespace {

using Quad = std::tuple<double, double, double, double>;

Box to_box(const Quad& q) { return {std::get<0>(q), std::get<1>(q), std::get<2>(q), std::get<3>(q)}; }

py::dict report_dict(const AffinityReport& r) {
  py::dict d;
  d["dataset_ids"] = r.dataset_ids;
  d["histogram"] = r.histogram;
  d["counts"] = r.counts;
  d["tp_count"] = r.tp_count;
  d["top_k"] = r.top_k;
  d["remainder"] = r.remainder;
  return d;
}

py::dict detection_dict(const Detection& det) {
  py::dict d;
  d["box"] = Quad{det.box.cx, det.box.cy, det.box.w, det.box.h};
  d["objectness"] = det.objectness;
  d["class_id"] = det.class_id;
  d["class_scores"] = det.class_scores;
  d["affinity"] = det.affinity;
  d["assigned_dataset"] = det.assigned_dataset;
  return d;
}

// Trained detector loaded from a checkpoint file.
class PyDetector {
 public:
  explicit PyDetector(const std::filesystem::path& path)
      : ckpt_(load_checkpoint(path)), detector_(make_detector(ckpt_)) {}

  // image: HxWx3 uint8 in BGR order.
  py::list detect(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> image, double conf,
                  double nms_iou, std::size_t max_detections) {
    if (image.ndim() != 3 || image.shape(2) != 3) throw ValidationError("detect: expected an HxWx3 uint8 array");
    const cv::Mat view(static_cast<int>(image.shape(0)), static_cast<int>(image.shape(1)), CV_8UC3,
                       const_cast<std::uint8_t*>(image.data()));
    const std::vector<cv::Mat> images{view};
    DetectOptions opts;
    opts.conf_threshold = conf;
    opts.nms_iou = nms_iou;
    opts.max_detections = max_detections;
    std::vector<std::vector<Detection>> dets;
    {
      py::gil_scoped_release release;
      dets = detect_images(detector_, images, opts);
    }
    py::list out;
    for (const auto& d : dets.front()) out.append(detection_dict(d));
    return out;
  }

  const Checkpoint& checkpoint() const { return ckpt_; }

 private:
  Checkpoint ckpt_;
  Detector detector_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dataset-affinity detector: losses, evaluation, pruning and inference";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("bce_loss", [](const std::vector<double>& logits, const std::vector<double>& targets) {
    if (logits.size() != targets.size()) throw ValidationError("bce_loss: length mismatch");
    return bce_loss(logits, targets);
  }, py::arg("logits"), py::arg("targets"), "Mean sigmoid cross-entropy.");

  m.def("focal_loss", [](const std::vector<double>& logits, const std::vector<double>& targets, double gamma,
                         double alpha) {
    if (logits.size() != targets.size()) throw ValidationError("focal_loss: length mismatch");
    return focal_loss(logits, targets, gamma, alpha);
  }, py::arg("logits"), py::arg("targets"), py::arg("gamma") = 1.5, py::arg("alpha") = 0.25,
     "Mean focal loss over sigmoid logits.");

  m.def("ciou_loss", [](const Quad& pred, const Quad& target) { return ciou_loss(to_box(pred), to_box(target)); },
        py::arg("pred"), py::arg("target"), "CIoU loss between two (cx, cy, w, h) boxes.");

  m.def("average_precision", [](const std::vector<double>& scores, const std::vector<bool>& is_tp,
                                std::size_t num_gt) {
    if (scores.size() != is_tp.size()) throw ValidationError("average_precision: length mismatch");
    std::vector<ScoredMatch> matches;
    for (std::size_t i = 0; i < scores.size(); ++i) matches.push_back({scores[i], is_tp[i]});
    return average_precision(std::move(matches), num_gt);
  }, py::arg("scores"), py::arg("is_tp"), py::arg("num_gt"),
     "101-point interpolated AP; None when num_gt is 0.");

  m.def("affinity_histogram", [](const std::vector<int>& assigned, int num_datasets) {
    return report_dict(affinity_histogram(assigned, num_datasets));
  }, py::arg("assigned"), py::arg("num_datasets"));

  m.def("prune", [](const std::vector<double>& histogram, int k) {
    AffinityReport r;
    r.histogram = histogram;
    r.counts.assign(histogram.size(), 0);
    const auto split = prune_pool(r, k);
    return std::make_pair(split.top_k, split.remainder);
  }, py::arg("histogram"), py::arg("k") = 2, "Split dataset indices into (top_k, remainder).");

  m.def("evaluate", [](const std::filesystem::path& detections, const std::filesystem::path& manifest) {
    const auto dets = read_detections(detections);
    const auto truth = read_manifest(manifest);
    const auto per_image = detections_for(dets, truth);
    const auto r = map_range(per_image, truth.records, static_cast<int>(truth.super_categories.size()));
    py::dict d;
    d["map50"] = r.map50;
    d["map50_95"] = r.map50_95;
    d["per_threshold"] = std::vector<std::optional<double>>(r.per_threshold.begin(), r.per_threshold.end());
    return d;
  }, py::arg("detections"), py::arg("manifest"), "mAP@.5 and mAP@.5:.95 of a detections file.");

  m.def("analyze", [](const std::filesystem::path& detections, const std::filesystem::path& manifest,
                      double iou) {
    const auto dets = read_detections(detections);
    const auto truth = read_manifest(manifest);
    auto report = affinity_distribution(detections_for(dets, truth), truth.records,
                                        static_cast<int>(dets.dataset_ids.size()), iou);
    report.dataset_ids = dets.dataset_ids;
    return report_dict(report);
  }, py::arg("detections"), py::arg("manifest"), py::arg("iou") = 0.5,
     "Affinity histogram over true positives.");

  py::class_<PyDetector>(m, "Detector")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("detect", &PyDetector::detect, py::arg("image"), py::arg("conf") = 0.25, py::arg("nms_iou") = 0.45,
           py::arg("max_detections") = 300, "Detections for one HxWx3 uint8 BGR image.")
      .def_property_readonly("input_size", [](const PyDetector& d) { return d.checkpoint().config.input_size; })
      .def_property_readonly("dataset_ids", [](const PyDetector& d) { return d.checkpoint().metadata.dataset_ids; })
      .def_property_readonly("super_categories",
                             [](const PyDetector& d) { return d.checkpoint().metadata.super_categories; });
}
