#pragma once

#include <cstdint>
#include <memory>
#include <opencv2/core.hpp>
#include <span>
#include <vector>

#include "affdet/box.hpp"
#include "affdet/corpus.hpp"
#include "affdet/nn.hpp"

namespace affdet {

struct LossWeights {
  double obj = 0.7;
  double cls = 0.3;
  double loc = 0.05;
  double aff = 0.3;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct DetectorConfig {
  int input_size = 320;
  int grid_stride = 16;
  int num_classes = 1;
  int num_datasets = 1;
  // One entry per trunk stage. The first log2(grid_stride) stages are
  // stride-2 3x3 convolutions, the rest stride-1 3x3 convolutions.
  std::vector<int> channel_widths{16, 32, 48, 64, 64};
  LossWeights loss_weights;
  double focal_gamma = 1.5;
  double focal_alpha = 0.25;

  int grid() const { return input_size / grid_stride; }
  int downsampling_stages() const;
  void validate() const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

// Raw head predictions, indexed [batch][gy][gx][k].
struct HeadOutputs {
  int batch = 0;
  int grid = 0;
  int num_classes = 0;
  int num_datasets = 0;
  std::vector<double> obj;  // 1 per cell
  std::vector<double> cls;  // num_classes per cell
  std::vector<double> box;  // 4 per cell (raw, see decode_box)
  std::vector<double> aff;  // num_datasets per cell

  HeadOutputs() = default;
  HeadOutputs(int batch, int grid, int num_classes, int num_datasets);

  std::size_t cells() const { return static_cast<std::size_t>(batch) * grid * grid; }
  std::size_t cell(int b, int gy, int gx) const {
    return (static_cast<std::size_t>(b) * grid + gy) * grid + gx;
  }
  std::span<double> cls_at(std::size_t c) { return {cls.data() + c * num_classes, static_cast<std::size_t>(num_classes)}; }
  std::span<const double> cls_at(std::size_t c) const { return {cls.data() + c * num_classes, static_cast<std::size_t>(num_classes)}; }
  std::span<double> box_at(std::size_t c) { return {box.data() + c * 4, 4}; }
  std::span<const double> box_at(std::size_t c) const { return {box.data() + c * 4, 4}; }
  std::span<double> aff_at(std::size_t c) { return {aff.data() + c * num_datasets, static_cast<std::size_t>(num_datasets)}; }
  std::span<const double> aff_at(std::size_t c) const { return {aff.data() + c * num_datasets, static_cast<std::size_t>(num_datasets)}; }
};

struct Detection {
  double objectness = 0.0;
  Box box;
  std::vector<double> class_scores;
  std::vector<double> affinity;  // softmax over the pool, sums to 1
  int class_id = 0;
  int assigned_dataset = 0;
};

struct CellTarget {
  bool positive = false;
  int target_class = 0;
  Box target_box;
  int target_dataset = 0;
};

struct TargetAssignment {
  int grid = 0;
  std::vector<CellTarget> cells;  // row-major [gy][gx]

  std::size_t num_positive() const;
};

// Box parameterization: cx = (gx + sigmoid(t0)) * stride, likewise cy;
// w = stride * exp(t2), h = stride * exp(t3), with t2, t3 clamped to
// [-kMaxLogScale, kMaxLogScale].
inline constexpr double kMaxLogScale = 6.0;

struct BoxJacobian {
  double dcx = 0.0;  // d cx / d t0
  double dcy = 0.0;  // d cy / d t1
  double dw = 0.0;   // d w / d t2
  double dh = 0.0;   // d h / d t3
};

Box decode_box(std::span<const double> raw, int gx, int gy, double stride,
               BoxJacobian* jacobian = nullptr);

double sigmoid(double x);
std::vector<double> softmax(std::span<const double> logits);
// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const double> values);

// Center-cell assignment in the input frame. A cell is positive iff a box
// center falls in it; when several do, the smallest box owns the cell.
TargetAssignment assign_targets(const AnnotatedImage& ground_truth, const DetectorConfig& cfg);

// Greedy per-class suppression by descending objectness; a detection is
// dropped when its IoU with a kept one of the same class exceeds iou_threshold.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

// One list per batch item, boxes in the input frame.
std::vector<std::vector<Detection>> decode(const HeadOutputs& outputs, const DetectorConfig& cfg,
                                           double conf_threshold = 0.25, double nms_iou = 0.45,
                                           std::size_t max_detections = 300);

// Toy single-scale detector: strided conv trunk with SiLU activations and
// four parallel 1x1 projections (objectness, class, box, dataset affinity).
template <typename T>
class BasicDetector {
 public:
  BasicDetector(const DetectorConfig& cfg, std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }

  HeadOutputs forward(const nn::FeatureMap<T>& input);
  // grad has the shape of the last forward's outputs.
  void backward(const HeadOutputs& grad);
  void zero_grad();
  std::vector<nn::Parameter<T>*> parameters();
  std::size_t num_parameters();

 private:
  DetectorConfig cfg_;
  std::vector<nn::Conv2d<T>> trunk_;
  std::vector<nn::SiLU<T>> activations_;
  nn::Conv2d<T> obj_head_;
  nn::Conv2d<T> cls_head_;
  nn::Conv2d<T> box_head_;
  nn::Conv2d<T> aff_head_;
};

using Detector = BasicDetector<float>;

// Letterboxed BGR images -> normalized RGB batch.
template <typename T>
nn::FeatureMap<T> make_input_batch(std::span<const cv::Mat> images);

}  // namespace affdet
