#include "affdet/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "affdet/errors.hpp"

namespace affdet {

int DetectorConfig::downsampling_stages() const {
  return std::countr_zero(static_cast<unsigned>(grid_stride));
}

void DetectorConfig::validate() const {
  if (grid_stride < 2 || !std::has_single_bit(static_cast<unsigned>(grid_stride))) {
    throw ValidationError("detector: grid_stride must be a power of two >= 2");
  }
  if (input_size <= 0 || input_size % grid_stride != 0) {
    throw ValidationError("detector: input_size must be a positive multiple of grid_stride");
  }
  if (num_classes < 1) throw ValidationError("detector: num_classes must be >= 1");
  if (num_datasets < 1) throw ValidationError("detector: num_datasets must be >= 1");
  if (static_cast<int>(channel_widths.size()) < downsampling_stages()) {
    throw ValidationError("detector: need at least log2(grid_stride) trunk stages");
  }
  for (int w : channel_widths) {
    if (w < 1) throw ValidationError("detector: channel widths must be positive");
  }
  if (loss_weights.obj < 0 || loss_weights.cls < 0 || loss_weights.loc < 0 || loss_weights.aff < 0) {
    throw ValidationError("detector: loss weights must be >= 0");
  }
  if (focal_gamma < 0) throw ValidationError("detector: focal_gamma must be >= 0");
  if (!(focal_alpha > 0 && focal_alpha <= 1)) {
    throw ValidationError("detector: focal_alpha must be in (0, 1]");
  }
}

HeadOutputs::HeadOutputs(int b, int g, int c, int n)
    : batch(b), grid(g), num_classes(c), num_datasets(n) {
  const std::size_t cells = static_cast<std::size_t>(b) * g * g;
  obj.assign(cells, 0.0);
  cls.assign(cells * c, 0.0);
  box.assign(cells * 4, 0.0);
  aff.assign(cells * n, 0.0);
}

std::size_t TargetAssignment::num_positive() const {
  return static_cast<std::size_t>(
      std::count_if(cells.begin(), cells.end(), [](const CellTarget& c) { return c.positive; }));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

Box decode_box(std::span<const double> raw, int gx, int gy, double stride, BoxJacobian* jacobian) {
  const double sx = sigmoid(raw[0]);
  const double sy = sigmoid(raw[1]);
  const double tw = std::clamp(raw[2], -kMaxLogScale, kMaxLogScale);
  const double th = std::clamp(raw[3], -kMaxLogScale, kMaxLogScale);
  Box b{(gx + sx) * stride, (gy + sy) * stride, stride * std::exp(tw), stride * std::exp(th)};
  if (jacobian) {
    jacobian->dcx = stride * sx * (1.0 - sx);
    jacobian->dcy = stride * sy * (1.0 - sy);
    jacobian->dw = std::abs(raw[2]) < kMaxLogScale ? b.w : 0.0;
    jacobian->dh = std::abs(raw[3]) < kMaxLogScale ? b.h : 0.0;
  }
  return b;
}

TargetAssignment assign_targets(const AnnotatedImage& gt, const DetectorConfig& cfg) {
  const int g = cfg.grid();
  TargetAssignment ta;
  ta.grid = g;
  ta.cells.resize(static_cast<std::size_t>(g) * g);
  // Strict ordering so the owner does not depend on annotation order.
  auto smaller = [](const Box& a, int ca, const Box& b, int cb) {
    if (a.area() != b.area()) return a.area() < b.area();
    if (a.cx != b.cx) return a.cx < b.cx;
    if (a.cy != b.cy) return a.cy < b.cy;
    if (a.w != b.w) return a.w < b.w;
    return ca < cb;
  };
  for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
    const Box& b = gt.boxes[i];
    const int gx = std::clamp(static_cast<int>(std::floor(b.cx / cfg.grid_stride)), 0, g - 1);
    const int gy = std::clamp(static_cast<int>(std::floor(b.cy / cfg.grid_stride)), 0, g - 1);
    CellTarget& cell = ta.cells[static_cast<std::size_t>(gy) * g + gx];
    if (cell.positive && !smaller(b, gt.class_ids[i], cell.target_box, cell.target_class)) continue;
    cell.positive = true;
    cell.target_class = gt.class_ids[i];
    cell.target_box = b;
    cell.target_dataset = gt.source_dataset;
  }
  return ta;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.objectness > b.objectness; });
  std::vector<Detection> kept;
  for (auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

std::vector<std::vector<Detection>> decode(const HeadOutputs& out, const DetectorConfig& cfg,
                                           double conf_threshold, double nms_iou,
                                           std::size_t max_detections) {
  std::vector<std::vector<Detection>> result(static_cast<std::size_t>(out.batch));
  for (int b = 0; b < out.batch; ++b) {
    std::vector<Detection> cand;
    for (int gy = 0; gy < out.grid; ++gy) {
      for (int gx = 0; gx < out.grid; ++gx) {
        const std::size_t c = out.cell(b, gy, gx);
        const double o = sigmoid(out.obj[c]);
        if (o < conf_threshold) continue;
        Detection d;
        d.objectness = o;
        d.box = decode_box(out.box_at(c), gx, gy, cfg.grid_stride);
        for (double v : out.cls_at(c)) d.class_scores.push_back(sigmoid(v));
        d.class_id = argmax(d.class_scores);
        d.affinity = softmax(out.aff_at(c));
        d.assigned_dataset = argmax(d.affinity);
        cand.push_back(std::move(d));
      }
    }
    auto kept = nms(std::move(cand), nms_iou);
    if (kept.size() > max_detections) kept.resize(max_detections);
    result[static_cast<std::size_t>(b)] = std::move(kept);
  }
  return result;
}

template <typename T>
BasicDetector<T>::BasicDetector(const DetectorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      obj_head_("head.obj", cfg.channel_widths.empty() ? 1 : cfg.channel_widths.back(), 1, 1, 1),
      cls_head_("head.cls", cfg.channel_widths.empty() ? 1 : cfg.channel_widths.back(), cfg.num_classes, 1, 1),
      box_head_("head.box", cfg.channel_widths.empty() ? 1 : cfg.channel_widths.back(), 4, 1, 1),
      aff_head_("head.aff", cfg.channel_widths.empty() ? 1 : cfg.channel_widths.back(), cfg.num_datasets, 1, 1) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int in = 3;
  const int down = cfg_.downsampling_stages();
  for (std::size_t i = 0; i < cfg_.channel_widths.size(); ++i) {
    const int out = cfg_.channel_widths[i];
    const int stride = static_cast<int>(i) < down ? 2 : 1;
    trunk_.emplace_back("trunk." + std::to_string(i), in, out, 3, stride);
    trunk_.back().init(rng);
    activations_.emplace_back();
    in = out;
  }
  obj_head_.init(rng, T(-4.6));  // prior objectness ~0.01
  cls_head_.init(rng);
  box_head_.init(rng);
  aff_head_.init(rng);
  // Small head weights keep the initial logits near their priors.
  for (auto* h : {&obj_head_, &cls_head_, &box_head_, &aff_head_}) h->weight().value *= T(0.1);
  box_head_.bias().value(2, 0) = static_cast<T>(std::log(2.0));
  box_head_.bias().value(3, 0) = static_cast<T>(std::log(2.0));
}

template <typename T>
HeadOutputs BasicDetector<T>::forward(const nn::FeatureMap<T>& input) {
  if (input.channels() != 3 || input.height != cfg_.input_size || input.width != cfg_.input_size) {
    throw ValidationError("detector: input batch must be 3 x " + std::to_string(cfg_.input_size) +
                          " x " + std::to_string(cfg_.input_size));
  }
  nn::FeatureMap<T> x = input;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    x = activations_[i].forward(trunk_[i].forward(x));
  }
  const auto o = obj_head_.forward(x);
  const auto c = cls_head_.forward(x);
  const auto b = box_head_.forward(x);
  const auto a = aff_head_.forward(x);

  HeadOutputs out(x.batch, cfg_.grid(), cfg_.num_classes, cfg_.num_datasets);
  const Eigen::Index cells = static_cast<Eigen::Index>(out.cells());
  for (Eigen::Index i = 0; i < cells; ++i) {
    const std::size_t cell = static_cast<std::size_t>(i);
    out.obj[cell] = static_cast<double>(o.data(0, i));
    for (int k = 0; k < cfg_.num_classes; ++k) out.cls_at(cell)[k] = static_cast<double>(c.data(k, i));
    for (int k = 0; k < 4; ++k) out.box_at(cell)[k] = static_cast<double>(b.data(k, i));
    for (int k = 0; k < cfg_.num_datasets; ++k) out.aff_at(cell)[k] = static_cast<double>(a.data(k, i));
  }
  return out;
}

template <typename T>
void BasicDetector<T>::backward(const HeadOutputs& grad) {
  const Eigen::Index cells = static_cast<Eigen::Index>(grad.cells());
  auto make = [&](int rows) {
    nn::FeatureMap<T> f;
    f.batch = grad.batch;
    f.height = grad.grid;
    f.width = grad.grid;
    f.data.resize(rows, cells);
    return f;
  };
  auto dobj = make(1);
  auto dcls = make(cfg_.num_classes);
  auto dbox = make(4);
  auto daff = make(cfg_.num_datasets);
  for (Eigen::Index i = 0; i < cells; ++i) {
    const std::size_t cell = static_cast<std::size_t>(i);
    dobj.data(0, i) = static_cast<T>(grad.obj[cell]);
    for (int k = 0; k < cfg_.num_classes; ++k) dcls.data(k, i) = static_cast<T>(grad.cls_at(cell)[k]);
    for (int k = 0; k < 4; ++k) dbox.data(k, i) = static_cast<T>(grad.box_at(cell)[k]);
    for (int k = 0; k < cfg_.num_datasets; ++k) daff.data(k, i) = static_cast<T>(grad.aff_at(cell)[k]);
  }
  auto dx = obj_head_.backward(dobj, true);
  dx.data += cls_head_.backward(dcls, true).data;
  dx.data += box_head_.backward(dbox, true).data;
  dx.data += aff_head_.backward(daff, true).data;
  for (std::size_t i = trunk_.size(); i-- > 0;) {
    dx = trunk_[i].backward(activations_[i].backward(dx), i > 0);
  }
}

template <typename T>
void BasicDetector<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
std::vector<nn::Parameter<T>*> BasicDetector<T>::parameters() {
  std::vector<nn::Parameter<T>*> ps;
  for (auto& conv : trunk_) {
    ps.push_back(&conv.weight());
    ps.push_back(&conv.bias());
  }
  for (auto* h : {&obj_head_, &cls_head_, &box_head_, &aff_head_}) {
    ps.push_back(&h->weight());
    ps.push_back(&h->bias());
  }
  return ps;
}

template <typename T>
std::size_t BasicDetector<T>::num_parameters() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename T>
nn::FeatureMap<T> make_input_batch(std::span<const cv::Mat> images) {
  nn::FeatureMap<T> f;
  if (images.empty()) return f;
  f.batch = static_cast<int>(images.size());
  f.height = images[0].rows;
  f.width = images[0].cols;
  const Eigen::Index sp = f.spatial();
  f.data.resize(3, sp * f.batch);
  for (int b = 0; b < f.batch; ++b) {
    const cv::Mat& img = images[static_cast<std::size_t>(b)];
    if (img.type() != CV_8UC3 || img.rows != f.height || img.cols != f.width) {
      throw ValidationError("input batch: images must be 8-bit BGR of equal size");
    }
    for (int y = 0; y < f.height; ++y) {
      const auto* row = img.ptr<cv::Vec3b>(y);
      for (int x = 0; x < f.width; ++x) {
        const Eigen::Index col = b * sp + static_cast<Eigen::Index>(y) * f.width + x;
        // BGR -> RGB
        f.data(0, col) = static_cast<T>(row[x][2]) / T(255);
        f.data(1, col) = static_cast<T>(row[x][1]) / T(255);
        f.data(2, col) = static_cast<T>(row[x][0]) / T(255);
      }
    }
  }
  return f;
}

template class BasicDetector<float>;
template class BasicDetector<double>;
template nn::FeatureMap<float> make_input_batch<float>(std::span<const cv::Mat>);
template nn::FeatureMap<double> make_input_batch<double>(std::span<const cv::Mat>);

}  // namespace affdet
