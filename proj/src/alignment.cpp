#include "affdet/alignment.hpp"

#include <cmath>

#include "affdet/errors.hpp"
#include "affdet/image_io.hpp"

namespace affdet {

void SliceConfig::validate() const {
  if (patch_min < 1 || patch_min > patch_max) {
    throw ValidationError("slice: need 1 <= patch_min <= patch_max");
  }
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) {
    throw ValidationError("slice: overlap_ratio must be in [0, 1)");
  }
  if (!(min_box_visibility >= 0.0 && min_box_visibility <= 1.0)) {
    throw ValidationError("slice: min_box_visibility must be in [0, 1]");
  }
}

std::vector<int> patch_origins(int extent, int side, double overlap_ratio) {
  if (side >= extent) return {0};
  const int stride =
      std::max(1, static_cast<int>(std::floor(side * (1.0 - overlap_ratio) + 1e-9)));
  std::vector<int> origins;
  int o = 0;
  while (true) {
    origins.push_back(o);
    if (o + side >= extent) break;
    o += stride;
    if (o + side > extent) o = extent - side;
  }
  return origins;
}

Box window_to_source(const Box& b, const PixelWindow& window) {
  return {b.cx + window.x, b.cy + window.y, b.w, b.h};
}

std::vector<ImagePatch> slice_image(const AnnotatedImage& image, const SliceConfig& cfg,
                                    std::mt19937_64& rng) {
  cfg.validate();
  if (image.width <= 0 || image.height <= 0) {
    throw ValidationError("slice: image " + image.image_id + " has no extent");
  }
  const int side = std::uniform_int_distribution<int>(cfg.patch_min, cfg.patch_max)(rng);
  const int side_x = std::min(side, image.width);
  const int side_y = std::min(side, image.height);
  const auto xs = patch_origins(image.width, side_x, cfg.overlap_ratio);
  const auto ys = patch_origins(image.height, side_y, cfg.overlap_ratio);

  std::vector<ImagePatch> patches;
  const bool single = xs.size() == 1 && ys.size() == 1 && side_x == image.width &&
                      side_y == image.height;
  int k = 0;
  for (int y : ys) {
    for (int x : xs) {
      ImagePatch p;
      p.window = {x, y, side_x, side_y};
      AnnotatedImage& r = p.record;
      r.image_id = single ? image.image_id : image.image_id + "_p" + std::to_string(k);
      r.source_dataset = image.source_dataset;
      r.width = side_x;
      r.height = side_y;
      r.frame_index = image.frame_index;
      const Rect win = Rect::from_xywh(x, y, side_x, side_y);
      for (std::size_t i = 0; i < image.boxes.size(); ++i) {
        const Box& b = image.boxes[i];
        const Rect clipped = b.corners().intersect(win);
        if (clipped.empty()) continue;
        if (clipped.area() < cfg.min_box_visibility * b.area()) continue;
        Box local = Box::from_corners(clipped);
        local.cx -= x;
        local.cy -= y;
        r.boxes.push_back(local);
        r.class_ids.push_back(image.class_ids[i]);
      }
      for (const Rect& g : image.ignore_regions) {
        const Rect clipped = g.intersect(win);
        if (clipped.empty()) continue;
        r.ignore_regions.push_back({clipped.x0 - x, clipped.y0 - y, clipped.x1 - x, clipped.y1 - y});
      }
      patches.push_back(std::move(p));
      ++k;
    }
  }
  return patches;
}

std::vector<AnnotatedImage> subsample_video(std::span<const AnnotatedImage> frames, int stride) {
  if (stride < 1) throw ValidationError("subsample: stride must be >= 1");
  std::vector<AnnotatedImage> out;
  for (const auto& f : frames) {
    if (!f.frame_index) {
      throw ValidationError("subsample: record " + f.image_id + " has no frame_index");
    }
    if (*f.frame_index % stride == 0) out.push_back(f);
  }
  return out;
}

cv::Mat mask_ignore_regions(const cv::Mat& pixels, std::span<const Rect> regions) {
  cv::Mat out = pixels.clone();
  for (const Rect& g : regions) {
    const int x0 = std::clamp(static_cast<int>(std::floor(g.x0)), 0, out.cols);
    const int y0 = std::clamp(static_cast<int>(std::floor(g.y0)), 0, out.rows);
    const int x1 = std::clamp(static_cast<int>(std::ceil(g.x1)), 0, out.cols);
    const int y1 = std::clamp(static_cast<int>(std::ceil(g.y1)), 0, out.rows);
    if (x1 <= x0 || y1 <= y0) continue;
    out(cv::Rect(x0, y0, x1 - x0, y1 - y0)).setTo(cv::Scalar::all(kGrayLevel));
  }
  return out;
}

}  // namespace affdet
