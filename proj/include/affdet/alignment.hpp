#pragma once

#include <cstdint>
#include <opencv2/core.hpp>
#include <random>
#include <span>
#include <vector>

#include "affdet/corpus.hpp"

namespace affdet {

struct SliceConfig {
  int patch_min = 600;
  int patch_max = 800;
  double overlap_ratio = 0.1;
  double min_box_visibility = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PixelWindow {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const PixelWindow&, const PixelWindow&) = default;
};

struct ImagePatch {
  PixelWindow window;
  AnnotatedImage record;  // coordinates relative to the window
};

// Grid origins along one axis: stride = side * (1 - overlap), the last origin
// clamped so the patch ends at the extent. side must be <= extent.
std::vector<int> patch_origins(int extent, int side, double overlap_ratio);

// Draws one patch side per image from [patch_min, patch_max], clamps it per
// axis to the image extent and tiles the image. Boxes are clipped to each
// window and kept when the visible fraction reaches min_box_visibility.
std::vector<ImagePatch> slice_image(const AnnotatedImage& image, const SliceConfig& cfg,
                                    std::mt19937_64& rng);

// Per-image generator so that parallel and serial runs agree.
inline std::mt19937_64 image_rng(std::uint64_t seed, std::uint64_t ordinal) {
  return std::mt19937_64(seed ^ ordinal);
}

Box window_to_source(const Box& b, const PixelWindow& window);

// Keeps frames whose frame_index is a multiple of stride; order preserved.
std::vector<AnnotatedImage> subsample_video(std::span<const AnnotatedImage> frames,
                                            int stride = 20);

// Pixels covered by any region (rounded outward, clamped to the image) become
// (114, 114, 114). Returns a copy.
cv::Mat mask_ignore_regions(const cv::Mat& pixels, std::span<const Rect> regions);

}  // namespace affdet
