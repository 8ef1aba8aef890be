#pragma once

#include <filesystem>
#include <opencv2/core.hpp>

#include "affdet/box.hpp"

namespace affdet {

// Fill value for ignore regions and letterbox padding.
inline constexpr unsigned char kGrayLevel = 114;

// 8-bit, 3-channel, BGR (OpenCV order).
cv::Mat read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const cv::Mat& image);

// Aspect-preserving resize into a square canvas, centered, gray padded.
struct LetterboxTransform {
  double scale_x = 1.0;
  double scale_y = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;

  Box to_input(const Box& b) const {
    return {b.cx * scale_x + pad_x, b.cy * scale_y + pad_y, b.w * scale_x, b.h * scale_y};
  }
  Box to_source(const Box& b) const {
    return {(b.cx - pad_x) / scale_x, (b.cy - pad_y) / scale_y, b.w / scale_x, b.h / scale_y};
  }
};

cv::Mat letterbox(const cv::Mat& image, int size, LetterboxTransform* transform);

}  // namespace affdet
