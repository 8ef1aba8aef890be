#include "affdet/image_io.hpp"

#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <vector>

#include "affdet/errors.hpp"

namespace affdet {

cv::Mat read_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw ValidationError("cannot read image " + path.string());
  return img;
}

void write_png(const std::filesystem::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 3};
  if (!cv::imwrite(path.string(), image, params)) {
    throw std::runtime_error("cannot write image " + path.string());
  }
}

cv::Mat letterbox(const cv::Mat& image, int size, LetterboxTransform* transform) {
  const double scale = std::min(static_cast<double>(size) / image.cols,
                                static_cast<double>(size) / image.rows);
  const int new_w = std::max(1, static_cast<int>(std::lround(image.cols * scale)));
  const int new_h = std::max(1, static_cast<int>(std::lround(image.rows * scale)));
  const int pad_x = (size - new_w) / 2;
  const int pad_y = (size - new_h) / 2;

  cv::Mat canvas(size, size, CV_8UC3, cv::Scalar::all(kGrayLevel));
  if (new_w == image.cols && new_h == image.rows) {
    image.copyTo(canvas(cv::Rect(pad_x, pad_y, new_w, new_h)));
  } else {
    cv::Mat resized;
    cv::resize(image, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_AREA);
    resized.copyTo(canvas(cv::Rect(pad_x, pad_y, new_w, new_h)));
  }
  if (transform) {
    transform->scale_x = static_cast<double>(new_w) / image.cols;
    transform->scale_y = static_cast<double>(new_h) / image.rows;
    transform->pad_x = pad_x;
    transform->pad_y = pad_y;
  }
  return canvas;
}

}  // namespace affdet
