#pragma once

#include <algorithm>

namespace affdet {

// Axis-aligned rectangle in corner form, pixel units.
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool empty() const { return width() <= 0.0 || height() <= 0.0; }
  bool contains(double x, double y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }

  Rect intersect(const Rect& o) const {
    return {std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1),
            std::min(y1, o.y1)};
  }

  static Rect from_xywh(double x, double y, double w, double h) {
    return {x, y, x + w, y + h};
  }

  friend bool operator==(const Rect&, const Rect&) = default;
};

// Center-form box (cx, cy, w, h), the detector's box parameterization.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  Rect corners() const {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  static Box from_corners(const Rect& r) {
    return {0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1), r.width(), r.height()};
  }
  // COCO-style [x, y, w, h] with (x, y) the top-left corner.
  static Box from_xywh(double x, double y, double w, double h) {
    return {x + 0.5 * w, y + 0.5 * h, w, h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const Rect inter = a.corners().intersect(b.corners());
  const double i = inter.area();
  const double u = a.area() + b.area() - i;
  return u > 0.0 ? i / u : 0.0;
}

}  // namespace affdet
