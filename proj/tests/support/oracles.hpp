// Independent reference implementations used as test oracles. They share no
// code with the library beyond plain data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "affdet/box.hpp"
#include "affdet/corpus.hpp"
#include "affdet/model.hpp"

namespace oracle {

inline double box_iou(const affdet::Box& a, const affdet::Box& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Published CIoU: 1 - IoU + rho^2/c^2 + alpha v,
// v = 4/pi^2 (atan(wg/hg) - atan(w/h))^2, alpha = v / ((1 - IoU) + v).
inline double ciou(const affdet::Box& p, const affdet::Box& g) {
  const double i = box_iou(p, g);
  const double rho2 = (p.cx - g.cx) * (p.cx - g.cx) + (p.cy - g.cy) * (p.cy - g.cy);
  const double cw = std::max(p.cx + p.w / 2, g.cx + g.w / 2) - std::min(p.cx - p.w / 2, g.cx - g.w / 2);
  const double ch = std::max(p.cy + p.h / 2, g.cy + g.h / 2) - std::min(p.cy - p.h / 2, g.cy - g.h / 2);
  const double c2 = cw * cw + ch * ch;
  const double d = std::atan(g.w / g.h) - std::atan(p.w / p.h);
  const double v = 4.0 / (std::numbers::pi * std::numbers::pi) * d * d;
  const double alpha = v == 0.0 ? 0.0 : v / ((1.0 - i) + v);
  return 1.0 - i + rho2 / c2 + alpha * v;
}

inline double bce(double logit, double y) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return -(y * std::log(p) + (1 - y) * std::log(1 - p));
}

inline double focal(double logit, double y, double gamma, double alpha) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double pt = y > 0.5 ? p : 1 - p;
  return -alpha * std::pow(1 - pt, gamma) * std::log(pt);
}

// Rank-order fixed point: a detection survives iff no higher-ranked survivor
// of the same class overlaps it by more than thr.
inline std::vector<std::size_t> nms_survivors(const std::vector<affdet::Detection>& dets, double thr) {
  std::vector<std::size_t> rank(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) rank[i] = i;
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].objectness > dets[b].objectness; });
  std::vector<bool> alive(dets.size(), false);
  for (std::size_t r = 0; r < rank.size(); ++r) {
    bool ok = true;
    for (std::size_t q = 0; q < r; ++q) {
      const auto i = rank[r], j = rank[q];
      if (alive[j] && dets[i].class_id == dets[j].class_id && box_iou(dets[i].box, dets[j].box) > thr) ok = false;
    }
    alive[rank[r]] = ok;
  }
  std::vector<std::size_t> out;
  for (auto i : rank) {
    if (alive[i]) out.push_back(i);
  }
  return out;
}

struct MatchLabel {
  bool tp = false;
  bool ignored = false;
  std::optional<std::size_t> gt;
};

// Brute-force greedy matcher: labels indexed like the input detections.
inline std::vector<MatchLabel> greedy_labels(const std::vector<affdet::Detection>& dets,
                                             const affdet::AnnotatedImage& truth, double thr) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].objectness > dets[b].objectness; });
  std::vector<MatchLabel> labels(dets.size());
  std::vector<bool> used(truth.boxes.size(), false);
  for (auto i : order) {
    std::vector<std::pair<double, std::size_t>> cands;
    for (std::size_t g = 0; g < truth.boxes.size(); ++g) {
      if (used[g] || truth.class_ids[g] != dets[i].class_id) continue;
      const double v = box_iou(dets[i].box, truth.boxes[g]);
      if (v >= thr) cands.push_back({v, g});
    }
    if (!cands.empty()) {
      // highest IoU, lowest index among equals
      auto best = cands.front();
      for (const auto& c : cands) {
        if (c.first > best.first) best = c;
      }
      labels[i].tp = true;
      labels[i].gt = best.second;
      used[best.second] = true;
    } else {
      for (const auto& r : truth.ignore_regions) {
        const double x = dets[i].box.cx, y = dets[i].box.cy;
        if (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1) labels[i].ignored = true;
      }
    }
  }
  return labels;
}

// Exact area under the monotone precision envelope of the ranked PR curve.
inline double exact_ap(std::vector<std::pair<double, bool>> scored, std::size_t num_gt) {
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> p, r;
  double tp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].second) tp += 1;
    p.push_back(tp / static_cast<double>(i + 1));
    r.push_back(tp / static_cast<double>(num_gt));
  }
  double area = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double env = 0.0;
    for (std::size_t j = i; j < p.size(); ++j) env = std::max(env, p[j]);
    area += (r[i] - prev_r) * env;
    prev_r = r[i];
  }
  return area;
}

inline std::vector<int> grid_origins(int extent, int side, double overlap) {
  std::vector<int> o;
  const int stride = static_cast<int>(std::floor(side * (1.0 - overlap) + 1e-9));
  int x = 0;
  while (true) {
    if (x + side >= extent) {
      o.push_back(extent - side);
      break;
    }
    o.push_back(x);
    x += stride;
  }
  // Deduplicate a clamped origin that equals the previous one.
  o.erase(std::unique(o.begin(), o.end()), o.end());
  return o;
}

// Pixel count of the union of rectangles after outward rounding and clamping.
inline long union_pixels(int w, int h, const std::vector<affdet::Rect>& rects) {
  long n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (const auto& r : rects) {
        const int x0 = std::max(0, static_cast<int>(std::floor(r.x0)));
        const int y0 = std::max(0, static_cast<int>(std::floor(r.y0)));
        const int x1 = std::min(w, static_cast<int>(std::ceil(r.x1)));
        const int y1 = std::min(h, static_cast<int>(std::ceil(r.y1)));
        if (x >= x0 && x < x1 && y >= y0 && y < y1) {
          ++n;
          break;
        }
      }
    }
  }
  return n;
}

}  // namespace oracle
