#include "affdet/losses.hpp"

#include <cmath>
#include <numbers>

#include "affdet/errors.hpp"

namespace affdet {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

LossTerm bce_term(double logit, double target) {
  return {softplus(logit) - target * logit, sigmoid(logit) - target};
}

LossTerm focal_term(double logit, double target, double gamma, double alpha) {
  const double sign = target > 0.5 ? 1.0 : -1.0;
  const double z = sign * logit;
  const double p_t = sigmoid(z);
  const double q = sigmoid(-z);  // 1 - p_t without cancellation
  const double log_pt = -softplus(-z);
  const double qg = std::pow(q, gamma);
  const double value = -alpha * qg * log_pt;
  const double dz = alpha * qg * (gamma * p_t * log_pt - q);
  return {value, sign * dz};
}

double bce_loss(std::span<const double> logits, std::span<const double> targets,
                std::span<double> grad) {
  if (logits.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto t = bce_term(logits[i], targets[i]);
    sum += t.value;
    if (!grad.empty()) grad[i] = t.dlogit * inv;
  }
  return sum * inv;
}

double focal_loss(std::span<const double> logits, std::span<const double> targets, double gamma,
                  double alpha, std::span<double> grad) {
  if (logits.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto t = focal_term(logits[i], targets[i], gamma, alpha);
    sum += t.value;
    if (!grad.empty()) grad[i] = t.dlogit * inv;
  }
  return sum * inv;
}

double ciou_loss(const Box& pred, const Box& target, BoxGradient* grad) {
  if (!(target.w > 0.0 && target.h > 0.0)) {
    throw ValidationError("ciou: degenerate target box");
  }
  if (!(pred.w > 0.0 && pred.h > 0.0)) {
    throw ValidationError("ciou: prediction needs positive width and height");
  }
  const Rect p = pred.corners();
  const Rect t = target.corners();

  // Corner derivatives are indexed (x0, y0, x1, y1).
  double d_inter[4] = {0, 0, 0, 0};
  const double iw = std::min(p.x1, t.x1) - std::max(p.x0, t.x0);
  const double ih = std::min(p.y1, t.y1) - std::max(p.y0, t.y0);
  double inter = 0.0;
  if (iw > 0.0 && ih > 0.0) {
    inter = iw * ih;
    d_inter[0] = p.x0 > t.x0 ? -ih : 0.0;
    d_inter[2] = p.x1 < t.x1 ? ih : 0.0;
    d_inter[1] = p.y0 > t.y0 ? -iw : 0.0;
    d_inter[3] = p.y1 < t.y1 ? iw : 0.0;
  }
  const double uni = pred.w * pred.h + target.w * target.h - inter;
  const double iou_v = inter / uni;

  const double cw = std::max(p.x1, t.x1) - std::min(p.x0, t.x0);
  const double ch = std::max(p.y1, t.y1) - std::min(p.y0, t.y0);
  const double c2 = cw * cw + ch * ch;
  const double dx = pred.cx - target.cx;
  const double dy = pred.cy - target.cy;
  const double rho2 = dx * dx + dy * dy;

  constexpr double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const double dtheta = std::atan(target.w / target.h) - std::atan(pred.w / pred.h);
  const double v = k * dtheta * dtheta;
  const double s = 1.0 - iou_v + v;
  const double av = (v > 0.0 && s > 0.0) ? v * v / s : 0.0;

  const double loss = 1.0 - iou_v + rho2 / c2 + av;
  if (!grad) return loss;

  // Corner -> (cx, cy, w, h): x0 = cx - w/2, x1 = cx + w/2.
  auto to_params = [](const double d[4], double out[4]) {
    out[0] = d[0] + d[2];
    out[1] = d[1] + d[3];
    out[2] = 0.5 * (d[2] - d[0]);
    out[3] = 0.5 * (d[3] - d[1]);
  };
  double g_inter[4];
  to_params(d_inter, g_inter);

  double d_c2[4] = {0, 0, 0, 0};
  d_c2[0] = p.x0 < t.x0 ? -2.0 * cw : 0.0;
  d_c2[2] = p.x1 > t.x1 ? 2.0 * cw : 0.0;
  d_c2[1] = p.y0 < t.y0 ? -2.0 * ch : 0.0;
  d_c2[3] = p.y1 > t.y1 ? 2.0 * ch : 0.0;
  double g_c2[4];
  to_params(d_c2, g_c2);

  const double g_area[4] = {0.0, 0.0, pred.h, pred.w};
  const double g_rho2[4] = {2.0 * dx, 2.0 * dy, 0.0, 0.0};
  const double r2 = pred.w * pred.w + pred.h * pred.h;
  // d v = -2 k dtheta d(atan(w/h))
  const double g_v[4] = {0.0, 0.0, -2.0 * k * dtheta * (pred.h / r2), -2.0 * k * dtheta * (-pred.w / r2)};

  double g[4];
  for (int i = 0; i < 4; ++i) {
    const double d_uni = g_area[i] - g_inter[i];
    const double d_iou = (g_inter[i] * uni - inter * d_uni) / (uni * uni);
    const double d_dist = g_rho2[i] / c2 - rho2 * g_c2[i] / (c2 * c2);
    double d_av = 0.0;
    if (v > 0.0 && s > 0.0) {
      const double d_s = -d_iou + g_v[i];
      d_av = (2.0 * v * g_v[i] * s - v * v * d_s) / (s * s);
    }
    g[i] = -d_iou + d_dist + d_av;
  }
  *grad = {g[0], g[1], g[2], g[3]};
  return loss;
}

double weighted_total(const LossComponents& c, const LossWeights& w) {
  return w.obj * c.obj + w.cls * c.cls + w.loc * c.loc + w.aff * c.aff;
}

LossResult total_loss(const HeadOutputs& out, std::span<const TargetAssignment> targets,
                      const DetectorConfig& cfg, const LossWeights& weights, bool want_grad) {
  if (static_cast<int>(targets.size()) != out.batch) {
    throw ValidationError("loss: one target assignment per batch item required");
  }
  for (const auto& t : targets) {
    if (t.grid != out.grid || t.cells.size() != static_cast<std::size_t>(out.grid) * out.grid) {
      throw ValidationError("loss: target grid does not match outputs");
    }
  }
  LossResult r;
  if (want_grad) r.grad = HeadOutputs(out.batch, out.grid, out.num_classes, out.num_datasets);

  std::size_t positives = 0;
  for (const auto& t : targets) positives += t.num_positive();
  r.num_positive = positives;

  const double n_cells = static_cast<double>(out.cells());
  const double n_cls = static_cast<double>(positives * static_cast<std::size_t>(out.num_classes));
  const double n_aff = static_cast<double>(positives * static_cast<std::size_t>(out.num_datasets));
  const double n_pos = static_cast<double>(positives);
  const bool single_class = out.num_classes == 1;

  double sum_obj = 0.0, sum_cls = 0.0, sum_loc = 0.0, sum_aff = 0.0;
  for (int b = 0; b < out.batch; ++b) {
    const auto& ta = targets[static_cast<std::size_t>(b)];
    for (int gy = 0; gy < out.grid; ++gy) {
      for (int gx = 0; gx < out.grid; ++gx) {
        const std::size_t c = out.cell(b, gy, gx);
        const CellTarget& ct = ta.cells[static_cast<std::size_t>(gy) * out.grid + gx];
        const auto o = bce_term(out.obj[c], ct.positive ? 1.0 : 0.0);
        sum_obj += o.value;
        if (want_grad) r.grad.obj[c] = weights.obj * o.dlogit / n_cells;
        if (!ct.positive) continue;

        const auto cls = out.cls_at(c);
        for (int k = 0; k < out.num_classes; ++k) {
          const double y = k == ct.target_class ? 1.0 : 0.0;
          const auto term = single_class ? bce_term(cls[k], y)
                                         : focal_term(cls[k], y, cfg.focal_gamma, cfg.focal_alpha);
          sum_cls += term.value;
          if (want_grad) r.grad.cls_at(c)[k] = weights.cls * term.dlogit / n_cls;
        }

        const auto aff = out.aff_at(c);
        for (int k = 0; k < out.num_datasets; ++k) {
          const double y = k == ct.target_dataset ? 1.0 : 0.0;
          const auto term = focal_term(aff[k], y, cfg.focal_gamma, cfg.focal_alpha);
          sum_aff += term.value;
          if (want_grad) r.grad.aff_at(c)[k] = weights.aff * term.dlogit / n_aff;
        }

        BoxJacobian jac;
        const Box pred = decode_box(out.box_at(c), gx, gy, cfg.grid_stride, &jac);
        BoxGradient bg;
        sum_loc += ciou_loss(pred, ct.target_box, want_grad ? &bg : nullptr);
        if (want_grad) {
          const double s = weights.loc / n_pos;
          auto g = r.grad.box_at(c);
          g[0] = s * bg.cx * jac.dcx;
          g[1] = s * bg.cy * jac.dcy;
          g[2] = s * bg.w * jac.dw;
          g[3] = s * bg.h * jac.dh;
        }
      }
    }
  }
  r.components.obj = sum_obj / n_cells;
  if (positives > 0) {
    r.components.cls = sum_cls / n_cls;
    r.components.loc = sum_loc / n_pos;
    r.components.aff = sum_aff / n_aff;
  }
  r.total = weighted_total(r.components, weights);
  return r;
}

}  // namespace affdet
