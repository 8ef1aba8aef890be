#pragma once

#include <span>

#include "affdet/box.hpp"
#include "affdet/model.hpp"

namespace affdet {

// Per-element terms: value and derivative with respect to the logit.
struct LossTerm {
  double value = 0.0;
  double dlogit = 0.0;
};

// softplus(x) - y * x
LossTerm bce_term(double logit, double target);
// -alpha * (1 - p_t)^gamma * log(p_t), sigmoid per entry, target in {0, 1}.
LossTerm focal_term(double logit, double target, double gamma, double alpha);

// Mean over elements. When grad is non-empty it receives d(mean)/d(logit).
double bce_loss(std::span<const double> logits, std::span<const double> targets,
                std::span<double> grad = {});
double focal_loss(std::span<const double> logits, std::span<const double> targets, double gamma,
                  double alpha, std::span<double> grad = {});

struct BoxGradient {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// 1 - IoU + rho^2 / c^2 + alpha * v, with the full derivative (alpha is not
// detached). Throws ValidationError for a degenerate target box.
double ciou_loss(const Box& pred, const Box& target, BoxGradient* grad = nullptr);

struct LossComponents {
  double obj = 0.0;
  double cls = 0.0;
  double loc = 0.0;
  double aff = 0.0;
};

double weighted_total(const LossComponents& c, const LossWeights& w);

struct LossResult {
  double total = 0.0;
  LossComponents components;
  HeadOutputs grad;  // d total / d outputs (empty unless requested)
  std::size_t num_positive = 0;
};

// L = w_obj L_obj + w_cls L_cls + w_loc L_loc + w_aff L_aff.
// L_obj: mean BCE over every cell. L_cls, L_loc, L_aff: positive cells only
// (zero when there are none). L_cls is BCE for one class, focal otherwise;
// L_aff is focal over the dataset pool.
LossResult total_loss(const HeadOutputs& outputs, std::span<const TargetAssignment> targets,
                      const DetectorConfig& cfg, const LossWeights& weights, bool want_grad = true);

inline LossResult total_loss(const HeadOutputs& outputs, std::span<const TargetAssignment> targets,
                             const DetectorConfig& cfg, bool want_grad = true) {
  return total_loss(outputs, targets, cfg, cfg.loss_weights, want_grad);
}

}  // namespace affdet
