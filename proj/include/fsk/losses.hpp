#pragma once

// Training losses: mean L1, binary focal loss, soft IoU labels, and the
// unit-weight total. Each loss has a closed-form gradient used by the
// analytic backward pass.

#include "fsk/core.hpp"

#include <algorithm>
#include <cmath>

namespace fsk::losses {

struct LossBreakdown {
  double sem = 0, vote = 0, reg = 0, cls = 0, res = 0, iou = 0, total = 0;
};

// Mean absolute error over all elements; 0 on empty input (a masked
// selection with no survivors contributes nothing).
inline double l1_loss(const Matd& pred, const Matd& target) {
  detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(),
                  "l1_loss: shape mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - target).array().abs().mean();
}

// d(l1)/d(pred); sign convention sign(0) = 0.
inline Matd l1_loss_grad(const Matd& pred, const Matd& target) {
  Matd g = Matd::Zero(pred.rows(), pred.cols());
  if (pred.size() == 0) return g;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      const double d = pred(i, j) - target(i, j);
      g(i, j) = d > 0 ? inv : (d < 0 ? -inv : 0.0);
    }
  return g;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kProbClamp = 1e-7;

// Binary focal loss on logits, mean reduction. labels in {0,1}.
// gamma = 0 reduces to alpha-weighted binary cross-entropy. The predicted
// probability is clamped to [1e-7, 1 - 1e-7] before the log.
inline double focal_loss(const Vecd& logits, const Vecd& labels, double alpha = 0.25,
                         double gamma = 2.0) {
  detail::require(logits.size() == labels.size(), "focal_loss: size mismatch");
  if (logits.size() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(logits(i));
    const bool pos = labels(i) > 0.5;
    const double pt = std::clamp(pos ? p : 1.0 - p, kProbClamp, 1.0 - kProbClamp);
    const double at = pos ? alpha : 1.0 - alpha;
    acc += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return acc / static_cast<double>(logits.size());
}

// d(focal)/d(logits). Differentiates the clamped expression, so the
// gradient is exactly zero in the clamped (saturated) region, matching
// finite differences of focal_loss itself.
inline Vecd focal_loss_grad(const Vecd& logits, const Vecd& labels, double alpha = 0.25,
                            double gamma = 2.0) {
  Vecd g = Vecd::Zero(logits.size());
  if (logits.size() == 0) return g;
  const double inv = 1.0 / static_cast<double>(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(logits(i));
    const bool pos = labels(i) > 0.5;
    const double pt_raw = pos ? p : 1.0 - p;
    if (pt_raw < kProbClamp || pt_raw > 1.0 - kProbClamp) continue;  // clamp region
    const double pt = pt_raw;
    const double at = pos ? alpha : 1.0 - alpha;
    // dL/dpt = -at * [ -gamma (1-pt)^(gamma-1) log pt + (1-pt)^gamma / pt ]
    const double one_m = 1.0 - pt;
    const double dl_dpt =
        -at * (-(gamma > 0 ? gamma * std::pow(one_m, gamma - 1.0) : 0.0) * std::log(pt) +
               std::pow(one_m, gamma) / pt);
    // dpt/dlogit = p(1-p) for positive, -p(1-p) for negative.
    const double dpt = (pos ? 1.0 : -1.0) * p * (1.0 - p);
    g(i) = inv * dl_dpt * dpt;
  }
  return g;
}

// Soft classification target from box overlap: q = min(1, max(0, 2*IoU - 0.5)).
inline double soft_iou_label(double iou) {
  return std::min(1.0, std::max(0.0, 2.0 * iou - 0.5));
}

// Binary cross-entropy on logits against soft targets, mean reduction.
// Numerically stable form: log(1+e^-|x|) + max(x,0) - x*q.
inline double bce_with_logits(const Vecd& logits, const Vecd& targets) {
  detail::require(logits.size() == targets.size(), "bce_with_logits: size mismatch");
  if (logits.size() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double x = logits(i);
    acc += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * targets(i);
  }
  return acc / static_cast<double>(logits.size());
}

inline Vecd bce_with_logits_grad(const Vecd& logits, const Vecd& targets) {
  Vecd g(logits.size());
  if (logits.size() == 0) return g;
  const double inv = 1.0 / static_cast<double>(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    g(i) = inv * (sigmoid(logits(i)) - targets(i));
  return g;
}

// Unit-weight sum of the six components.
inline LossBreakdown total_loss(double sem, double vote, double reg, double cls, double res,
                                double iou) {
  for (double v : {sem, vote, reg, cls, res, iou})
    detail::require(std::isfinite(v), "total_loss: non-finite component");
  LossBreakdown b;
  b.sem = sem;
  b.vote = vote;
  b.reg = reg;
  b.cls = cls;
  b.res = res;
  b.iou = iou;
  b.total = sem + vote + reg + cls + res + iou;
  return b;
}

}  // namespace fsk::losses
