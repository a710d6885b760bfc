#pragma once

// Weighted IoU + weighted BCE segmentation objective.
//
// Pixel weights emphasise boundaries: w = 1 + 5 |box31(gt) - gt|, where box31
// is the mean over the in-bounds part of a 31 x 31 window (windows are not
// zero-padded, so homogeneous masks give w = 1 everywhere, borders included).
// Both terms are computed per image and averaged over the batch:
//
//   bce_w = sum(w * bce(z, g)) / sum(w)
//   iou_w = 1 - (sum(w p g) + 1) / (sum(w (p + g - p g)) + 1),  p = sigmoid(z)

#include "esfpnet/layers.hpp"
#include "esfpnet/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace esfp {

inline constexpr Index kBoundaryWindow = 31;
inline constexpr double kBoundaryGain = 5.0;
inline constexpr double kIouSmooth = 1.0;

template <typename Scalar>
struct LossTerms {
  Scalar iou = 0;
  Scalar bce = 0;
  Scalar total = 0;
};

namespace detail {

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.array().isFinite().all())
    throw ValidationError(std::string(what) + " contains NaN or Inf");
}

template <typename Scalar>
void require_binary(const Tensor<Scalar>& gt) {
  if (!((gt.array() == Scalar(0)) || (gt.array() == Scalar(1))).all())
    throw ValidationError("ground-truth mask must contain only 0 and 1");
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  require_dim("batch", a.n(), b.n(), op);
  require_dim("channels", a.c(), b.c(), op);
  require_dim("height", a.h(), b.h(), op);
  require_dim("width", a.w(), b.w(), op);
}

/// log(1 + exp(z)) - g z, stable for any z.
template <typename Scalar>
Scalar bce_with_logits(Scalar z, Scalar g) {
  return std::max(z, Scalar(0)) - z * g + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

/// Boundary-emphasis weights for a binary mask tensor (any N, C).
template <typename Scalar>
Tensor<Scalar> pixel_weight_map(const Tensor<Scalar>& gt) {
  detail::require_finite(gt, "ground truth");
  detail::require_binary(gt);
  const Index H = gt.h(), W = gt.w(), r = kBoundaryWindow / 2;
  Tensor<Scalar> w(gt.shape());
  Eigen::ArrayXXd sat(H + 1, W + 1);  // summed-area table, sat(y, x) = sum over [0,y) x [0,x)
  for (Index b = 0; b < gt.n(); ++b)
    for (Index c = 0; c < gt.c(); ++c) {
      const auto g = gt.channel(b, c);
      sat.setZero();
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          sat(y + 1, x + 1) = double(g(y, x)) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);
      auto out = w.channel(b, c);
      for (Index y = 0; y < H; ++y) {
        const Index y0 = std::max<Index>(0, y - r), y1 = std::min<Index>(H, y + r + 1);
        for (Index x = 0; x < W; ++x) {
          const Index x0 = std::max<Index>(0, x - r), x1 = std::min<Index>(W, x + r + 1);
          const double sum = sat(y1, x1) - sat(y0, x1) - sat(y1, x0) + sat(y0, x0);
          const double mean = sum / double((y1 - y0) * (x1 - x0));
          out(y, x) = Scalar(1.0 + kBoundaryGain * std::abs(mean - double(g(y, x))));
        }
      }
    }
  return w;
}

/// Batch mean of per-image weighted BCE. Optionally accumulates
/// `scale * d(loss)/d(logits)` into `grad`.
template <typename Scalar>
Scalar weighted_bce(const Tensor<Scalar>& logits, const Tensor<Scalar>& gt,
                    const Tensor<Scalar>& w, Tensor<Scalar>* grad = nullptr,
                    Scalar scale = Scalar(1)) {
  detail::require_same_shape(logits, gt, "weighted_bce");
  detail::require_same_shape(logits, w, "weighted_bce");
  detail::require_finite(logits, "logits");
  const Index per = logits.c() * logits.plane();
  Scalar acc = 0;
  for (Index b = 0; b < logits.n(); ++b) {
    const Scalar* z = logits.sample(b);
    const Scalar* g = gt.sample(b);
    const Scalar* wt = w.sample(b);
    Scalar num = 0, den = 0;
    for (Index i = 0; i < per; ++i) {
      num += wt[i] * detail::bce_with_logits(z[i], g[i]);
      den += wt[i];
    }
    acc += num / den;
    if (grad) {
      Scalar* d = grad->sample(b);
      const Scalar k = scale / (den * Scalar(logits.n()));
      for (Index i = 0; i < per; ++i) d[i] += k * wt[i] * (sigmoid(z[i]) - g[i]);
    }
  }
  return acc / Scalar(logits.n());
}

/// Batch mean of per-image weighted soft IoU loss, in [0, 1].
template <typename Scalar>
Scalar weighted_iou(const Tensor<Scalar>& logits, const Tensor<Scalar>& gt,
                    const Tensor<Scalar>& w, Tensor<Scalar>* grad = nullptr,
                    Scalar scale = Scalar(1)) {
  detail::require_same_shape(logits, gt, "weighted_iou");
  detail::require_same_shape(logits, w, "weighted_iou");
  detail::require_finite(logits, "logits");
  const Index per = logits.c() * logits.plane();
  const Scalar eps = Scalar(kIouSmooth);
  Scalar acc = 0;
  std::vector<Scalar> p(static_cast<std::size_t>(per));
  for (Index b = 0; b < logits.n(); ++b) {
    const Scalar* z = logits.sample(b);
    const Scalar* g = gt.sample(b);
    const Scalar* wt = w.sample(b);
    Scalar inter = 0, uni = 0;
    for (Index i = 0; i < per; ++i) {
      const Scalar pi = sigmoid(z[i]);
      p[std::size_t(i)] = pi;
      inter += wt[i] * pi * g[i];
      uni += wt[i] * (pi + g[i] - pi * g[i]);
    }
    acc += Scalar(1) - (inter + eps) / (uni + eps);
    if (grad) {
      Scalar* d = grad->sample(b);
      const Scalar u1 = uni + eps, i1 = inter + eps;
      const Scalar k = scale / Scalar(logits.n());
      for (Index i = 0; i < per; ++i) {
        const Scalar pi = p[std::size_t(i)];
        const Scalar d_ratio = (wt[i] * g[i] * u1 - i1 * wt[i] * (Scalar(1) - g[i])) / (u1 * u1);
        d[i] += -k * d_ratio * pi * (Scalar(1) - pi);
      }
    }
  }
  return acc / Scalar(logits.n());
}

/// Combined objective with shared weights. When `grad` is non-null it
/// receives d(total)/d(logits).
template <typename Scalar>
LossTerms<Scalar> total_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& gt,
                             Tensor<Scalar>* grad = nullptr) {
  detail::require_same_shape(logits, gt, "total_loss");
  const Tensor<Scalar> w = pixel_weight_map(gt);
  if (grad) *grad = Tensor<Scalar>(logits.shape());
  LossTerms<Scalar> t;
  t.iou = weighted_iou(logits, gt, w, grad);
  t.bce = weighted_bce(logits, gt, w, grad);
  t.total = t.iou + t.bce;
  return t;
}

}  // namespace esfp
