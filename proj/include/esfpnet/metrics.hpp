#pragma once

// Evaluation battery: Dice, IoU, MAE, structure measure (S_alpha), enhanced
// alignment measure (E_phi, maximised over thresholds) and the whole-frame
// lesion/normal decision.
//
// S_alpha and E_phi follow the MATLAB evaluation code distributed with the
// polyp-segmentation benchmark (StructureMeasure.m, Enhancedmeasure.m):
//   * eps is MATLAB's 2.2204e-16;
//   * the foreground centroid is rounded half away from zero, 1-based;
//   * variances use the N - 1 normaliser;
//   * E_phi divides by (H*W - 1 + eps), so a perfect map scores H*W / (H*W - 1);
//   * E_phi^max scans the 256 thresholds k / 255 with strict "prob > t".
// One deliberate difference: a quadrant left empty by the centroid split
// contributes 0 instead of NaN (its area weight is 0 anyway).
// Prediction maps are used as given; no min-max rescaling is applied.

#include "esfpnet/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

namespace esfp {

using ProbMap = Eigen::ArrayXXd;                                   // H x W, values in [0, 1]
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;   // H x W

inline constexpr double kMatlabEps = 2.220446049250313e-16;
inline constexpr double kBinarizeThreshold = 0.5;
inline constexpr int kEmeasureThresholds = 256;

namespace detail {

template <typename A, typename B>
void require_same_extent(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                         const char* op) {
  require_dim("height", a.rows(), b.rows(), op);
  require_dim("width", a.cols(), b.cols(), op);
}

}  // namespace detail

/// Probability map -> mask, strict "p > threshold".
template <typename Derived>
Mask binarize(const Eigen::DenseBase<Derived>& prob, double threshold = kBinarizeThreshold) {
  return prob.derived().array() > threshold;
}

/// 2|P & G| / (|P| + |G|); 1 when both masks are empty.
template <typename P, typename G>
double dice(const Eigen::DenseBase<P>& pred, const Eigen::DenseBase<G>& gt) {
  detail::require_same_extent(pred, gt, "dice");
  const auto inter = (pred.derived().array() && gt.derived().array()).count();
  const auto total = pred.derived().array().count() + gt.derived().array().count();
  if (total == 0) return 1.0;
  return 2.0 * double(inter) / double(total);
}

/// |P & G| / |P | G|; 1 when both masks are empty.
template <typename P, typename G>
double iou(const Eigen::DenseBase<P>& pred, const Eigen::DenseBase<G>& gt) {
  detail::require_same_extent(pred, gt, "iou");
  const auto inter = (pred.derived().array() && gt.derived().array()).count();
  const auto uni = (pred.derived().array() || gt.derived().array()).count();
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

template <typename P, typename G>
double mae(const Eigen::DenseBase<P>& prob, const Eigen::DenseBase<G>& gt) {
  detail::require_same_extent(prob, gt, "mae");
  // Plain row-major accumulation, so the value does not depend on
  // vectorisation or storage order.
  const auto& p = prob.derived();
  const auto& g = gt.derived();
  double sum = 0.0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) sum += std::abs(double(p(y, x)) - double(g(y, x)));
  return sum / double(p.rows() * p.cols());
}

double s_measure(const ProbMap& prob, const Mask& gt, double alpha = 0.5);

/// Enhanced alignment of a binary foreground map.
double e_measure(const Mask& foreground, const Mask& gt);

struct EmeasureCurve {
  std::array<double, kEmeasureThresholds> scores{};  // scores[k] at threshold k / 255
  double max = 0.0;
  int argmax = 0;

  double threshold(int k) const { return double(k) / double(kEmeasureThresholds - 1); }
};

EmeasureCurve e_measure_curve(const ProbMap& prob, const Mask& gt);

inline double e_measure_max(const ProbMap& prob, const Mask& gt) {
  return e_measure_curve(prob, gt).max;
}

// ---------------------------------------------------------------------------
// Whole-frame classification.

enum class FrameLabel { normal, lesion };

const char* to_string(FrameLabel label);

enum class ScanRegion {
  full_frame,  // scan area = H * W
  circular,    // scan area = pi * (W / 2)^2, circular endoscope field of view
};

inline double scan_area(Index height, Index width, ScanRegion region) {
  if (region == ScanRegion::circular) return M_PI * (double(width) / 2.0) * (double(width) / 2.0);
  return double(height) * double(width);
}

/// Lesion iff predicted positive area >= min_area_fraction * scan area.
/// With the default fraction 0 any positive pixel flags a lesion, and an
/// empty mask is always normal.
template <typename Derived>
FrameLabel classify_frame(const Eigen::DenseBase<Derived>& pred, double min_area_fraction = 0.0,
                          ScanRegion region = ScanRegion::full_frame) {
  const auto area = pred.derived().array().count();
  if (area == 0) return FrameLabel::normal;
  const double threshold = min_area_fraction * scan_area(pred.rows(), pred.cols(), region);
  return double(area) >= threshold ? FrameLabel::lesion : FrameLabel::normal;
}

// ---------------------------------------------------------------------------
// Reports.

struct MetricsConfig {
  double threshold = kBinarizeThreshold;
  double min_area_fraction = 0.0;
  ScanRegion region = ScanRegion::full_frame;
  double alpha = 0.5;
};

struct ImageMetrics {
  std::string id;
  double dice = 0, iou = 0, mae = 0, s_alpha = 0, e_phi = 0;
  bool gt_lesion = false;
  bool pred_lesion = false;
};

/// Aggregates are arithmetic means of the per-image values. `*_lesion`
/// means restrict to images whose ground truth is non-empty.
struct MetricsReport {
  std::vector<ImageMetrics> images;
  double m_dice = 0, m_iou = 0, s_alpha = 0, e_phi_max = 0, mae = 0;
  double m_dice_lesion = 0, m_iou_lesion = 0;
  Index lesion_frames = 0, normal_frames = 0;
  Index fn_frames = 0, fp_frames = 0;
};

ImageMetrics evaluate_image(const std::string& id, const ProbMap& prob, const Mask& gt,
                            const MetricsConfig& cfg = {});

MetricsReport aggregate(std::vector<ImageMetrics> images);

/// Machine-readable form: one "image" line per image, then "mean" lines.
void write_report(std::ostream& out, const MetricsReport& report);
MetricsReport read_report(std::istream& in);

/// Aligned human-readable table.
std::string format_report_table(const MetricsReport& report, const std::string& title = "");

}  // namespace esfp
