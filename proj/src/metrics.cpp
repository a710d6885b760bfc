#include "esfpnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace esfp {

namespace {

double matlab_round(double v) { return std::round(v); }  // half away from zero

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double x = 0;
  for (double v : values) x += v;
  x /= double(values.size());
  const double sigma = sample_std(values);
  return 2.0 * x / (x * x + 1.0 + sigma + kMatlabEps);
}

double s_object(const ProbMap& prob, const Mask& gt) {
  std::vector<double> fg, bg;
  for (Index y = 0; y < gt.rows(); ++y)
    for (Index x = 0; x < gt.cols(); ++x) {
      if (gt(y, x))
        fg.push_back(prob(y, x));
      else
        bg.push_back(1.0 - prob(y, x));
    }
  const double u = double(fg.size()) / double(gt.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double region_ssim(const Eigen::Ref<const ProbMap>& pred, const Eigen::Ref<const ProbMap>& gt) {
  const double N = double(pred.size());
  if (N == 0) return 0.0;
  const double x = pred.mean(), y = gt.mean();
  const double sigma_x2 = (pred - x).square().sum() / (N - 1 + kMatlabEps);
  const double sigma_y2 = (gt - y).square().sum() / (N - 1 + kMatlabEps);
  const double sigma_xy = ((pred - x) * (gt - y)).sum() / (N - 1 + kMatlabEps);
  const double a = 4 * x * y * sigma_xy;
  const double b = (x * x + y * y) * (sigma_x2 + sigma_y2);
  if (a != 0) return a / (b + kMatlabEps);
  if (b == 0) return 1.0;
  return 0.0;
}

double s_region(const ProbMap& prob, const Mask& gt) {
  const Index rows = gt.rows(), cols = gt.cols();
  const ProbMap g = gt.cast<double>();
  const double total = g.sum();
  Index X, Y;  // 1-based centroid: first X columns / Y rows form the top-left block
  if (total == 0) {
    X = Index(matlab_round(double(cols) / 2));
    Y = Index(matlab_round(double(rows) / 2));
  } else {
    double sx = 0, sy = 0;
    const Eigen::ArrayXd col_sum = g.colwise().sum().transpose();
    const Eigen::ArrayXd row_sum = g.rowwise().sum();
    for (Index i = 0; i < cols; ++i) sx += col_sum[i] * double(i + 1);
    for (Index j = 0; j < rows; ++j) sy += row_sum[j] * double(j + 1);
    X = Index(matlab_round(sx / total));
    Y = Index(matlab_round(sy / total));
  }
  const double area = double(rows * cols);
  const double w1 = double(X * Y) / area;
  const double w2 = double((cols - X) * Y) / area;
  const double w3 = double(X * (rows - Y)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const double q1 = region_ssim(prob.block(0, 0, Y, X), g.block(0, 0, Y, X));
  const double q2 = region_ssim(prob.block(0, X, Y, cols - X), g.block(0, X, Y, cols - X));
  const double q3 = region_ssim(prob.block(Y, 0, rows - Y, X), g.block(Y, 0, rows - Y, X));
  const double q4 =
      region_ssim(prob.block(Y, X, rows - Y, cols - X), g.block(Y, X, rows - Y, cols - X));
  return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
}

/// Enhanced-alignment sum from confusion counts; each of the four
/// (prediction, truth) pixel classes has a single alignment value.
double enhanced_sum(Index n, Index gt_fg, Index tp, Index fp) {
  const Index pred_fg = tp + fp;
  if (gt_fg == 0) return double(n - pred_fg);
  if (gt_fg == n) return double(pred_fg);
  const double mu_fm = double(pred_fg) / double(n);
  const double mu_gt = double(gt_fg) / double(n);
  auto value = [&](double fm, double g) {
    const double a = g - mu_gt, b = fm - mu_fm;
    const double align = 2.0 * a * b / (a * a + b * b + kMatlabEps);
    return (align + 1.0) * (align + 1.0) / 4.0;
  };
  const Index fn = gt_fg - tp;
  const Index tn = n - gt_fg - fp;
  return double(tp) * value(1, 1) + double(fp) * value(1, 0) + double(fn) * value(0, 1) +
         double(tn) * value(0, 0);
}

}  // namespace

double s_measure(const ProbMap& prob, const Mask& gt, double alpha) {
  detail::require_same_extent(prob, gt, "s_measure");
  const double y = gt.cast<double>().mean();
  double q;
  if (y == 0) {
    q = 1.0 - prob.mean();
  } else if (y == 1) {
    q = prob.mean();
  } else {
    q = alpha * s_object(prob, gt) + (1.0 - alpha) * s_region(prob, gt);
  }
  return std::max(q, 0.0);  // the reference clamps at 0 only; q <= 1 holds analytically
}

double e_measure(const Mask& foreground, const Mask& gt) {
  detail::require_same_extent(foreground, gt, "e_measure");
  const ProbMap fm = foreground.cast<double>();
  const ProbMap g = gt.cast<double>();
  const double n = double(g.size());
  ProbMap enhanced;
  if (g.sum() == 0) {
    enhanced = 1.0 - fm;
  } else if (g.sum() == n) {
    enhanced = fm;
  } else {
    const ProbMap a = g - g.mean();
    const ProbMap b = fm - fm.mean();
    const ProbMap align = 2.0 * a * b / (a * a + b * b + kMatlabEps);
    enhanced = (align + 1.0).square() / 4.0;
  }
  return enhanced.sum() / (n - 1 + kMatlabEps);
}

EmeasureCurve e_measure_curve(const ProbMap& prob, const Mask& gt) {
  detail::require_same_extent(prob, gt, "e_measure_max");
  std::vector<double> fg, bg;
  for (Index i = 0; i < prob.size(); ++i) (gt.data()[i] ? fg : bg).push_back(prob.data()[i]);
  std::sort(fg.begin(), fg.end());
  std::sort(bg.begin(), bg.end());
  const Index n = prob.size(), gt_fg = Index(fg.size());
  auto above = [](const std::vector<double>& v, double t) {
    return Index(v.end() - std::upper_bound(v.begin(), v.end(), t));
  };
  EmeasureCurve c;
  c.max = -1;
  for (int k = 0; k < kEmeasureThresholds; ++k) {
    const double t = c.threshold(k);
    const double s = enhanced_sum(n, gt_fg, above(fg, t), above(bg, t)) / (double(n) - 1 + kMatlabEps);
    c.scores[std::size_t(k)] = s;
    if (s > c.max) {
      c.max = s;
      c.argmax = k;
    }
  }
  return c;
}

const char* to_string(FrameLabel label) {
  return label == FrameLabel::lesion ? "lesion" : "normal";
}

ImageMetrics evaluate_image(const std::string& id, const ProbMap& prob, const Mask& gt,
                            const MetricsConfig& cfg) {
  detail::require_same_extent(prob, gt, "evaluate_image");
  const Mask pred = binarize(prob, cfg.threshold);
  ImageMetrics m;
  m.id = id;
  m.dice = dice(pred, gt);
  m.iou = iou(pred, gt);
  m.mae = mae(prob, gt);
  m.s_alpha = s_measure(prob, gt, cfg.alpha);
  m.e_phi = e_measure_max(prob, gt);
  m.gt_lesion = gt.any();
  m.pred_lesion = classify_frame(pred, cfg.min_area_fraction, cfg.region) == FrameLabel::lesion;
  return m;
}

MetricsReport aggregate(std::vector<ImageMetrics> images) {
  MetricsReport r;
  r.images = std::move(images);
  const double n = double(r.images.size());
  for (const auto& m : r.images) {
    r.m_dice += m.dice;
    r.m_iou += m.iou;
    r.mae += m.mae;
    r.s_alpha += m.s_alpha;
    r.e_phi_max += m.e_phi;
    if (m.gt_lesion) {
      ++r.lesion_frames;
      r.m_dice_lesion += m.dice;
      r.m_iou_lesion += m.iou;
      if (!m.pred_lesion) ++r.fn_frames;
    } else {
      ++r.normal_frames;
      if (m.pred_lesion) ++r.fp_frames;
    }
  }
  if (n > 0) {
    r.m_dice /= n;
    r.m_iou /= n;
    r.mae /= n;
    r.s_alpha /= n;
    r.e_phi_max /= n;
  }
  if (r.lesion_frames > 0) {
    r.m_dice_lesion /= double(r.lesion_frames);
    r.m_iou_lesion /= double(r.lesion_frames);
  }
  return r;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_report(std::ostream& out, const MetricsReport& r) {
  out << "columns\tid\tdice\tiou\tmae\ts_alpha\te_phi\tgt_label\tpred_label\n";
  for (const auto& m : r.images)
    out << "image\t" << m.id << '\t' << num(m.dice) << '\t' << num(m.iou) << '\t' << num(m.mae)
        << '\t' << num(m.s_alpha) << '\t' << num(m.e_phi) << '\t'
        << (m.gt_lesion ? "lesion" : "normal") << '\t' << (m.pred_lesion ? "lesion" : "normal")
        << '\n';
  out << "mean\tm_dice\t" << num(r.m_dice) << '\n'
      << "mean\tm_iou\t" << num(r.m_iou) << '\n'
      << "mean\ts_alpha\t" << num(r.s_alpha) << '\n'
      << "mean\te_phi_max\t" << num(r.e_phi_max) << '\n'
      << "mean\tmae\t" << num(r.mae) << '\n'
      << "mean\tm_dice_lesion\t" << num(r.m_dice_lesion) << '\n'
      << "mean\tm_iou_lesion\t" << num(r.m_iou_lesion) << '\n'
      << "count\tlesion_frames\t" << r.lesion_frames << '\n'
      << "count\tnormal_frames\t" << r.normal_frames << '\n'
      << "count\tfn_frames\t" << r.fn_frames << '\n'
      << "count\tfp_frames\t" << r.fp_frames << '\n';
}

MetricsReport read_report(std::istream& in) {
  std::vector<ImageMetrics> images;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("image\t", 0) != 0) continue;
    std::istringstream ss(line);
    std::string tag, gt, pred;
    ImageMetrics m;
    std::getline(ss, tag, '\t');
    std::getline(ss, m.id, '\t');
    std::string field;
    double* dst[] = {&m.dice, &m.iou, &m.mae, &m.s_alpha, &m.e_phi};
    for (double* d : dst) {
      if (!std::getline(ss, field, '\t')) throw std::runtime_error("short report line: " + line);
      *d = std::stod(field);
    }
    std::getline(ss, gt, '\t');
    std::getline(ss, pred, '\t');
    m.gt_lesion = gt == "lesion";
    m.pred_lesion = pred == "lesion";
    images.push_back(std::move(m));
  }
  return aggregate(std::move(images));
}

std::string format_report_table(const MetricsReport& r, const std::string& title) {
  std::ostringstream out;
  if (!title.empty()) out << title << '\n';
  out << std::left << std::setw(24) << "image" << std::right << std::setw(8) << "dice"
      << std::setw(8) << "iou" << std::setw(8) << "mae" << std::setw(8) << "S_a" << std::setw(8)
      << "E_max" << "  frame\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& m : r.images)
    out << std::left << std::setw(24) << m.id << std::right << std::setw(8) << m.dice
        << std::setw(8) << m.iou << std::setw(8) << m.mae << std::setw(8) << m.s_alpha
        << std::setw(8) << m.e_phi << "  " << (m.gt_lesion ? "L" : "N") << "->"
        << (m.pred_lesion ? "L" : "N") << '\n';
  out << std::left << std::setw(24) << "mean" << std::right << std::setw(8) << r.m_dice
      << std::setw(8) << r.m_iou << std::setw(8) << r.mae << std::setw(8) << r.s_alpha
      << std::setw(8) << r.e_phi_max << '\n';
  out << "mDice(lesion frames) " << r.m_dice_lesion << "  mIoU(lesion frames) " << r.m_iou_lesion
      << "  FN " << r.fn_frames << "  FP " << r.fp_frames << '\n';
  return out.str();
}

}  // namespace esfp
