#include "esfpnet/stream.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include <algorithm>
#include <chrono>
#include <exception>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace esfp {

using Clock = std::chrono::steady_clock;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

std::string numbered(const char* prefix, long i) {
  std::ostringstream s;
  s << prefix << std::setw(6) << std::setfill('0') << i << ".png";
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------

DirectorySource::DirectorySource(const fs::path& dir) {
  static const std::set<std::string> ext{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  if (!fs::is_directory(dir)) throw ConfigError("frame directory not found: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string x = e.path().extension().string();
    std::transform(x.begin(), x.end(), x.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext.count(x)) files_.push_back(e.path());
  }
  std::sort(files_.begin(), files_.end());
}

bool DirectorySource::read(cv::Mat& rgb) {
  if (next_ >= files_.size()) return false;
  const cv::Mat bgr = cv::imread(files_[next_++].string(), cv::IMREAD_COLOR);
  if (bgr.empty())
    rgb.release();
  else
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return true;
}

struct VideoSource::Impl {
  cv::VideoCapture cap;
};

VideoSource::VideoSource(const fs::path& file) : impl_(std::make_unique<Impl>()) {
  if (!impl_->cap.open(file.string())) throw ConfigError("cannot open video: " + file.string());
}

VideoSource::~VideoSource() = default;

bool VideoSource::read(cv::Mat& rgb) {
  if (!impl_->cap.grab()) return false;
  cv::Mat bgr;
  if (!impl_->cap.retrieve(bgr) || bgr.empty()) {
    rgb.release();
    return true;
  }
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return true;
}

SyntheticSource::SyntheticSource(std::size_t frames, int height, int width, std::uint64_t seed,
                                 bool repeat_first)
    : frames_(frames), height_(height), width_(width), seed_(seed), repeat_first_(repeat_first) {}

bool SyntheticSource::read(cv::Mat& rgb) {
  if (next_ >= frames_) return false;
  const std::size_t i = repeat_first_ ? 0 : next_;
  ++next_;
  if (repeat_first_ && !first_.empty()) {
    rgb = first_.clone();
    return true;
  }
  Rng rng(seed_ * 0x9E3779B97F4A7C15ULL + i);
  rgb = synthetic_sample(height_, width_, i % 3 != 2, rng).image;
  if (repeat_first_) first_ = rgb.clone();
  return true;
}

std::unique_ptr<FrameSource> open_source(const fs::path& path) {
  if (fs::is_directory(path)) return std::make_unique<DirectorySource>(path);
  if (fs::is_regular_file(path)) return std::make_unique<VideoSource>(path);
  throw ConfigError("source not found: " + path.string());
}

FileSink::FileSink(const fs::path& dir, bool overlays, bool masks)
    : dir_(dir), overlays_(overlays), masks_(masks) {
  fs::create_directories(dir_);
}

void FileSink::write(const FrameResult& r, const cv::Mat& overlay_rgb) {
  if (masks_) {
    cv::Mat m;
    r.mask.convertTo(m, CV_8U, 255);
    cv::imwrite((dir_ / numbered("mask_", r.index)).string(), m);
  }
  if (overlays_ && !overlay_rgb.empty()) {
    cv::Mat bgr;
    cv::cvtColor(overlay_rgb, bgr, cv::COLOR_RGB2BGR);
    cv::imwrite((dir_ / numbered("overlay_", r.index)).string(), bgr);
  }
}

// ---------------------------------------------------------------------------

cv::Mat render_overlay(const cv::Mat& rgb, const cv::Mat& mask, double alpha) {
  cv::Mat out = rgb.clone();
  const cv::Vec3b fill(255, 40, 40);
  for (int y = 0; y < out.rows; ++y) {
    const auto* m = mask.ptr<std::uint8_t>(y);
    auto* p = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < out.cols; ++x)
      if (m[x])
        for (int c = 0; c < 3; ++c)
          p[x][c] = cv::saturate_cast<std::uint8_t>((1 - alpha) * p[x][c] + alpha * fill[c]);
  }
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(mask, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
  cv::drawContours(out, contours, -1, cv::Scalar(255, 255, 0), 1);
  return out;
}

Tensor<float> preprocess_frame(const Model& model, const cv::Mat& rgb, const StreamConfig& cfg) {
  const PreprocessConfig pre = preprocess_config(model, cfg.input_size);
  Tensor<float> t(Shape{1, 3, pre.size, pre.size});
  preprocess_image_into(rgb, pre, t.sample(0));
  return t;
}

Tensor<float> infer_frame(const Model& model, const Tensor<float>& input) {
  return model.forward(input);
}

void postprocess_frame(const Tensor<float>& logits, int height, int width, const StreamConfig& cfg,
                       FrameResult& r) {
  const Tensor<float> full = logits.h() == height && logits.w() == width
                                 ? logits
                                 : resize_bilinear(logits, height, width);
  r.mask.create(height, width, CV_8UC1);
  const auto ch = full.channel(0, 0);
  for (int y = 0; y < height; ++y) {
    auto* row = r.mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < width; ++x) row[x] = double(sigmoid(ch(y, x))) > cfg.threshold ? 1 : 0;
  }
  const Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      m(r.mask.ptr<std::uint8_t>(), height, width);
  r.lesion = classify_frame(m != 0, cfg.min_area_fraction, cfg.region) == FrameLabel::lesion;
}

FrameResult process_frame(const Model& model, const cv::Mat& rgb, const StreamConfig& cfg) {
  FrameResult r;
  const auto t0 = Clock::now();
  const Tensor<float> input = preprocess_frame(model, rgb, cfg);
  const auto t1 = Clock::now();
  const Tensor<float> logits = infer_frame(model, input);
  const auto t2 = Clock::now();
  postprocess_frame(logits, rgb.rows, rgb.cols, cfg, r);
  const auto t3 = Clock::now();
  r.preprocess_ms = ms_between(t0, t1);
  r.inference_ms = ms_between(t1, t2);
  r.postprocess_ms = ms_between(t2, t3);
  r.total_ms = ms_between(t0, t3);
  return r;
}

// ---------------------------------------------------------------------------

std::string ThroughputReport::format() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "frames " << frames << " (" << skipped << " skipped, " << lesion_frames
      << " flagged lesion), mode " << mode << '\n'
      << "wall " << wall_seconds << " s, mean " << mean_fps << " FPS\n"
      << "latency p50 " << p50_ms << " ms, p95 " << p95_ms << " ms\n"
      << "stage means (ms): read " << read_ms << ", preprocess " << preprocess_ms
      << ", inference " << inference_ms << ", postprocess " << postprocess_ms << '\n';
  return out.str();
}

void ThroughputReport::write(std::ostream& out) const {
  out << std::setprecision(10) << "mode\t" << mode << "\nframes\t" << frames << "\nskipped\t"
      << skipped << "\nlesion_frames\t" << lesion_frames << "\nwall_seconds\t" << wall_seconds
      << "\nmean_fps\t" << mean_fps << "\np50_ms\t" << p50_ms << "\np95_ms\t" << p95_ms
      << "\nread_ms\t" << read_ms << "\npreprocess_ms\t" << preprocess_ms << "\ninference_ms\t"
      << inference_ms << "\npostprocess_ms\t" << postprocess_ms << '\n';
}

namespace {

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = std::size_t(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

struct Item {
  long index = 0;
  cv::Mat rgb;
  Tensor<float> tensor;
  Clock::time_point start;
  FrameResult result;
};

class Collector {
 public:
  Collector(FrameSink& sink, const StreamConfig& cfg) : sink_(sink), cfg_(cfg) {}

  void finish(Item& it) {
    const auto t0 = Clock::now();
    postprocess_frame(it.tensor, it.rgb.rows, it.rgb.cols, cfg_, it.result);
    const cv::Mat overlay =
        sink_.wants_overlay() ? render_overlay(it.rgb, it.result.mask, cfg_.overlay_alpha) : cv::Mat();
    const auto t1 = Clock::now();
    it.result.index = it.index;
    it.result.postprocess_ms = ms_between(t0, t1);
    it.result.total_ms = ms_between(it.start, t1);
    sink_.write(it.result, overlay);
    auto& r = it.result;
    totals_.push_back(r.total_ms);
    rep_.read_ms += r.read_ms;
    rep_.preprocess_ms += r.preprocess_ms;
    rep_.inference_ms += r.inference_ms;
    rep_.postprocess_ms += r.postprocess_ms;
    if (r.lesion) ++rep_.lesion_frames;
  }

  ThroughputReport report(std::size_t skipped, double wall, const char* mode) {
    rep_.mode = mode;
    rep_.frames = totals_.size();
    rep_.skipped = skipped;
    rep_.wall_seconds = wall;
    if (rep_.frames > 0) {
      const double n = double(rep_.frames);
      rep_.read_ms /= n;
      rep_.preprocess_ms /= n;
      rep_.inference_ms /= n;
      rep_.postprocess_ms /= n;
      rep_.mean_fps = wall > 0 ? n / wall : 0.0;
    }
    rep_.p50_ms = percentile(totals_, 0.50);
    rep_.p95_ms = percentile(totals_, 0.95);
    return rep_;
  }

 private:
  FrameSink& sink_;
  const StreamConfig& cfg_;
  ThroughputReport rep_;
  std::vector<double> totals_;
};

}  // namespace

ThroughputReport run_stream(FrameSource& source, const Model& model, FrameSink& sink,
                            const StreamConfig& cfg) {
  Collector collector(sink, cfg);
  std::size_t skipped = 0;
  const auto t_start = Clock::now();

  auto read_one = [&](Item& it) {  // false once the source is exhausted
    for (;;) {
      it.start = Clock::now();
      if (!source.read(it.rgb)) return false;
      if (!it.rgb.empty()) break;
      ++skipped;
    }
    it.result.read_ms = ms_between(it.start, Clock::now());
    return true;
  };
  auto preprocess = [&](Item& it) {
    const auto t0 = Clock::now();
    it.tensor = preprocess_frame(model, it.rgb, cfg);
    it.result.preprocess_ms = ms_between(t0, Clock::now());
  };
  auto infer = [&](Item& it) {
    const auto t0 = Clock::now();
    it.tensor = infer_frame(model, it.tensor);
    it.result.inference_ms = ms_between(t0, Clock::now());
  };

  if (!cfg.pipelined) {
    long index = 0;
    for (;;) {
      Item it;
      if (!read_one(it)) break;
      it.index = index++;
      preprocess(it);
      infer(it);
      collector.finish(it);
    }
    return collector.report(skipped, ms_between(t_start, Clock::now()) / 1e3, "sequential");
  }

  BoundedQueue<Item> q_read(cfg.queue_capacity), q_pre(cfg.queue_capacity),
      q_inf(cfg.queue_capacity);
  std::exception_ptr errors[3];

  // Each worker forwards items in arrival order. After a failure it keeps
  // draining its input so upstream stages never block on a full queue.
  auto stage = [](BoundedQueue<Item>& in, BoundedQueue<Item>& out, std::exception_ptr& err,
                  auto&& fn) {
    while (auto it = in.pop()) {
      if (err) continue;
      try {
        fn(*it);
        out.push(std::move(*it));
      } catch (...) {
        err = std::current_exception();
      }
    }
    out.close();
  };

  std::thread reader([&] {
    try {
      long index = 0;
      for (;;) {
        Item it;
        if (!read_one(it)) break;
        it.index = index++;
        q_read.push(std::move(it));
      }
    } catch (...) {
      errors[0] = std::current_exception();
    }
    q_read.close();
  });
  std::thread pre_thread([&] { stage(q_read, q_pre, errors[1], preprocess); });
  std::thread inf_thread([&] { stage(q_pre, q_inf, errors[2], infer); });

  std::exception_ptr sink_error;
  while (auto it = q_inf.pop()) {
    if (sink_error) continue;
    try {
      collector.finish(*it);
    } catch (...) {
      sink_error = std::current_exception();
    }
  }
  reader.join();
  pre_thread.join();
  inf_thread.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (sink_error) std::rethrow_exception(sink_error);
  return collector.report(skipped, ms_between(t_start, Clock::now()) / 1e3, "pipelined");
}

}  // namespace esfp
