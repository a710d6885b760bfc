#pragma once

// Frame-stream segmentation: read -> preprocess -> infer -> postprocess/sink,
// either one frame at a time or as a four-stage pipeline joined by bounded
// queues. Both modes run the same per-stage functions, so their masks are
// bitwise identical and results always leave in input order.

#include "esfpnet/data.hpp"
#include "esfpnet/metrics.hpp"
#include "esfpnet/trainer.hpp"

#include <opencv2/core.hpp>

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace esfp {

// ---------------------------------------------------------------------------
// Sources and sinks.

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  /// Next frame as RGB 8-bit. Returns false once exhausted; returns true with
  /// an empty `rgb` when a frame exists but cannot be decoded.
  virtual bool read(cv::Mat& rgb) = 0;
};

/// Image files of a directory in lexicographic order.
class DirectorySource : public FrameSource {
 public:
  explicit DirectorySource(const std::filesystem::path& dir);
  bool read(cv::Mat& rgb) override;
  std::size_t size() const { return files_.size(); }

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t next_ = 0;
};

class VideoSource : public FrameSource {
 public:
  explicit VideoSource(const std::filesystem::path& file);
  ~VideoSource() override;
  bool read(cv::Mat& rgb) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Deterministic synthetic frames; frame i depends only on (seed, i), or on
/// (seed, 0) for every frame when `repeat_first` is set.
class SyntheticSource : public FrameSource {
 public:
  SyntheticSource(std::size_t frames, int height, int width, std::uint64_t seed = 0,
                  bool repeat_first = false);
  bool read(cv::Mat& rgb) override;

 private:
  std::size_t frames_, next_ = 0;
  int height_, width_;
  std::uint64_t seed_;
  bool repeat_first_;
  cv::Mat first_;
};

/// Picks a directory or video source from the path.
std::unique_ptr<FrameSource> open_source(const std::filesystem::path& path);

struct FrameResult {
  long index = 0;          // position among decoded frames
  cv::Mat mask;            // source resolution, CV_8UC1 in {0, 1}
  bool lesion = false;
  double read_ms = 0, preprocess_ms = 0, inference_ms = 0, postprocess_ms = 0;
  double total_ms = 0;     // read start to postprocess end, queueing included
};

class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual bool wants_overlay() const { return true; }
  /// `overlay` is empty when wants_overlay() is false.
  virtual void write(const FrameResult& r, const cv::Mat& overlay_rgb) = 0;
};

/// Writes overlay_NNNNNN.png and/or mask_NNNNNN.png (mask scaled to 0/255).
class FileSink : public FrameSink {
 public:
  FileSink(const std::filesystem::path& dir, bool overlays = true, bool masks = true);
  bool wants_overlay() const override { return overlays_; }
  void write(const FrameResult& r, const cv::Mat& overlay_rgb) override;

 private:
  std::filesystem::path dir_;
  bool overlays_, masks_;
};

class NullSink : public FrameSink {
 public:
  bool wants_overlay() const override { return false; }
  void write(const FrameResult&, const cv::Mat&) override {}
};

// ---------------------------------------------------------------------------

struct StreamConfig {
  int input_size = 352;
  double threshold = kBinarizeThreshold;
  double overlay_alpha = 0.4;
  bool pipelined = true;
  std::size_t queue_capacity = 4;
  double min_area_fraction = 0.0;
  ScanRegion region = ScanRegion::full_frame;
};

/// Lesion fill blended at `alpha` plus a one-pixel contour.
cv::Mat render_overlay(const cv::Mat& rgb, const cv::Mat& mask, double alpha);

/// Stages of process_frame, exposed for the pipeline.
Tensor<float> preprocess_frame(const Model& model, const cv::Mat& rgb, const StreamConfig& cfg);
Tensor<float> infer_frame(const Model& model, const Tensor<float>& input);
void postprocess_frame(const Tensor<float>& logits, int height, int width, const StreamConfig& cfg,
                       FrameResult& r);

/// resize -> normalise -> forward -> sigmoid -> threshold -> resize the
/// mask to the frame resolution -> classify_frame.
FrameResult process_frame(const Model& model, const cv::Mat& rgb, const StreamConfig& cfg);

struct ThroughputReport {
  std::string mode;
  std::size_t frames = 0;
  std::size_t skipped = 0;  // decode failures
  double wall_seconds = 0;
  double mean_fps = 0;      // frames / wall_seconds, 0 for an empty run
  double p50_ms = 0, p95_ms = 0;  // per-frame total latency
  double read_ms = 0, preprocess_ms = 0, inference_ms = 0, postprocess_ms = 0;  // means
  std::size_t lesion_frames = 0;

  std::string format() const;      // human-readable summary
  void write(std::ostream& out) const;  // "key<TAB>value" lines
};

ThroughputReport run_stream(FrameSource& source, const Model& model, FrameSink& sink,
                            const StreamConfig& cfg);

// ---------------------------------------------------------------------------

/// Fixed-capacity blocking queue; push blocks while full, pop blocks while
/// empty until closed.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

  void push(T v) {
    std::unique_lock lock(m_);
    not_full_.wait(lock, [&] { return q_.size() < capacity_; });
    q_.push_back(std::move(v));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(m_);
    not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard lock(m_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> q_;
  bool closed_ = false;
  std::mutex m_;
  std::condition_variable not_full_, not_empty_;
};

}  // namespace esfp
