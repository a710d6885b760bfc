#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "esfpnet/stream.hpp"

#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <sstream>
#include <thread>

using namespace esfp;
namespace fs = std::filesystem;

namespace {

struct CollectSink : FrameSink {
  bool overlays = false;
  std::vector<FrameResult> results;
  bool wants_overlay() const override { return overlays; }
  void write(const FrameResult& r, const cv::Mat& overlay) override {
    if (overlays) CHECK(overlay.size() == r.mask.size());
    results.push_back(r);
  }
};

struct ThrowingSource : FrameSource {
  int left;
  explicit ThrowingSource(int n) : left(n) {}
  bool read(cv::Mat& rgb) override {
    if (left-- == 0) throw std::runtime_error("camera unplugged");
    rgb = cv::Mat(40, 40, CV_8UC3, cv::Scalar(90, 60, 30));
    return true;
  }
};

struct GappySource : FrameSource {
  int i = 0;
  bool read(cv::Mat& rgb) override {
    if (i >= 6) return false;
    rgb = (i++ % 3 == 1) ? cv::Mat() : cv::Mat(36, 52, CV_8UC3, cv::Scalar(120, 50, 40));
    return true;
  }
};

StreamConfig small(bool pipelined) {
  StreamConfig c;
  c.input_size = 64;
  c.pipelined = pipelined;
  c.queue_capacity = 2;
  return c;
}

const Model& model() {
  static const Model m = build<float>("B0", {1});
  return m;
}

bool same_pixels(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0;
}

}  // namespace

TEST_CASE("empty source") {
  for (bool p : {false, true}) {
    SyntheticSource src(0, 64, 64);
    CollectSink sink;
    const auto rep = run_stream(src, model(), sink, small(p));
    CHECK(rep.frames == 0);
    CHECK(rep.mean_fps == 0.0);
    CHECK(sink.results.empty());
  }
}

TEST_CASE("results arrive in order at frame resolution") {
  SyntheticSource src(12, 48, 80, 3);
  CollectSink sink;
  sink.overlays = true;
  const auto rep = run_stream(src, model(), sink, small(true));
  REQUIRE(sink.results.size() == 12);
  CHECK(rep.frames == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& r = sink.results[i];
    CHECK(r.index == long(i));
    CHECK(r.mask.rows == 48);
    CHECK(r.mask.cols == 80);
    CHECK(r.read_ms + r.preprocess_ms + r.inference_ms + r.postprocess_ms <= r.total_ms + 1e-9);
  }
}

TEST_CASE("identical frames give identical masks") {
  SyntheticSource src(5, 64, 64, 9, true);
  CollectSink sink;
  run_stream(src, model(), sink, small(true));
  REQUIRE(sink.results.size() == 5);
  for (const auto& r : sink.results) CHECK(same_pixels(r.mask, sink.results[0].mask));
}

TEST_CASE("pipelined and sequential masks are bitwise identical") {
  CollectSink a, b;
  SyntheticSource s1(20, 64, 64, 4), s2(20, 64, 64, 4);
  run_stream(s1, model(), a, small(false));
  run_stream(s2, model(), b, small(true));
  REQUIRE(a.results.size() == b.results.size());
  for (std::size_t i = 0; i < a.results.size(); ++i) {
    CHECK(same_pixels(a.results[i].mask, b.results[i].mask));
    CHECK(a.results[i].lesion == b.results[i].lesion);
  }
}

TEST_CASE("undecodable frames are skipped") {
  for (bool p : {false, true}) {
    GappySource src;
    CollectSink sink;
    const auto rep = run_stream(src, model(), sink, small(p));
    CHECK(rep.frames == 4);
    CHECK(rep.skipped == 2);
    CHECK(sink.results.back().index == 3);
  }
}

TEST_CASE("source errors propagate without deadlock") {
  for (bool p : {false, true}) {
    ThrowingSource src(7);
    CollectSink sink;
    CHECK_THROWS_WITH(run_stream(src, model(), sink, small(p)), "camera unplugged");
  }
}

TEST_CASE("file sink and throughput report") {
  const fs::path dir = fs::temp_directory_path() / "esfpnet_test_stream_out";
  fs::remove_all(dir);
  FileSink sink(dir);
  SyntheticSource src(3, 64, 64);
  const auto rep = run_stream(src, model(), sink, small(true));
  CHECK(fs::exists(dir / "mask_000002.png"));
  CHECK(fs::exists(dir / "overlay_000000.png"));
  const cv::Mat m = cv::imread((dir / "mask_000000.png").string(), cv::IMREAD_UNCHANGED);
  CHECK(m.type() == CV_8UC1);
  std::ostringstream out;
  rep.write(out);
  CHECK(out.str().find("mean_fps\t") != std::string::npos);
  CHECK(out.str().find("mode\tpipelined") != std::string::npos);
  CHECK(!rep.format().empty());
}

TEST_CASE("directory source reads sorted image files") {
  const fs::path dir = fs::temp_directory_path() / "esfpnet_test_stream_dir";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const char* name : {"b.png", "a.png", "c.png"})
    cv::imwrite((dir / name).string(), cv::Mat(8, 8, CV_8UC3, cv::Scalar(name[0], 0, 0)));
  DirectorySource src(dir);
  CHECK(src.size() == 3);
  cv::Mat f;
  REQUIRE(src.read(f));
  CHECK(f.at<cv::Vec3b>(0, 0)[2] == 'a');  // stored BGR, returned RGB
  CHECK_THROWS_AS(open_source(dir / "missing"), ConfigError);
}

TEST_CASE("overlay keeps background pixels") {
  cv::Mat rgb(4, 4, CV_8UC3, cv::Scalar(10, 20, 30));
  cv::Mat mask = cv::Mat::zeros(4, 4, CV_8UC1);
  CHECK(same_pixels(render_overlay(rgb, mask, 0.4), rgb));
  mask.at<unsigned char>(1, 1) = 1;
  CHECK(render_overlay(rgb, mask, 0.4).at<cv::Vec3b>(1, 1) != rgb.at<cv::Vec3b>(1, 1));
}

TEST_CASE("bounded queue blocks and closes") {
  BoundedQueue<int> q(1);
  std::thread producer([&] {
    for (int i = 0; i < 100; ++i) q.push(i);
    q.close();
  });
  int expected = 0;
  while (auto v = q.pop()) CHECK(*v == expected++);
  producer.join();
  CHECK(expected == 100);
}
