// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Targets are the published Table 2 figures and the
// tolerances agreed for desk-scale verification.

#include "suites.hpp"
#include "training_suite.hpp"

#include "esfpnet/accounting.hpp"
#include "esfpnet/stream.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace esfp;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

/// Runs one criterion; `budget_s` <= 0 means no runtime limit.
void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream time;
  time.precision(3);
  time << secs << " s";
  if (budget_s > 0) {
    time << " of " << budget_s << " s budget";
    if (secs > budget_s) o.pass = false;
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %s: %s (%s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
              time.str().c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }

struct PaperRow {
  const char* id;
  double params_m, gflops;
};
constexpr PaperRow kTable2[] = {{"B0", 3.5, 1.4}, {"B2", 25.0, 9.3}, {"B4", 61.7, 23.9}};

}  // namespace

int main() {
  std::printf("ESFPNet acceptance suite\n");

  criterion("parameter counts within 10% of 3.5M / 25.0M / 61.7M", 60, [] {
    Outcome o{true, ""};
    for (const auto& row : kTable2) {
      const double m = double(count_parameters(build<float>(row.id))) / 1e6;
      const bool ok = within(m, row.params_m, 0.10);
      o.pass = o.pass && ok;
      o.detail += std::string(row.id) + " " + fmt("%.2fM", m) + (ok ? "" : " (out)") + "; ";
    }
    return o;
  });

  criterion("GFLOPs at (1,3,352,352) within 20% of 1.4 / 9.3 / 23.9", 60, [] {
    Outcome o{true, ""};
    for (const auto& row : kTable2) {
      const double g = count_flops(build<float>(row.id), Shape{1, 3, 352, 352}).gflops;
      const bool ok = within(g, row.gflops, 0.20);
      o.pass = o.pass && ok;
      o.detail += std::string(row.id) + " " + fmt("%.2f", g) + (ok ? "" : " (out)") + "; ";
    }
    o.detail += "1 MAC = 1 FLOP";
    return o;
  });

  criterion("efficiency versus SSFormer (S < 29.6M, < 20.0 GFLOPs; L < 66.2M, < 34.6 GFLOPs)", 0, [] {
    const auto s = count_flops(build<float>("B2"), Shape{1, 3, 352, 352});
    const auto l = count_flops(build<float>("B4"), Shape{1, 3, 352, 352});
    const double sp = double(s.param_count) / 1e6, lp = double(l.param_count) / 1e6;
    Outcome o;
    o.pass = sp < 29.6 && s.gflops < 20.0 && lp < 66.2 && l.gflops < 34.6;
    o.detail = "S " + fmt("%.2fM", sp) + " " + fmt("%.2f GFLOPs", s.gflops) + "; L " + fmt("%.2fM", lp) +
               " " + fmt("%.2f GFLOPs", l.gflops);
    return o;
  });

  criterion("shape suite: all variants at (1,3,352,352) and (2,3,96,96), pyramid scale law", 60, [] {
    Outcome o{true, ""};
    for (const auto& id : variant_ids()) {
      const auto model = build<float>(id);
      for (const Shape s : {Shape{1, 3, 352, 352}, Shape{2, 3, 96, 96}}) {
        const Tensor<float> x(s);
        const auto pyr = model.encode(x);
        for (std::size_t i = 0; i < 4; ++i)
          o.pass = o.pass && pyr[i].h() == s.h >> (i + 2) && pyr[i].w() == s.w >> (i + 2) &&
                   pyr[i].c() == model.spec.widths()[i];
        const auto y = model.decoder.forward(pyr);
        o.pass = o.pass && y.shape() == Shape{s.n, 1, s.h, s.w};
      }
      o.detail += id + " ok; ";
    }
    if (!o.pass) o.detail += "shape mismatch";
    return o;
  });

  criterion("gradient suite: relative error < 1e-4 (double, <= 8x8)", 300, [] {
    const double loss = test::loss_gradient_error();
    const auto ffn = test::mix_ffn_gradient_error();
    const auto attn = test::attention_gradient_error();
    const auto head = test::decoder_gradient_error();
    Outcome o;
    o.pass = loss < 1e-4 && ffn.max() < 1e-4 && attn.max() < 1e-4 && head.max() < 1e-4;
    o.detail = "total_loss " + fmt("%.1e", loss) + ", mix_ffn " + fmt("%.1e", ffn.max()) +
               ", attention " + fmt("%.1e", attn.max()) + ", decoder head " + fmt("%.1e", head.max());
    return o;
  });

  criterion("metric oracle suite: exact naive-loop agreement, dice-iou identity, goldens to 1e-6", 60, [] {
    const auto r = test::metric_oracles(200);
    Outcome o;
    o.pass = r.instances == 200 && r.exact_mismatches == 0 &&
             r.identity_error <= 4 * std::numeric_limits<double>::epsilon() && r.goldens > 0 &&
             r.golden_s_error < 1e-6 && r.golden_e_error < 1e-6;
    o.detail = std::to_string(r.instances) + " random instances, " + std::to_string(r.exact_mismatches) +
               " mismatches; identity error " + fmt("%.1e", r.identity_error) + "; " +
               std::to_string(r.goldens) + " goldens, S err " + fmt("%.1e", r.golden_s_error) +
               ", E_max err " + fmt("%.1e", r.golden_e_error);
    return o;
  });

  criterion("loss properties: saturation, ln 2, exhaustive 3x3 monotonicity", 60, [] {
    const auto r = test::loss_properties();
    Outcome o;
    o.pass = r.saturated < 1e-5 && r.ln2_error < 1e-12 && r.monotonic_checks > 0 &&
             r.monotonic_violations == 0;
    o.detail = "saturated total " + fmt("%.1e", r.saturated) + ", |bce(0) - ln 2| " +
               fmt("%.1e", r.ln2_error) + ", " + std::to_string(r.monotonic_violations) + " of " +
               std::to_string(r.monotonic_checks) + " flips increased the loss";
    return o;
  });

  criterion("overfit: B0 on 8 blob images, train dice > 0.95 within 200 iterations", 600, [] {
    const auto r = test::overfit(200);
    Outcome o;
    o.pass = r.iterations <= 200 && r.train_dice > 0.95;
    o.detail = "dice " + fmt("%.4f", r.train_dice) + " after " + std::to_string(r.iterations) +
               " iterations (loss " + fmt("%.3f", r.first_loss) + " -> " + fmt("%.3f", r.last_loss) +
               "; 64 px, batch 8, lr 1e-3)";
    return o;
  });

  criterion("sampler balance: lesion fraction 0.50 +- 0.03 over 10^4 draws at 97:223", 0, [] {
    std::vector<FrameLabel> labels(97, FrameLabel::lesion);
    labels.insert(labels.end(), 223, FrameLabel::normal);
    const BalancedSampler sampler(labels);
    Rng rng(2024);
    long lesion = 0;
    for (auto i : sampler.draw(10000, rng)) lesion += labels[i] == FrameLabel::lesion;
    const double frac = double(lesion) / 1e4;
    const double ratio = sampler.weights()[0] / sampler.weights()[300];
    Outcome o;
    o.pass = std::abs(frac - 0.5) <= 0.03 && std::abs(ratio - 223.0 / 97.0) < 1e-12;
    o.detail = "fraction " + fmt("%.4f", frac) + ", weight ratio " + fmt("%.4f", ratio) + " (223/97 = " +
               fmt("%.4f", 223.0 / 97.0) + ")";
    return o;
  });

  criterion("stream: 1000 frames in order, pipelined == sequential, FPS CV < 10% over 3 runs", 0, [] {
    const Model model = build<float>("B0", {1});
    StreamConfig cfg;
    cfg.input_size = 64;
    struct Keep : FrameSink {
      std::vector<FrameResult> results;
      bool wants_overlay() const override { return false; }
      void write(const FrameResult& r, const cv::Mat&) override { results.push_back(r); }
    };
    const std::size_t frames = 1000;
    Keep seq;
    cfg.pipelined = false;
    SyntheticSource s0(frames, 96, 96, 5);
    run_stream(s0, model, seq, cfg);

    cfg.pipelined = true;
    {  // unmeasured warm-up of the pipelined path
      NullSink sink;
      SyntheticSource warm(200, 96, 96, 6);
      run_stream(warm, model, sink, cfg);
    }
    std::vector<double> fps;
    bool ordered = true, identical = seq.results.size() == frames;
    for (int run = 0; run < 3; ++run) {
      Keep pipe;
      SyntheticSource src(frames, 96, 96, 5);
      const auto rep = run_stream(src, model, pipe, cfg);
      fps.push_back(rep.mean_fps);
      ordered = ordered && pipe.results.size() == frames && rep.frames == frames;
      for (std::size_t i = 0; ordered && i < pipe.results.size(); ++i) {
        ordered = pipe.results[i].index == long(i);
        if (identical && run == 0)
          identical = cv::norm(pipe.results[i].mask, seq.results[i].mask, cv::NORM_INF) == 0;
      }
    }
    const double mean = std::accumulate(fps.begin(), fps.end(), 0.0) / 3.0;
    double var = 0;
    for (double f : fps) var += (f - mean) * (f - mean);
    const double cv = std::sqrt(var / 2.0) / mean;
    Outcome o;
    o.pass = ordered && identical && cv < 0.10;
    o.detail = std::string(ordered ? "ordered" : "OUT OF ORDER") + ", " +
               (identical ? "masks identical" : "MASKS DIFFER") + ", mean FPS " + fmt("%.1f", mean) +
               " (B0, 96x96 frames, input 64; runs " + fmt("%.1f", fps[0]) + "/" + fmt("%.1f", fps[1]) +
               "/" + fmt("%.1f", fps[2]) + "), CV " + fmt("%.2f%%", 100 * cv) +
               "; 27 FPS is reported for the authors' hardware and is not gated";
    return o;
  });

  criterion("toy run_protocol: three protocols end to end on a 30-image toy corpus", 0, [] {
    Corpus corpus;
    std::size_t images = 0;
    for (auto& [name, samples] : toy_corpus(7, 64)) {
      images += samples.size();
      corpus[name] = samples;
    }
    TrainConfig cfg = test::overfit_config(4);
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.iterations_per_epoch = 2;
    cfg.max_iterations = 0;
    cfg.augment = AugmentConfig{};
    Outcome o{images == 30, ""};
    for (auto p : {Protocol::learning_ability, Protocol::generalizability, Protocol::power_balance}) {
      const auto rep = run_protocol(p, corpus, cfg);
      std::ostringstream tsv;
      rep.write_tsv(tsv);
      const std::string header = tsv.str().substr(0, tsv.str().find('\n'));
      bool cols = true;
      for (const char* c : {"\tmDice", "\tmIoU", "\tS_alpha", "\tE_phi_max", "\tMAE"})
        cols = cols && header.find(c) != std::string::npos;
      std::size_t test_rows = 0;
      for (const auto& r : rep.rows) test_rows += r.subset == Subset::test;
      const std::size_t want = p == Protocol::learning_ability ? 5 : p == Protocol::generalizability ? 2 : 5;
      bool finite = true;
      for (const auto& r : rep.rows)
        finite = finite && std::isfinite(r.metrics.m_dice) && std::isfinite(r.metrics.e_phi_max);
      o.pass = o.pass && cols && test_rows == want && finite;
      o.detail += std::string(to_string(p)) + " " + std::to_string(rep.rows.size()) + " rows (" +
                  std::to_string(test_rows) + " test); ";
    }
    o.detail +=
        "not reproducible at desk scale: AFB mDice 0.756 / mIoU 0.624 (private data) and the "
        "Tables 3-5 polyp scores (full datasets, long training)";
    return o;
  });

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
