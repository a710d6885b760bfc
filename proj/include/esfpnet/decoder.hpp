#pragma once

// Efficient stage-wise feature pyramid (ESFP) decoder.
//
//   level4 (1/32) --LP_4-------------------------------------------+--up x8--.
//   level3 (1/16) --LP_3--[cat, up2(LP_4)]--fuse34--LP_34--+--------|--up x4--|
//   level2 (1/8)  --LP_2--[cat, up2(LP_34)]-fuse23--LP_23--+--------|--up x2--|
//   level1 (1/4)  --LP_1--[cat, up2(LP_23)]-fuse12--LP_12-----------|---------+
//                                                                  concat(LP_12, LP_23, LP_34, LP_4)
//                                                                  -> linear_pred -> up x4 -> logits
//
// Every map is a per-pixel linear map; there is no normalization or
// nonlinearity anywhere in the decoder. All upsampling is bilinear with the
// half-pixel-centre convention (see resize_bilinear).

#include "esfpnet/backbone.hpp"
#include "esfpnet/layers.hpp"
#include "esfpnet/tensor.hpp"
#include "esfpnet/trace.hpp"

#include <array>
#include <string>

namespace esfp {

struct DecoderConfig {
  std::array<Index, 4> in_dims{};       // encoder widths per stage
  std::array<Index, 4> predict_dims{};  // width of each stage's linear prediction
  Index output_scale = 4;

  /// Uniform prediction width for every stage.
  static DecoderConfig uniform(const std::array<Index, 4>& in_dims, Index predict_dim) {
    return {in_dims, {predict_dim, predict_dim, predict_dim, predict_dim}, 4};
  }

  void validate() const {
    for (std::size_t i = 0; i < 4; ++i) {
      if (in_dims[i] <= 0) throw ConfigError("decoder: stage input width must be positive");
      if (predict_dims[i] <= 0) throw ConfigError("decoder: predict_dim must be positive");
    }
    if (output_scale < 1) throw ConfigError("decoder: output_scale must be >= 1");
  }
};

template <typename Scalar>
class EsfpDecoder {
 public:
  using Fused = std::array<Tensor<Scalar>, 3>;  // index 0 at 1/4, 1 at 1/8, 2 at 1/16

  struct Cache {
    FeaturePyramid<Scalar> inputs;
    std::array<Tensor<Scalar>, 4> predicted;
    std::array<Tensor<Scalar>, 3> fuse_in, fuse_out;
    Fused fused;
    Tensor<Scalar> head_in, head_out;
  };

  EsfpDecoder() = default;
  explicit EsfpDecoder(const DecoderConfig& cfg) : config(cfg) {
    cfg.validate();
    const auto& d = cfg.predict_dims;
    for (std::size_t i = 0; i < 4; ++i) predict[i] = Linear<Scalar>(cfg.in_dims[i], d[i]);
    for (std::size_t i = 0; i < 3; ++i) {
      fuse[i] = Linear<Scalar>(d[i] + d[i + 1], d[i]);
      refine[i] = Linear<Scalar>(d[i], d[i]);
    }
    head = Linear<Scalar>(d[0] + d[1] + d[2] + d[3], 1);
  }

  void init(std::mt19937_64& rng) {
    for (auto& l : predict) l.init(rng);
    for (auto& l : fuse) l.init(rng);
    for (auto& l : refine) l.init(rng);
    head.init(rng);
  }

  /// Per-pixel linear map of stage `stage` (0-based) to its prediction width.
  Tensor<Scalar> stage_linear_predict(const Tensor<Scalar>& feature, std::size_t stage) const {
    require_dim("channels", feature.c(), config.in_dims[stage], "stage_linear_predict");
    return predict[stage].forward(feature);
  }

  /// Deep-to-shallow fusion: the running map (starting at stage 4's
  /// prediction) is upsampled x2, concatenated after the next shallower
  /// prediction, fused back to that stage's width and re-predicted.
  Fused fuse_global_to_local(const std::array<Tensor<Scalar>, 4>& predicted,
                             Cache* cache = nullptr) const {
    for (std::size_t i = 0; i < 4; ++i)
      require_dim("channels", predicted[i].c(), config.predict_dims[i], "fuse_global_to_local");
    for (std::size_t i = 0; i < 3; ++i) {
      require_dim("height", predicted[i].h(), 2 * predicted[i + 1].h(), "fuse_global_to_local");
      require_dim("width", predicted[i].w(), 2 * predicted[i + 1].w(), "fuse_global_to_local");
    }
    Fused fused;
    const Tensor<Scalar>* running = &predicted[3];
    for (std::size_t k = 3; k-- > 0;) {
      const Tensor<Scalar> up = resize_bilinear(*running, predicted[k].h(), predicted[k].w());
      Tensor<Scalar> cat = concat_channels<Scalar>({&predicted[k], &up});
      Tensor<Scalar> f = fuse[k].forward(cat);
      fused[k] = refine[k].forward(f);
      if (cache) {
        cache->fuse_in[k] = std::move(cat);
        cache->fuse_out[k] = std::move(f);
      }
      running = &fused[k];
    }
    return fused;
  }

  /// Brings the deepest prediction and the three fused maps to 1/4 scale,
  /// concatenates them, maps to one channel and upsamples by output_scale.
  /// Returns raw logits.
  Tensor<Scalar> aggregate_and_head(const Tensor<Scalar>& deepest, const Fused& fused,
                                    Cache* cache = nullptr) const {
    const Index h = fused[0].h(), w = fused[0].w();
    const Tensor<Scalar> up1 = resize_bilinear(fused[1], h, w);
    const Tensor<Scalar> up2 = resize_bilinear(fused[2], h, w);
    const Tensor<Scalar> up3 = resize_bilinear(deepest, h, w);
    for (const Tensor<Scalar>* t : {&fused[1], &fused[2], &deepest}) {
      const Index sy = h / t->h(), sx = w / t->w();
      if (sy * t->h() != h) throw ShapeError("height", "aggregate_and_head: scale ladder broken");
      if (sx * t->w() != w) throw ShapeError("width", "aggregate_and_head: scale ladder broken");
    }
    Tensor<Scalar> cat = concat_channels<Scalar>({&fused[0], &up1, &up2, &up3});
    Tensor<Scalar> out = head.forward(cat);
    Tensor<Scalar> logits =
        resize_bilinear(out, h * config.output_scale, w * config.output_scale);
    if (cache) {
      cache->head_in = std::move(cat);
      cache->head_out = std::move(out);
    }
    return logits;
  }

  Tensor<Scalar> forward(const FeaturePyramid<Scalar>& pyramid, Cache* cache = nullptr) const {
    std::array<Tensor<Scalar>, 4> predicted;
    for (std::size_t i = 0; i < 4; ++i) predicted[i] = stage_linear_predict(pyramid[i], i);
    Fused fused = fuse_global_to_local(predicted, cache);
    Tensor<Scalar> logits = aggregate_and_head(predicted[3], fused, cache);
    if (cache) {
      cache->inputs = pyramid;
      cache->predicted = std::move(predicted);
      cache->fused = std::move(fused);
    }
    return logits;
  }

  /// Returns d(loss)/d(pyramid level) for each level.
  FeaturePyramid<Scalar> backward(const Tensor<Scalar>& d_logits, const Cache& cache) {
    const Tensor<Scalar>& out = cache.head_out;
    const Tensor<Scalar> d_out = resize_bilinear_backward(d_logits, out.h(), out.w());
    const Tensor<Scalar> d_cat = head.backward(cache.head_in, d_out);

    Fused d_fused;
    std::array<Tensor<Scalar>, 4> d_pred;
    Index offset = 0;
    d_fused[0] = slice_channels(d_cat, offset, config.predict_dims[0]);
    offset += config.predict_dims[0];
    for (std::size_t k = 1; k < 3; ++k) {
      d_fused[k] = resize_bilinear_backward(slice_channels(d_cat, offset, config.predict_dims[k]),
                                            cache.fused[k].h(), cache.fused[k].w());
      offset += config.predict_dims[k];
    }
    d_pred[3] = resize_bilinear_backward(slice_channels(d_cat, offset, config.predict_dims[3]),
                                         cache.predicted[3].h(), cache.predicted[3].w());

    // Reverse of the deep-to-shallow chain: fused[k] feeds fused[k-1].
    for (std::size_t k = 0; k < 3; ++k) {
      const Tensor<Scalar> d_f = refine[k].backward(cache.fuse_out[k], d_fused[k]);
      const Tensor<Scalar> d_in = fuse[k].backward(cache.fuse_in[k], d_f);
      d_pred[k] = slice_channels(d_in, 0, config.predict_dims[k]);
      const Tensor<Scalar>& deeper = k < 2 ? cache.fused[k + 1] : cache.predicted[3];
      Tensor<Scalar> d_up = resize_bilinear_backward(
          slice_channels(d_in, config.predict_dims[k], config.predict_dims[k + 1]), deeper.h(),
          deeper.w());
      if (k < 2)
        d_fused[k + 1].array() += d_up.array();
      else
        d_pred[3].array() += d_up.array();
    }

    FeaturePyramid<Scalar> d_levels;
    for (std::size_t i = 0; i < 4; ++i)
      d_levels[i] = predict[i].backward(cache.inputs[i], d_pred[i]);
    return d_levels;
  }

  void trace(const std::array<Shape, 4>& levels, LayerTrace& t) const {
    const auto& d = config.predict_dims;
    const std::string p = "decoder.";
    for (std::size_t i = 0; i < 4; ++i)
      t.push_back({p + "LP_" + std::to_string(i + 1) + ".proj", LayerKind::linear,
                   config.in_dims[i], d[i], 1, levels[i].n * levels[i].plane()});
    for (std::size_t k = 3; k-- > 0;) {
      const Index pos = levels[k].n * levels[k].plane();
      const std::string tag = std::to_string(k + 1) + std::to_string(k + 2);
      t.push_back({p + "up_" + tag, LayerKind::upsample, 0, 0, 1, pos * d[k + 1]});
      t.push_back({p + "linear_fuse" + tag, LayerKind::linear, d[k] + d[k + 1], d[k], 1, pos});
      t.push_back({p + "LP_" + tag + ".proj", LayerKind::linear, d[k], d[k], 1, pos});
    }
    const Index pos = levels[0].n * levels[0].plane();
    t.push_back({p + "up_aggregate", LayerKind::upsample, 0, 0, 1, pos * (d[1] + d[2] + d[3])});
    t.push_back({p + "linear_pred", LayerKind::linear, d[0] + d[1] + d[2] + d[3], 1, 1, pos});
    t.push_back({p + "up_output", LayerKind::upsample, 0, 0, 1,
                 pos * config.output_scale * config.output_scale});
  }

  void collect(ParameterList<Scalar>& out) {
    for (std::size_t i = 0; i < 4; ++i)
      predict[i].collect(out, "decoder.LP_" + std::to_string(i + 1) + ".proj");
    for (std::size_t k = 3; k-- > 0;) {
      const std::string tag = std::to_string(k + 1) + std::to_string(k + 2);
      fuse[k].collect(out, "decoder.linear_fuse" + tag);
      refine[k].collect(out, "decoder.LP_" + tag + ".proj");
    }
    head.collect(out, "decoder.linear_pred");
  }

  DecoderConfig config;
  std::array<Linear<Scalar>, 4> predict;
  std::array<Linear<Scalar>, 3> fuse;    // [k] fuses stage k+1 with stage k+2
  std::array<Linear<Scalar>, 3> refine;  // linear re-prediction of each fused map
  Linear<Scalar> head;
};

}  // namespace esfp
