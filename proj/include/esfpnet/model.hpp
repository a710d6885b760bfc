#pragma once

#include "esfpnet/backbone.hpp"
#include "esfpnet/decoder.hpp"
#include "esfpnet/tensor.hpp"
#include "esfpnet/trace.hpp"

#include <array>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace esfp {

/// Complete hyperparameter bundle of one model size; a pure function of `id`.
struct VariantSpec {
  std::string id;    // "B0" | "B2" | "B4"
  std::string name;  // ESFPNet-T | ESFPNet-S | ESFPNet-L
  std::array<EncoderStageConfig, 4> stages;
  DecoderConfig decoder;
  std::array<double, 3> mean{0.485, 0.456, 0.406};  // RGB, on [0,1] intensities
  std::array<double, 3> std{0.229, 0.224, 0.225};

  std::array<Index, 4> widths() const {
    return {stages[0].embed_dim, stages[1].embed_dim, stages[2].embed_dim, stages[3].embed_dim};
  }
  std::array<Index, 4> depths() const {
    return {stages[0].depth, stages[1].depth, stages[2].depth, stages[3].depth};
  }
};

inline const std::vector<std::string>& variant_ids() {
  static const std::vector<std::string> ids{"B0", "B2", "B4"};
  return ids;
}

/// Encoder stages from the reference backbone family; decoder prediction
/// widths equal the encoder widths.
inline VariantSpec variant(std::string_view id) {
  std::array<Index, 4> widths, depths;
  std::string name;
  if (id == "B0") {
    widths = {32, 64, 160, 256};
    depths = {2, 2, 2, 2};
    name = "ESFPNet-T";
  } else if (id == "B2") {
    widths = {64, 128, 320, 512};
    depths = {3, 4, 6, 3};
    name = "ESFPNet-S";
  } else if (id == "B4") {
    widths = {64, 128, 320, 512};
    depths = {3, 8, 27, 3};
    name = "ESFPNet-L";
  } else {
    throw ConfigError("unknown variant id '" + std::string(id) + "' (expected B0, B2 or B4)");
  }
  constexpr std::array<Index, 4> heads{1, 2, 5, 8};
  constexpr std::array<Index, 4> sr{8, 4, 2, 1};
  VariantSpec v;
  v.id = std::string(id);
  v.name = name;
  for (std::size_t i = 0; i < 4; ++i) {
    v.stages[i] = EncoderStageConfig{widths[i], depths[i], heads[i], sr[i], 4,
                                     i == 0 ? Index(7) : Index(3), i == 0 ? Index(4) : Index(2)};
  }
  v.decoder = DecoderConfig{widths, widths, 4};
  return v;
}

struct ModelOptions {
  std::uint64_t seed = 0;
  double drop_path_rate = 0.0;
};

/// Encoder + ESFP decoder producing full-resolution logits.
template <typename Scalar>
class EsfpNet {
 public:
  struct Cache {
    typename MixTransformer<Scalar>::Cache encoder;
    typename EsfpDecoder<Scalar>::Cache decoder;
  };

  EsfpNet() = default;
  explicit EsfpNet(VariantSpec v, const ModelOptions& opts = {})
      : spec(std::move(v)), encoder(spec.stages, 3, opts.drop_path_rate), decoder(spec.decoder) {
    std::mt19937_64 rng(opts.seed);
    encoder.init(rng);
    decoder.init(rng);
  }

  FeaturePyramid<Scalar> encode(const Tensor<Scalar>& image) const {
    return encoder.forward(image);
  }

  /// Inference forward; const and cache-free, so a model may be shared
  /// between threads.
  Tensor<Scalar> forward(const Tensor<Scalar>& image) const {
    return decoder.forward(encoder.forward(image));
  }

  /// Training forward; keeps what backward needs in `cache`. A generator
  /// enables stochastic depth when the model was built with a drop-path rate.
  Tensor<Scalar> forward(const Tensor<Scalar>& image, Cache& cache,
                         std::mt19937_64* rng = nullptr) const {
    return decoder.forward(encoder.forward(image, &cache.encoder, rng), &cache.decoder);
  }

  /// Accumulates parameter gradients from d(loss)/d(logits). With
  /// `train_encoder` false the encoder is treated as frozen.
  void backward(const Tensor<Scalar>& d_logits, const Cache& cache, bool train_encoder = true) {
    FeaturePyramid<Scalar> d_levels = decoder.backward(d_logits, cache.decoder);
    if (train_encoder) encoder.backward(d_levels, cache.encoder);
  }

  /// Same, returning d(loss)/d(image).
  Tensor<Scalar> backward_input(const Tensor<Scalar>& d_logits, const Cache& cache) {
    return encoder.backward(decoder.backward(d_logits, cache.decoder), cache.encoder);
  }

  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out;
    encoder.collect(out);
    decoder.collect(out);
    return out;
  }

  ParameterList<Scalar> encoder_parameters() {
    ParameterList<Scalar> out;
    encoder.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.param->grad.setZero();
  }

  LayerTrace trace(const Shape& input) const {
    encoder.check_input(input);
    LayerTrace t;
    std::array<Shape, 4> levels;
    encoder.trace(input, t, &levels);
    decoder.trace(levels, t);
    return t;
  }

  VariantSpec spec;
  MixTransformer<Scalar> encoder;
  EsfpDecoder<Scalar> decoder;
};

template <typename Scalar>
EsfpNet<Scalar> build(std::string_view variant_id, const ModelOptions& opts = {}) {
  return EsfpNet<Scalar>(variant(variant_id), opts);
}

}  // namespace esfp
