#pragma once

#include "esfpnet/tensor.hpp"

#include <string>
#include <vector>

namespace esfp {

/// Kinds of layer a model reports when traced at a given input shape.
enum class LayerKind {
  conv2d,           // dense convolution, square kernel
  linear,           // per-position linear map
  depthwise_conv,   // per-channel convolution
  attention_scores, // Q K^T
  attention_mix,    // softmax(Q K^T) V
  layer_norm,
  gelu,
  softmax,
  upsample,
  residual_add,
  opaque,           // anything the complexity counter does not model
};

const char* to_string(LayerKind kind);

/// One layer invocation at a concrete input shape.
///
/// Matrix-product layers fill `in_channels`, `out_channels`, `kernel` and
/// `positions` (output positions summed over the batch). Attention products
/// fill `positions` (queries summed over batch and heads), `keys` and
/// `channels` (per-head width). Elementwise layers fill `positions` with the
/// number of elements touched.
struct LayerRecord {
  std::string name;
  LayerKind kind = LayerKind::opaque;
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 1;
  Index positions = 0;
  Index keys = 0;
  Index channels = 0;
};

using LayerTrace = std::vector<LayerRecord>;

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::depthwise_conv: return "depthwise_conv";
    case LayerKind::attention_scores: return "attention_scores";
    case LayerKind::attention_mix: return "attention_mix";
    case LayerKind::layer_norm: return "layer_norm";
    case LayerKind::gelu: return "gelu";
    case LayerKind::softmax: return "softmax";
    case LayerKind::upsample: return "upsample";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::opaque: return "opaque";
  }
  return "unknown";
}

}  // namespace esfp
