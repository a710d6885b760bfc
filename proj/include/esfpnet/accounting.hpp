#pragma once

// Parameter and operation counting.
//
// Counting convention: one multiply-accumulate is one FLOP. Counted:
// convolutions (Cin * Cout * k * k per output position), per-pixel linear
// maps (in * out per position), depthwise convolutions (C * k * k per
// position) and the two attention products (queries * keys * head width each,
// summed over heads). Not counted: layer norms, GELU, softmax, residual adds
// and bilinear upsampling. Bias additions are not counted.

#include "esfpnet/model.hpp"
#include "esfpnet/trace.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace esfp {

class UnsupportedLayerError : public std::runtime_error {
 public:
  UnsupportedLayerError(std::vector<std::string> names, const std::string& what)
      : std::runtime_error(what), layers(std::move(names)) {}
  std::vector<std::string> layers;
};

struct ModuleComplexity {
  std::string name;
  Index params = 0;
  double macs = 0.0;
};

struct ComplexityReport {
  std::string variant;
  Shape input{};
  Index param_count = 0;
  double macs = 0.0;
  double gflops = 0.0;
  std::vector<ModuleComplexity> modules;  // encoder.stage1..4, decoder
  std::string convention =
      "1 MAC = 1 FLOP; conv, linear, depthwise conv and attention products counted; "
      "norms, activations, softmax, residual adds and upsampling not counted";
};

/// "backbone.block3.1.attn.q.weight" -> "encoder.stage3"; "decoder.*" -> "decoder".
inline std::string module_of(const std::string& name) {
  if (name.rfind("decoder.", 0) == 0) return "decoder";
  for (const char* key : {"backbone.patch_embed", "backbone.block", "backbone.norm"}) {
    const std::string k(key);
    if (name.rfind(k, 0) == 0 && name.size() > k.size())
      return "encoder.stage" + std::string(1, name[k.size()]);
  }
  return "other";
}

/// MACs of one traced layer; throws for kinds the counter does not model.
inline double layer_macs(const LayerRecord& r) {
  switch (r.kind) {
    case LayerKind::conv2d:
      return double(r.in_channels) * double(r.out_channels) * double(r.kernel * r.kernel) *
             double(r.positions);
    case LayerKind::linear:
      return double(r.in_channels) * double(r.out_channels) * double(r.positions);
    case LayerKind::depthwise_conv:
      return double(r.in_channels) * double(r.kernel * r.kernel) * double(r.positions);
    case LayerKind::attention_scores:
    case LayerKind::attention_mix:
      return double(r.positions) * double(r.keys) * double(r.channels);
    case LayerKind::layer_norm:
    case LayerKind::gelu:
    case LayerKind::softmax:
    case LayerKind::upsample:
    case LayerKind::residual_add:
      return 0.0;
    case LayerKind::opaque:
      break;
  }
  throw UnsupportedLayerError({r.name}, "unsupported layer type: " + r.name);
}

inline std::vector<ModuleComplexity> empty_breakdown() {
  return {{"encoder.stage1"}, {"encoder.stage2"}, {"encoder.stage3"}, {"encoder.stage4"},
          {"decoder"}};
}

inline ModuleComplexity& breakdown_entry(std::vector<ModuleComplexity>& mods,
                                         const std::string& name) {
  const std::string m = module_of(name);
  for (auto& e : mods)
    if (e.name == m) return e;
  mods.push_back({m});
  return mods.back();
}

/// Exact count of trainable scalars held by the model.
template <typename Scalar>
Index count_parameters(const EsfpNet<Scalar>& model) {
  Index n = 0;
  for (const auto& p : const_cast<EsfpNet<Scalar>&>(model).parameters()) n += p.param->size();
  return n;
}

/// Closed-form parameter count of a variant, derived from its configuration
/// alone (no model is built). Breakdown per encoder stage and decoder.
inline std::vector<ModuleComplexity> tally_parameters(const VariantSpec& v) {
  auto mods = empty_breakdown();
  Index cin = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = v.stages[i];
    const Index C = s.embed_dim, H = s.hidden_dim();
    Index p = cin * C * s.patch_size * s.patch_size + C + 2 * C;  // proj + norm
    Index block = 2 * C                      // norm1
                  + (C * C + C)              // q
                  + (2 * C * C + 2 * C)      // kv
                  + (C * C + C)              // proj
                  + 2 * C                    // norm2
                  + (C * H + H)              // fc1
                  + (9 * H + H)              // depthwise
                  + (H * C + C);             // fc2
    if (s.sr_ratio > 1) block += C * C * s.sr_ratio * s.sr_ratio + C + 2 * C;
    p += s.depth * block + 2 * C;  // blocks + stage norm
    mods[i].params = p;
    cin = C;
  }
  const auto& d = v.decoder.predict_dims;
  Index dec = 0;
  for (std::size_t i = 0; i < 4; ++i) dec += v.decoder.in_dims[i] * d[i] + d[i];
  for (std::size_t k = 0; k < 3; ++k)
    dec += (d[k] + d[k + 1]) * d[k] + d[k] + d[k] * d[k] + d[k];
  dec += (d[0] + d[1] + d[2] + d[3]) + 1;
  mods[4].params = dec;
  return mods;
}

inline Index total_params(const std::vector<ModuleComplexity>& mods) {
  Index n = 0;
  for (const auto& m : mods) n += m.params;
  return n;
}

/// Sums MACs over a layer trace. Every opaque layer is reported in one error.
inline ComplexityReport complexity_of(const LayerTrace& trace) {
  std::vector<std::string> unsupported;
  for (const auto& r : trace)
    if (r.kind == LayerKind::opaque) unsupported.push_back(r.name);
  if (!unsupported.empty()) {
    std::string msg = "unsupported layer type(s):";
    for (const auto& n : unsupported) msg += " " + n;
    throw UnsupportedLayerError(unsupported, msg);
  }
  ComplexityReport rep;
  rep.modules = empty_breakdown();
  for (const auto& r : trace) {
    const double m = layer_macs(r);
    breakdown_entry(rep.modules, r.name).macs += m;
    rep.macs += m;
  }
  rep.gflops = rep.macs / 1e9;
  return rep;
}

/// Parameters and FLOPs for one forward pass at `input`.
template <typename Scalar>
ComplexityReport count_flops(const EsfpNet<Scalar>& model, const Shape& input) {
  ComplexityReport rep = complexity_of(model.trace(input));
  rep.variant = model.spec.id;
  rep.input = input;
  for (const auto& p : const_cast<EsfpNet<Scalar>&>(model).parameters())
    breakdown_entry(rep.modules, p.name).params += p.param->size();
  rep.param_count = total_params(rep.modules);
  return rep;
}

}  // namespace esfp
