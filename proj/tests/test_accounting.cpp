#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "esfpnet/accounting.hpp"

#include "golden/forward_golden.inc"

using namespace esfp;

namespace {

// MACs of one forward pass written out from the layer formulas.
double reference_macs(const VariantSpec& v, Index H, Index W) {
  double macs = 0;
  Index cin = 3, h = H, w = W;
  std::array<Index, 4> hs{}, ws{};
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = v.stages[s];
    const Index k = st.patch_size, stride = st.stride, pad = k / 2;
    h = (h + 2 * pad - k) / stride + 1;
    w = (w + 2 * pad - k) / stride + 1;
    const double n = double(h * w), C = double(st.embed_dim), hid = double(st.hidden_dim());
    macs += double(cin) * C * double(k * k) * n;  // patch embedding
    const double keys = n / double(st.sr_ratio * st.sr_ratio);
    double block = n * C * C                       // q
                   + keys * C * 2 * C              // kv
                   + 2 * n * keys * C              // scores + mix over all heads
                   + n * C * C                     // proj
                   + n * C * hid + n * hid * 9 + n * hid * C;  // fc1, dwconv, fc2
    if (st.sr_ratio > 1) block += keys * C * C * double(st.sr_ratio * st.sr_ratio);
    macs += double(st.depth) * block;
    hs[s] = h;
    ws[s] = w;
    cin = st.embed_dim;
  }
  const auto& d = v.decoder.predict_dims;
  for (std::size_t s = 0; s < 4; ++s)
    macs += double(hs[s] * ws[s]) * double(v.decoder.in_dims[s] * d[s]);
  for (std::size_t k = 0; k < 3; ++k)
    macs += double(hs[k] * ws[k]) * (double((d[k] + d[k + 1]) * d[k]) + double(d[k] * d[k]));
  macs += double(hs[0] * ws[0]) * double(d[0] + d[1] + d[2] + d[3]);
  return macs;
}

}  // namespace

TEST_CASE("parameter counts equal the reference state dict") {
  for (const auto& g : kParamCountGolden) {
    CAPTURE(g.variant);
    const auto model = build<float>(g.variant);
    CHECK(count_parameters(model) == g.count);
    CHECK(total_params(tally_parameters(model.spec)) == g.count);
  }
}

TEST_CASE("per-module parameter breakdown sums to the total") {
  const auto model = build<float>("B2");
  const auto rep = count_flops(model, Shape{1, 3, 64, 64});
  const auto tally = tally_parameters(model.spec);
  REQUIRE(rep.modules.size() == tally.size());
  for (std::size_t i = 0; i < tally.size(); ++i) {
    CHECK(rep.modules[i].name == tally[i].name);
    CHECK(rep.modules[i].params == tally[i].params);
  }
  CHECK(rep.param_count == count_parameters(model));
}

TEST_CASE("MAC count equals the closed-form layer sum") {
  for (const auto& id : variant_ids()) {
    CAPTURE(id);
    const auto model = build<float>(id);
    for (Index s : {Index(352), Index(96)}) {
      const auto rep = count_flops(model, Shape{1, 3, s, s});
      CHECK(rep.macs == doctest::Approx(reference_macs(model.spec, s, s)).epsilon(1e-12));
      double sum = 0;
      for (const auto& m : rep.modules) sum += m.macs;
      CHECK(sum == doctest::Approx(rep.macs).epsilon(1e-12));
    }
  }
}

TEST_CASE("MACs scale linearly with batch") {
  const auto model = build<float>("B0");
  const auto one = count_flops(model, Shape{1, 3, 96, 96});
  const auto two = count_flops(model, Shape{2, 3, 96, 96});
  CHECK(two.macs == doctest::Approx(2 * one.macs));
}

TEST_CASE("layer MAC formulas") {
  CHECK(layer_macs({"c", LayerKind::conv2d, 3, 8, 3, 100}) == 3 * 8 * 9 * 100);
  CHECK(layer_macs({"l", LayerKind::linear, 4, 5, 1, 10}) == 200);
  CHECK(layer_macs({"d", LayerKind::depthwise_conv, 6, 6, 3, 10}) == 540);
  CHECK(layer_macs({"a", LayerKind::attention_scores, 0, 0, 1, 10, 7, 4}) == 280);
  CHECK(layer_macs({"n", LayerKind::layer_norm, 4, 4, 1, 10}) == 0);
}

TEST_CASE("opaque layers are reported together") {
  LayerTrace t{{"x.a", LayerKind::opaque}, {"x.b", LayerKind::linear, 1, 1, 1, 1},
               {"x.c", LayerKind::opaque}};
  try {
    complexity_of(t);
    FAIL("expected UnsupportedLayerError");
  } catch (const UnsupportedLayerError& e) {
    CHECK(e.layers == std::vector<std::string>{"x.a", "x.c"});
  }
}

TEST_CASE("module names") {
  CHECK(module_of("backbone.block3.1.attn.q.weight") == "encoder.stage3");
  CHECK(module_of("backbone.patch_embed1.proj.weight") == "encoder.stage1");
  CHECK(module_of("backbone.norm4.bias") == "encoder.stage4");
  CHECK(module_of("decoder.linear_pred.weight") == "decoder");
}
