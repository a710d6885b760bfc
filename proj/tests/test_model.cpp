#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "suites.hpp"
#include "support.hpp"

#include "esfpnet/model.hpp"

#include "golden/forward_golden.inc"

using namespace esfp;

TEST_CASE("bilinear resize follows the half-pixel convention") {
  Tensor<double> x(1, 1, 1, 2);
  x(0, 0, 0, 0) = 0;
  x(0, 0, 0, 1) = 1;
  const auto y = resize_bilinear(x, 1, 4);
  // source coords -0.25 (clamped), 0.25, 0.75, 1.25 (edge)
  CHECK(y(0, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(y(0, 0, 0, 1) == doctest::Approx(0.25));
  CHECK(y(0, 0, 0, 2) == doctest::Approx(0.75));
  CHECK(y(0, 0, 0, 3) == doctest::Approx(1.0));
}

TEST_CASE("bilinear backward is the adjoint of forward") {
  std::mt19937_64 rng(5);
  const auto x = test::random_tensor({1, 2, 3, 5}, rng);
  const auto dy = test::random_tensor({1, 2, 7, 9}, rng);
  const double lhs = (resize_bilinear(x, 7, 9).array() * dy.array()).sum();
  const double rhs = (x.array() * resize_bilinear_backward(dy, 3, 5).array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("concat and slice are inverse") {
  std::mt19937_64 rng(6);
  const auto a = test::random_tensor({2, 3, 4, 4}, rng), b = test::random_tensor({2, 5, 4, 4}, rng);
  const auto c = concat_channels<double>({&a, &b});
  CHECK(c.c() == 8);
  CHECK((slice_channels(c, 3, 5).array() == b.array()).all());
}

TEST_CASE("convolution gradient") {
  std::mt19937_64 rng(8);
  Conv2d<double> conv(ConvGeometry{3, 4, 3, 2, 1});
  ParameterList<double> params;
  conv.collect(params, "conv");
  test::randomize(params, rng, 0.5);
  auto x = test::random_tensor({2, 3, 8, 8}, rng);
  const auto r = test::check_gradients(
      x, params, [&] { return conv.forward(x); },
      [&](const Tensor<double>& dy) { return conv.backward(x, dy); });
  CHECK(r.max() < 1e-6);
}

TEST_CASE("layer norm gradient") {
  std::mt19937_64 rng(9);
  LayerNorm<double> ln(5);
  ParameterList<double> params;
  ln.collect(params, "norm");
  test::randomize(params, rng, 0.5);
  auto x = test::random_tensor({1, 5, 4, 4}, rng);
  const auto r = test::check_gradients(
      x, params, [&] { return ln.forward(x); },
      [&](const Tensor<double>& dy) {
        std::vector<LayerNorm<double>::Cache> cache;
        ln.forward(x, &cache);
        return ln.backward(dy, cache);
      });
  CHECK(r.max() < 1e-6);
}

TEST_CASE("mix-ffn and attention gradients") {
  const auto ffn = test::mix_ffn_gradient_error();
  const auto attn = test::attention_gradient_error();
  INFO("ffn worst " << ffn.worst << " attention worst " << attn.worst);
  CHECK(ffn.max() < 1e-4);
  CHECK(attn.max() < 1e-4);
}

TEST_CASE("decoder gradient at every pyramid level") {
  const auto r = test::decoder_gradient_error();
  INFO("worst " << r.worst);
  CHECK(r.max() < 1e-4);
}

TEST_CASE("encoder pyramid obeys the scale law") {
  auto model = build<double>("B0");
  for (auto [h, w] : {std::pair{64, 64}, std::pair{96, 64}, std::pair{32, 128}}) {
    const auto pyr = model.encode(Tensor<double>(1, 3, h, w));
    const auto widths = model.spec.widths();
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(pyr[i].c() == widths[i]);
      CHECK(pyr[i].h() == h >> (i + 2));
      CHECK(pyr[i].w() == w >> (i + 2));
    }
  }
}

TEST_CASE("inputs not divisible by 32 are rejected") {
  auto model = build<float>("B0");
  CHECK_THROWS_AS(model.forward(Tensor<float>(1, 3, 48, 64)), ShapeError);
  CHECK_THROWS_AS(model.forward(Tensor<float>(1, 1, 64, 64)), ShapeError);
}

TEST_CASE("decoder fusion ladder shapes") {
  EsfpDecoder<double> dec(DecoderConfig::uniform({32, 64, 160, 256}, 64));
  std::array<Tensor<double>, 4> pred;
  for (std::size_t i = 0; i < 4; ++i) pred[i] = Tensor<double>(1, 64, 88 >> i, 88 >> i);
  const auto fused = dec.fuse_global_to_local(pred);
  CHECK(fused[2].shape() == Shape{1, 64, 22, 22});
  CHECK(fused[1].shape() == Shape{1, 64, 44, 44});
  CHECK(fused[0].shape() == Shape{1, 64, 88, 88});
  CHECK(dec.aggregate_and_head(pred[3], fused).shape() == Shape{1, 1, 352, 352});
}

TEST_CASE("variants differ only in depth beyond B0") {
  CHECK(variant("B0").widths() == std::array<Index, 4>{32, 64, 160, 256});
  CHECK(variant("B2").widths() == variant("B4").widths());
  CHECK(variant("B2").depths() != variant("B4").depths());
  CHECK_THROWS_AS(variant("B3"), ConfigError);
}

TEST_CASE("forward pass matches an independent PyTorch implementation") {
  for (const auto& g : kForwardGolden) {
    CAPTURE(g.variant);
    CAPTURE(g.n);
    auto model = build<double>(g.variant);
    test::fill_pattern(model);
    const auto y = model.forward(test::pattern_image<double>({g.n, 3, g.h, g.w}));
    REQUIRE(y.shape() == Shape{g.n, 1, g.h, g.w});
    CHECK(y.array().sum() == doctest::Approx(g.sum).epsilon(1e-9));
    CHECK(y.array().square().sum() == doctest::Approx(g.sum_sq).epsilon(1e-9));
    double worst = 0;
    for (int k = 0; k < 256; ++k)
      worst = std::max(worst, std::abs(y.array()[k * g.stride] - g.samples[k]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("float and double forward agree") {
  auto md = build<double>("B0");
  test::fill_pattern(md);
  auto mf = build<float>("B0");
  test::fill_pattern(mf);
  const auto yd = md.forward(test::pattern_image<double>({1, 3, 64, 64}));
  const auto yf = mf.forward(test::pattern_image<float>({1, 3, 64, 64}));
  CHECK((yd.array() - yf.array().cast<double>()).abs().maxCoeff() < 1e-3);
}

TEST_CASE("full-model training gradient") {
  // Shallow stand-in with every block type, checked through the image.
  VariantSpec v = variant("B0");
  for (auto& s : v.stages) {
    s.embed_dim = 4;
    s.num_heads = 2;
    s.depth = 1;
  }
  v.stages[0].sr_ratio = 2;
  v.stages[1].sr_ratio = 1;
  v.stages[2].sr_ratio = 1;
  v.decoder = DecoderConfig::uniform({4, 4, 4, 4}, 4);
  EsfpNet<double> model(v);
  std::mt19937_64 rng(12);
  auto params = model.parameters();
  test::randomize(params, rng, 0.4);
  for (const auto& p : params)
    if (p.name.find("norm") != std::string::npos && test::ends_with(p.name, ".weight"))
      p.param->value += 1.0;
  auto x = test::random_tensor({1, 3, 32, 32}, rng);
  std::vector<NamedParameter<double>> some;
  for (std::size_t i = 0; i < params.size(); i += 7) some.push_back(params[i]);
  const auto r = test::check_gradients(
      x, some, [&] { return model.forward(x); },
      [&](const Tensor<double>& dy) {
        EsfpNet<double>::Cache cache;
        model.forward(x, cache);
        return model.backward_input(dy, cache);
      });
  INFO("worst " << r.worst);
  CHECK(r.max() < 1e-4);
}
