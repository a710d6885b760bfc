#pragma once

// Four-stage hierarchical transformer encoder (Mix Transformer family).
//
// Stage i: overlapping patch merging (strided conv, kernel > stride, then
// layer norm) -> `depth` transformer blocks -> layer norm. Blocks use
// spatial-reduction attention (keys/values from an sr x sr strided conv of the
// input) and a Mix-FFN whose 3x3 depthwise conv supplies positional mixing.
// Parameter names follow the reference backbone's state-dict layout so
// externally trained weights load with only a "backbone." prefix.

#include "esfpnet/layers.hpp"
#include "esfpnet/tensor.hpp"
#include "esfpnet/trace.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace esfp {

struct EncoderStageConfig {
  Index embed_dim = 32;
  Index depth = 2;
  Index num_heads = 1;
  Index sr_ratio = 1;
  Index mlp_ratio = 4;
  Index patch_size = 3;
  Index stride = 2;

  Index head_dim() const { return embed_dim / num_heads; }
  Index hidden_dim() const { return embed_dim * mlp_ratio; }

  void validate() const {
    if (num_heads < 1 || embed_dim % num_heads != 0)
      throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    if (sr_ratio < 1) throw ConfigError("sr_ratio must be >= 1");
    if (stride != 2 && stride != 4) throw ConfigError("stride must be 2 or 4");
    if (patch_size <= stride) throw ConfigError("patch_size must exceed stride (overlap)");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  }
};

/// Four encoder outputs at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
template <typename Scalar>
struct FeaturePyramid {
  std::array<Tensor<Scalar>, 4> levels;

  const Tensor<Scalar>& operator[](std::size_t i) const { return levels[i]; }
  Tensor<Scalar>& operator[](std::size_t i) { return levels[i]; }
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class OverlapPatchEmbed {
 public:
  struct Cache {
    Tensor<Scalar> input;
    std::vector<typename LayerNorm<Scalar>::Cache> norm;
  };

  OverlapPatchEmbed() = default;
  OverlapPatchEmbed(Index in_channels, const EncoderStageConfig& cfg)
      : proj(ConvGeometry{in_channels, cfg.embed_dim, cfg.patch_size, cfg.stride,
                          cfg.patch_size / 2}),
        norm(cfg.embed_dim) {}

  Index stride() const { return proj.geometry.stride; }

  void init(std::mt19937_64& rng) {
    proj.init(rng);
    norm.init();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr) const {
    require_dim("channels", x.c(), proj.geometry.in_channels, "overlap_patch_embed");
    if (x.h() % stride() != 0)
      throw ShapeError("height", "overlap_patch_embed: height " + std::to_string(x.h()) +
                                     " not divisible by stride " + std::to_string(stride()));
    if (x.w() % stride() != 0)
      throw ShapeError("width", "overlap_patch_embed: width " + std::to_string(x.w()) +
                                    " not divisible by stride " + std::to_string(stride()));
    Tensor<Scalar> y = proj.forward(x);
    if (cache) cache->input = x;
    return norm.forward(y, cache ? &cache->norm : nullptr);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const Cache& cache) {
    return proj.backward(cache.input, norm.backward(dy, cache.norm));
  }

  Shape trace(const Shape& in, LayerTrace& t, const std::string& prefix) const {
    const auto& g = proj.geometry;
    const Shape out{in.n, g.out_channels, g.out_extent(in.h), g.out_extent(in.w)};
    t.push_back({prefix + ".proj", LayerKind::conv2d, g.in_channels, g.out_channels, g.kernel,
                 out.n * out.plane()});
    t.push_back({prefix + ".norm", LayerKind::layer_norm, 0, 0, 1, out.size()});
    return out;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    proj.collect(out, prefix + ".proj");
    norm.collect(out, prefix + ".norm");
  }

  Conv2d<Scalar> proj;
  LayerNorm<Scalar> norm;
};

// ---------------------------------------------------------------------------

/// Multi-head softmax attention whose keys and values come from a spatially
/// reduced copy of the input. Shape-preserving; residual and pre-norm belong
/// to the enclosing block.
template <typename Scalar>
class EfficientSelfAttention {
 public:
  struct Cache {
    Tensor<Scalar> input;
    Tensor<Scalar> reduced;  // sr conv output, before its layer norm
    std::vector<typename LayerNorm<Scalar>::Cache> reduced_norm;
    std::vector<MatrixX<Scalar>> kv_input, q, kv, mixed;
    std::vector<std::vector<MatrixX<Scalar>>> attention;  // [batch][head], queries x keys
  };

  EfficientSelfAttention() = default;
  EfficientSelfAttention(Index dim, Index num_heads, Index sr_ratio)
      : q(dim, dim), kv(dim, 2 * dim), proj(dim, dim), num_heads(num_heads), sr_ratio(sr_ratio) {
    if (num_heads < 1 || dim % num_heads != 0)
      throw ConfigError("attention: channels not divisible by num_heads");
    if (sr_ratio > 1) {
      sr = Conv2d<Scalar>(ConvGeometry{dim, dim, sr_ratio, sr_ratio, 0});
      norm = LayerNorm<Scalar>(dim);
    }
  }

  Index dim() const { return q.in_features(); }
  Index head_dim() const { return dim() / num_heads; }

  void init(std::mt19937_64& rng) {
    q.init(rng);
    kv.init(rng);
    proj.init(rng);
    if (sr_ratio > 1) {
      sr.init(rng);
      norm.init();
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr) const {
    require_dim("channels", x.c(), dim(), "efficient_self_attention");
    if (x.h() % sr_ratio != 0)
      throw ShapeError("height", "efficient_self_attention: height " + std::to_string(x.h()) +
                                     " not divisible by sr_ratio " + std::to_string(sr_ratio));
    if (x.w() % sr_ratio != 0)
      throw ShapeError("width", "efficient_self_attention: width " + std::to_string(x.w()) +
                                    " not divisible by sr_ratio " + std::to_string(sr_ratio));
    const Index C = dim(), d = head_dim(), B = x.n();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));

    Tensor<Scalar> reduced;
    if (sr_ratio > 1) reduced = sr.forward(x);
    if (cache) {
      cache->input = x;
      cache->reduced_norm.assign(std::size_t(B), {});
      cache->kv_input.assign(std::size_t(B), {});
      cache->q.assign(std::size_t(B), {});
      cache->kv.assign(std::size_t(B), {});
      cache->mixed.assign(std::size_t(B), {});
      cache->attention.assign(std::size_t(B), std::vector<MatrixX<Scalar>>(std::size_t(num_heads)));
    }

    Tensor<Scalar> out(x.shape());
    for (Index b = 0; b < B; ++b) {
      const auto ub = std::size_t(b);
      MatrixX<Scalar> kv_in =
          sr_ratio > 1 ? norm.apply(reduced.tokens(b), cache ? &cache->reduced_norm[ub] : nullptr)
                       : MatrixX<Scalar>(x.tokens(b));
      MatrixX<Scalar> qm = q.apply(x.tokens(b));
      MatrixX<Scalar> kvm = kv.apply(kv_in);
      MatrixX<Scalar> mixed(qm.rows(), C);
      for (Index h = 0; h < num_heads; ++h) {
        MatrixX<Scalar> a = (qm.middleCols(h * d, d) * kvm.middleCols(h * d, d).transpose()) * scale;
        softmax_rows(a);
        mixed.middleCols(h * d, d).noalias() = a * kvm.middleCols(C + h * d, d);
        if (cache) cache->attention[ub][std::size_t(h)] = std::move(a);
      }
      out.tokens(b) = proj.apply(mixed);
      if (cache) {
        cache->kv_input[ub] = std::move(kv_in);
        cache->q[ub] = std::move(qm);
        cache->kv[ub] = std::move(kvm);
        cache->mixed[ub] = std::move(mixed);
      }
    }
    if (cache) cache->reduced = std::move(reduced);
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const Cache& cache) {
    const Index C = dim(), d = head_dim(), B = dy.n();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
    Tensor<Scalar> dx(cache.input.shape());
    Tensor<Scalar> d_reduced;
    if (sr_ratio > 1) d_reduced = Tensor<Scalar>(cache.reduced.shape());

    for (Index b = 0; b < B; ++b) {
      const auto ub = std::size_t(b);
      const MatrixX<Scalar>& qm = cache.q[ub];
      const MatrixX<Scalar>& kvm = cache.kv[ub];
      MatrixX<Scalar> d_mixed = proj.backward(cache.mixed[ub], dy.tokens(b));
      MatrixX<Scalar> dq(qm.rows(), C);
      MatrixX<Scalar> dkv(kvm.rows(), 2 * C);
      for (Index h = 0; h < num_heads; ++h) {
        const MatrixX<Scalar>& a = cache.attention[ub][std::size_t(h)];
        const auto dmix_h = d_mixed.middleCols(h * d, d);
        MatrixX<Scalar> da = dmix_h * kvm.middleCols(C + h * d, d).transpose();
        dkv.middleCols(C + h * d, d).noalias() = a.transpose() * dmix_h;
        const ArrayX<Scalar> row_dot = (da.array() * a.array()).rowwise().sum();
        MatrixX<Scalar> ds = (a.array() * (da.array().colwise() - row_dot)).matrix() * scale;
        dq.middleCols(h * d, d).noalias() = ds * kvm.middleCols(h * d, d);
        dkv.middleCols(h * d, d).noalias() = ds.transpose() * qm.middleCols(h * d, d);
      }
      MatrixX<Scalar> d_kv_in = kv.backward(cache.kv_input[ub], dkv);
      dx.tokens(b) = q.backward(cache.input.tokens(b), dq);
      if (sr_ratio > 1)
        d_reduced.tokens(b) = norm.backward(d_kv_in, cache.reduced_norm[ub]);
      else
        dx.tokens(b) += d_kv_in;
    }
    if (sr_ratio > 1) dx.array() += sr.backward(cache.input, d_reduced).array();
    return dx;
  }

  Shape trace(const Shape& in, LayerTrace& t, const std::string& prefix) const {
    const Index C = dim(), P = in.plane(), B = in.n;
    const Index keys = P / (sr_ratio * sr_ratio);
    t.push_back({prefix + ".q", LayerKind::linear, C, C, 1, B * P});
    if (sr_ratio > 1) {
      t.push_back({prefix + ".sr", LayerKind::conv2d, C, C, sr_ratio, B * keys});
      t.push_back({prefix + ".norm", LayerKind::layer_norm, 0, 0, 1, B * keys * C});
    }
    t.push_back({prefix + ".kv", LayerKind::linear, C, 2 * C, 1, B * keys});
    t.push_back({prefix + ".scores", LayerKind::attention_scores, 0, 0, 1, B * num_heads * P, keys,
                 head_dim()});
    t.push_back({prefix + ".softmax", LayerKind::softmax, 0, 0, 1, B * num_heads * P * keys});
    t.push_back({prefix + ".mix", LayerKind::attention_mix, 0, 0, 1, B * num_heads * P, keys,
                 head_dim()});
    t.push_back({prefix + ".proj", LayerKind::linear, C, C, 1, B * P});
    return in;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    q.collect(out, prefix + ".q");
    kv.collect(out, prefix + ".kv");
    proj.collect(out, prefix + ".proj");
    if (sr_ratio > 1) {
      sr.collect(out, prefix + ".sr");
      norm.collect(out, prefix + ".norm");
    }
  }

  static void softmax_rows(MatrixX<Scalar>& a) {
    const ArrayX<Scalar> row_max = a.rowwise().maxCoeff();
    a.array() = (a.array().colwise() - row_max).exp();
    const ArrayX<Scalar> row_sum = a.rowwise().sum();
    a.array().colwise() /= row_sum;
  }

  Linear<Scalar> q, kv, proj;
  Conv2d<Scalar> sr;
  LayerNorm<Scalar> norm;
  Index num_heads = 1;
  Index sr_ratio = 1;
};

// ---------------------------------------------------------------------------

/// fc1 (expand) -> 3x3 depthwise conv -> GELU -> fc2 (project back).
/// Residual belongs to the enclosing block.
template <typename Scalar>
class MixFfn {
 public:
  struct Cache {
    Tensor<Scalar> input, expanded, mixed, activated;
  };

  MixFfn() = default;
  MixFfn(Index dim, Index hidden) : fc1(dim, hidden), dwconv(hidden), fc2(hidden, dim) {}

  Index hidden_dim() const { return fc1.out_features(); }

  void init(std::mt19937_64& rng) {
    fc1.init(rng);
    dwconv.init(rng);
    fc2.init(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr) const {
    Tensor<Scalar> expanded = fc1.forward(x);
    Tensor<Scalar> mixed = dwconv.forward(expanded);
    Tensor<Scalar> activated(mixed.shape());
    activated.array() = mixed.array().unaryExpr([](Scalar v) { return gelu(v); });
    Tensor<Scalar> y = fc2.forward(activated);
    if (cache) {
      cache->input = x;
      cache->expanded = std::move(expanded);
      cache->mixed = std::move(mixed);
      cache->activated = std::move(activated);
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const Cache& cache) {
    Tensor<Scalar> d_act = fc2.backward(cache.activated, dy);
    d_act.array() *= cache.mixed.array().unaryExpr([](Scalar v) { return gelu_grad(v); });
    Tensor<Scalar> d_expanded = dwconv.backward(cache.expanded, d_act);
    return fc1.backward(cache.input, d_expanded);
  }

  Shape trace(const Shape& in, LayerTrace& t, const std::string& prefix) const {
    const Index P = in.n * in.plane(), hid = hidden_dim();
    t.push_back({prefix + ".fc1", LayerKind::linear, in.c, hid, 1, P});
    t.push_back({prefix + ".dwconv.dwconv", LayerKind::depthwise_conv, hid, hid, 3, P});
    t.push_back({prefix + ".act", LayerKind::gelu, 0, 0, 1, P * hid});
    t.push_back({prefix + ".fc2", LayerKind::linear, hid, in.c, 1, P});
    return in;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    dwconv.collect(out, prefix + ".dwconv.dwconv");
    fc2.collect(out, prefix + ".fc2");
  }

  Linear<Scalar> fc1;
  DepthwiseConv3x3<Scalar> dwconv;
  Linear<Scalar> fc2;
};

// ---------------------------------------------------------------------------

/// Pre-norm transformer block: x + attn(norm1(x)), then + mlp(norm2(.)).
/// With drop_path > 0 and a generator supplied, each residual branch is
/// dropped per sample (stochastic depth) and survivors rescaled.
template <typename Scalar>
class TransformerBlock {
 public:
  struct Cache {
    std::vector<typename LayerNorm<Scalar>::Cache> norm1, norm2;
    typename EfficientSelfAttention<Scalar>::Cache attn;
    typename MixFfn<Scalar>::Cache mlp;
    std::vector<Scalar> keep_attn, keep_mlp;  // per-sample branch scale
  };

  TransformerBlock() = default;
  TransformerBlock(const EncoderStageConfig& cfg, double drop_path = 0.0)
      : norm1(cfg.embed_dim),
        attn(cfg.embed_dim, cfg.num_heads, cfg.sr_ratio),
        norm2(cfg.embed_dim),
        mlp(cfg.embed_dim, cfg.hidden_dim()),
        drop_path(drop_path) {}

  void init(std::mt19937_64& rng) {
    norm1.init();
    attn.init(rng);
    norm2.init();
    mlp.init(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr,
                         std::mt19937_64* rng = nullptr) const {
    const auto B = std::size_t(x.n());
    std::vector<Scalar> keep_attn(B, Scalar(1)), keep_mlp(B, Scalar(1));
    if (rng && drop_path > 0.0) {
      draw_keep(keep_attn, *rng);
      draw_keep(keep_mlp, *rng);
    }
    Tensor<Scalar> a = attn.forward(norm1.forward(x, cache ? &cache->norm1 : nullptr),
                                    cache ? &cache->attn : nullptr);
    Tensor<Scalar> x1 = x;
    add_scaled(x1, a, keep_attn);
    Tensor<Scalar> m = mlp.forward(norm2.forward(x1, cache ? &cache->norm2 : nullptr),
                                   cache ? &cache->mlp : nullptr);
    add_scaled(x1, m, keep_mlp);
    if (cache) {
      cache->keep_attn = std::move(keep_attn);
      cache->keep_mlp = std::move(keep_mlp);
    }
    return x1;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const Cache& cache) {
    Tensor<Scalar> d_branch = dy;
    scale_samples(d_branch, cache.keep_mlp);
    Tensor<Scalar> dx1 = norm2.backward(mlp.backward(d_branch, cache.mlp), cache.norm2);
    dx1.array() += dy.array();
    d_branch = dx1;
    scale_samples(d_branch, cache.keep_attn);
    Tensor<Scalar> dx = norm1.backward(attn.backward(d_branch, cache.attn), cache.norm1);
    dx.array() += dx1.array();
    return dx;
  }

  Shape trace(const Shape& in, LayerTrace& t, const std::string& prefix) const {
    t.push_back({prefix + ".norm1", LayerKind::layer_norm, 0, 0, 1, in.size()});
    attn.trace(in, t, prefix + ".attn");
    t.push_back({prefix + ".add1", LayerKind::residual_add, 0, 0, 1, in.size()});
    t.push_back({prefix + ".norm2", LayerKind::layer_norm, 0, 0, 1, in.size()});
    mlp.trace(in, t, prefix + ".mlp");
    t.push_back({prefix + ".add2", LayerKind::residual_add, 0, 0, 1, in.size()});
    return in;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    norm1.collect(out, prefix + ".norm1");
    attn.collect(out, prefix + ".attn");
    norm2.collect(out, prefix + ".norm2");
    mlp.collect(out, prefix + ".mlp");
  }

  LayerNorm<Scalar> norm1;
  EfficientSelfAttention<Scalar> attn;
  LayerNorm<Scalar> norm2;
  MixFfn<Scalar> mlp;
  double drop_path = 0.0;

 private:
  void draw_keep(std::vector<Scalar>& keep, std::mt19937_64& rng) const {
    std::bernoulli_distribution survive(1.0 - drop_path);
    for (auto& k : keep) k = survive(rng) ? Scalar(1.0 / (1.0 - drop_path)) : Scalar(0);
  }

  static void add_scaled(Tensor<Scalar>& acc, const Tensor<Scalar>& branch,
                         const std::vector<Scalar>& keep) {
    const Index n = acc.c() * acc.plane();
    for (Index b = 0; b < acc.n(); ++b) {
      Eigen::Map<ArrayX<Scalar>> dst(acc.sample(b), n);
      Eigen::Map<const ArrayX<Scalar>> src(branch.sample(b), n);
      if (keep[std::size_t(b)] == Scalar(1))
        dst += src;
      else if (keep[std::size_t(b)] != Scalar(0))
        dst += src * keep[std::size_t(b)];
    }
  }

  static void scale_samples(Tensor<Scalar>& t, const std::vector<Scalar>& keep) {
    const Index n = t.c() * t.plane();
    for (Index b = 0; b < t.n(); ++b)
      if (keep[std::size_t(b)] != Scalar(1))
        Eigen::Map<ArrayX<Scalar>>(t.sample(b), n) *= keep[std::size_t(b)];
  }
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class EncoderStage {
 public:
  struct Cache {
    typename OverlapPatchEmbed<Scalar>::Cache embed;
    std::vector<typename TransformerBlock<Scalar>::Cache> blocks;
    std::vector<typename LayerNorm<Scalar>::Cache> norm;
  };

  EncoderStage() = default;
  EncoderStage(Index in_channels, const EncoderStageConfig& cfg,
               const std::vector<double>& drop_path = {})
      : config(cfg), patch_embed(in_channels, cfg), norm(cfg.embed_dim) {
    cfg.validate();
    for (Index j = 0; j < cfg.depth; ++j)
      blocks.emplace_back(cfg, drop_path.empty() ? 0.0 : drop_path[std::size_t(j)]);
  }

  void init(std::mt19937_64& rng) {
    patch_embed.init(rng);
    for (auto& blk : blocks) blk.init(rng);
    norm.init();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr,
                         std::mt19937_64* rng = nullptr) const {
    if (cache) cache->blocks.assign(blocks.size(), {});
    Tensor<Scalar> h = patch_embed.forward(x, cache ? &cache->embed : nullptr);
    for (std::size_t j = 0; j < blocks.size(); ++j)
      h = blocks[j].forward(h, cache ? &cache->blocks[j] : nullptr, rng);
    return norm.forward(h, cache ? &cache->norm : nullptr);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const Cache& cache) {
    Tensor<Scalar> g = norm.backward(dy, cache.norm);
    for (std::size_t j = blocks.size(); j-- > 0;) g = blocks[j].backward(g, cache.blocks[j]);
    return patch_embed.backward(g, cache.embed);
  }

  Shape trace(const Shape& in, LayerTrace& t, Index stage) const {
    const std::string s = std::to_string(stage);
    Shape h = patch_embed.trace(in, t, "backbone.patch_embed" + s);
    for (std::size_t j = 0; j < blocks.size(); ++j)
      h = blocks[j].trace(h, t, "backbone.block" + s + "." + std::to_string(j));
    t.push_back({"backbone.norm" + s, LayerKind::layer_norm, 0, 0, 1, h.size()});
    return h;
  }

  void collect(ParameterList<Scalar>& out, Index stage) {
    const std::string s = std::to_string(stage);
    patch_embed.collect(out, "backbone.patch_embed" + s);
    for (std::size_t j = 0; j < blocks.size(); ++j)
      blocks[j].collect(out, "backbone.block" + s + "." + std::to_string(j));
    norm.collect(out, "backbone.norm" + s);
  }

  EncoderStageConfig config;
  OverlapPatchEmbed<Scalar> patch_embed;
  std::vector<TransformerBlock<Scalar>> blocks;
  LayerNorm<Scalar> norm;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
class MixTransformer {
 public:
  struct Cache {
    std::array<typename EncoderStage<Scalar>::Cache, 4> stages;
  };

  MixTransformer() = default;

  /// `drop_path_rate` is spread linearly over all blocks, first block 0.
  explicit MixTransformer(const std::array<EncoderStageConfig, 4>& cfgs, Index in_channels = 3,
                          double drop_path_rate = 0.0)
      : in_channels(in_channels) {
    Index total = 0;
    for (const auto& c : cfgs) total += c.depth;
    Index k = 0;
    Index prev = in_channels;
    for (std::size_t i = 0; i < 4; ++i) {
      std::vector<double> rates;
      for (Index j = 0; j < cfgs[i].depth; ++j, ++k)
        rates.push_back(total > 1 ? drop_path_rate * double(k) / double(total - 1) : 0.0);
      stages[i] = EncoderStage<Scalar>(prev, cfgs[i], rates);
      prev = cfgs[i].embed_dim;
    }
  }

  /// Total downsampling between input and the deepest level.
  Index total_stride() const {
    Index s = 1;
    for (const auto& st : stages) s *= st.config.stride;
    return s;
  }

  void init(std::mt19937_64& rng) {
    for (auto& s : stages) s.init(rng);
  }

  void check_input(const Shape& s) const {
    require_dim("channels", s.c, in_channels, "encode");
    const Index m = total_stride();
    if (s.h % m != 0)
      throw ShapeError("height", "encode: height " + std::to_string(s.h) +
                                     " is not divisible by " + std::to_string(m) +
                                     "; resize the input first");
    if (s.w % m != 0)
      throw ShapeError("width", "encode: width " + std::to_string(s.w) + " is not divisible by " +
                                    std::to_string(m) + "; resize the input first");
  }

  FeaturePyramid<Scalar> forward(const Tensor<Scalar>& image, Cache* cache = nullptr,
                                 std::mt19937_64* rng = nullptr) const {
    check_input(image.shape());
    FeaturePyramid<Scalar> out;
    const Tensor<Scalar>* x = &image;
    for (std::size_t i = 0; i < 4; ++i) {
      out[i] = stages[i].forward(*x, cache ? &cache->stages[i] : nullptr, rng);
      x = &out[i];
    }
    return out;
  }

  /// `grads` holds d(loss)/d(level) per pyramid level; empty levels count as zero.
  Tensor<Scalar> backward(const FeaturePyramid<Scalar>& grads, const Cache& cache) {
    Tensor<Scalar> g = grads[3];
    for (std::size_t i = 4; i-- > 0;) {
      if (i < 3 && !grads[i].empty()) g.array() += grads[i].array();
      g = stages[i].backward(g, cache.stages[i]);
    }
    return g;
  }

  void trace(const Shape& in, LayerTrace& t, std::array<Shape, 4>* levels = nullptr) const {
    Shape s = in;
    for (std::size_t i = 0; i < 4; ++i) {
      s = stages[i].trace(s, t, Index(i + 1));
      if (levels) (*levels)[i] = s;
    }
  }

  void collect(ParameterList<Scalar>& out) {
    for (std::size_t i = 0; i < 4; ++i) stages[i].collect(out, Index(i + 1));
  }

  Index in_channels = 3;
  std::array<EncoderStage<Scalar>, 4> stages;
};

}  // namespace esfp
