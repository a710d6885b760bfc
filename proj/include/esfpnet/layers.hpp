#pragma once

// Primitive layers with hand-written backward passes. Layers own parameters
// only; activations needed for backward are kept by the caller.

#include "esfpnet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace esfp {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Truncated normal fill (cut at two standard deviations).
template <typename Scalar>
void trunc_normal(ArrayX<Scalar>& a, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < a.size(); ++i) {
    double v;
    do v = dist(rng);
    while (std::abs(v) > 2.0);
    a[i] = static_cast<Scalar>(v * stddev);
  }
}

template <typename Scalar>
void normal_fill(ArrayX<Scalar>& a, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------------------
// Linear (per-token / 1x1 convolution)

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out) : weight({out, in}), bias({out}) {}

  Index in_features() const { return weight.dims[1]; }
  Index out_features() const { return weight.dims[0]; }

  void init(std::mt19937_64& rng) {
    trunc_normal(weight.value, 0.02, rng);
    bias.value.setZero();
  }

  template <typename Derived>
  MatrixX<Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    require_dim("channels", x.cols(), in_features(), "linear");
    MatrixX<Scalar> y = x * weight.matrix().transpose();
    y.rowwise() += bias.value.matrix().transpose();
    return y;
  }

  /// Accumulates parameter gradients; returns d(input).
  template <typename DX, typename DY>
  MatrixX<Scalar> backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& dy) {
    weight.grad_matrix().noalias() += dy.transpose() * x;
    bias.grad.matrix() += dy.colwise().sum().transpose();
    return dy * weight.matrix();
  }

  /// Per-pixel map over a whole NCHW tensor.
  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    require_dim("channels", x.c(), in_features(), "linear");
    Tensor<Scalar> y(Shape{x.n(), out_features(), x.h(), x.w()});
    for (Index b = 0; b < x.n(); ++b) {
      y.tokens(b).noalias() = x.tokens(b) * weight.matrix().transpose();
      y.tokens(b).rowwise() += bias.value.matrix().transpose();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx(x.shape());
    for (Index b = 0; b < x.n(); ++b) {
      weight.grad_matrix().noalias() += dy.tokens(b).transpose() * x.tokens(b);
      bias.grad.matrix() += dy.tokens(b).colwise().sum().transpose();
      dx.tokens(b).noalias() = dy.tokens(b) * weight.matrix();
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

// ---------------------------------------------------------------------------
// Dense 2-D convolution, square kernel, im2col + GEMM.

struct ConvGeometry {
  Index in_channels = 0, out_channels = 0, kernel = 1, stride = 1, padding = 0;

  Index out_extent(Index in) const { return (in + 2 * padding - kernel) / stride + 1; }
};

namespace detail {

/// cols is (Ho*Wo) x (C*k*k), column-major; column (c*k + ky)*k + kx.
template <typename Scalar>
void im2col(const Scalar* img, Index C, Index H, Index W, const ConvGeometry& g, Index Ho,
            Index Wo, Scalar* cols) {
  const Index P = Ho * Wo, k = g.kernel;
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* col = cols + ((c * k + ky) * k + kx) * P;
        const Scalar* src = img + c * H * W;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          Scalar* row = col + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(row, row + Wo, Scalar(0));
            continue;
          }
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            row[ox] = (ix >= 0 && ix < W) ? src[iy * W + ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index C, Index H, Index W, const ConvGeometry& g, Index Ho,
            Index Wo, Scalar* img) {
  const Index P = Ho * Wo, k = g.kernel;
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* col = cols + ((c * k + ky) * k + kx) * P;
        Scalar* dst = img + c * H * W;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < W) dst[iy * W + ix] += col[oy * Wo + ox];
          }
        }
      }
}

}  // namespace detail

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  explicit Conv2d(ConvGeometry g)
      : geometry(g),
        weight({g.out_channels, g.in_channels, g.kernel, g.kernel}),
        bias({g.out_channels}) {}

  /// Reference backbone convention: N(0, sqrt(2 / fan_out)).
  void init(std::mt19937_64& rng) {
    const double fan_out = double(geometry.kernel * geometry.kernel * geometry.out_channels);
    normal_fill(weight.value, std::sqrt(2.0 / fan_out), rng);
    bias.value.setZero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    require_dim("channels", x.c(), geometry.in_channels, "conv2d");
    const Index Ho = geometry.out_extent(x.h()), Wo = geometry.out_extent(x.w());
    Tensor<Scalar> y(Shape{x.n(), geometry.out_channels, Ho, Wo});
    MatrixX<Scalar> cols(Ho * Wo, x.c() * geometry.kernel * geometry.kernel);
    for (Index b = 0; b < x.n(); ++b) {
      detail::im2col(x.sample(b), x.c(), x.h(), x.w(), geometry, Ho, Wo, cols.data());
      y.tokens(b).noalias() = cols * weight.matrix().transpose();
      y.tokens(b).rowwise() += bias.value.matrix().transpose();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
    const Index Ho = dy.h(), Wo = dy.w();
    Tensor<Scalar> dx(x.shape());
    MatrixX<Scalar> cols(Ho * Wo, x.c() * geometry.kernel * geometry.kernel);
    MatrixX<Scalar> dcols(cols.rows(), cols.cols());
    for (Index b = 0; b < x.n(); ++b) {
      detail::im2col(x.sample(b), x.c(), x.h(), x.w(), geometry, Ho, Wo, cols.data());
      weight.grad_matrix().noalias() += dy.tokens(b).transpose() * cols;
      bias.grad.matrix() += dy.tokens(b).colwise().sum().transpose();
      dcols.noalias() = dy.tokens(b) * weight.matrix();
      detail::col2im(dcols.data(), x.c(), x.h(), x.w(), geometry, Ho, Wo, dx.sample(b));
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  ConvGeometry geometry;
  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

// ---------------------------------------------------------------------------
// 3x3 depthwise convolution, stride 1, zero padding 1.

template <typename Scalar>
class DepthwiseConv3x3 {
 public:
  DepthwiseConv3x3() = default;
  explicit DepthwiseConv3x3(Index channels) : weight({channels, 1, 3, 3}), bias({channels}) {}

  Index channels() const { return weight.dims[0]; }

  void init(std::mt19937_64& rng) {
    normal_fill(weight.value, std::sqrt(2.0 / 9.0), rng);  // fan_out = 9 per group
    bias.value.setZero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    require_dim("channels", x.c(), channels(), "depthwise_conv");
    Tensor<Scalar> y(x.shape());
    const Index H = x.h(), W = x.w();
    for (Index b = 0; b < x.n(); ++b)
      for (Index c = 0; c < x.c(); ++c) {
        const Scalar* src = x.sample(b) + c * H * W;
        Scalar* dst = y.sample(b) + c * H * W;
        const Scalar* k = weight.value.data() + c * 9;
        const Scalar bc = bias.value[c];
        for (Index yy = 0; yy < H; ++yy)
          for (Index xx = 0; xx < W; ++xx) {
            Scalar acc = bc;
            for (Index dy = -1; dy <= 1; ++dy) {
              const Index iy = yy + dy;
              if (iy < 0 || iy >= H) continue;
              for (Index dx = -1; dx <= 1; ++dx) {
                const Index ix = xx + dx;
                if (ix < 0 || ix >= W) continue;
                acc += k[(dy + 1) * 3 + (dx + 1)] * src[iy * W + ix];
              }
            }
            dst[yy * W + xx] = acc;
          }
      }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx(x.shape());
    const Index H = x.h(), W = x.w();
    for (Index b = 0; b < x.n(); ++b)
      for (Index c = 0; c < x.c(); ++c) {
        const Scalar* src = x.sample(b) + c * H * W;
        const Scalar* g = dy.sample(b) + c * H * W;
        Scalar* gx = dx.sample(b) + c * H * W;
        const Scalar* k = weight.value.data() + c * 9;
        Scalar* gk = weight.grad.data() + c * 9;
        Scalar gb = 0;
        for (Index yy = 0; yy < H; ++yy)
          for (Index xx = 0; xx < W; ++xx) {
            const Scalar go = g[yy * W + xx];
            gb += go;
            for (Index ddy = -1; ddy <= 1; ++ddy) {
              const Index iy = yy + ddy;
              if (iy < 0 || iy >= H) continue;
              for (Index ddx = -1; ddx <= 1; ++ddx) {
                const Index ix = xx + ddx;
                if (ix < 0 || ix >= W) continue;
                const Index t = (ddy + 1) * 3 + (ddx + 1);
                gk[t] += go * src[iy * W + ix];
                gx[iy * W + ix] += go * k[t];
              }
            }
          }
        bias.grad[c] += gb;
      }
    return dx;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

// ---------------------------------------------------------------------------
// Layer normalization over the channel axis of a token matrix.

template <typename Scalar>
class LayerNorm {
 public:
  struct Cache {
    MatrixX<Scalar> normalized;  // (x - mean) * rstd
    ArrayX<Scalar> rstd;
  };

  LayerNorm() = default;
  explicit LayerNorm(Index channels, double eps = 1e-6)
      : weight({channels}), bias({channels}), eps(eps) {
    weight.value.setOnes();
  }

  Index channels() const { return weight.dims[0]; }

  void init() {
    weight.value.setOnes();
    bias.value.setZero();
  }

  template <typename Derived>
  MatrixX<Scalar> apply(const Eigen::MatrixBase<Derived>& x, Cache* cache = nullptr) const {
    require_dim("channels", x.cols(), channels(), "layer_norm");
    const auto mean = x.rowwise().mean();
    MatrixX<Scalar> centered = x.colwise() - mean;
    ArrayX<Scalar> rstd =
        ((centered.array().square().rowwise().sum() / Scalar(x.cols())) + Scalar(eps)).rsqrt();
    centered.array().colwise() *= rstd;
    MatrixX<Scalar> y = (centered.array().rowwise() * weight.value.transpose()).rowwise() +
                        bias.value.transpose();
    if (cache) {
      cache->normalized = std::move(centered);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  template <typename Derived>
  MatrixX<Scalar> backward(const Eigen::MatrixBase<Derived>& dy, const Cache& cache) {
    const auto& xhat = cache.normalized;
    weight.grad += (dy.array() * xhat.array()).colwise().sum().transpose();
    bias.grad += dy.array().colwise().sum().transpose();
    MatrixX<Scalar> dxhat = (dy.array().rowwise() * weight.value.transpose()).matrix();
    const Scalar inv_c = Scalar(1) / Scalar(channels());
    ArrayX<Scalar> mean_d = dxhat.rowwise().sum().array() * inv_c;
    ArrayX<Scalar> mean_dx = (dxhat.array() * xhat.array()).rowwise().sum() * inv_c;
    MatrixX<Scalar> dx =
        ((dxhat.array().colwise() - mean_d) - xhat.array().colwise() * mean_dx).matrix();
    dx.array().colwise() *= cache.rstd;
    return dx;
  }

  /// Per-pixel normalization of a whole NCHW tensor.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, std::vector<Cache>* caches = nullptr) const {
    Tensor<Scalar> y(x.shape());
    if (caches) caches->assign(std::size_t(x.n()), Cache{});
    for (Index b = 0; b < x.n(); ++b)
      y.tokens(b) = apply(x.tokens(b), caches ? &(*caches)[std::size_t(b)] : nullptr);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, const std::vector<Cache>& caches) {
    Tensor<Scalar> dx(dy.shape());
    for (Index b = 0; b < dy.n(); ++b)
      dx.tokens(b) = backward(dy.tokens(b), caches[std::size_t(b)]);
    return dx;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
  double eps = 1e-6;
};

// ---------------------------------------------------------------------------
// Elementwise and resampling helpers.

/// Exact (erf-based) Gaussian error linear unit.
template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
  return cdf + x * pdf;
}

/// Numerically stable logistic function.
template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

namespace detail {

/// Source taps for half-pixel (align_corners = false) bilinear resampling.
struct LinearTaps {
  std::vector<Index> lo, hi;
  std::vector<double> w_hi;

  LinearTaps(Index in, Index out) : lo(out), hi(out), w_hi(out) {
    const double scale = double(in) / double(out);
    for (Index i = 0; i < out; ++i) {
      double src = (double(i) + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      const Index i0 = std::min<Index>(Index(src), in - 1);
      lo[i] = i0;
      hi[i] = i0 < in - 1 ? i0 + 1 : i0;
      w_hi[i] = src - double(i0);
    }
  }
};

}  // namespace detail

/// Bilinear resize with the half-pixel-centre convention: output pixel i maps
/// to source coordinate (i + 0.5) * in / out - 0.5, clamped at 0, with edge
/// replication on the far side.
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  if (x.h() == out_h && x.w() == out_w) return x;
  const detail::LinearTaps ty(x.h(), out_h), tx(x.w(), out_w);
  Tensor<Scalar> y(Shape{x.n(), x.c(), out_h, out_w});
  for (Index b = 0; b < x.n(); ++b)
    for (Index c = 0; c < x.c(); ++c) {
      const Scalar* src = x.sample(b) + c * x.plane();
      Scalar* dst = y.sample(b) + c * out_h * out_w;
      for (Index oy = 0; oy < out_h; ++oy) {
        const Scalar wy1 = Scalar(ty.w_hi[oy]), wy0 = Scalar(1) - wy1;
        const Scalar* r0 = src + ty.lo[oy] * x.w();
        const Scalar* r1 = src + ty.hi[oy] * x.w();
        for (Index ox = 0; ox < out_w; ++ox) {
          const Scalar wx1 = Scalar(tx.w_hi[ox]), wx0 = Scalar(1) - wx1;
          const Index x0 = tx.lo[ox], x1 = tx.hi[ox];
          dst[oy * out_w + ox] =
              wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
        }
      }
    }
  return y;
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear_backward(const Tensor<Scalar>& dy, Index in_h, Index in_w) {
  if (dy.h() == in_h && dy.w() == in_w) return dy;
  const detail::LinearTaps ty(in_h, dy.h()), tx(in_w, dy.w());
  Tensor<Scalar> dx(Shape{dy.n(), dy.c(), in_h, in_w});
  for (Index b = 0; b < dy.n(); ++b)
    for (Index c = 0; c < dy.c(); ++c) {
      const Scalar* g = dy.sample(b) + c * dy.plane();
      Scalar* dst = dx.sample(b) + c * in_h * in_w;
      for (Index oy = 0; oy < dy.h(); ++oy) {
        const Scalar wy1 = Scalar(ty.w_hi[oy]), wy0 = Scalar(1) - wy1;
        Scalar* r0 = dst + ty.lo[oy] * in_w;
        Scalar* r1 = dst + ty.hi[oy] * in_w;
        for (Index ox = 0; ox < dy.w(); ++ox) {
          const Scalar wx1 = Scalar(tx.w_hi[ox]), wx0 = Scalar(1) - wx1;
          const Index x0 = tx.lo[ox], x1 = tx.hi[ox];
          const Scalar v = g[oy * dy.w() + ox];
          r0[x0] += wy0 * wx0 * v;
          r0[x1] += wy0 * wx1 * v;
          r1[x0] += wy1 * wx0 * v;
          r1[x1] += wy1 * wx1 * v;
        }
      }
    }
  return dx;
}

/// Channelwise concatenation of same-sized tensors.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts) {
  const Tensor<Scalar>& first = *parts.front();
  Index channels = 0;
  for (const auto* p : parts) {
    require_dim("batch", p->n(), first.n(), "concat");
    require_dim("height", p->h(), first.h(), "concat");
    require_dim("width", p->w(), first.w(), "concat");
    channels += p->c();
  }
  Tensor<Scalar> out(Shape{first.n(), channels, first.h(), first.w()});
  for (Index b = 0; b < first.n(); ++b) {
    Index offset = 0;
    for (const auto* p : parts) {
      out.tokens(b).middleCols(offset, p->c()) = p->tokens(b);
      offset += p->c();
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index offset, Index count) {
  Tensor<Scalar> out(Shape{x.n(), count, x.h(), x.w()});
  for (Index b = 0; b < x.n(); ++b) out.tokens(b) = x.tokens(b).middleCols(offset, count);
  return out;
}

}  // namespace esfp
