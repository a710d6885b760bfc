#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace esfp {

using Index = Eigen::Index;

/// Raised when tensor dimensions violate an operation's contract. `axis()`
/// names the offending dimension ("batch", "channels", "height", "width", ...).
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string axis, const std::string& what)
      : std::invalid_argument(what), axis_(std::move(axis)) {}
  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NCHW extents.
struct Shape {
  Index n = 0, c = 0, h = 0, w = 0;

  Index plane() const { return h * w; }
  Index size() const { return n * c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

inline void require_dim(const char* axis, Index got, Index want, const char* op) {
  if (got != want)
    throw ShapeError(axis, std::string(op) + ": " + axis + " is " + std::to_string(got) +
                               ", expected " + std::to_string(want));
}

/// Dense rank-4 tensor in NCHW order.
///
/// Each sample is stored contiguously, so sample `b` viewed as a column-major
/// (H*W) x C matrix is the token matrix a transformer layer consumes: row p is
/// the feature vector at pixel p. `tokens(b)` exposes that view without a copy.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), data_(Array::Zero(s.size())) {}
  Tensor(Index n, Index c, Index h, Index w) : Tensor(Shape{n, c, h, w}) {}

  static Tensor constant(Shape s, Scalar v) {
    Tensor t(s);
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index c() const { return shape_.c; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index plane() const { return shape_.plane(); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index b, Index ch, Index y, Index x) {
    return data_[((b * shape_.c + ch) * shape_.h + y) * shape_.w + x];
  }
  Scalar operator()(Index b, Index ch, Index y, Index x) const {
    return data_[((b * shape_.c + ch) * shape_.h + y) * shape_.w + x];
  }

  Scalar* sample(Index b) { return data() + b * shape_.c * plane(); }
  const Scalar* sample(Index b) const { return data() + b * shape_.c * plane(); }

  MatrixMap tokens(Index b) { return MatrixMap(sample(b), plane(), shape_.c); }
  ConstMatrixMap tokens(Index b) const { return ConstMatrixMap(sample(b), plane(), shape_.c); }

  /// One H x W channel plane, row-major (x fastest).
  auto channel(Index b, Index ch) {
    return Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        sample(b) + ch * plane(), shape_.h, shape_.w);
  }
  auto channel(Index b, Index ch) const {
    return Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        sample(b) + ch * plane(), shape_.h, shape_.w);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

 private:
  Shape shape_{};
  Array data_;
};

/// A trainable tensor with its gradient accumulator. Dimensions follow the
/// reference layout: linear (out, in), conv (out, in, kh, kw), vectors (n).
template <typename Scalar>
struct Parameter {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::vector<Index> dims;
  Array value;
  Array grad;

  Parameter() = default;
  explicit Parameter(std::vector<Index> d) : dims(std::move(d)) {
    const Index n = std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
    value = Array::Zero(n);
    grad = Array::Zero(n);
  }

  Index size() const { return value.size(); }

  /// (dims[0], product of remaining dims) row-major view.
  Eigen::Map<RowMatrix> matrix() { return {value.data(), dims[0], value.size() / dims[0]}; }
  Eigen::Map<const RowMatrix> matrix() const {
    return {value.data(), dims[0], value.size() / dims[0]};
  }
  Eigen::Map<RowMatrix> grad_matrix() { return {grad.data(), dims[0], grad.size() / dims[0]}; }
};

/// Named reference into a module's parameter, for optimizers and serialization.
template <typename Scalar>
struct NamedParameter {
  std::string name;
  Parameter<Scalar>* param;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

}  // namespace esfp
