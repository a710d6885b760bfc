#pragma once

// Shared test helpers: closed-form parameter fills, central finite
// differences and naive reference loops.

#include "esfpnet/metrics.hpp"
#include "esfpnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

namespace esfp::test {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Same closed form as tests/oracles/torch_reference.py.
template <typename Scalar>
void fill_pattern(EsfpNet<Scalar>& model) {
  auto params = model.parameters();
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto& p = *params[j].param;
    const std::string& name = params[j].name;
    const bool norm_weight = name.find("norm") != std::string::npos && ends_with(name, ".weight");
    const bool bias = ends_with(name, ".bias");
    const double fan_in = double(p.size() / p.dims[0]);
    for (Index i = 0; i < p.size(); ++i) {
      const double wave = std::sin(0.7 * double(i) + 1.3 * double(j) + 0.1);
      p.value[i] = Scalar(norm_weight ? 1.0 + 0.1 * wave : bias ? 0.05 * wave : wave / std::sqrt(fan_in));
    }
  }
}

template <typename Scalar>
Tensor<Scalar> pattern_image(Shape s) {
  Tensor<Scalar> x(s);
  for (Index i = 0; i < x.size(); ++i)
    x.array()[i] = Scalar(std::sin(0.013 * double(i)) + 0.5 * std::cos(0.091 * double(i)));
  return x;
}

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor<double> t(s);
  for (Index i = 0; i < t.size(); ++i) t.array()[i] = d(rng);
  return t;
}

/// Central differences of a scalar function of `x` (perturbed in place).
inline Eigen::ArrayXd numeric_gradient(Eigen::Ref<Eigen::ArrayXd> x,
                                       const std::function<double()>& f, double h = 1e-5) {
  Eigen::ArrayXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max |a - n| / max |n|, guarded against all-zero gradients.
inline double relative_error(const Eigen::ArrayXd& analytic, const Eigen::ArrayXd& numeric) {
  const double scale = std::max(numeric.abs().maxCoeff(), 1e-12);
  return (analytic - numeric).abs().maxCoeff() / scale;
}

struct GradientReport {
  double input = 0.0;   // relative error of d(loss)/d(input)
  double params = 0.0;  // worst relative error over parameters
  std::string worst;    // parameter with that error
  double max() const { return std::max(input, params); }
};

/// Checks a layer against finite differences of loss = sum(r * forward(x))
/// for a fixed random r. `forward` reads `x` and the parameters; `analytic`
/// runs forward with a cache plus backward for the given d(loss)/d(y),
/// accumulating parameter gradients and returning d(loss)/d(x).
inline GradientReport check_gradients(
    Tensor<double>& x, const ParameterList<double>& params,
    const std::function<Tensor<double>()>& forward,
    const std::function<Tensor<double>(const Tensor<double>&)>& analytic, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  const Tensor<double> r = random_tensor(forward().shape(), rng);
  auto loss = [&] { return (forward().array() * r.array()).sum(); };
  for (const auto& p : params) p.param->grad.setZero();
  const Tensor<double> dx = analytic(r);
  GradientReport rep;
  rep.input = relative_error(dx.array(), numeric_gradient(x.array(), loss));
  for (const auto& p : params) {
    const double e = relative_error(p.param->grad, numeric_gradient(p.param->value, loss));
    if (e >= rep.params) {
      rep.params = e;
      rep.worst = p.name;
    }
  }
  return rep;
}

// Naive pixel loops.

inline double naive_dice(const Mask& p, const Mask& g) {
  long inter = 0, np = 0, ng = 0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) {
      inter += p(y, x) && g(y, x);
      np += p(y, x);
      ng += g(y, x);
    }
  return np + ng == 0 ? 1.0 : 2.0 * double(inter) / double(np + ng);
}

inline double naive_iou(const Mask& p, const Mask& g) {
  long inter = 0, uni = 0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) {
      inter += p(y, x) && g(y, x);
      uni += p(y, x) || g(y, x);
    }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline double naive_mae(const ProbMap& p, const Mask& g) {
  double s = 0;
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) s += std::abs(p(y, x) - (g(y, x) ? 1.0 : 0.0));
  return s / double(p.size());
}

}  // namespace esfp::test
