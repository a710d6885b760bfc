#pragma once

// AdamW with decoupled weight decay, PyTorch defaults.

#include "esfpnet/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace esfp {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

template <typename Scalar>
class AdamW {
 public:
  using Array = typename Parameter<Scalar>::Array;

  AdamW(ParameterList<Scalar> params, AdamWConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.push_back(Array::Zero(p.param->size()));
      v_.push_back(Array::Zero(p.param->size()));
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }
  const ParameterList<Scalar>& parameters() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.param->grad.setZero();
  }

  /// One update from the accumulated gradients. With lr = 0 the parameter
  /// values are left bit-for-bit unchanged (moments still advance).
  void step() {
    ++t_;
    const Scalar lr = Scalar(cfg_.lr);
    const Scalar b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
    const Scalar bc1 = Scalar(1) - Scalar(std::pow(cfg_.beta1, double(t_)));
    const Scalar bc2 = Scalar(1) - Scalar(std::pow(cfg_.beta2, double(t_)));
    const Scalar decay = Scalar(1) - lr * Scalar(cfg_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i].param;
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * p.grad.square();
      if (lr == Scalar(0)) continue;
      p.value *= decay;
      p.value -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + Scalar(cfg_.eps));
    }
  }

 private:
  ParameterList<Scalar> params_;
  AdamWConfig cfg_;
  std::vector<Array> m_, v_;
  long t_ = 0;
};

}  // namespace esfp
