#pragma once

#include <vector>

#include "mtlface/core/autograd.hpp"

namespace mtlface::nn {

class Sgd {
 public:
  Sgd(std::vector<Var<float>> params, float momentum);
  /// v = momentum*v + g; p -= lr*v. Parameters without a gradient are skipped.
  void step(float lr);
  void zero_grad();
  const std::vector<Var<float>>& params() const { return params_; }
  std::vector<Tensor<float>>& state() { return velocity_; }

 private:
  std::vector<Var<float>> params_;
  std::vector<Tensor<float>> velocity_;
  float momentum_;
};

class Adam {
 public:
  Adam(std::vector<Var<float>> params, float lr, float beta1, float beta2,
       float eps = 1e-8f);
  void step();
  void zero_grad();
  const std::vector<Var<float>>& params() const { return params_; }
  long steps() const { return t_; }

 private:
  std::vector<Var<float>> params_;
  std::vector<Tensor<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace mtlface::nn
