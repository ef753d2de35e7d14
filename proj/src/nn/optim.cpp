#include "mtlface/nn/optim.hpp"

#include <cmath>

#include "mtlface/kernels/kernels.hpp"

namespace mtlface::nn {

Sgd::Sgd(std::vector<Var<float>> params, float momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.shape());
}

void Sgd::step(float lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<float>& g = params_[i].grad();
    if (!g.defined()) continue;
    Tensor<float>& v = velocity_[i];
    kernels::scale<float>(v.numel(), momentum_, v.data());
    kernels::axpy<float>(v.numel(), 1.0f, g.data(), v.data());
    kernels::axpy<float>(v.numel(), -lr, v.data(), params_[i].mutable_value().data());
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Var<float>> params, float lr, float beta1, float beta2,
           float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  const float step = lr_ / bc1;
  const float inv_sqrt_bc2 = 1.0f / std::sqrt(bc2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<float>& g = params_[i].grad();
    if (!g.defined()) continue;
    float* m = m_[i].data();
    float* v = v_[i].data();
    float* p = params_[i].mutable_value().data();
    const float* gp = g.data();
    for (std::size_t k = 0; k < g.numel(); ++k) {
      m[k] = beta1_ * m[k] + (1.0f - beta1_) * gp[k];
      v[k] = beta2_ * v[k] + (1.0f - beta2_) * gp[k] * gp[k];
      p[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace mtlface::nn
