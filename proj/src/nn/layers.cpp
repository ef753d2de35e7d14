#include "mtlface/nn/layers.hpp"

#include <cmath>

namespace mtlface::nn {

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name,
               const std::string& group, int cin, int cout, int k, int stride_,
               int pad_, Rng& rng, bool bias, float gain)
    : stride(stride_), pad(pad_) {
  w = reg.add(name + ".w", group, kaiming_normal({cout, cin, k, k}, cin * k * k, rng, gain));
  if (bias) b = reg.add(name + ".b", group, Tensor<float>({cout}));
}

VF Conv2d::operator()(const VF& x) const { return ops::conv2d(x, w, b, stride, pad); }

Linear::Linear(ParamRegistry& reg, const std::string& name,
               const std::string& group, int in, int out, Rng& rng, bool bias,
               float gain) {
  w = reg.add(name + ".w", group, kaiming_normal({out, in}, in, rng, gain));
  if (bias) b = reg.add(name + ".b", group, Tensor<float>({out}));
}

VF Linear::operator()(const VF& x) const { return ops::linear(x, w, b); }

BatchNorm2d::BatchNorm2d(ParamRegistry& reg, const std::string& name,
                         const std::string& group, int channels) {
  gamma = reg.add(name + ".gamma", group, Tensor<float>({channels}, 1.0f));
  beta = reg.add(name + ".beta", group, Tensor<float>({channels}));
  running_mean = reg.add(name + ".running_mean", group, Tensor<float>({channels}), false);
  running_var = reg.add(name + ".running_var", group, Tensor<float>({channels}, 1.0f), false);
}

VF BatchNorm2d::operator()(const VF& x, BnMode mode) const {
  if (mode == BnMode::batch) return ops::batch_norm(x, gamma, beta, Tensor<float>(), Tensor<float>(), true);
  return ops::batch_norm(x, gamma, beta, running_mean.value(), running_var.value(),
                         mode == BnMode::train);
}

SpectralConv2d::SpectralConv2d(ParamRegistry& reg, const std::string& name,
                               const std::string& group, int cin, int cout,
                               int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  w = reg.add(name + ".w", group, kaiming_normal({cout, cin, k, k}, cin * k * k, rng));
  b = reg.add(name + ".b", group, Tensor<float>({cout}));
  std::normal_distribution<float> nd(0.0f, 1.0f);
  Tensor<float> u0({cout});
  float n = 0;
  for (auto& v : u0.span()) {
    v = nd(rng);
    n += v * v;
  }
  n = std::sqrt(n);
  for (auto& v : u0.span()) v /= n;
  u = reg.add(name + ".u", group, u0, false);
}

VF SpectralConv2d::operator()(const VF& x, bool training) const {
  VF wn = ops::spectral_normalize(w, u.value(), training);
  return ops::conv2d(x, wn, b, stride, pad);
}

VF leaky(const VF& x, float slope) { return ops::leaky_relu(x, slope); }

VF global_avg_pool(const VF& x) {
  VF m = ops::mean_dim(ops::reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 2);
  return ops::reshape(m, {x.dim(0), x.dim(1)});
}

}  // namespace mtlface::nn
