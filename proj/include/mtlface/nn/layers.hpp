#pragma once

#include <string>

#include "mtlface/core/ops.hpp"
#include "mtlface/nn/params.hpp"

namespace mtlface::nn {

using VF = Var<float>;

struct Conv2d {
  VF w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamRegistry& reg, const std::string& name, const std::string& group,
         int cin, int cout, int k, int stride, int pad, Rng& rng,
         bool bias = true, float gain = 1.41421356f);
  VF operator()(const VF& x) const;
};

struct Linear {
  VF w, b;

  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, const std::string& group,
         int in, int out, Rng& rng, bool bias = true, float gain = 1.0f);
  VF operator()(const VF& x) const;
};

/// eval: running statistics. train: batch statistics, running estimates
/// updated. batch: batch statistics, running estimates left untouched.
enum class BnMode { eval, train, batch };

struct BatchNorm2d {
  VF gamma, beta, running_mean, running_var;

  BatchNorm2d() = default;
  BatchNorm2d(ParamRegistry& reg, const std::string& name,
              const std::string& group, int channels);
  VF operator()(const VF& x, BnMode mode) const;
  VF operator()(const VF& x, bool training) const {
    return (*this)(x, training ? BnMode::train : BnMode::eval);
  }
};

/// Convolution whose weight is divided by its spectral norm. The power
/// iteration vector advances only when `training` is set.
struct SpectralConv2d {
  VF w, b, u;
  int stride = 1, pad = 0;

  SpectralConv2d() = default;
  SpectralConv2d(ParamRegistry& reg, const std::string& name,
                 const std::string& group, int cin, int cout, int k, int stride,
                 int pad, Rng& rng);
  VF operator()(const VF& x, bool training) const;
};

VF leaky(const VF& x, float slope = 0.2f);
/// Mean over H and W: [B,C,H,W] -> [B,C].
VF global_avg_pool(const VF& x);

}  // namespace mtlface::nn
