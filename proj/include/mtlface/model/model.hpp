#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mtlface/model/config.hpp"
#include "mtlface/nn/layers.hpp"

namespace mtlface::model {

using nn::ParamRegistry;
using nn::Rng;
using nn::VF;

// Parameter group names.
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kAfd = "afd";
inline constexpr const char* kAgeHead = "age_head";
inline constexpr const char* kDomainHead = "domain_head";
inline constexpr const char* kIdHead = "id_head";
inline constexpr const char* kPrototypes = "prototypes";
inline constexpr const char* kIcm = "icm";
inline constexpr const char* kDecoder = "decoder";
inline constexpr const char* kDiscriminator = "discriminator";
inline constexpr const char* kPerceptual = "perceptual";

std::vector<std::string> all_groups();

struct EncoderOutput {
  VF features;
  std::vector<VF> skips;  // strides 8, 4, 2 (coarse to fine)
};

class Encoder {
 public:
  Encoder(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng);
  EncoderOutput operator()(const VF& images, nn::BnMode mode) const;

 private:
  struct Block {
    nn::Conv2d c1, c2, proj;
    nn::BatchNorm2d b1, b2, bp;
    bool has_proj = false;
  };
  VF block(const Block& b, const VF& x, nn::BnMode mode) const;

  nn::Conv2d stem_;
  nn::BatchNorm2d stem_bn_;
  std::vector<std::vector<Block>> stages_;
};

struct Decomposed {
  VF age_part;
  VF id_part;
  VF attention;  // same shape as the input
};

/// Splits features into age and identity parts with a mask built from a
/// squeeze-and-excitation channel branch and a pooled spatial branch.
class AttentionDecomposer {
 public:
  AttentionDecomposer(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng);
  Decomposed operator()(const VF& x) const;
  VF channel_attention(const VF& x) const;  // [B,C,1,1]
  VF spatial_attention(const VF& x) const;  // [B,1,H,W]
  /// age = x * sigma, id = x * (1 - sigma).
  static Decomposed apply(const VF& x, const VF& sigma);

  nn::Linear se_down, se_up;
  nn::Conv2d sa_conv;
};

struct AgeEstimate {
  VF logits;        // [B,101]
  VF distribution;  // softmax of logits
  VF expected_age;  // [B]
  VF group_logits;  // [B,n_g]
};

inline constexpr int kAgeBins = 101;

class AgeHead {
 public:
  AgeHead(ParamRegistry& reg, const std::string& name, const std::string& group,
          const ModelConfig& cfg, Rng& rng);
  AgeEstimate operator()(const VF& features) const;
  /// Estimate from injected per-year logits.
  AgeEstimate from_logits(const VF& logits) const;

  nn::Linear fc1, fc2;
  VF group_map;  // W: [101, n_g], no bias
};

class IdentityHead {
 public:
  IdentityHead(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng);
  VF operator()(const VF& id_features) const;
  nn::Linear fc;
};

/// One contiguous bank of 3x3 filters; group t uses filters
/// [t*(F-S), t*(F-S)+F), so adjacent groups share S filters by storage.
class SharedFilterBank {
 public:
  SharedFilterBank(ParamRegistry& reg, const std::string& name,
                   const std::string& group, int n_groups, int filters,
                   int shared, int in_channels, Rng& rng);
  std::int64_t total() const { return static_cast<std::int64_t>(n_groups_) * filters_ - static_cast<std::int64_t>(n_groups_ - 1) * shared_; }
  std::int64_t offset(int group) const;
  VF window(int group) const;
  int n_groups() const { return n_groups_; }
  int filters() const { return filters_; }
  int shared() const { return shared_; }

  VF bank;  // [total, in_channels, 3, 3]

 private:
  int n_groups_, filters_, shared_;
};

/// 1x1 reduction to C/4, group-selected 3x3 conv, instance norm, leaky ReLU.
class Icb {
 public:
  Icb(ParamRegistry& reg, const std::string& name, int in_channels,
      const ModelConfig& cfg, Rng& rng);
  /// groups[b] selects the filter window for sample b.
  VF operator()(const VF& x, const std::vector<int>& groups) const;
  int out_channels() const { return bank.filters(); }

  nn::Conv2d reduce;
  SharedFilterBank bank;
};

struct Conditions {
  std::vector<VF> levels;  // coarse to fine, spatial size doubling
  std::vector<int> groups;
};

struct Styles {
  std::vector<VF> codes;  // one [B,style_dim] code per level
};

class ResBlock {
 public:
  ResBlock(ParamRegistry& reg, const std::string& name, const std::string& group,
           int in, int out, Rng& rng);
  VF operator()(const VF& x) const;

 private:
  nn::Conv2d c1_, c2_, proj_;
  bool has_proj_;
};

/// f_l: an ICM on the previous condition, upsampled and fused with the skip.
class ConditionLevel {
 public:
  ConditionLevel(ParamRegistry& reg, int level, int in_channels, int skip_channels,
                 int out_channels, const ModelConfig& cfg, Rng& rng);
  VF operator()(const VF& prev, const VF& skip, const std::vector<int>& groups) const;

  std::vector<Icb> icbs;
  ResBlock r1, r2;
};

class StyleMapper {
 public:
  StyleMapper(ParamRegistry& reg, int level, int channels, int size,
              const ModelConfig& cfg, Rng& rng);
  VF operator()(const VF& condition) const;

 private:
  std::vector<nn::Conv2d> convs_;
  nn::Linear fc_;
};

class Decoder {
 public:
  Decoder(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng);
  VF operator()(const VF& id_features, const Styles& styles) const;

 private:
  struct StyleBlock {
    nn::Conv2d conv;
    nn::Linear affine;  // style -> (scale, shift)
  };
  VF style_block(const StyleBlock& b, const VF& x, const VF& style) const;

  std::vector<std::vector<StyleBlock>> levels_;
  nn::Conv2d to_rgb_;
};

class Discriminator {
 public:
  Discriminator(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng);
  /// Patch map [B,1,h,w]; h = 8 for 64x64 inputs.
  VF operator()(const VF& images, const std::vector<int>& groups, bool training) const;

 private:
  std::vector<nn::SpectralConv2d> blocks_;
  int n_groups_;
};

/// Fixed random convolutional feature stack used by the perceptual loss.
class PerceptualNet {
 public:
  PerceptualNet(ParamRegistry& reg, const ModelConfig& cfg);
  std::vector<VF> features(const VF& images) const;

 private:
  std::vector<nn::Conv2d> stages_;
};

class MtlFace {
 public:
  explicit MtlFace(const ModelConfig& cfg);
  MtlFace(const MtlFace&) = delete;
  MtlFace& operator=(const MtlFace&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

  EncoderOutput encode(const VF& images, bool training) const;
  EncoderOutput encode(const VF& images, nn::BnMode mode) const;
  Decomposed decompose(const VF& features) const { return afd_(features); }
  AgeEstimate estimate_age(const VF& age_features) const { return age_(age_features); }
  /// Domain classifier on identity features behind gradient reversal.
  AgeEstimate estimate_domain(const VF& id_features, float grl_scale = 1.0f) const;
  VF embed(const VF& id_features) const { return id_(id_features); }
  VF prototypes() const { return prototypes_; }

  Conditions build_conditions(const VF& id_features, const std::vector<VF>& skips,
                              const std::vector<int>& groups) const;
  Conditions build_conditions(const VF& id_features, const std::vector<VF>& skips,
                              int group) const;
  Styles style_codes(const Conditions& c) const;
  VF decode(const VF& id_features, const Styles& styles) const;
  VF decode(const VF& id_features, const Conditions& c) const;
  /// Encode (eval mode) + decompose + condition + decode.
  VF synthesize(const VF& images, const std::vector<int>& groups) const;

  /// `frames` outputs blending group a's styles into group b's: frame k uses
  /// alpha = 1 - k/(frames-1), so the first frame is group a and the last group b.
  std::vector<VF> synthesize_sweep(const VF& images, int group_a, int group_b, int frames) const;
  VF discriminate(const VF& images, const std::vector<int>& groups, bool training) const;
  std::vector<VF> perceptual_features(const VF& images) const;

  const AttentionDecomposer& afd() const { return afd_; }
  const AgeHead& age_head() const { return age_; }
  const std::vector<ConditionLevel>& condition_levels() const { return levels_; }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  Rng rng_;
  Encoder enc_;
  AttentionDecomposer afd_;
  AgeHead age_;
  AgeHead domain_;
  IdentityHead id_;
  VF prototypes_;
  std::vector<ConditionLevel> levels_;
  std::vector<StyleMapper> mappers_;
  Decoder dec_;
  Discriminator disc_;
  PerceptualNet perc_;
};

/// alpha * a + (1 - alpha) * b per style code; alpha in [0,1].
Styles interpolate_styles(const Styles& a, const Styles& b, float alpha);

/// Convenience: B copies of one group index.
std::vector<int> repeat_group(int group, std::int64_t batch);

/// Builds the [B,n,H,W] one-hot plane stack for per-sample groups.
Tensor<float> one_hot_planes(const std::vector<int>& groups, int n_groups, int h, int w);

}  // namespace mtlface::model
