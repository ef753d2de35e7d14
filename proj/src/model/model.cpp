#include "mtlface/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mtlface::model {

namespace {

constexpr float kSlope = 0.2f;
constexpr std::uint64_t kPerceptualSeed = 0x9e3779b97f4a7c15ULL;

int log2_exact(int v) {
  int n = 0;
  while ((1 << (n + 1)) <= v) ++n;
  return n;
}

void check_groups(const std::vector<int>& groups, int n_groups, std::int64_t batch) {
  if (static_cast<std::int64_t>(groups.size()) != batch)
    throw ShapeError("expected " + std::to_string(batch) + " group indices, got " +
                     std::to_string(groups.size()));
  for (int g : groups)
    if (g < 0 || g >= n_groups)
      throw std::out_of_range("age group " + std::to_string(g) + " outside [0, " +
                              std::to_string(n_groups) + ")");
}

}  // namespace

std::vector<std::string> all_groups() {
  return {kEncoder, kAfd,  kAgeHead, kDomainHead,   kIdHead,
          kPrototypes, kIcm, kDecoder, kDiscriminator, kPerceptual};
}

std::vector<int> repeat_group(int group, std::int64_t batch) {
  return std::vector<int>(static_cast<std::size_t>(batch), group);
}

Tensor<float> one_hot_planes(const std::vector<int>& groups, int n_groups, int h, int w) {
  Tensor<float> t({static_cast<std::int64_t>(groups.size()), n_groups, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < groups.size(); ++b) {
    float* p = t.data() + (b * n_groups + groups[b]) * plane;
    std::fill(p, p + plane, 1.0f);
  }
  return t;
}

// ---- encoder ------------------------------------------------------------------

Encoder::Encoder(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng) {
  stem_ = nn::Conv2d(reg, "enc.stem", kEncoder, 3, cfg.stem_width, 3, 1, 1, rng, false);
  stem_bn_ = nn::BatchNorm2d(reg, "enc.stem_bn", kEncoder, cfg.stem_width);
  int in = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int w = cfg.enc_widths[s];
    std::vector<Block> blocks;
    for (int k = 0; k < cfg.blocks_per_stage; ++k) {
      const std::string n = "enc.s" + std::to_string(s) + ".b" + std::to_string(k);
      const int stride = k == 0 ? 2 : 1;
      Block b;
      b.c1 = nn::Conv2d(reg, n + ".c1", kEncoder, in, w, 3, stride, 1, rng, false);
      b.b1 = nn::BatchNorm2d(reg, n + ".bn1", kEncoder, w);
      b.c2 = nn::Conv2d(reg, n + ".c2", kEncoder, w, w, 3, 1, 1, rng, false);
      b.b2 = nn::BatchNorm2d(reg, n + ".bn2", kEncoder, w);
      if (stride != 1 || in != w) {
        b.has_proj = true;
        b.proj = nn::Conv2d(reg, n + ".proj", kEncoder, in, w, 1, stride, 0, rng, false);
        b.bp = nn::BatchNorm2d(reg, n + ".bnp", kEncoder, w);
      }
      blocks.push_back(b);
      in = w;
    }
    stages_.push_back(std::move(blocks));
  }
}

VF Encoder::block(const Block& b, const VF& x, nn::BnMode mode) const {
  VF h = nn::leaky(b.b1(b.c1(x), mode), kSlope);
  h = b.b2(b.c2(h), mode);
  VF sc = b.has_proj ? b.bp(b.proj(x), mode) : x;
  return nn::leaky(ops::add(h, sc), kSlope);
}

EncoderOutput Encoder::operator()(const VF& images, nn::BnMode mode) const {
  if (images.shape().size() != 4 || images.dim(1) != 3)
    throw ShapeError("encoder expects [B,3,H,W], got " + shape_str(images.shape()));
  if (images.dim(2) != images.dim(3) || images.dim(2) % 16 != 0)
    throw ShapeError("encoder input must be square with side divisible by 16, got " +
                     shape_str(images.shape()));
  VF h = nn::leaky(stem_bn_(stem_(images), mode), kSlope);
  std::vector<VF> outs;
  for (const auto& stage : stages_) {
    for (const auto& b : stage) h = block(b, h, mode);
    outs.push_back(h);
  }
  return {outs[3], {outs[2], outs[1], outs[0]}};
}

// ---- attention decomposition ----------------------------------------------------

AttentionDecomposer::AttentionDecomposer(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng) {
  const int c = cfg.feature_channels();
  const int hidden = std::max(1, c / cfg.se_reduction);
  se_down = nn::Linear(reg, "afd.se_down", kAfd, c, hidden, rng, true, 1.41421356f);
  se_up = nn::Linear(reg, "afd.se_up", kAfd, hidden, c, rng);
  sa_conv = nn::Conv2d(reg, "afd.sa", kAfd, 2, 1, cfg.sa_kernel, 1, cfg.sa_kernel / 2, rng,
                       true, 1.0f);
}

VF AttentionDecomposer::channel_attention(const VF& x) const {
  VF s = nn::global_avg_pool(x);
  VF a = ops::sigmoid(se_up(ops::relu(se_down(s))));
  return ops::reshape(a, {x.dim(0), x.dim(1), 1, 1});
}

VF AttentionDecomposer::spatial_attention(const VF& x) const {
  VF pooled = ops::concat<float>({ops::mean_dim(x, 1), ops::max_dim(x, 1)}, 1);
  return ops::sigmoid(sa_conv(pooled));
}

Decomposed AttentionDecomposer::apply(const VF& x, const VF& sigma) {
  VF age = ops::mul(x, sigma);
  VF id = ops::mul(x, ops::add_scalar(ops::neg(sigma), 1.0f));
  return {age, id, sigma};
}

Decomposed AttentionDecomposer::operator()(const VF& x) const {
  if (x.shape().size() != 4) throw ShapeError("attention expects a 4-d feature map");
  VF ca = ops::expand(channel_attention(x), x.shape());
  VF sa = ops::expand(spatial_attention(x), x.shape());
  VF sigma = ops::mul_scalar(ops::add(ca, sa), 0.5f);
  return apply(x, sigma);
}

// ---- heads ------------------------------------------------------------------------

AgeHead::AgeHead(ParamRegistry& reg, const std::string& name, const std::string& group,
                 const ModelConfig& cfg, Rng& rng) {
  fc1 = nn::Linear(reg, name + ".fc1", group, cfg.feature_channels(), cfg.age_hidden, rng,
                   true, 1.41421356f);
  fc2 = nn::Linear(reg, name + ".fc2", group, cfg.age_hidden, kAgeBins, rng);
  group_map = reg.add(name + ".W", group,
                      nn::kaiming_normal({kAgeBins, cfg.n_groups}, kAgeBins, rng));
}

AgeEstimate AgeHead::operator()(const VF& features) const {
  VF h = nn::leaky(fc1(nn::global_avg_pool(features)), kSlope);
  return from_logits(fc2(h));
}

AgeEstimate AgeHead::from_logits(const VF& logits) const {
  if (logits.shape().size() != 2 || logits.dim(1) != kAgeBins)
    throw ShapeError("age logits must be [B,101], got " + shape_str(logits.shape()));
  Tensor<float> ages({kAgeBins, 1});
  for (int i = 0; i < kAgeBins; ++i) ages[i] = static_cast<float>(i);
  AgeEstimate e;
  e.logits = logits;
  e.distribution = ops::softmax(logits);
  e.expected_age = ops::reshape(ops::matmul(e.distribution, ops::constant(ages)), {logits.dim(0)});
  e.group_logits = ops::matmul(logits, group_map);
  return e;
}

IdentityHead::IdentityHead(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng) {
  const int s = cfg.feature_size();
  fc = nn::Linear(reg, "id.fc", kIdHead, cfg.feature_channels() * s * s, cfg.embed_dim, rng);
}

VF IdentityHead::operator()(const VF& id_features) const {
  VF flat = ops::reshape(id_features, {id_features.dim(0),
                                       static_cast<std::int64_t>(id_features.numel()) / id_features.dim(0)});
  return fc(flat);
}

// ---- identity conditional blocks ---------------------------------------------------

SharedFilterBank::SharedFilterBank(ParamRegistry& reg, const std::string& name,
                                   const std::string& group, int n_groups, int filters,
                                   int shared, int in_channels, Rng& rng)
    : n_groups_(n_groups), filters_(filters), shared_(shared) {
  if (n_groups < 1 || filters < 1 || shared < 0 || shared >= filters)
    throw std::invalid_argument("filter bank needs n_groups >= 1 and 0 <= S < F");
  bank = reg.add(name, group, nn::kaiming_normal({total(), in_channels, 3, 3}, in_channels * 9, rng));
}

std::int64_t SharedFilterBank::offset(int group) const {
  if (group < 0 || group >= n_groups_)
    throw std::out_of_range("age group " + std::to_string(group) + " outside [0, " +
                            std::to_string(n_groups_) + ")");
  return static_cast<std::int64_t>(group) * (filters_ - shared_);
}

VF SharedFilterBank::window(int group) const { return ops::narrow(bank, offset(group), filters_); }

Icb::Icb(ParamRegistry& reg, const std::string& name, int in_channels, const ModelConfig& cfg,
         Rng& rng)
    : reduce(reg, name + ".reduce", kIcm, in_channels, std::max(1, in_channels / 4), 1, 1, 0, rng,
             false, 1.0f),
      bank(reg, name + ".bank", kIcm, cfg.n_groups, cfg.bank_filters, cfg.bank_shared,
           std::max(1, in_channels / 4), rng) {}

VF Icb::operator()(const VF& x, const std::vector<int>& groups) const {
  check_groups(groups, bank.n_groups(), x.dim(0));
  VF r = reduce(x);
  VF y;
  const bool uniform = std::all_of(groups.begin(), groups.end(),
                                   [&](int g) { return g == groups[0]; });
  if (uniform) {
    y = ops::conv2d(r, bank.window(groups[0]), VF(), 1, 1);
  } else {
    std::vector<std::int64_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int64_t a, std::int64_t b) { return groups[a] < groups[b]; });
    VF sorted = ops::index_select(r, order);
    std::vector<VF> parts;
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j < order.size() && groups[order[j]] == groups[order[i]]) ++j;
      VF chunk = ops::narrow(sorted, static_cast<std::int64_t>(i), static_cast<std::int64_t>(j - i));
      parts.push_back(ops::conv2d(chunk, bank.window(groups[order[i]]), VF(), 1, 1));
      i = j;
    }
    std::vector<std::int64_t> inverse(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = static_cast<std::int64_t>(k);
    y = ops::index_select(ops::concat(parts, 0), inverse);
  }
  return nn::leaky(ops::instance_norm(y), kSlope);
}

ResBlock::ResBlock(ParamRegistry& reg, const std::string& name, const std::string& group,
                   int in, int out, Rng& rng)
    : c1_(reg, name + ".c1", group, in, out, 3, 1, 1, rng, false),
      c2_(reg, name + ".c2", group, out, out, 3, 1, 1, rng, false),
      has_proj_(in != out) {
  if (has_proj_) proj_ = nn::Conv2d(reg, name + ".proj", group, in, out, 1, 1, 0, rng, false, 1.0f);
}

VF ResBlock::operator()(const VF& x) const {
  VF h = nn::leaky(ops::instance_norm(c1_(x)), kSlope);
  h = ops::instance_norm(c2_(h));
  return nn::leaky(ops::add(h, has_proj_ ? proj_(x) : x), kSlope);
}

ConditionLevel::ConditionLevel(ParamRegistry& reg, int level, int in_channels, int skip_channels,
                               int out_channels, const ModelConfig& cfg, Rng& rng)
    : r1(reg, "cond" + std::to_string(level) + ".res1", kIcm, cfg.bank_filters + skip_channels,
         out_channels, rng),
      r2(reg, "cond" + std::to_string(level) + ".res2", kIcm, out_channels, out_channels, rng) {
  int in = in_channels;
  for (int k = 0; k < cfg.icbs_per_icm; ++k) {
    icbs.emplace_back(reg, "cond" + std::to_string(level) + ".icb" + std::to_string(k), in, cfg, rng);
    in = cfg.bank_filters;
  }
}

VF ConditionLevel::operator()(const VF& prev, const VF& skip, const std::vector<int>& groups) const {
  if (skip.shape().size() != 4 || skip.dim(0) != prev.dim(0) || skip.dim(2) != 2 * prev.dim(2) ||
      skip.dim(3) != 2 * prev.dim(3))
    throw ShapeError("skip " + shape_str(skip.shape()) + " does not match condition " +
                     shape_str(prev.shape()));
  VF h = prev;
  for (const auto& icb : icbs) h = icb(h, groups);
  h = ops::upsample2x(h);
  h = ops::concat<float>({h, skip}, 1);
  return r2(r1(h));
}

StyleMapper::StyleMapper(ParamRegistry& reg, int level, int channels, int size,
                         const ModelConfig& cfg, Rng& rng) {
  const std::string n = "style" + std::to_string(level);
  int s = size;
  int k = 0;
  while (s > 4) {
    convs_.emplace_back(reg, n + ".c" + std::to_string(k++), kDecoder, channels, channels, 3, 2, 1, rng);
    s /= 2;
  }
  fc_ = nn::Linear(reg, n + ".fc", kDecoder, channels * s * s, cfg.style_dim, rng);
}

VF StyleMapper::operator()(const VF& condition) const {
  VF h = condition;
  for (const auto& c : convs_) h = nn::leaky(c(h), kSlope);
  return fc_(ops::reshape(h, {h.dim(0), static_cast<std::int64_t>(h.numel()) / h.dim(0)}));
}

// ---- decoder ------------------------------------------------------------------------

Decoder::Decoder(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng) {
  int in = cfg.feature_channels();
  const auto widths = cfg.level_widths();
  for (int l = 0; l < 3; ++l) {
    std::vector<StyleBlock> blocks;
    for (int k = 0; k < 2; ++k) {
      const std::string n = "dec.l" + std::to_string(l) + ".b" + std::to_string(k);
      StyleBlock b;
      b.conv = nn::Conv2d(reg, n + ".conv", kDecoder, in, widths[l], 3, 1, 1, rng, false);
      b.affine = nn::Linear(reg, n + ".affine", kDecoder, cfg.style_dim, 2 * widths[l], rng, true, 0.25f);
      blocks.push_back(b);
      in = widths[l];
    }
    levels_.push_back(std::move(blocks));
  }
  to_rgb_ = nn::Conv2d(reg, "dec.to_rgb", kDecoder, in, 3, 3, 1, 1, rng, true, 1.0f);
}

VF Decoder::style_block(const StyleBlock& b, const VF& x, const VF& style) const {
  VF h = ops::instance_norm(b.conv(x));
  const std::int64_t c = h.dim(1);
  VF aff = b.affine(style);  // [B, 2C]
  VF ab = ops::reshape(aff, {aff.dim(0) * 2, c});
  // rows alternate (scale, shift) per sample after the reshape
  std::vector<std::int64_t> scale_rows, shift_rows;
  for (std::int64_t i = 0; i < aff.dim(0); ++i) {
    scale_rows.push_back(2 * i);
    shift_rows.push_back(2 * i + 1);
  }
  VF gamma = ops::reshape(ops::index_select(ab, scale_rows), {aff.dim(0), c, 1, 1});
  VF beta = ops::reshape(ops::index_select(ab, shift_rows), {aff.dim(0), c, 1, 1});
  h = ops::mul(h, ops::expand(ops::add_scalar(gamma, 1.0f), h.shape()));
  h = ops::add(h, ops::expand(beta, h.shape()));
  return nn::leaky(h, kSlope);
}

VF Decoder::operator()(const VF& id_features, const Styles& styles) const {
  if (styles.codes.size() != levels_.size()) throw ShapeError("decoder needs one style code per level");
  VF h = id_features;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    h = ops::upsample2x(h);
    for (const auto& b : levels_[l]) h = style_block(b, h, styles.codes[l]);
  }
  h = ops::upsample2x(h);
  return ops::tanh(to_rgb_(h));
}

// ---- discriminator --------------------------------------------------------------------

Discriminator::Discriminator(ParamRegistry& reg, const ModelConfig& cfg, Rng& rng)
    : n_groups_(cfg.n_groups) {
  const int n_down = log2_exact(cfg.image_size / 8);
  const int n_blocks = std::max(4, n_down + 1);
  int in = 3 + cfg.n_groups;
  for (int i = 0; i < n_blocks; ++i) {
    const bool last = i == n_blocks - 1;
    const int out = last ? 1 : cfg.disc_width * (1 << std::min(i, 3));
    const int stride = i < n_down ? 2 : 1;
    blocks_.emplace_back(reg, "disc.b" + std::to_string(i), kDiscriminator, in, out, 3, stride, 1, rng);
    in = out;
  }
}

VF Discriminator::operator()(const VF& images, const std::vector<int>& groups, bool training) const {
  check_groups(groups, n_groups_, images.dim(0));
  VF planes = ops::constant(one_hot_planes(groups, n_groups_, static_cast<int>(images.dim(2)),
                                           static_cast<int>(images.dim(3))));
  VF h = ops::concat<float>({images, planes}, 1);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i](h, training);
    if (i + 1 < blocks_.size()) h = nn::leaky(h, kSlope);
  }
  return h;
}

// ---- perceptual ----------------------------------------------------------------------

PerceptualNet::PerceptualNet(ParamRegistry& reg, const ModelConfig& cfg) {
  Rng rng(kPerceptualSeed);
  int in = 3;
  for (std::size_t i = 0; i < cfg.perceptual_widths.size(); ++i) {
    stages_.emplace_back(reg, "perc.s" + std::to_string(i), kPerceptual, in,
                         cfg.perceptual_widths[i], 3, 2, 1, rng);
    in = cfg.perceptual_widths[i];
  }
  for (auto& p : reg.entries())
    if (p.group == kPerceptual) {
      p.trainable = false;
      p.var.set_requires_grad(false);
    }
}

std::vector<VF> PerceptualNet::features(const VF& images) const {
  std::vector<VF> out;
  VF h = images;
  for (const auto& s : stages_) {
    h = nn::leaky(s(h), kSlope);
    out.push_back(h);
  }
  return out;
}

// ---- full model -------------------------------------------------------------------------

MtlFace::MtlFace(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      rng_(cfg.seed),
      enc_(reg_, cfg_, rng_),
      afd_(reg_, cfg_, rng_),
      age_(reg_, "age", kAgeHead, cfg_, rng_),
      domain_(reg_, "domain", kDomainHead, cfg_, rng_),
      id_(reg_, cfg_, rng_),
      dec_(reg_, cfg_, rng_),
      disc_(reg_, cfg_, rng_),
      perc_(reg_, cfg_) {
  prototypes_ = reg_.add("prototypes", kPrototypes,
                         nn::kaiming_normal({cfg_.num_classes, cfg_.embed_dim}, cfg_.embed_dim, rng_, 1.0f));
  const auto widths = cfg_.level_widths();
  int in = cfg_.feature_channels();
  int size = cfg_.feature_size() * 2;
  for (int l = 0; l < 3; ++l) {
    levels_.emplace_back(reg_, l, in, widths[l], widths[l], cfg_, rng_);
    mappers_.emplace_back(reg_, l, widths[l], size, cfg_, rng_);
    in = widths[l];
    size *= 2;
  }
}

EncoderOutput MtlFace::encode(const VF& images, bool training) const {
  return encode(images, training ? nn::BnMode::train : nn::BnMode::eval);
}

EncoderOutput MtlFace::encode(const VF& images, nn::BnMode mode) const {
  if (images.dim(2) != cfg_.image_size)
    throw ShapeError("model configured for " + std::to_string(cfg_.image_size) +
                     "px images, got " + shape_str(images.shape()));
  return enc_(images, mode);
}

AgeEstimate MtlFace::estimate_domain(const VF& id_features, float grl_scale) const {
  return domain_(ops::grad_reverse(id_features, grl_scale));
}

Conditions MtlFace::build_conditions(const VF& id_features, const std::vector<VF>& skips,
                                     const std::vector<int>& groups) const {
  if (skips.size() != levels_.size()) throw ShapeError("expected 3 encoder skips");
  check_groups(groups, cfg_.n_groups, id_features.dim(0));
  Conditions c;
  c.groups = groups;
  VF h = id_features;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    h = levels_[l](h, skips[l], groups);
    c.levels.push_back(h);
  }
  return c;
}

Conditions MtlFace::build_conditions(const VF& id_features, const std::vector<VF>& skips,
                                     int group) const {
  return build_conditions(id_features, skips, repeat_group(group, id_features.dim(0)));
}

Styles MtlFace::style_codes(const Conditions& c) const {
  Styles s;
  for (std::size_t l = 0; l < mappers_.size(); ++l) s.codes.push_back(mappers_[l](c.levels.at(l)));
  return s;
}

VF MtlFace::decode(const VF& id_features, const Styles& styles) const { return dec_(id_features, styles); }

VF MtlFace::decode(const VF& id_features, const Conditions& c) const {
  return dec_(id_features, style_codes(c));
}

VF MtlFace::synthesize(const VF& images, const std::vector<int>& groups) const {
  EncoderOutput e = encode(images, false);
  Decomposed d = decompose(e.features);
  return decode(d.id_part, build_conditions(d.id_part, e.skips, groups));
}

std::vector<VF> MtlFace::synthesize_sweep(const VF& images, int group_a, int group_b, int frames) const {
  if (frames < 2) throw std::invalid_argument("a sweep needs at least 2 frames");
  EncoderOutput e = encode(images, false);
  Decomposed d = decompose(e.features);
  const Styles sa = style_codes(build_conditions(d.id_part, e.skips, group_a));
  const Styles sb = style_codes(build_conditions(d.id_part, e.skips, group_b));
  std::vector<VF> out;
  for (int k = 0; k < frames; ++k) {
    const float alpha = 1.0f - static_cast<float>(k) / static_cast<float>(frames - 1);
    out.push_back(decode(d.id_part, interpolate_styles(sa, sb, alpha)));
  }
  return out;
}

VF MtlFace::discriminate(const VF& images, const std::vector<int>& groups, bool training) const {
  return disc_(images, groups, training);
}

std::vector<VF> MtlFace::perceptual_features(const VF& images) const { return perc_.features(images); }

Styles interpolate_styles(const Styles& a, const Styles& b, float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f))
    throw std::invalid_argument("interpolation alpha must be in [0,1]");
  if (a.codes.size() != b.codes.size()) throw ShapeError("style level count mismatch");
  Styles out;
  for (std::size_t l = 0; l < a.codes.size(); ++l)
    out.codes.push_back(ops::add(ops::mul_scalar(a.codes[l], alpha),
                                 ops::mul_scalar(b.codes[l], 1.0f - alpha)));
  return out;
}

}  // namespace mtlface::model
