#include "mtlface/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mtlface/core/log.hpp"

namespace mtlface::losses {

void LossWeights::validate() const {
  for (double v : {age_aifr, id_aifr, adv_fas, id_fas, age_fas, lpips_fas})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("loss weights must be finite and non-negative");
  if (!(cosface_scale > 0.0)) throw std::invalid_argument("cosface scale must be positive");
  if (!std::isfinite(cosface_margin)) throw std::invalid_argument("cosface margin must be finite");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"age_aifr", w.age_aifr},   {"id_aifr", w.id_aifr},
                     {"adv_fas", w.adv_fas},     {"id_fas", w.id_fas},
                     {"age_fas", w.age_fas},     {"lpips_fas", w.lpips_fas},
                     {"cosface_margin", w.cosface_margin},
                     {"cosface_scale", w.cosface_scale}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  LossWeights d;
  auto opt = [&j](const char* k, double& f) {
    if (j.contains(k)) j.at(k).get_to(f);
  };
  opt("age_aifr", d.age_aifr);
  opt("id_aifr", d.id_aifr);
  opt("adv_fas", d.adv_fas);
  opt("id_fas", d.id_fas);
  opt("age_fas", d.age_fas);
  opt("lpips_fas", d.lpips_fas);
  opt("cosface_margin", d.cosface_margin);
  opt("cosface_scale", d.cosface_scale);
  w = d;
}

template <typename T>
V<T> cross_entropy(const V<T>& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2 || static_cast<std::int64_t>(labels.size()) != logits.dim(0))
    throw ShapeError("cross_entropy: labels do not match logits " + shape_str(logits.shape()));
  if (labels.empty()) throw std::invalid_argument("cross_entropy on an empty batch");
  return ops::neg(ops::mean(ops::pick(ops::log_softmax(logits), labels)));
}

template <typename T>
V<T> cosine_logits(const V<T>& embeddings, const V<T>& prototypes) {
  return ops::matmul(ops::normalize_rows(embeddings), ops::normalize_rows(prototypes), false, true);
}

template <typename T>
V<T> cosface_loss(const V<T>& embeddings, const std::vector<int>& labels, const V<T>& prototypes,
                  T margin, T scale) {
  const std::int64_t k = prototypes.dim(0);
  for (int l : labels)
    if (l < 0 || l >= k)
      throw std::out_of_range("identity label " + std::to_string(l) + " outside [0, " +
                              std::to_string(k) + ")");
  V<T> cos = cosine_logits(embeddings, prototypes);
  Tensor<T> shift(cos.shape());
  for (std::size_t b = 0; b < labels.size(); ++b) shift.at(b, labels[b]) = margin;
  return cross_entropy(ops::mul_scalar(ops::sub(cos, ops::constant(shift)), scale), labels);
}

template <typename T>
V<T> age_estimation_loss(const V<T>& expected_age, const V<T>& group_logits,
                         const std::vector<double>& y_age, const std::vector<int>& c_age,
                         T group_weight) {
  const std::size_t b = y_age.size();
  if (expected_age.numel() != b || c_age.size() != b)
    throw ShapeError("age_estimation_loss: batch sizes differ");
  Tensor<T> target(expected_age.shape());
  for (std::size_t i = 0; i < b; ++i) {
    double y = y_age[i];
    if (!(y >= 0.0 && y <= 100.0)) {
      std::ostringstream m;
      m << "age label " << y << " clamped to [0,100]";
      warn(m.str());
      y = std::clamp(std::isnan(y) ? 0.0 : y, 0.0, 100.0);
    }
    target[i] = static_cast<T>(y);
  }
  V<T> mse = ops::mean(ops::square(ops::sub(expected_age, ops::constant(target))));
  if (group_weight == T(0)) return mse;
  return ops::add(mse, ops::mul_scalar(cross_entropy(group_logits, c_age), group_weight));
}

template <typename T>
AifrLoss<T> aifr_loss(const V<T>& cosface, const V<T>& age, const V<T>& domain, const LossWeights& w) {
  AifrLoss<T> out{cosface, age, domain, {}};
  out.total = ops::add(ops::add(cosface, ops::mul_scalar(age, static_cast<T>(w.age_aifr))),
                       ops::mul_scalar(domain, static_cast<T>(w.id_aifr)));
  return out;
}

template <typename T>
V<T> lsgan_generator_loss(const V<T>& fake_map) {
  return ops::mul_scalar(ops::mean(ops::square(ops::add_scalar(fake_map, T(-1)))), T(0.5));
}

template <typename T>
V<T> lsgan_discriminator_loss(const V<T>& real_map, const V<T>& fake_map) {
  V<T> r = ops::mean(ops::square(ops::add_scalar(real_map, T(-1))));
  V<T> f = ops::mean(ops::square(fake_map));
  return ops::mul_scalar(ops::add(r, f), T(0.5));
}

template <typename T>
V<T> row_cosine(const V<T>& a, const V<T>& b) {
  V<T> p = ops::mul(ops::normalize_rows(a), ops::normalize_rows(b));
  return ops::reshape(ops::sum_dim(p, 1), {a.dim(0)});
}

template <typename T>
V<T> fas_identity_loss(const V<T>& id_t, const V<T>& id_src,
                       const std::function<V<T>(const V<T>&)>& embed) {
  if (id_t.shape() != id_src.shape()) throw ShapeError("fas_identity_loss: shape mismatch");
  const std::int64_t b = id_t.dim(0);
  V<T> diff = ops::reshape(ops::sub(id_t, id_src), {b, static_cast<std::int64_t>(id_t.numel()) / b});
  V<T> frob = ops::sum_dim(ops::square(diff), 1);  // [B,1]
  V<T> cos = row_cosine(embed(id_t), embed(id_src));
  return ops::mean(ops::sub(ops::reshape(frob, {b}), cos));
}

template <typename T>
V<T> fas_age_loss(const V<T>& group_logits, const std::vector<int>& target_groups) {
  for (int g : target_groups)
    if (g < 0 || g >= group_logits.dim(1)) throw std::out_of_range("target group out of range");
  return cross_entropy(group_logits, target_groups);
}

template <typename T>
V<T> perceptual_from_features(const std::vector<V<T>>& fa, const std::vector<V<T>>& fb) {
  if (fa.size() != fb.size() || fa.empty()) throw ShapeError("perceptual: layer count mismatch");
  V<T> total;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    if (fa[l].shape() != fb[l].shape()) throw ShapeError("perceptual: feature shape mismatch");
    V<T> d = ops::square(ops::sub(ops::normalize_channels(fa[l]), ops::normalize_channels(fb[l])));
    V<T> layer = ops::mean(ops::sum_dim(d, 1));
    total = total.defined() ? ops::add(total, layer) : layer;
  }
  return total;
}

template <typename T>
V<T> perceptual_loss(const V<T>& a, const V<T>& b,
                     const std::function<std::vector<V<T>>(const V<T>&)>& extractor) {
  if (a.shape() != b.shape())
    throw ShapeError("perceptual: image shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return perceptual_from_features(extractor(a), extractor(b));
}

template <typename T>
FasLoss<T> fas_total_loss(const V<T>& adv, const V<T>& id, const V<T>& age, const V<T>& lpips,
                          const LossWeights& w) {
  FasLoss<T> out{adv, id, age, lpips, {}};
  out.total = ops::add(ops::add(ops::add(ops::mul_scalar(adv, static_cast<T>(w.adv_fas)),
                                         ops::mul_scalar(id, static_cast<T>(w.id_fas))),
                                ops::mul_scalar(age, static_cast<T>(w.age_fas))),
                       ops::mul_scalar(lpips, static_cast<T>(w.lpips_fas)));
  return out;
}

#define MTLFACE_INSTANTIATE(T)                                                                   \
  template V<T> cross_entropy(const V<T>&, const std::vector<int>&);                             \
  template V<T> cosine_logits(const V<T>&, const V<T>&);                                         \
  template V<T> cosface_loss(const V<T>&, const std::vector<int>&, const V<T>&, T, T);           \
  template V<T> age_estimation_loss(const V<T>&, const V<T>&, const std::vector<double>&,        \
                                    const std::vector<int>&, T);                                 \
  template AifrLoss<T> aifr_loss(const V<T>&, const V<T>&, const V<T>&, const LossWeights&);     \
  template V<T> lsgan_generator_loss(const V<T>&);                                               \
  template V<T> lsgan_discriminator_loss(const V<T>&, const V<T>&);                              \
  template V<T> row_cosine(const V<T>&, const V<T>&);                                            \
  template V<T> fas_identity_loss(const V<T>&, const V<T>&,                                      \
                                  const std::function<V<T>(const V<T>&)>&);                      \
  template V<T> fas_age_loss(const V<T>&, const std::vector<int>&);                              \
  template V<T> perceptual_from_features(const std::vector<V<T>>&, const std::vector<V<T>>&);    \
  template V<T> perceptual_loss(const V<T>&, const V<T>&,                                        \
                                const std::function<std::vector<V<T>>(const V<T>&)>&);           \
  template FasLoss<T> fas_total_loss(const V<T>&, const V<T>&, const V<T>&, const V<T>&,         \
                                     const LossWeights&);

MTLFACE_INSTANTIATE(float)
MTLFACE_INSTANTIATE(double)

#undef MTLFACE_INSTANTIATE

}  // namespace mtlface::losses
