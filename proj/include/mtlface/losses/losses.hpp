#pragma once

#include <functional>
#include <vector>

#include "json.hpp"
#include "mtlface/core/ops.hpp"

namespace mtlface::losses {

template <typename T> using V = Var<T>;

struct LossWeights {
  double age_aifr = 0.001;
  double id_aifr = 0.002;
  double adv_fas = 5.0;
  double id_fas = 1.0;
  double age_fas = 0.2;
  double lpips_fas = 1.0;
  double cosface_margin = 0.35;
  double cosface_scale = 64.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Mean cross-entropy of logits [B,K] against integer labels.
template <typename T>
V<T> cross_entropy(const V<T>& logits, const std::vector<int>& labels);

/// Additive-margin softmax over cosine similarities to class prototypes.
template <typename T>
V<T> cosface_loss(const V<T>& embeddings, const std::vector<int>& labels,
                  const V<T>& prototypes, T margin, T scale);

/// Cosine logits [B,K] between embeddings and prototypes (no margin).
template <typename T>
V<T> cosine_logits(const V<T>& embeddings, const V<T>& prototypes);

/// MSE(expected_age, y_age) + group_weight * CE(group_logits, c_age).
/// Ages outside [0,100] are clamped with a warning.
template <typename T>
V<T> age_estimation_loss(const V<T>& expected_age, const V<T>& group_logits,
                         const std::vector<double>& y_age, const std::vector<int>& c_age,
                         T group_weight = T(1));

template <typename T>
struct AifrLoss {
  V<T> cosface, age, domain, total;
};

template <typename T>
AifrLoss<T> aifr_loss(const V<T>& cosface, const V<T>& age, const V<T>& domain,
                      const LossWeights& w);

/// 0.5 * mean((fake - 1)^2)
template <typename T> V<T> lsgan_generator_loss(const V<T>& fake_map);
/// 0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)
template <typename T> V<T> lsgan_discriminator_loss(const V<T>& real_map, const V<T>& fake_map);

/// Row-wise cosine similarity [B] of two [B,d] matrices.
template <typename T> V<T> row_cosine(const V<T>& a, const V<T>& b);

/// mean_b ||id_t - id_src||_F^2 - cos(embed(id_t), embed(id_src)).
template <typename T>
V<T> fas_identity_loss(const V<T>& id_t, const V<T>& id_src,
                       const std::function<V<T>(const V<T>&)>& embed);

template <typename T>
V<T> fas_age_loss(const V<T>& group_logits, const std::vector<int>& target_groups);

/// Sum over layers of the spatial mean of squared differences between
/// channel-normalized features, averaged over the batch.
template <typename T>
V<T> perceptual_from_features(const std::vector<V<T>>& fa, const std::vector<V<T>>& fb);

template <typename T>
V<T> perceptual_loss(const V<T>& a, const V<T>& b,
                     const std::function<std::vector<V<T>>(const V<T>&)>& extractor);

template <typename T>
struct FasLoss {
  V<T> adv, id, age, lpips, total;
};

template <typename T>
FasLoss<T> fas_total_loss(const V<T>& adv, const V<T>& id, const V<T>& age, const V<T>& lpips,
                          const LossWeights& w);

}  // namespace mtlface::losses
