#include "mtlface/ftsel/ftsel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "mtlface/eval/partition.hpp"
#include "mtlface/nn/optim.hpp"
#include "mtlface/training/training.hpp"

namespace mtlface::ftsel {

namespace {

double log_weighted(const Gmm2& g, int k, double s) {
  const double v = g.variances[k];
  const double d = s - g.means[k];
  return std::log(g.weights[k]) - 0.5 * std::log(2.0 * std::numbers::pi * v) - d * d / (2.0 * v);
}

double log_add(double a, double b) {
  const double m = std::max(a, b);
  if (m == -INFINITY) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

double Gmm2::weighted_density(int k, double s) const { return std::exp(log_weighted(*this, k, s)); }

nlohmann::json Gmm2::to_json() const {
  return {{"weights", weights},       {"means", means},           {"variances", variances},
          {"iterations", iterations}, {"converged", converged},   {"log_likelihood", log_likelihood}};
}

Gmm2 fit_gmm(const std::vector<double>& scores, const GmmOptions& opt) {
  const std::size_t n = scores.size();
  if (n < 4) throw GmmError("GMM fit needs at least 4 scores, got " + std::to_string(n));
  for (double s : scores)
    if (!std::isfinite(s)) throw GmmError("GMM fit got a non-finite score");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  if (*lo == *hi) throw GmmError("unfittable score distribution: all scores are equal");

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  Gmm2 g;
  const std::size_t half = n / 2;
  for (int k = 0; k < 2; ++k) {
    const std::size_t b = k == 0 ? 0 : half;
    const std::size_t e = k == 0 ? half : n;
    double m = 0;
    for (std::size_t i = b; i < e; ++i) m += sorted[i];
    m /= static_cast<double>(e - b);
    double v = 0;
    for (std::size_t i = b; i < e; ++i) v += (sorted[i] - m) * (sorted[i] - m);
    v /= static_cast<double>(e - b);
    g.means[k] = m;
    g.variances[k] = std::max(v, opt.variance_floor);
    g.weights[k] = static_cast<double>(e - b) / n;
  }

  std::vector<double> r1(n);
  double prev = -INFINITY;
  for (int it = 0; it < opt.max_iters; ++it) {
    // E step, with the log-likelihood of the current parameters.
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l0 = log_weighted(g, 0, scores[i]);
      const double l1 = log_weighted(g, 1, scores[i]);
      const double tot = log_add(l0, l1);
      r1[i] = std::exp(l1 - tot);
      ll += tot;
    }
    ll /= static_cast<double>(n);
    g.log_likelihood.push_back(ll);
    g.iterations = it + 1;
    if (it > 0 && ll - prev < opt.tolerance) {
      g.converged = true;
      break;
    }
    prev = ll;
    // M step.
    std::array<double, 2> nk{0, 0}, sum{0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      nk[1] += r1[i];
      nk[0] += 1.0 - r1[i];
      sum[1] += r1[i] * scores[i];
      sum[0] += (1.0 - r1[i]) * scores[i];
    }
    for (int k = 0; k < 2; ++k) {
      if (nk[k] <= 0) continue;  // empty component keeps its parameters
      g.means[k] = sum[k] / nk[k];
      double v = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = k == 1 ? r1[i] : 1.0 - r1[i];
        v += r * (scores[i] - g.means[k]) * (scores[i] - g.means[k]);
      }
      g.variances[k] = std::max(v / nk[k], opt.variance_floor);
    }
    const double total = nk[0] + nk[1];
    g.weights = {nk[0] / total, nk[1] / total};
    if (g.weights[0] <= 0 || g.weights[1] <= 0) {
      // Keep both components alive so posteriors stay defined.
      const double eps = 1e-12;
      g.weights[0] = std::clamp(g.weights[0], eps, 1.0 - eps);
      g.weights[1] = 1.0 - g.weights[0];
    }
  }
  if (g.means[0] > g.means[1]) {
    std::swap(g.means[0], g.means[1]);
    std::swap(g.variances[0], g.variances[1]);
    std::swap(g.weights[0], g.weights[1]);
  }
  return g;
}

std::pair<double, double> posterior(const Gmm2& g, double s) {
  const double l0 = log_weighted(g, 0, s);
  const double l1 = log_weighted(g, 1, s);
  const double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
  return {1.0 - p1, p1};
}

std::vector<std::size_t> select_high_quality(const std::vector<double>& scores, const Gmm2& g) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto [p0, p1] = posterior(g, scores[i]);
    if (p1 > p0) out.push_back(i);
  }
  return out;
}

std::vector<double> min_max_normalize(const std::vector<double>& raw) {
  std::vector<double> out(raw.size(), 0.0);
  if (raw.empty()) return out;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *lo) / range;
  return out;
}

std::vector<double> score_quality(const Tensor<float>& images, const Scorer& scorer) {
  if (images.ndim() != 4 || images.dim(0) == 0) throw std::invalid_argument("quality scoring needs a non-empty pool");
  const auto raw = scorer(images);
  if (raw.size() != static_cast<std::size_t>(images.dim(0)))
    throw std::invalid_argument("scorer returned the wrong number of scores");
  return min_max_normalize(raw);
}

namespace {

template <typename F>
Tensor<float> batched(const Tensor<float>& images, int batch, F&& f) {
  const std::int64_t n = images.dim(0);
  std::vector<Tensor<float>> parts;
  for (std::int64_t b = 0; b < n; b += batch) {
    const std::int64_t len = std::min<std::int64_t>(batch, n - b);
    parts.push_back(f(images.narrow(b, len)));
  }
  Shape s = parts.front().shape();
  s[0] = n;
  Tensor<float> out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  return out;
}

}  // namespace

Tensor<float> identity_features(const model::MtlFace& model, const Tensor<float>& images, int batch) {
  if (images.ndim() != 4 || images.dim(0) == 0) throw std::invalid_argument("no images");
  NoGradGuard ng;
  return batched(images, batch, [&](const Tensor<float>& x) {
    const auto e = model.encode(nn::VF(x.clone()), false);
    return model.decompose(e.features).id_part.value();
  });
}

Tensor<float> embeddings(const model::MtlFace& model, const Tensor<float>& images, int batch) {
  const Tensor<float> f = identity_features(model, images, batch);
  NoGradGuard ng;
  return model.embed(nn::VF(f)).value();
}

Scorer embedding_norm_scorer(const model::MtlFace& model, int batch) {
  return [&model, batch](const Tensor<float>& images) {
    const Tensor<float> e = embeddings(model, images, batch);
    std::vector<double> out(static_cast<std::size_t>(e.dim(0)));
    for (std::int64_t i = 0; i < e.dim(0); ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < e.dim(1); ++j) s += static_cast<double>(e.at(i, j)) * e.at(i, j);
      out[i] = std::sqrt(s);
    }
    return out;
  };
}

SyntheticSet synthesize_children(const data::Manifest& m, const Tensor<float>& images,
                                 const model::MtlFace& model, int batch) {
  if (images.ndim() != 4 || images.dim(0) != static_cast<std::int64_t>(m.records.size()))
    throw std::invalid_argument("one preprocessed image per manifest record required");
  SyntheticSet out;
  out.manifest.base_dir = m.base_dir;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].age > 10.0) out.source_index.push_back(i);
  const std::int64_t n = static_cast<std::int64_t>(out.source_index.size());
  Shape s = images.shape();
  s[0] = n;
  out.images = Tensor<float>(s);
  const std::size_t per = images.numel() / images.dim(0);
  NoGradGuard ng;
  for (std::int64_t b = 0; b < n; b += batch) {
    const std::int64_t len = std::min<std::int64_t>(batch, n - b);
    Tensor<float> x({len, s[1], s[2], s[3]});
    for (std::int64_t k = 0; k < len; ++k) {
      const std::size_t src = out.source_index[b + k];
      std::copy(images.data() + src * per, images.data() + (src + 1) * per, x.data() + k * per);
    }
    const Tensor<float> y = model.synthesize(nn::VF(x), model::repeat_group(0, len)).value();
    std::copy(y.data(), y.data() + y.numel(), out.images.data() + b * per);
  }
  for (std::size_t src : out.source_index) {
    const auto& r = m.records[src];
    const std::filesystem::path p(r.path);
    const std::string name = "synthetic/" + p.stem().string() + "_child.png";
    out.manifest.records.push_back({name, r.identity, representative_age(0), true});
  }
  return out;
}

std::vector<double> finetune_last_layer(model::MtlFace& model, const Tensor<float>& images,
                                        const std::vector<int>& identities, const FinetuneOptions& opt) {
  if (static_cast<std::int64_t>(identities.size()) != images.dim(0))
    throw std::invalid_argument("one identity per image required");
  std::vector<double> history;
  if (opt.iters <= 0) return history;
  if (opt.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  const Tensor<float> feats = identity_features(model, images);
  const std::vector<std::string> groups{model::kIdHead, model::kPrototypes};
  nn::Sgd sgd(model.params().trainable(groups), static_cast<float>(opt.momentum));
  const std::size_t n = identities.size();
  const std::size_t bs = std::min<std::size_t>(n, static_cast<std::size_t>(opt.batch_size));
  const std::size_t per = feats.numel() / n;
  std::vector<std::size_t> perm;
  std::size_t pos = n;
  std::uint64_t epoch = 0;
  const losses::LossWeights w;
  for (int it = 0; it < opt.iters; ++it) {
    if (pos + bs > n) {
      perm = data::epoch_permutation(n, opt.seed, epoch++);
      pos = 0;
    }
    Shape s = feats.shape();
    s[0] = static_cast<std::int64_t>(bs);
    Tensor<float> x(s);
    std::vector<int> y(bs);
    for (std::size_t k = 0; k < bs; ++k) {
      const std::size_t src = perm[pos + k];
      std::copy(feats.data() + src * per, feats.data() + (src + 1) * per, x.data() + k * per);
      y[k] = identities[src];
    }
    pos += bs;
    {
      training::GradScope scope(model.params(), groups);
      sgd.zero_grad();
      const auto loss = losses::cosface_loss(model.embed(nn::VF(x)), y, model.prototypes(),
                                             static_cast<float>(w.cosface_margin),
                                             static_cast<float>(w.cosface_scale));
      history.push_back(loss.item());
      if (!std::isfinite(history.back())) throw training::NumericalError("non-finite fine-tuning loss");
      loss.backward();
    }
    sgd.step(static_cast<float>(opt.lr));
    sgd.zero_grad();
  }
  return history;
}

std::string format_selection_report(const std::vector<SelectionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["source_path"] = r.source_path;
    j["score"] = r.score;
    j["p1"] = r.p1;
    j["selected"] = r.selected;
    out += j.dump() + "\n";
  }
  return out;
}

Selection select_children(const data::Manifest& m, const Tensor<float>& real, const model::MtlFace& model,
                          const Scorer& scorer) {
  Selection sel;
  sel.children = synthesize_children(m, real, model);
  const auto n_real = real.dim(0);
  const auto n_syn = static_cast<std::int64_t>(sel.children.manifest.records.size());
  if (n_syn == 0) throw data::DataError("no record is older than 10; nothing to synthesize");
  Tensor<float> pool({n_real + n_syn, real.dim(1), real.dim(2), real.dim(3)});
  std::copy(real.data(), real.data() + real.numel(), pool.data());
  std::copy(sel.children.images.data(), sel.children.images.data() + sel.children.images.numel(),
            pool.data() + real.numel());
  sel.scores = score_quality(pool, scorer);
  sel.gmm = fit_gmm(sel.scores);
  for (std::int64_t i = 0; i < n_syn; ++i) {
    const double s = sel.scores[n_real + i];
    const auto [p0, p1] = posterior(sel.gmm, s);
    sel.report.push_back({m.resolve(m.records[sel.children.source_index[i]]), s, p1, p1 > p0});
    if (p1 > p0) sel.chosen.push_back(static_cast<std::size_t>(i));
  }
  return sel;
}

std::vector<double> finetune_with_selection(model::MtlFace& model, const data::Manifest& m,
                                            const Tensor<float>& real, const Selection& sel,
                                            const FinetuneOptions& opt) {
  const auto n_real = real.dim(0);
  const auto n = n_real + static_cast<std::int64_t>(sel.chosen.size());
  Tensor<float> train({n, real.dim(1), real.dim(2), real.dim(3)});
  const std::size_t per = real.numel() / static_cast<std::size_t>(n_real);
  std::copy(real.data(), real.data() + real.numel(), train.data());
  std::vector<int> ids;
  for (const auto& r : m.records) ids.push_back(r.identity);
  for (std::size_t k = 0; k < sel.chosen.size(); ++k) {
    const float* src = sel.children.images.data() + sel.chosen[k] * per;
    std::copy(src, src + per, train.data() + (static_cast<std::size_t>(n_real) + k) * per);
    ids.push_back(sel.children.manifest.records[sel.chosen[k]].identity);
  }
  FinetuneOptions o = opt;
  o.batch_size = std::min<int>(o.batch_size, static_cast<int>(n));
  return finetune_last_layer(model, train, ids, o);
}

}  // namespace mtlface::ftsel
