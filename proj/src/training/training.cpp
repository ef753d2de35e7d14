#include "mtlface/training/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "mtlface/eval/partition.hpp"
#include "mtlface/model/checkpoint.hpp"

namespace mtlface::training {

using model::MtlFace;
using nn::VF;

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (max_iters < 0) bad("max_iters must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(aifr_lr >= 0) || !(gan_lr >= 0)) bad("learning rates must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) bad("momentum must be in [0,1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("betas must be in [0,1)");
  if (warmup_iters < 0) bad("warmup_iters must be >= 0");
  if (!(decay_factor > 0 && decay_factor <= 1)) bad("decay_factor must be in (0,1]");
  if (n_g != kNumAgeGroups) bad("n_g must be 7");
  if (image_size < 16 || image_size % 16) bad("image_size must be a positive multiple of 16");
  for (std::size_t i = 1; i < decay_iters.size(); ++i)
    if (decay_iters[i] <= decay_iters[i - 1]) bad("decay_iters must be increasing");
  if (!decay_iters.empty()) {
    if (!(warmup_iters < decay_iters.front())) bad("warmup_iters must precede the first decay");
    if (!(decay_iters.back() < max_iters)) bad("decays must precede max_iters");
  }
  weights.validate();
}

TrainConfig TrainConfig::scaled_to(int iters) const {
  TrainConfig c = *this;
  const double f = max_iters > 0 ? static_cast<double>(iters) / max_iters : 0.0;
  c.max_iters = iters;
  c.warmup_iters = static_cast<int>(std::lround(warmup_iters * f));
  c.decay_iters.clear();
  for (int d : decay_iters) {
    const int s = static_cast<int>(std::lround(d * f));
    if (s > c.warmup_iters && s < iters && (c.decay_iters.empty() || s > c.decay_iters.back()))
      c.decay_iters.push_back(s);
  }
  return c;
}

TrainConfig TrainConfig::from_preset(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name != "paper") throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
  c.image_size = 112;
  c.batch_size = 512;
  c.max_iters = 36000;
  c.warmup_iters = 500;
  c.decay_iters = {1000, 20000, 23000};
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_iters", c.max_iters},       {"batch_size", c.batch_size},
       {"aifr_lr", c.aifr_lr},           {"momentum", c.momentum},
       {"gan_lr", c.gan_lr},             {"beta1", c.beta1},
       {"beta2", c.beta2},               {"warmup_iters", c.warmup_iters},
       {"decay_iters", c.decay_iters},   {"decay_factor", c.decay_factor},
       {"loss_weights", c.weights},      {"seed", c.seed},
       {"image_size", c.image_size},     {"n_g", c.n_g}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.max_iters = j.value("max_iters", d.max_iters);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.aifr_lr = j.value("aifr_lr", d.aifr_lr);
  c.momentum = j.value("momentum", d.momentum);
  c.gan_lr = j.value("gan_lr", d.gan_lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.warmup_iters = j.value("warmup_iters", d.warmup_iters);
  c.decay_iters = j.value("decay_iters", d.decay_iters);
  c.decay_factor = j.value("decay_factor", d.decay_factor);
  c.weights = j.value("loss_weights", d.weights);
  c.seed = j.value("seed", d.seed);
  c.image_size = j.value("image_size", d.image_size);
  c.n_g = j.value("n_g", d.n_g);
}

double learning_rate(const TrainConfig& cfg, int iter) {
  double lr = cfg.aifr_lr;
  if (iter < cfg.warmup_iters) lr *= static_cast<double>(iter) / cfg.warmup_iters;
  for (int d : cfg.decay_iters)
    if (iter >= d) lr *= cfg.decay_factor;
  return lr;
}

int Dataset::num_identities() const {
  int k = 0;
  for (int id : identities) k = std::max(k, id + 1);
  return k;
}

Dataset load_dataset(const data::Manifest& m, int image_size) {
  Dataset d;
  d.images = data::load_images(m, image_size);
  for (const auto& r : m.records) {
    d.identities.push_back(r.identity);
    d.ages.push_back(r.age);
    d.groups.push_back(age_to_group(r.age));
  }
  return d;
}

Batch make_batch(const Dataset& d, const std::vector<std::size_t>& index) {
  if (index.empty()) throw std::invalid_argument("empty batch");
  Batch b;
  Shape s = d.images.shape();
  const std::size_t per = d.images.numel() / s[0];
  s[0] = static_cast<std::int64_t>(index.size());
  b.images = Tensor<float>(s);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::size_t k = index[i];
    if (k >= d.size()) throw std::out_of_range("batch index out of range");
    std::copy(d.images.data() + k * per, d.images.data() + (k + 1) * per, b.images.data() + i * per);
    b.identities.push_back(d.identities[k]);
    b.ages.push_back(d.ages[k]);
    b.groups.push_back(d.groups[k]);
  }
  return b;
}

BatchSampler::BatchSampler(std::size_t n, int batch_size, std::uint64_t seed)
    : n_(n), batch_(batch_size), seed_(seed) {
  if (batch_size < 1 || n < static_cast<std::size_t>(batch_size))
    throw std::invalid_argument("dataset of " + std::to_string(n) + " records is smaller than one batch of " +
                                std::to_string(batch_size));
  perm_ = data::epoch_permutation(n_, seed_, epoch_);
}

std::vector<std::size_t> BatchSampler::next() {
  if (pos_ + batch_ > n_) {
    ++epoch_;
    perm_ = data::epoch_permutation(n_, seed_, epoch_);
    pos_ = 0;
  }
  std::vector<std::size_t> out(perm_.begin() + pos_, perm_.begin() + pos_ + batch_);
  pos_ += batch_;
  return out;
}

GradScope::GradScope(nn::ParamRegistry& reg, const std::vector<std::string>& groups) : reg_(reg) {
  for (auto& p : reg_.entries()) {
    saved_.push_back(p.var.requires_grad());
    bool on = false;
    if (p.trainable)
      for (const auto& g : groups) on = on || p.group == g;
    p.var.set_requires_grad(on);
  }
}

GradScope::~GradScope() {
  auto& e = reg_.entries();
  for (std::size_t i = 0; i < e.size() && i < saved_.size(); ++i) e[i].var.set_requires_grad(saved_[i]);
}

std::vector<std::string> aifr_groups() {
  return {model::kEncoder, model::kAfd, model::kAgeHead, model::kDomainHead, model::kIdHead, model::kPrototypes};
}
std::vector<std::string> discriminator_groups() { return {model::kDiscriminator}; }
std::vector<std::string> fas_groups() { return {model::kIcm, model::kDecoder}; }

Trainer::Trainer(MtlFace& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      sgd_(model.params().trainable(aifr_groups()), static_cast<float>(cfg.momentum)),
      adam_d_(model.params().trainable(discriminator_groups()), static_cast<float>(cfg.gan_lr),
              static_cast<float>(cfg.beta1), static_cast<float>(cfg.beta2)),
      adam_g_(model.params().trainable(fas_groups()), static_cast<float>(cfg.gan_lr),
              static_cast<float>(cfg.beta1), static_cast<float>(cfg.beta2)),
      rng_(data::mix64(cfg.seed ^ 0x7a11ULL)) {
  cfg_.validate();
  if (model.config().n_groups != cfg.n_g || model.config().image_size != cfg.image_size)
    throw std::invalid_argument("train config does not match the model (n_g / image_size)");
}

std::vector<int> Trainer::sample_targets(std::int64_t n) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& g : t) g = static_cast<int>(rng_() % static_cast<std::uint64_t>(cfg_.n_g));
  return t;
}

Metrics Trainer::step_aifr(const Batch& b, double lr) {
  if (b.size() == 0) throw std::invalid_argument("empty batch");
  const auto& w = cfg_.weights;
  Metrics m;
  {
    GradScope scope(model_.params(), aifr_groups());
    sgd_.zero_grad();
    const VF x(b.images);
    const auto enc = model_.encode(x, true);
    const auto dec = model_.decompose(enc.features);
    const auto age = model_.estimate_age(dec.age_part);
    const auto age_l = losses::age_estimation_loss(age.expected_age, age.group_logits, b.ages, b.groups);
    const auto dom = model_.estimate_domain(dec.id_part);
    const auto dom_l = losses::age_estimation_loss(dom.expected_age, dom.group_logits, b.ages, b.groups);
    const VF emb = model_.embed(dec.id_part);
    const auto cos_l = losses::cosface_loss(emb, b.identities, model_.prototypes(),
                                            static_cast<float>(w.cosface_margin),
                                            static_cast<float>(w.cosface_scale));
    const auto total = losses::aifr_loss(cos_l, age_l, dom_l, w);
    m["aifr_cosface"] = cos_l.item();
    m["aifr_age"] = age_l.item();
    m["aifr_domain"] = dom_l.item();
    m["aifr_total"] = total.total.item();
    const auto logits = losses::cosine_logits(emb.detach(), model_.prototypes().detach()).value();
    const std::int64_t k = logits.dim(1);
    int hits = 0;
    for (std::int64_t i = 0; i < b.size(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < k; ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      hits += best == b.identities[i];
    }
    m["aifr_acc"] = static_cast<double>(hits) / b.size();
    if (std::isfinite(m["aifr_total"])) total.total.backward();
  }
  if (std::isfinite(m["aifr_total"])) sgd_.step(static_cast<float>(lr));
  sgd_.zero_grad();
  return m;
}

Trainer::Synthesis Trainer::synthesize(const Batch& b, const std::vector<int>& targets) {
  GradScope scope(model_.params(), fas_groups());
  Synthesis s;
  s.source = VF(b.images);
  const auto enc = model_.encode(s.source, nn::BnMode::batch);
  const auto src = model_.decompose(enc.features);
  s.source_id = src.id_part.detach();
  s.fake = model_.decode(src.id_part, model_.build_conditions(src.id_part, enc.skips, targets));
  return s;
}

Metrics Trainer::step_discriminator(const Batch& b, const std::vector<int>& targets, const Synthesis* pre) {
  if (b.size() == 0) throw std::invalid_argument("empty batch");
  VF fake;
  if (pre) {
    fake = pre->fake.detach();
  } else {
    NoGradGuard ng;
    fake = VF(model_.synthesize(VF(b.images), targets).value());
  }
  Metrics m;
  {
    GradScope scope(model_.params(), discriminator_groups());
    adam_d_.zero_grad();
    const VF real_map = model_.discriminate(VF(b.images), b.groups, true);
    const VF fake_map = model_.discriminate(fake, targets, true);
    const VF loss = losses::lsgan_discriminator_loss(real_map, fake_map);
    m["d_loss"] = loss.item();
    m["d_real"] = ops::mean(real_map).item();
    m["d_fake"] = ops::mean(fake_map).item();
    if (std::isfinite(m["d_loss"])) loss.backward();
  }
  if (std::isfinite(m["d_loss"])) adam_d_.step();
  adam_d_.zero_grad();
  return m;
}

Metrics Trainer::step_fas(const Batch& b, const std::vector<int>& targets, const Synthesis* pre) {
  if (b.size() == 0) throw std::invalid_argument("empty batch");
  const auto& w = cfg_.weights;
  Synthesis own;
  if (!pre) {
    own = synthesize(b, targets);
    pre = &own;
  }
  Metrics m;
  {
    GradScope scope(model_.params(), fas_groups());
    adam_g_.zero_grad();
    const VF& fake = pre->fake;
    const VF adv = losses::lsgan_generator_loss(model_.discriminate(fake, targets, false));
    const auto fenc = model_.encode(fake, nn::BnMode::batch);
    const auto fdec = model_.decompose(fenc.features);
    const std::function<VF(const VF&)> embed = [&](const VF& f) { return model_.embed(f); };
    const VF id_l = losses::fas_identity_loss(fdec.id_part, pre->source_id, embed);
    const VF age_l = losses::fas_age_loss(model_.estimate_age(fdec.age_part).group_logits, targets);
    const std::function<std::vector<VF>(const VF&)> feats = [&](const VF& v) {
      return model_.perceptual_features(v);
    };
    const VF lp = losses::perceptual_loss(fake, pre->source, feats);
    const auto total = losses::fas_total_loss(adv, id_l, age_l, lp, w);
    m["fas_adv"] = adv.item();
    m["fas_id"] = id_l.item();
    m["fas_age"] = age_l.item();
    m["fas_lpips"] = lp.item();
    m["fas_total"] = total.total.item();
    if (std::isfinite(m["fas_total"])) total.total.backward();
  }
  if (std::isfinite(m["fas_total"])) adam_g_.step();
  adam_g_.zero_grad();
  // Frozen groups may have picked up input-side gradients; drop them.
  model_.params().zero_grad();
  return m;
}

Metrics Trainer::iterate(const Batch& b, int iter) {
  const double lr = learning_rate(cfg_, iter);
  Metrics m = step_aifr(b, lr);
  const auto targets = sample_targets(b.size());
  const Synthesis syn = synthesize(b, targets);
  for (const auto& [k, v] : step_discriminator(b, targets, &syn)) m[k] = v;
  for (const auto& [k, v] : step_fas(b, targets, &syn)) m[k] = v;
  m["lr"] = lr;
  return m;
}

namespace {

const char* kLossKeys[] = {"aifr_cosface", "aifr_age", "aifr_domain", "aifr_total", "d_loss",
                           "fas_adv",      "fas_id",   "fas_age",     "fas_lpips",  "fas_total"};
const char* kRecordKeys[] = {"aifr_cosface", "aifr_age", "aifr_domain", "aifr_total", "aifr_acc",
                             "d_loss",       "d_real",   "d_fake",      "fas_adv",    "fas_id",
                             "fas_age",      "fas_lpips", "fas_total"};

}  // namespace

TrainResult train(const ModelConfig& mcfg, const TrainConfig& cfg, const Dataset& data, const TrainOutputs& out) {
  cfg.validate();
  TrainResult res;
  res.model = std::make_unique<MtlFace>(mcfg);
  if (data.num_identities() > mcfg.num_classes)
    throw std::invalid_argument("dataset has " + std::to_string(data.num_identities()) +
                                " identities but the model has " + std::to_string(mcfg.num_classes) +
                                " classes");
  Trainer trainer(*res.model, cfg);
  std::ofstream log;
  if (!out.metrics_path.empty()) {
    log.open(out.metrics_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write metrics log " + out.metrics_path);
  }
  auto emit = [&](const nlohmann::ordered_json& r) {
    if (log.is_open()) log << r.dump() << "\n" << std::flush;
    if (out.on_record) out.on_record(r);
    res.records.push_back(r);
  };
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.max_iters > 0) {
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    for (int it = 0; it < cfg.max_iters; ++it) {
      const Batch b = make_batch(data, sampler.next());
      const Metrics m = trainer.iterate(b, it);
      nlohmann::ordered_json r;
      r["iter"] = it;
      r["lr"] = m.at("lr");
      for (const char* k : kRecordKeys) r[k] = m.at(k);
      r["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const char* k : kLossKeys) {
        if (!std::isfinite(m.at(k))) {
          nlohmann::ordered_json diag;
          diag["iter"] = it;
          diag["error"] = "non-finite loss";
          diag["component"] = k;
          diag["metrics"] = r;
          emit(diag);
          throw NumericalError(std::string("non-finite ") + k + " at iteration " + std::to_string(it));
        }
      }
      emit(r);
    }
  }
  if (!out.checkpoint_path.empty()) {
    nlohmann::json extra = out.checkpoint_extra;
    extra["train"] = cfg;
    extra["iters_completed"] = cfg.max_iters;
    model::save_checkpoint(*res.model, out.checkpoint_path, extra);
  }
  return res;
}

}  // namespace mtlface::training
