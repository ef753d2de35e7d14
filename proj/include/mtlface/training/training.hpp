#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtlface/data/data.hpp"
#include "mtlface/losses/losses.hpp"
#include "mtlface/model/model.hpp"
#include "mtlface/nn/optim.hpp"

namespace mtlface::training {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int max_iters = 2000;
  int batch_size = 16;
  double aifr_lr = 0.1;
  double momentum = 0.9;
  double gan_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int warmup_iters = 200;
  std::vector<int> decay_iters{1200, 1700};
  double decay_factor = 0.1;
  losses::LossWeights weights;
  std::uint64_t seed = 1;
  int image_size = 64;
  int n_g = 7;

  /// Throws std::invalid_argument; requires warmup < min(decays) < max_iters
  /// whenever decays are present.
  void validate() const;
  /// Same schedule shape stretched to `iters` iterations; decay points that
  /// no longer fit between warmup and the end are dropped.
  TrainConfig scaled_to(int iters) const;

  /// desk: the defaults above. paper: 112px, batch 512, 36k iterations with
  /// decays at 1k, 20k and 23k.
  static TrainConfig from_preset(const std::string& name);
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear warmup from 0 to aifr_lr, then multiplied by decay_factor at every
/// decay point already reached.
double learning_rate(const TrainConfig& cfg, int iter);

/// Preprocessed images with their labels.
struct Dataset {
  Tensor<float> images;  // [N,3,S,S]
  std::vector<int> identities;
  std::vector<double> ages;
  std::vector<int> groups;

  std::size_t size() const { return identities.size(); }
  int num_identities() const;
};

Dataset load_dataset(const data::Manifest& m, int image_size);

struct Batch {
  Tensor<float> images;
  std::vector<int> identities;
  std::vector<double> ages;
  std::vector<int> groups;

  std::int64_t size() const { return static_cast<std::int64_t>(identities.size()); }
};

Batch make_batch(const Dataset& d, const std::vector<std::size_t>& index);

/// Yields fixed-size batches from seeded per-epoch permutations; an epoch's
/// incomplete tail is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  std::uint64_t epoch() const { return epoch_; }

 private:
  std::size_t n_;
  int batch_;
  std::uint64_t seed_, epoch_ = 0;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

/// Makes only the trainable parameters of `groups` require gradients for the
/// lifetime of the scope; the previous flags are restored on exit.
class GradScope {
 public:
  GradScope(nn::ParamRegistry& reg, const std::vector<std::string>& groups);
  ~GradScope();
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  nn::ParamRegistry& reg_;
  std::vector<bool> saved_;
};

using Metrics = std::map<std::string, double>;

std::vector<std::string> aifr_groups();
std::vector<std::string> discriminator_groups();
std::vector<std::string> fas_groups();

class Trainer {
 public:
  Trainer(model::MtlFace& model, const TrainConfig& cfg);

  /// Momentum SGD on encoder, attention and heads. Keys: aifr_cosface,
  /// aifr_age, aifr_domain, aifr_total, aifr_acc.
  Metrics step_aifr(const Batch& b, double lr);
  /// Generator forward shared by the discriminator and FAS steps.
  struct Synthesis {
    nn::VF source;
    nn::VF source_id;
    nn::VF fake;
  };
  Synthesis synthesize(const Batch& b, const std::vector<int>& targets);

  /// Adam on the discriminator. Keys: d_loss, d_real, d_fake.
  Metrics step_discriminator(const Batch& b, const std::vector<int>& targets,
                             const Synthesis* pre = nullptr);
  /// Adam on condition modules and decoder. Keys: fas_adv, fas_id, fas_age,
  /// fas_lpips, fas_total.
  Metrics step_fas(const Batch& b, const std::vector<int>& targets, const Synthesis* pre = nullptr);

  /// Uniform target groups, one per sample.
  std::vector<int> sample_targets(std::int64_t n);
  /// All three steps in order on one shared batch.
  Metrics iterate(const Batch& b, int iter);

  model::MtlFace& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  model::MtlFace& model_;
  TrainConfig cfg_;
  nn::Sgd sgd_;
  nn::Adam adam_d_, adam_g_;
  nn::Rng rng_;
};

struct TrainOutputs {
  std::string metrics_path;     // NDJSON; empty to skip
  std::string checkpoint_path;  // empty to skip
  nlohmann::json checkpoint_extra;
  std::function<void(const nlohmann::ordered_json&)> on_record;
};

struct TrainResult {
  std::unique_ptr<model::MtlFace> model;
  std::vector<nlohmann::ordered_json> records;
};

/// Runs max_iters iterations from a freshly initialized model. Every record
/// carries iter, lr, the step metrics and wall_time. A non-finite loss writes
/// a diagnostic record and throws NumericalError.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& cfg, const Dataset& data,
                  const TrainOutputs& out = {});

}  // namespace mtlface::training
