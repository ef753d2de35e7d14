#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mtlface/data/data.hpp"
#include "mtlface/model/model.hpp"

namespace mtlface::ftsel {

class GmmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two-component 1-D Gaussian mixture; component 1 has the larger mean.
struct Gmm2 {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<double, 2> means{0.0, 1.0};
  std::array<double, 2> variances{1.0, 1.0};
  std::vector<double> log_likelihood;  // mean per-sample value after each EM iteration
  int iterations = 0;
  bool converged = false;

  /// weights[k] * N(s; means[k], variances[k])
  double weighted_density(int k, double s) const;
  nlohmann::json to_json() const;
};

struct GmmOptions {
  double variance_floor = 1e-6;
  double tolerance = 1e-8;
  int max_iters = 500;
};

/// EM from a median split. Throws GmmError for fewer than 4 scores, non-finite
/// scores or a zero range.
Gmm2 fit_gmm(const std::vector<double>& scores, const GmmOptions& opt = {});

/// (p0, p1) with p0 + p1 = 1.
std::pair<double, double> posterior(const Gmm2& g, double s);

/// Indices with p1 > p0, in input order.
std::vector<std::size_t> select_high_quality(const std::vector<double>& scores, const Gmm2& g);

/// Raw quality per image, higher is better.
using Scorer = std::function<std::vector<double>(const Tensor<float>& images)>;

/// Affine map of the pool onto [0,1]; a zero range maps everything to 0.
std::vector<double> min_max_normalize(const std::vector<double>& raw);
/// Scores the pool and normalizes it. Throws std::invalid_argument when empty.
std::vector<double> score_quality(const Tensor<float>& images, const Scorer& scorer);
/// L2 norm of the identity embedding before normalization.
Scorer embedding_norm_scorer(const model::MtlFace& model, int batch = 32);

struct SyntheticSet {
  data::Manifest manifest;                // one record per synthesized face
  Tensor<float> images;                   // [M,3,S,S]
  std::vector<std::size_t> source_index;  // record index in the input manifest
};

/// Every record older than 10 is rendered into the youngest group, keeping
/// its identity; the new record is flagged synthetic with age 5.
SyntheticSet synthesize_children(const data::Manifest& m, const Tensor<float>& images,
                                 const model::MtlFace& model, int batch = 16);

struct FinetuneOptions {
  int iters = 200;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  std::uint64_t seed = 1;
};

/// CosFace on cached identity features; only the identity layer and the
/// prototypes move. Returns the loss per iteration.
std::vector<double> finetune_last_layer(model::MtlFace& model, const Tensor<float>& images,
                                        const std::vector<int>& identities, const FinetuneOptions& opt);

struct SelectionRecord {
  std::string source_path;
  double score = 0;
  double p1 = 0;
  bool selected = false;
};

std::string format_selection_report(const std::vector<SelectionRecord>& records);

struct Selection {
  SyntheticSet children;
  std::vector<double> scores;         // normalized, real records first
  Gmm2 gmm;
  std::vector<std::size_t> chosen;    // indices into children
  std::vector<SelectionRecord> report;
};

/// Children of every record older than 10, scored together with the real
/// faces; synthetic faces with p1 > p0 are chosen. Throws data::DataError when
/// nothing is old enough and GmmError when the scores cannot be fitted.
Selection select_children(const data::Manifest& m, const Tensor<float>& real, const model::MtlFace& model,
                          const Scorer& scorer);

/// Real faces plus the chosen children, fed to finetune_last_layer.
std::vector<double> finetune_with_selection(model::MtlFace& model, const data::Manifest& m,
                                            const Tensor<float>& real, const Selection& sel,
                                            const FinetuneOptions& opt);

/// Identity features [N,C,h,w] of the images, batched and without graph.
Tensor<float> identity_features(const model::MtlFace& model, const Tensor<float>& images, int batch = 32);
/// Embeddings [N,d] before normalization.
Tensor<float> embeddings(const model::MtlFace& model, const Tensor<float>& images, int batch = 32);

}  // namespace mtlface::ftsel
