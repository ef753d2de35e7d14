#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtlface/core/tensor.hpp"
#include "mtlface/eval/partition.hpp"

namespace mtlface::eval {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Pair {
  std::string a, b;
  bool same = false;
  int fold = 0;
};

struct PairSet {
  std::vector<Pair> pairs;
  int num_folds = 0;
};

/// Blocks of `path_a<TAB>path_b<TAB>{0|1}` lines, each preceded by a
/// `# fold K` header with K = 0, 1, ... in order.
PairSet parse_pairs(const std::string& text);
PairSet load_pairs(const std::string& path);
std::string format_pairs(const PairSet& set);

/// Cosine similarity in double; 0 when either vector is all zeros.
double cosine(const std::vector<float>& a, const std::vector<float>& b);

struct VerifyResult {
  double mean_accuracy = 0;
  double std_accuracy = 0;
  std::vector<double> fold_accuracy;
  std::vector<double> thresholds;

  nlohmann::json to_json() const;
};

/// Best threshold on a labelled set: candidates are midpoints between
/// consecutive distinct similarities plus one below the minimum and one above
/// the maximum; predictions are "same" when sim > threshold; the first
/// (lowest) best candidate wins ties.
double best_threshold(const std::vector<double>& sims, const std::vector<bool>& same);
double threshold_accuracy(const std::vector<double>& sims, const std::vector<bool>& same, double thr);

/// K-fold protocol on precomputed similarities.
VerifyResult verify_kfold(const std::vector<double>& sims, const std::vector<bool>& same,
                          const std::vector<int>& folds, int num_folds);

using PathEmbedder = std::function<std::vector<float>(const std::string& path)>;
/// Embeds each distinct path once, then runs the fold protocol.
VerifyResult verify_10fold(const PairSet& set, const PathEmbedder& embed);

/// Fraction of probes whose most similar gallery entry shares the identity.
/// Ties go to the lowest gallery index.
double rank1_identify(const std::vector<std::vector<float>>& probes, const std::vector<int>& probe_ids,
                      const std::vector<std::vector<float>>& gallery, const std::vector<int>& gallery_ids);
/// Each entry is matched against all others.
double rank1_leave_one_out(const std::vector<std::vector<float>>& embeddings, const std::vector<int>& ids);

struct FasMetrics {
  double age_accuracy = 0;  // percent
  double mae = 0;           // years
  double id_cos_mean = 0;
  double id_cos_std = 0;

  nlohmann::json to_json() const;
};

using AgePredictor = std::function<double(const Tensor<float>& chw)>;
/// Maps [N,3,H,W] to N embeddings.
using BatchEmbedder = std::function<std::vector<std::vector<float>>(const Tensor<float>& images)>;

/// MAE uses representative ages unless `target_ages` is given.
FasMetrics fas_metrics(const Tensor<float>& synth, const std::vector<int>& targets,
                       const Tensor<float>& sources, const AgePredictor& predict_age,
                       const BatchEmbedder& embed, const std::vector<double>* target_ages = nullptr);

}  // namespace mtlface::eval
