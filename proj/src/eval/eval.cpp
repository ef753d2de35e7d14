#include "mtlface/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace mtlface::eval {

PairSet parse_pairs(const std::string& text) {
  PairSet set;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  int fold = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ProtocolError("pair file line " + std::to_string(lineno) + ": " + why);
    };
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string word;
      int k = -1;
      if (!(h >> word >> k) || word != "fold") fail("expected '# fold K'");
      if (k != fold + 1) fail("fold headers must count up from 0");
      fold = k;
      continue;
    }
    if (fold < 0) fail("pair before the first fold header");
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t t = line.find('\t', start);
      f.push_back(line.substr(start, t == std::string::npos ? std::string::npos : t - start));
      if (t == std::string::npos) break;
      start = t + 1;
    }
    if (f.size() != 3) fail("expected path_a<TAB>path_b<TAB>{0|1}");
    if (f[2] != "0" && f[2] != "1") fail("label must be 0 or 1");
    set.pairs.push_back({f[0], f[1], f[2] == "1", fold});
  }
  set.num_folds = fold + 1;
  return set;
}

PairSet load_pairs(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ProtocolError("cannot open pair file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_pairs(ss.str());
}

std::string format_pairs(const PairSet& set) {
  std::string out;
  for (int k = 0; k < set.num_folds; ++k) {
    out += "# fold " + std::to_string(k) + "\n";
    for (const auto& p : set.pairs)
      if (p.fold == k) out += p.a + "\t" + p.b + "\t" + (p.same ? "1" : "0") + "\n";
  }
  return out;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw ProtocolError("embedding sizes differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

nlohmann::json VerifyResult::to_json() const {
  return {{"mean_accuracy", mean_accuracy},
          {"std_accuracy", std_accuracy},
          {"fold_accuracy", fold_accuracy},
          {"thresholds", thresholds}};
}

double threshold_accuracy(const std::vector<double>& sims, const std::vector<bool>& same, double thr) {
  if (sims.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sims.size(); ++i) correct += ((sims[i] > thr) == same[i]);
  return static_cast<double>(correct) / sims.size();
}

double best_threshold(const std::vector<double>& sims, const std::vector<bool>& same) {
  if (sims.empty() || sims.size() != same.size()) throw ProtocolError("threshold search needs labelled pairs");
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] < sims[b]; });
  // Start below the minimum: everything predicted "same".
  long correct = 0;
  for (bool s : same) correct += s;
  double best_thr = sims[order.front()] - 1.0;
  long best = correct;
  std::size_t i = 0;
  while (i < order.size()) {
    // Move the whole run of equal similarities below the threshold.
    const double v = sims[order[i]];
    std::size_t j = i;
    while (j < order.size() && sims[order[j]] == v) {
      correct += same[order[j]] ? -1 : 1;
      ++j;
    }
    const double thr = j < order.size() ? 0.5 * (v + sims[order[j]]) : v + 1.0;
    if (correct > best) {
      best = correct;
      best_thr = thr;
    }
    i = j;
  }
  return best_thr;
}

VerifyResult verify_kfold(const std::vector<double>& sims, const std::vector<bool>& same,
                          const std::vector<int>& folds, int num_folds) {
  if (sims.size() != same.size() || sims.size() != folds.size())
    throw ProtocolError("similarities, labels and folds differ in length");
  if (num_folds < 2) throw ProtocolError("need at least 2 folds");
  std::vector<std::size_t> count(num_folds, 0);
  for (int f : folds) {
    if (f < 0 || f >= num_folds) throw ProtocolError("fold index out of range");
    ++count[f];
  }
  for (int k = 0; k < num_folds; ++k)
    if (count[k] == 0) throw ProtocolError("fold " + std::to_string(k) + " is empty");
  VerifyResult r;
  for (int k = 0; k < num_folds; ++k) {
    std::vector<double> tr_s, te_s;
    std::vector<bool> tr_y, te_y;
    for (std::size_t i = 0; i < sims.size(); ++i) {
      if (folds[i] == k) {
        te_s.push_back(sims[i]);
        te_y.push_back(same[i]);
      } else {
        tr_s.push_back(sims[i]);
        tr_y.push_back(same[i]);
      }
    }
    const double thr = best_threshold(tr_s, tr_y);
    r.thresholds.push_back(thr);
    r.fold_accuracy.push_back(threshold_accuracy(te_s, te_y, thr));
  }
  double m = 0;
  for (double a : r.fold_accuracy) m += a;
  m /= num_folds;
  double v = 0;
  for (double a : r.fold_accuracy) v += (a - m) * (a - m);
  r.mean_accuracy = m;
  r.std_accuracy = std::sqrt(v / num_folds);
  return r;
}

VerifyResult verify_10fold(const PairSet& set, const PathEmbedder& embed) {
  std::map<std::string, std::vector<float>> cache;
  auto get = [&](const std::string& p) -> const std::vector<float>& {
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, embed(p)).first;
    return it->second;
  };
  std::vector<double> sims;
  std::vector<bool> same;
  std::vector<int> folds;
  for (const auto& p : set.pairs) {
    sims.push_back(cosine(get(p.a), get(p.b)));
    same.push_back(p.same);
    folds.push_back(p.fold);
  }
  return verify_kfold(sims, same, folds, set.num_folds);
}

double rank1_identify(const std::vector<std::vector<float>>& probes, const std::vector<int>& probe_ids,
                      const std::vector<std::vector<float>>& gallery, const std::vector<int>& gallery_ids) {
  if (probes.size() != probe_ids.size() || gallery.size() != gallery_ids.size())
    throw ProtocolError("embeddings and identities differ in length");
  if (probes.empty()) throw ProtocolError("no probes");
  if (gallery.empty()) throw ProtocolError("empty gallery");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    std::size_t best = 0;
    double best_sim = cosine(probes[i], gallery[0]);
    for (std::size_t j = 1; j < gallery.size(); ++j) {
      const double s = cosine(probes[i], gallery[j]);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    hits += gallery_ids[best] == probe_ids[i];
  }
  return static_cast<double>(hits) / probes.size();
}

double rank1_leave_one_out(const std::vector<std::vector<float>>& embeddings, const std::vector<int>& ids) {
  if (embeddings.size() != ids.size() || embeddings.size() < 2)
    throw ProtocolError("leave-one-out needs at least two labelled embeddings");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    double best_sim = cosine(embeddings[i], embeddings[best]);
    for (std::size_t j = best + 1; j < embeddings.size(); ++j) {
      if (j == i) continue;
      const double s = cosine(embeddings[i], embeddings[j]);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    hits += ids[best] == ids[i];
  }
  return static_cast<double>(hits) / embeddings.size();
}

nlohmann::json FasMetrics::to_json() const {
  return {{"age_accuracy", age_accuracy}, {"mae", mae}, {"id_cos_mean", id_cos_mean}, {"id_cos_std", id_cos_std}};
}

FasMetrics fas_metrics(const Tensor<float>& synth, const std::vector<int>& targets, const Tensor<float>& sources,
                       const AgePredictor& predict_age, const BatchEmbedder& embed,
                       const std::vector<double>* target_ages) {
  if (synth.ndim() != 4 || synth.shape() != sources.shape())
    throw ProtocolError("synthesized and source batches must have equal [N,3,H,W] shapes");
  const std::size_t n = static_cast<std::size_t>(synth.dim(0));
  if (targets.size() != n) throw ProtocolError("one target group per synthesized face required");
  if (target_ages && target_ages->size() != n) throw ProtocolError("target ages length mismatch");
  if (n == 0) throw ProtocolError("empty batch");
  FasMetrics m;
  std::size_t hits = 0;
  double abs_err = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<float> img = synth.narrow(static_cast<std::int64_t>(i), 1).reshape(
        {synth.dim(1), synth.dim(2), synth.dim(3)});
    const double age = predict_age(img);
    hits += age_in_group(age, targets[i]);
    const double ref = target_ages ? (*target_ages)[i] : representative_age(targets[i]);
    abs_err += std::abs(age - ref);
  }
  m.age_accuracy = 100.0 * static_cast<double>(hits) / n;
  m.mae = abs_err / n;
  const auto es = embed(sources);
  const auto et = embed(synth);
  if (es.size() != n || et.size() != n) throw ProtocolError("embedder returned the wrong count");
  std::vector<double> cs(n);
  for (std::size_t i = 0; i < n; ++i) cs[i] = cosine(es[i], et[i]);
  double mean = 0;
  for (double c : cs) mean += c;
  mean /= n;
  double var = 0;
  for (double c : cs) var += (c - mean) * (c - mean);
  m.id_cos_mean = mean;
  m.id_cos_std = std::sqrt(var / n);
  return m;
}

}  // namespace mtlface::eval
