#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "mtlface/eval/eval.hpp"

using namespace mtlface;
using namespace mtlface::eval;

namespace {

std::vector<float> one_hot(int k, int n = 8) {
  std::vector<float> v(n, 0.0f);
  v[k] = 1.0f;
  return v;
}

// Balanced folds over 8 identities; the path prefix is the identity.
PairSet balanced_pairs(int folds, int per_class, std::mt19937_64& rng) {
  PairSet s;
  s.num_folds = folds;
  for (int f = 0; f < folds; ++f)
    for (int i = 0; i < per_class; ++i) {
      const int a = static_cast<int>(rng() % 8);
      const int b = (a + 1 + static_cast<int>(rng() % 7)) % 8;
      s.pairs.push_back({std::to_string(a) + "/p" + std::to_string(f) + "_" + std::to_string(i),
                         std::to_string(a) + "/q" + std::to_string(f) + "_" + std::to_string(i), true, f});
      s.pairs.push_back({std::to_string(a) + "/r" + std::to_string(f) + "_" + std::to_string(i),
                         std::to_string(b) + "/s" + std::to_string(f) + "_" + std::to_string(i), false, f});
    }
  return s;
}

int id_of(const std::string& path) { return std::stoi(path.substr(0, path.find('/'))); }

// Exhaustive search over every observed value and its neighbours.
double brute_best_accuracy(const std::vector<double>& s, const std::vector<bool>& y) {
  std::vector<double> cands{-1e9, 1e9};
  for (double a : s)
    for (double b : s) cands.push_back((a + b) / 2);
  double best = 0;
  for (double t : cands) best = std::max(best, threshold_accuracy(s, y, t));
  return best;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("age groups") {
    CHECK(age_to_group(0) == 0);
    CHECK(age_to_group(10) == 0);
    CHECK(age_to_group(11) == 1);
    CHECK(age_to_group(10.5) == 1);
    CHECK(age_to_group(35) == 3);
    CHECK(age_to_group(60) == 5);
    CHECK(age_to_group(61) == 6);
    CHECK(age_to_group(99) == 6);
    CHECK_THROWS(age_to_group(-1));
    CHECK(representative_age(0) == 5);
    CHECK(representative_age(6) == 65);
    for (int g = 0; g < kNumAgeGroups; ++g) {
      CHECK(age_to_group(representative_age(g)) == g);
      CHECK(age_in_group(representative_age(g), g));
    }
    CHECK_FALSE(age_in_group(35, 2));
  }

  TEST_CASE("pair file parsing") {
    const std::string text = "# fold 0\na\tb\t1\nc\td\t0\n# fold 1\ne\tf\t1\n";
    const auto s = parse_pairs(text);
    CHECK(s.num_folds == 2);
    REQUIRE(s.pairs.size() == 3);
    CHECK(s.pairs[1].b == "d");
    CHECK_FALSE(s.pairs[1].same);
    CHECK(s.pairs[2].fold == 1);
    CHECK(parse_pairs(format_pairs(s)).pairs.size() == 3);
    CHECK(format_pairs(parse_pairs(format_pairs(s))) == format_pairs(s));

    auto message = [](const std::string& t) {
      try {
        parse_pairs(t);
      } catch (const ProtocolError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message("a\tb\t1\n").find("line 1") != std::string::npos);
    CHECK(message("# fold 1\na\tb\t1\n").find("line 1") != std::string::npos);
    CHECK(message("# fold 0\na\tb\t3\n").find("line 2") != std::string::npos);
    CHECK(message("# fold 0\na\tb\n").find("line 2") != std::string::npos);
    CHECK_THROWS_AS(load_pairs("/nonexistent/pairs.txt"), ProtocolError);
  }

  TEST_CASE("cosine") {
    CHECK(cosine({1, 0}, {0, 1}) == 0.0);
    CHECK(cosine({2, 2}, {1, 1}) == doctest::Approx(1.0));
    CHECK(cosine({0, 0}, {1, 1}) == 0.0);
    CHECK_THROWS_AS(cosine({1}, {1, 2}), ProtocolError);
  }

  TEST_CASE("oracle embedder verifies perfectly") {
    std::mt19937_64 rng(1);
    const auto set = balanced_pairs(10, 30, rng);
    int calls = 0;
    const auto r = verify_10fold(set, [&](const std::string& p) {
      ++calls;
      return one_hot(id_of(p));
    });
    CHECK(r.mean_accuracy == 1.0);
    CHECK(r.std_accuracy == 0.0);
    CHECK(r.fold_accuracy.size() == 10);
    CHECK(r.thresholds.size() == 10);
    CHECK(calls == static_cast<int>(set.pairs.size() * 2));
    const auto j = r.to_json();
    CHECK(j["mean_accuracy"] == 1.0);
  }

  TEST_CASE("constant embedder is at chance") {
    std::mt19937_64 rng(2);
    const auto set = balanced_pairs(10, 30, rng);
    const auto r = verify_10fold(set, [](const std::string&) { return std::vector<float>{1, 2, 3}; });
    CHECK(r.mean_accuracy == doctest::Approx(0.5));
  }

  TEST_CASE("fold thresholds reach the exhaustive optimum") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> sims;
      std::vector<bool> same;
      std::vector<int> folds;
      const double gap = 0.3 * (rep % 5);
      for (int f = 0; f < 5; ++f)
        for (int i = 0; i < 12; ++i) {
          const bool s = i % 2 == 0;
          sims.push_back(std::round((n(rng) + (s ? gap : 0)) * 20) / 20);
          same.push_back(s);
          folds.push_back(f);
        }
      const auto r = verify_kfold(sims, same, folds, 5);
      for (int f = 0; f < 5; ++f) {
        std::vector<double> ts, es;
        std::vector<bool> ty, ey;
        for (std::size_t i = 0; i < sims.size(); ++i) {
          (folds[i] == f ? es : ts).push_back(sims[i]);
          (folds[i] == f ? ey : ty).push_back(same[i]);
        }
        const double thr = r.thresholds[f];
        CHECK(threshold_accuracy(ts, ty, thr) == doctest::Approx(brute_best_accuracy(ts, ty)));
        CHECK(r.fold_accuracy[f] == doctest::Approx(threshold_accuracy(es, ey, thr)));
      }
      CHECK(r.mean_accuracy >= 0.0);
      CHECK(r.mean_accuracy <= 1.0);
    }
  }

  TEST_CASE("threshold ties keep the lowest candidate") {
    // Every candidate between 0.2 and 0.8 separates perfectly.
    const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    const std::vector<bool> y{false, false, true, true};
    CHECK(best_threshold(s, y) == doctest::Approx(0.5));
    CHECK(best_threshold({0.5, 0.5}, {true, false}) < 0.5);
    CHECK_THROWS_AS(best_threshold({}, {}), ProtocolError);
  }

  TEST_CASE("verification ignores positive rescaling") {
    std::mt19937_64 rng(4);
    std::normal_distribution<float> n(0, 1);
    std::map<std::string, std::vector<float>> emb;
    const auto set = balanced_pairs(4, 10, rng);
    for (const auto& p : set.pairs)
      for (const auto* path : {&p.a, &p.b}) {
        std::vector<float> v(6);
        for (auto& x : v) x = n(rng);
        v[id_of(*path) % 6] += 2.0f;
        emb[*path] = v;
      }
    const auto base = verify_10fold(set, [&](const std::string& p) { return emb.at(p); });
    const auto scaled = verify_10fold(set, [&](const std::string& p) {
      auto v = emb.at(p);
      for (auto& x : v) x *= 37.5f;
      return v;
    });
    CHECK(base.mean_accuracy == scaled.mean_accuracy);
    CHECK(base.fold_accuracy == scaled.fold_accuracy);
  }

  TEST_CASE("malformed fold structure") {
    CHECK_THROWS_AS(verify_kfold({0.1, 0.2}, {true, false}, {0, 0}, 1), ProtocolError);
    CHECK_THROWS_AS(verify_kfold({0.1, 0.2}, {true, false}, {0, 0}, 2), ProtocolError);
    CHECK_THROWS_AS(verify_kfold({0.1, 0.2}, {true, false}, {0, 3}, 2), ProtocolError);
    CHECK_THROWS_AS(verify_kfold({0.1, 0.2}, {true}, {0, 1}, 2), ProtocolError);
  }

  TEST_CASE("rank-1 identification") {
    std::vector<std::vector<float>> g{one_hot(0), one_hot(1), one_hot(0)};
    std::vector<int> gid{0, 1, 0};
    CHECK(rank1_identify({one_hot(0), one_hot(1)}, {0, 1}, g, gid) == 1.0);

    // Negated embeddings point away from every same-identity gallery entry.
    std::vector<std::vector<float>> pos{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
    std::vector<std::vector<float>> neg{{-1, 0}, {-1, 0}, {0, -1}, {0, -1}};
    CHECK(rank1_identify(neg, {0, 0, 1, 1}, pos, {0, 0, 1, 1}) == 0.0);

    // Equal similarity to two entries resolves to the first.
    CHECK(rank1_identify({{1, 1}}, {5}, {{1, 0}, {0, 1}}, {5, 6}) == 1.0);
    CHECK(rank1_identify({{1, 1}}, {6}, {{1, 0}, {0, 1}}, {5, 6}) == 0.0);

    std::mt19937_64 rng(5);
    std::normal_distribution<float> n(0, 1);
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<std::vector<float>> e(12, std::vector<float>(4));
      std::vector<int> ids(12);
      for (int i = 0; i < 12; ++i) {
        for (auto& x : e[i]) x = n(rng);
        ids[i] = i % 3;
      }
      int hits = 0;
      for (int i = 0; i < 12; ++i) {
        int best = -1;
        double bs = -2;
        for (int j = 0; j < 12; ++j)
          if (j != i && cosine(e[i], e[j]) > bs) {
            bs = cosine(e[i], e[j]);
            best = j;
          }
        hits += ids[best] == ids[i];
      }
      CHECK(rank1_leave_one_out(e, ids) == doctest::Approx(hits / 12.0));
    }
    CHECK_THROWS_AS(rank1_leave_one_out({{1}}, {0}), ProtocolError);
    CHECK_THROWS_AS(rank1_identify({}, {}, g, gid), ProtocolError);
  }

  TEST_CASE("synthesis metrics") {
    Tensor<float> src({3, 3, 2, 2});
    for (std::size_t i = 0; i < src.numel(); ++i) src[i] = std::sin(static_cast<float>(i));
    const std::vector<int> targets{0, 3, 6};
    const BatchEmbedder flat = [](const Tensor<float>& t) {
      const auto per = t.numel() / t.dim(0);
      std::vector<std::vector<float>> out;
      for (std::int64_t i = 0; i < t.dim(0); ++i) out.emplace_back(t.data() + i * per, t.data() + (i + 1) * per);
      return out;
    };

    // Predictions are served in call order.
    int k = 0;
    const auto m = fas_metrics(src, targets, src, [&](const Tensor<float>&) { return representative_age(targets[k++]); },
                               flat);
    CHECK(m.age_accuracy == 100.0);
    CHECK(m.mae == 0.0);
    CHECK(m.id_cos_mean == doctest::Approx(1.0));
    CHECK(m.id_cos_std == doctest::Approx(0.0).epsilon(1e-6));

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 90);
    std::vector<double> preds{u(rng), u(rng), u(rng)};
    Tensor<float> syn = src.clone();
    for (std::size_t i = 0; i < syn.numel(); ++i) syn[i] += static_cast<float>(std::cos(3.0 * i));
    k = 0;
    const auto r = fas_metrics(syn, targets, src, [&](const Tensor<float>&) { return preds[k++]; }, flat);
    double acc = 0, mae = 0;
    std::vector<double> cs;
    const auto es = flat(src), et = flat(syn);
    for (int i = 0; i < 3; ++i) {
      acc += age_in_group(preds[i], targets[i]);
      mae += std::abs(preds[i] - representative_age(targets[i]));
      cs.push_back(cosine(es[i], et[i]));
    }
    const double mean = (cs[0] + cs[1] + cs[2]) / 3;
    double var = 0;
    for (double c : cs) var += (c - mean) * (c - mean);
    CHECK(r.age_accuracy == doctest::Approx(100.0 * acc / 3));
    CHECK(r.mae == doctest::Approx(mae / 3));
    CHECK(r.id_cos_mean == doctest::Approx(mean));
    CHECK(r.id_cos_std == doctest::Approx(std::sqrt(var / 3)));

    const std::vector<double> custom{1, 2, 3};
    k = 0;
    const auto c = fas_metrics(src, targets, src, [&](const Tensor<float>&) { return 2.0; }, flat, &custom);
    CHECK(c.mae == doctest::Approx(2.0 / 3));
    CHECK_THROWS_AS(fas_metrics(src, {0}, src, [](const Tensor<float>&) { return 0.0; }, flat), ProtocolError);
  }
}
