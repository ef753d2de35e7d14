// Acceptance run: one PASS/FAIL line per criterion. Optional arguments select
// criteria by number (e.g. `acceptance 1 2 6`); the default runs all twelve.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtlface/data/data.hpp"
#include "mtlface/eval/eval.hpp"
#include "mtlface/eval/partition.hpp"
#include "mtlface/ftsel/ftsel.hpp"
#include "mtlface/losses/losses.hpp"
#include "mtlface/model/checkpoint.hpp"
#include "mtlface/training/training.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/loss_oracles.hpp"

namespace fs = std::filesystem;
using namespace mtlface;
using nn::VF;
using Clock = std::chrono::steady_clock;
using VD = Var<double>;
using VL = std::vector<VD>;
namespace L = mtlface::losses;
namespace O = testsupport::oracle;

namespace {

// Pinned tolerances.
constexpr double kAfdTol = 1e-5;
constexpr double kAfdSeconds = 5.0;
constexpr double kGradTol = 1e-4;
constexpr double kDexTol = 1e-6;
constexpr double kLossTol = 1e-5;
constexpr double kGmmMeanTol = 0.02;
constexpr double kGmmWeightTol = 0.05;
constexpr double kGmmSeconds = 10.0;
constexpr double kChanceTol = 0.05;
constexpr int kSmokeIters = 2000;
constexpr double kSmokeMinutes = 30.0;
constexpr double kAifrRatio = 0.5;
constexpr double kLpipsDrop = 0.30;
constexpr double kVerifyMin = 0.8;
constexpr double kAgeAccMin = 100.0 * 2.0 / 7.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char b[128];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor<float> row(const Tensor<float>& t, std::int64_t i) {
  return t.narrow(i, 1).reshape({t.dim(1), t.dim(2), t.dim(3)});
}

std::vector<std::vector<float>> embed_rows(const model::MtlFace& m, const Tensor<float>& x) {
  const auto e = ftsel::embeddings(m, x);
  std::vector<std::vector<float>> out;
  for (std::int64_t i = 0; i < e.dim(0); ++i) out.emplace_back(e.data() + i * e.dim(1), e.data() + (i + 1) * e.dim(1));
  return out;
}

// ---------------------------------------------------------------- 1

Outcome afd_exactness() {
  const auto t0 = Clock::now();
  model::MtlFace m(ModelConfig::desk());
  const int c = m.config().feature_channels(), s = m.config().feature_size();
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0.0f, 2.0f);
  double worst = 0, lo = 1, hi = 0;
  NoGradGuard ng;
  for (int rep = 0; rep < 100; ++rep) {
    Tensor<float> x({1, c, s, s});
    for (auto& v : x.span()) v = n(rng);
    const auto d = m.decompose(VF(x));
    for (std::size_t i = 0; i < x.numel(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(d.age_part.value()[i] + d.id_part.value()[i] - x[i])));
      lo = std::min(lo, static_cast<double>(d.attention.value()[i]));
      hi = std::max(hi, static_cast<double>(d.attention.value()[i]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kAfdTol && lo >= 0 && hi <= 1 && secs < kAfdSeconds,
          fmt("max |age+id-x| %.2e", worst) + fmt(", sigma in [%.4f", lo) + fmt(", %.4f]", hi) + fmt(", %.2f s", secs)};
}

// ---------------------------------------------------------------- 2

Outcome grl_correctness() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  double worst = 0;
  for (int rep = 0; rep < 10; ++rep) {
    const double scale = u(rng);
    const auto x0 = testsupport::random_tensor({3, 4}, rng);
    const auto a = testsupport::random_tensor({4, 5}, rng);
    const auto b = testsupport::random_tensor({3, 5}, rng);
    // loss = sum(b * tanh(GRL(x A))); the finite difference runs the same graph without GRL.
    auto f = [&](const VD& x, bool reverse) {
      const VD h = ops::matmul(x, VD(a));
      const VD r = reverse ? ops::grad_reverse(h, scale) : h;
      return ops::sum(ops::mul(VD(b), ops::tanh(r)));
    };
    VD x(x0.clone(), true);
    f(x, true).backward();
    Tensor<double> numeric(x0.shape());
    const double h = 1e-6;
    for (std::size_t k = 0; k < x0.numel(); ++k) {
      Tensor<double> p = x0.clone(), q = x0.clone();
      p[k] += h;
      q[k] -= h;
      numeric[k] = (f(VD(p), false).item() - f(VD(q), false).item()) / (2 * h);
    }
    double diff = 0, norm = 0;
    for (std::size_t k = 0; k < x0.numel(); ++k) {
      const double want = -scale * numeric[k];
      diff += (x.grad()[k] - want) * (x.grad()[k] - want);
      norm += want * want;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12));
  }
  return {worst < kGradTol, fmt("worst relative error %.2e over 10 losses", worst)};
}

// ---------------------------------------------------------------- 3

Outcome dex_oracle() {
  model::MtlFace m(ModelConfig::desk());
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> u(-10.0f, 10.0f);
  Tensor<float> logits({1000, model::kAgeBins});
  for (auto& v : logits.span()) v = u(rng);
  // A few extreme rows: saturated at either end.
  for (int k = 0; k < model::kAgeBins; ++k) {
    logits.at(0, k) = k == 0 ? 80.0f : -80.0f;
    logits.at(1, k) = k == 100 ? 80.0f : -80.0f;
  }
  NoGradGuard ng;
  const auto est = m.age_head().from_logits(VF(logits));
  double worst = 0, lo = 100, hi = 0;
  for (int b = 0; b < 1000; ++b) {
    double mx = -1e300, z = 0, e = 0;
    for (int k = 0; k < model::kAgeBins; ++k) mx = std::max(mx, static_cast<double>(logits.at(b, k)));
    for (int k = 0; k < model::kAgeBins; ++k) {
      const double p = std::exp(logits.at(b, k) - mx);
      z += p;
      e += p * k;
    }
    const double got = est.expected_age.value()[b];
    worst = std::max(worst, std::abs(got - e / z) / std::max(1.0, e / z));
    lo = std::min(lo, got);
    hi = std::max(hi, got);
  }
  return {worst <= kDexTol && lo >= 0 && hi <= 100,
          fmt("worst relative error %.2e", worst) + fmt(", range [%.3f", lo) + fmt(", %.3f]", hi)};
}

// ---------------------------------------------------------------- 4

Outcome filter_bank() {
  nn::ParamRegistry reg;
  nn::Rng rng(14);
  model::SharedFilterBank bank(reg, "bank", "icm", 7, 128, 16, 1, rng);
  std::vector<std::set<std::int64_t>> slots(7);
  std::set<std::int64_t> all;
  for (int g = 0; g < 7; ++g)
    for (std::int64_t i = 0; i < bank.filters(); ++i) {
      slots[g].insert(bank.offset(g) + i);
      all.insert(bank.offset(g) + i);
    }
  bool ok = all.size() == 800 && bank.total() == 800;
  std::size_t adj_min = 1000, adj_max = 0, far_max = 0;
  for (int a = 0; a < 7; ++a)
    for (int b = a + 1; b < 7; ++b) {
      std::size_t n = 0;
      for (auto v : slots[a]) n += slots[b].count(v);
      if (b == a + 1) {
        adj_min = std::min(adj_min, n);
        adj_max = std::max(adj_max, n);
      } else {
        far_max = std::max(far_max, n);
      }
    }
  ok = ok && adj_min == 16 && adj_max == 16 && far_max == 0;
  return {ok, "unique " + std::to_string(all.size()) + ", adjacent overlap " + std::to_string(adj_min) + ".." +
                  std::to_string(adj_max) + ", non-adjacent max " + std::to_string(far_max)};
}

// ---------------------------------------------------------------- 5

Outcome loss_oracles() {
  std::mt19937_64 rng(15);
  using testsupport::random_tensor;
  double worst_val = 0, worst_grad = 0;
  auto val = [&](double got, double want) {
    worst_val = std::max(worst_val, std::abs(got - want) / std::max(1.0, std::abs(want)));
  };
  auto grad = [&](const std::function<VD(const VL&)>& f, std::vector<Tensor<double>> in) {
    worst_grad = std::max(worst_grad, testsupport::check_gradients(f, std::move(in)).worst_rel);
  };
  auto labels = [&](int n, int k) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % k);
    return y;
  };
  for (int rep = 0; rep < 10; ++rep) {
    const auto logits = random_tensor({4, 6}, rng, -3, 3);
    const auto y = labels(4, 6);
    val(L::cross_entropy(VD(logits), y).item(), O::cross_entropy(logits, y));
    grad([&](const VL& v) { return L::cross_entropy(v[0], y); }, {logits});

    const auto e = random_tensor({4, 5}, rng), w = random_tensor({6, 5}, rng);
    val(L::cosface_loss(VD(e), y, VD(w), 0.35, 64.0).item(), O::cosface(e, y, w, 0.35, 64.0));
    grad([&](const VL& v) { return L::cosface_loss(v[0], y, v[1], 0.35, 8.0); }, {e, w});

    const auto expd = random_tensor({5}, rng, 0, 100), gl = random_tensor({5, 7}, rng, -2, 2);
    std::vector<double> ages;
    for (int i = 0; i < 5; ++i) ages.push_back(std::uniform_real_distribution<double>(0, 100)(rng));
    std::vector<int> groups;
    for (double a : ages) groups.push_back(age_to_group(a));
    val(L::age_estimation_loss(VD(expd), VD(gl), ages, groups, 1.0).item(),
        O::age_estimation(expd, gl, ages, groups, 1.0));
    grad([&](const VL& v) { return L::age_estimation_loss(v[0], v[1], ages, groups, 1.0); }, {expd, gl});

    const L::LossWeights lw;
    const auto parts = random_tensor({3}, rng, 0, 10);
    const auto s = [&](int i) { return VD(Tensor<double>::scalar(parts[i])); };
    val(L::aifr_loss<double>(s(0), s(1), s(2), lw).total.item(),
        parts[0] + lw.age_aifr * parts[1] + lw.id_aifr * parts[2]);
    const auto fp = random_tensor({4}, rng, 0, 10);
    const auto sf = [&](int i) { return VD(Tensor<double>::scalar(fp[i])); };
    val(L::fas_total_loss<double>(sf(0), sf(1), sf(2), sf(3), lw).total.item(),
        lw.adv_fas * fp[0] + lw.id_fas * fp[1] + lw.age_fas * fp[2] + lw.lpips_fas * fp[3]);

    const auto r = random_tensor({2, 1, 3, 3}, rng), f = random_tensor({2, 1, 3, 3}, rng);
    val(L::lsgan_generator_loss(VD(f)).item(), O::lsgan_generator(f));
    val(L::lsgan_discriminator_loss(VD(r), VD(f)).item(), O::lsgan_discriminator(r, f));
    grad([](const VL& v) { return L::lsgan_generator_loss(v[0]); }, {f});
    grad([](const VL& v) { return L::lsgan_discriminator_loss(v[0], v[1]); }, {r, f});

    const auto a = random_tensor({3, 2, 2, 2}, rng), b = random_tensor({3, 2, 2, 2}, rng);
    const auto we = random_tensor({4, 8}, rng);
    const std::function<VD(const VD&)> embed = [&](const VD& x) {
      return ops::matmul(ops::reshape(x, {x.dim(0), 8}), VD(we), false, true);
    };
    val(L::fas_identity_loss(VD(a), VD(b), embed).item(), O::fas_identity(a, b, we));
    grad([&](const VL& v) { return L::fas_identity_loss(v[0], v[1], embed); }, {a, b});

    const auto agl = random_tensor({3, 7}, rng, -3, 3);
    const auto tg = labels(3, 7);
    val(L::fas_age_loss(VD(agl), tg).item(), O::cross_entropy(agl, tg));
    grad([&](const VL& v) { return L::fas_age_loss(v[0], tg); }, {agl});

    const std::vector<Tensor<double>> fa{random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 5, 2, 2}, rng)};
    const std::vector<Tensor<double>> fb{random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 5, 2, 2}, rng)};
    val(L::perceptual_from_features<double>({VD(fa[0]), VD(fa[1])}, {VD(fb[0]), VD(fb[1])}).item(),
        O::perceptual(fa, fb));
    grad([](const VL& v) { return L::perceptual_from_features<double>({v[0], v[1]}, {v[2], v[3]}); },
         {fa[0], fa[1], fb[0], fb[1]});
  }
  return {worst_val <= kLossTol && worst_grad < kGradTol,
          fmt("worst value error %.2e", worst_val) + fmt(", worst gradient error %.2e", worst_grad)};
}

// ---------------------------------------------------------------- 6

Outcome gmm_recovery() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(16);
  std::normal_distribution<double> lo(0.2, 0.01), hi(0.8, 0.01);
  std::vector<double> s;
  for (int i = 0; i < 2000; ++i) s.push_back(i % 2 ? hi(rng) : lo(rng));
  const auto g = ftsel::fit_gmm(s);
  bool monotone = true;
  for (std::size_t i = 1; i < g.log_likelihood.size(); ++i)
    monotone = monotone && g.log_likelihood[i] >= g.log_likelihood[i - 1] - 1e-12;
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto [p0, p1] = ftsel::posterior(g, s[i]);
    if (p1 > p0) expect.push_back(i);
  }
  const bool sel_ok = ftsel::select_high_quality(s, g) == expect;
  const double secs = seconds_since(t0);
  const double dm = std::max(std::abs(g.means[0] - 0.2), std::abs(g.means[1] - 0.8));
  const double dw = std::max(std::abs(g.weights[0] - 0.5), std::abs(g.weights[1] - 0.5));
  return {dm < kGmmMeanTol && dw < kGmmWeightTol && monotone && sel_ok && secs < kGmmSeconds,
          fmt("mean error %.4f", dm) + fmt(", weight error %.4f", dw) + (monotone ? ", LL monotone" : ", LL drops") +
              (sel_ok ? ", selection exact" : ", selection differs") + fmt(", %.2f s", secs)};
}

// ---------------------------------------------------------------- 7

Outcome protocol_oracles() {
  std::mt19937_64 rng(17);
  const int ids = 50;
  eval::PairSet set;
  set.num_folds = 10;
  for (int f = 0; f < 10; ++f)
    for (int i = 0; i < 300; ++i) {
      const int a = static_cast<int>(rng() % ids);
      const int b = (a + 1 + static_cast<int>(rng() % (ids - 1))) % ids;
      const std::string tag = std::to_string(f) + "_" + std::to_string(i);
      set.pairs.push_back({std::to_string(a) + "/p" + tag, std::to_string(a) + "/q" + tag, true, f});
      set.pairs.push_back({std::to_string(a) + "/r" + tag, std::to_string(b) + "/s" + tag, false, f});
    }
  const auto oracle = eval::verify_10fold(set, [&](const std::string& p) {
    std::vector<float> v(ids, 0.0f);
    v[std::stoi(p.substr(0, p.find('/')))] = 1.0f;
    return v;
  });
  const auto constant = eval::verify_10fold(set, [](const std::string&) { return std::vector<float>{1, 2, 3}; });
  return {set.pairs.size() == 6000 && oracle.mean_accuracy == 1.0 &&
              std::abs(constant.mean_accuracy - 0.5) <= kChanceTol,
          fmt("oracle %.4f", oracle.mean_accuracy) + fmt(", constant %.4f", constant.mean_accuracy) + " on " +
              std::to_string(set.pairs.size()) + " pairs"};
}

// ---------------------------------------------------------------- 8

Outcome parameter_isolation() {
  auto changed = [](const std::map<std::string, std::uint64_t>& a, const std::map<std::string, std::uint64_t>& b) {
    std::set<std::string> out;
    for (const auto& [g, v] : a)
      if (b.at(g) != v) out.insert(g);
    return out;
  };
  auto as_set = [](const std::vector<std::string>& v) { return std::set<std::string>(v.begin(), v.end()); };
  const auto data = testsupport::toy_dataset(4, 7, 64);
  model::MtlFace m(ModelConfig::desk());
  training::Trainer t(m, training::TrainConfig::from_preset("desk"));
  training::BatchSampler sampler(data.size(), 8, 3);
  bool ok = true;
  int steps = 0;
  for (int it = 0; it < 3; ++it) {
    const auto b = training::make_batch(data, sampler.next());
    const auto c0 = m.params().checksums();
    t.step_aifr(b, 0.05);
    const auto c1 = m.params().checksums();
    const auto targets = t.sample_targets(b.size());
    const auto syn = t.synthesize(b, targets);
    const auto c2 = m.params().checksums();
    t.step_discriminator(b, targets, &syn);
    const auto c3 = m.params().checksums();
    t.step_fas(b, targets, &syn);
    const auto c4 = m.params().checksums();
    m.params().zero_grad();
    ok = ok && changed(c0, c1) == as_set(training::aifr_groups()) && changed(c1, c2).empty() &&
         changed(c2, c3) == as_set(training::discriminator_groups()) &&
         changed(c3, c4) == as_set(training::fas_groups());
    steps += 3;
  }
  return {ok, std::to_string(steps) + " steps, each moved exactly its own parameter groups"};
}

// ---------------------------------------------------------------- 9-12

struct ToyRun {
  std::string root;
  data::Manifest train_man, held_man;
  training::Dataset train, held;
  ModelConfig mcfg;
  training::TrainConfig tcfg;
  std::vector<nlohmann::ordered_json> records;
  std::unique_ptr<model::MtlFace> model;
  double train_seconds = 0;
};

void prepare(ToyRun& r) {
  r.root = (fs::temp_directory_path() / "mtlface_acceptance").string();
  fs::remove_all(r.root);
  data::ToyOptions to;
  r.train_man = data::generate_toy_dataset(to, r.root + "/train");
  data::ToyOptions ho = to;
  ho.first_sample = to.n_per_identity;
  ho.n_per_identity = 14;
  r.held_man = data::generate_toy_dataset(ho, r.root + "/heldout");
  r.train = training::load_dataset(r.train_man, to.image_size);
  r.held = training::load_dataset(r.held_man, to.image_size);
  r.mcfg = ModelConfig::desk();
  r.mcfg.num_classes = r.train_man.num_identities();
  r.tcfg = training::TrainConfig::from_preset("desk").scaled_to(kSmokeIters);
}

void run_training(ToyRun& r, const std::string& tag) {
  training::TrainOutputs out;
  out.metrics_path = r.root + "/" + tag + "_metrics.ndjson";
  out.checkpoint_path = r.root + "/" + tag + ".ckpt";
  out.on_record = [](const nlohmann::ordered_json& rec) {
    const int it = rec["iter"];
    if (it % 250 == 0)
      std::fprintf(stderr, "  [%s] iter %d aifr %.3f fas %.3f\n", "train", it, rec["aifr_total"].get<double>(),
                   rec["fas_total"].get<double>());
  };
  const auto t0 = Clock::now();
  auto res = training::train(r.mcfg, r.tcfg, r.train, out);
  r.train_seconds = seconds_since(t0);
  r.records = std::move(res.records);
  r.model = std::move(res.model);
}

double perceptual(const model::MtlFace& m, const Tensor<float>& x, const std::vector<int>& g) {
  NoGradGuard ng;
  const VF y = m.synthesize(VF(x), g);
  const std::function<std::vector<VF>(const VF&)> f = [&](const VF& v) { return m.perceptual_features(v); };
  return L::perceptual_loss(y, VF(x), f).item();
}

// Similarities over pairs (a_i, b_i) of rows of a dataset, verified over folds.
double pair_accuracy(const model::MtlFace& m, const Tensor<float>& images,
                     const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs, const std::vector<bool>& same,
                     const std::vector<int>& folds, int num_folds) {
  const auto e = embed_rows(m, images);
  std::vector<double> sims;
  for (const auto& [a, b] : pairs) sims.push_back(eval::cosine(e[a], e[b]));
  return eval::verify_kfold(sims, same, folds, num_folds).mean_accuracy;
}

Outcome smoke_training(ToyRun& r) {
  const auto& rec = r.records;
  const std::size_t n = rec.size(), w = std::min<std::size_t>(100, n);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < w; ++i) {
    first += rec[i]["aifr_total"].get<double>();
    last += rec[n - 1 - i]["aifr_total"].get<double>();
  }
  const double ratio = last / first;
  const bool a = n == static_cast<std::size_t>(kSmokeIters) && ratio < kAifrRatio;

  const auto& held = r.held;
  const std::int64_t probe_n = 64;
  const Tensor<float> probe = held.images.narrow(0, probe_n).clone();
  const std::vector<int> probe_g(held.groups.begin(), held.groups.begin() + probe_n);
  const model::MtlFace init(r.mcfg);
  const double lp0 = perceptual(init, probe, probe_g), lp1 = perceptual(*r.model, probe, probe_g);
  const double drop = 1 - lp1 / lp0;
  const bool b = drop >= kLpipsDrop;

  std::mt19937_64 rng(19);
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::vector<bool> same;
  std::vector<int> folds;
  const auto hn = static_cast<std::int64_t>(held.size());
  for (int f = 0; f < 10; ++f)
    for (int i = 0; i < 60; ++i) {
      const bool s = i % 2 == 0;
      const auto x = static_cast<std::int64_t>(rng() % hn);
      std::int64_t y;
      do y = static_cast<std::int64_t>(rng() % hn);
      while (y == x || (held.identities[x] == held.identities[y]) != s);
      pairs.emplace_back(x, y);
      same.push_back(s);
      folds.push_back(f);
    }
  const double verify = pair_accuracy(*r.model, held.images, pairs, same, folds, 10);
  const bool c = verify > kVerifyMin;

  data::PixelAgeRegressor reg;
  std::vector<Tensor<float>> imgs;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(r.train.size()); ++i) imgs.push_back(row(r.train.images, i).clone());
  reg.fit(imgs, r.train.ages);
  const int ng = r.mcfg.n_groups;
  const auto per = held.images.numel() / static_cast<std::size_t>(hn);
  Tensor<float> synth({hn * ng, 3, held.images.dim(2), held.images.dim(3)});
  Tensor<float> sources(synth.shape());
  std::vector<int> targets;
  {
    NoGradGuard ng_guard;
    std::size_t at = 0;
    for (int g = 0; g < ng; ++g)
      for (std::int64_t b0 = 0; b0 < hn; b0 += 40) {
        const auto len = std::min<std::int64_t>(40, hn - b0);
        const Tensor<float> x = held.images.narrow(b0, len).clone();
        const auto y = r.model->synthesize(VF(x), model::repeat_group(g, static_cast<int>(len))).value();
        std::copy(y.data(), y.data() + y.numel(), synth.data() + at * per);
        std::copy(x.data(), x.data() + x.numel(), sources.data() + at * per);
        at += static_cast<std::size_t>(len);
        targets.insert(targets.end(), static_cast<std::size_t>(len), g);
      }
  }
  const auto fm = eval::fas_metrics(
      synth, targets, sources, [&](const Tensor<float>& chw) { return reg.predict(chw); },
      [&](const Tensor<float>& x) { return embed_rows(*r.model, x); });
  const bool d = fm.age_accuracy >= kAgeAccMin;

  const double minutes = r.train_seconds / 60.0;
  const bool t = minutes < kSmokeMinutes;
  std::ostringstream os;
  os << (a ? "" : "!") << "(a) aifr ratio " << fmt("%.3f", ratio) << "; " << (b ? "" : "!") << "(b) perceptual "
     << fmt("%.3f", lp0) << " -> " << fmt("%.3f", lp1) << fmt(" drop %.1f%%", 100 * drop) << "; " << (c ? "" : "!")
     << "(c) held-out verification " << fmt("%.4f", verify) << "; " << (d ? "" : "!") << "(d) age accuracy "
     << fmt("%.2f%%", fm.age_accuracy) << fmt(" (need %.2f%%)", kAgeAccMin) << "; " << (t ? "" : "!")
     << fmt("%.1f min", minutes);
  return {a && b && c && d && t, os.str()};
}

Outcome ftsel_end_to_end(ToyRun& r) {
  auto ck = model::load_checkpoint(r.root + "/a.ckpt");
  auto& m = *ck.model;
  const auto before = m.params().checksums();

  // Each held-out child against another face of the same identity and one of another identity.
  const auto& held = r.held;
  std::mt19937_64 rng(20);
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::vector<bool> same;
  std::vector<int> folds;
  const auto hn = static_cast<std::int64_t>(held.size());
  int k = 0;
  for (std::int64_t i = 0; i < hn; ++i) {
    if (held.groups[i] != 0) continue;
    std::int64_t s, d;
    do s = static_cast<std::int64_t>(rng() % hn);
    while (held.identities[s] != held.identities[i] || held.groups[s] == 0);
    do d = static_cast<std::int64_t>(rng() % hn);
    while (held.identities[d] == held.identities[i]);
    pairs.emplace_back(i, s);
    same.push_back(true);
    folds.push_back(k % 10);
    pairs.emplace_back(i, d);
    same.push_back(false);
    folds.push_back(k % 10);
    ++k;
  }
  const double acc0 = pair_accuracy(m, held.images, pairs, same, folds, 10);

  const auto sel = ftsel::select_children(r.train_man, r.train.images, m, ftsel::embedding_norm_scorer(m));
  const auto hist = ftsel::finetune_with_selection(m, r.train_man, r.train.images, sel, ftsel::FinetuneOptions{});
  const double acc1 = pair_accuracy(m, held.images, pairs, same, folds, 10);

  const auto after = m.params().checksums();
  bool frozen = true, moved = false;
  for (const auto& [g, v] : before) {
    const bool trainable = g == model::kIdHead || g == model::kPrototypes;
    if (!trainable) frozen = frozen && after.at(g) == v;
    else moved = moved || after.at(g) != v;
  }
  std::ostringstream os;
  os << sel.children.manifest.records.size() << " children, " << sel.chosen.size() << " selected"
     << fmt(", gmm means %.3f", sel.gmm.means[0]) << fmt("/%.3f", sel.gmm.means[1]) << "; "
     << (frozen ? "frozen groups unchanged" : "!frozen groups changed") << (moved ? "" : ", !identity layer unchanged")
     << "; child-pair verification " << fmt("%.4f", acc0) << " -> " << fmt("%.4f", acc1) << " over " << pairs.size()
     << " pairs";
  return {!hist.empty() && frozen && moved && acc1 >= acc0, os.str()};
}

Outcome continuous_synthesis(ToyRun& r) {
  const auto& m = *r.model;
  const Tensor<float> x = r.held.images.narrow(0, 8).clone();
  NoGradGuard ng;
  bool endpoints = true, monotone = true;
  double min_step = 1e300;
  for (int g = 0; g + 1 < m.config().n_groups; ++g) {
    const auto frames = m.synthesize_sweep(VF(x), g, g + 1, 5);
    const auto ya = m.synthesize(VF(x), model::repeat_group(g, 8)).value();
    const auto yb = m.synthesize(VF(x), model::repeat_group(g + 1, 8)).value();
    endpoints = endpoints && std::equal(ya.span().begin(), ya.span().end(), frames.front().value().span().begin()) &&
                std::equal(yb.span().begin(), yb.span().end(), frames.back().value().span().begin());
    // frames.back() is the alpha = 0 frame; alpha grows toward frames.front().
    const auto& ref = frames.back().value();
    double prev = 0;
    for (int f = 3; f >= 0; --f) {
      double d2 = 0;
      const auto& v = frames[f].value();
      for (std::size_t i = 0; i < v.numel(); ++i) d2 += (v[i] - ref[i]) * static_cast<double>(v[i] - ref[i]);
      const double dist = std::sqrt(d2);
      monotone = monotone && dist >= prev;
      min_step = std::min(min_step, dist - prev);
      prev = dist;
    }
  }
  return {endpoints && monotone, std::string(endpoints ? "endpoints bit-identical" : "!endpoints differ") +
                                     (monotone ? ", L2 drift monotone in all 6 gaps" : ", !drift not monotone") +
                                     fmt(" (smallest step %.4g)", min_step)};
}

std::vector<std::string> stripped_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::ordered_json::parse(line);
    j.erase("wall_time");
    out.push_back(j.dump());
  }
  return out;
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Outcome reproducibility(ToyRun& r) {
  ToyRun second = {};
  second.root = r.root;
  second.train = r.train;
  second.mcfg = r.mcfg;
  second.tcfg = r.tcfg;
  run_training(second, "b");
  const auto la = stripped_lines(r.root + "/a_metrics.ndjson"), lb = stripped_lines(r.root + "/b_metrics.ndjson");
  const bool logs = la == lb && la.size() == static_cast<std::size_t>(kSmokeIters);
  const auto ca = file_bytes(r.root + "/a.ckpt"), cb = file_bytes(r.root + "/b.ckpt");
  const bool ckpt = !ca.empty() && ca == cb;
  return {logs && ckpt, std::string(logs ? "metrics identical" : "!metrics differ") + " (" + std::to_string(la.size()) +
                            " records, wall_time excluded), " + (ckpt ? "checkpoints byte-identical" : "!checkpoints differ") +
                            fmt(", second run %.1f min", second.train_seconds / 60)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  int failed = 0;
  auto report = [&](int k, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", k, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "AFD exactness", afd_exactness);
  report(2, "GRL gradient", grl_correctness);
  report(3, "DEX expectation", dex_oracle);
  report(4, "filter-bank sharing", filter_bank);
  report(5, "loss oracles", loss_oracles);
  report(6, "GMM recovery", gmm_recovery);
  report(7, "verification protocol oracles", protocol_oracles);
  report(8, "parameter isolation", parameter_isolation);

  if (wanted(9) || wanted(10) || wanted(11) || wanted(12)) {
    ToyRun run;
    bool trained = false;
    std::string err;
    try {
      prepare(run);
      run_training(run, "a");
      trained = true;
    } catch (const std::exception& e) {
      err = e.what();
    }
    auto gated = [&](int k, const char* name, const std::function<Outcome()>& f) {
      report(k, name, trained ? f : std::function<Outcome()>([&] { return Outcome{false, "training failed: " + err}; }));
    };
    gated(9, "desk smoke training", [&] { return smoke_training(run); });
    gated(10, "FT-Sel end to end", [&] { return ftsel_end_to_end(run); });
    gated(11, "continuous synthesis", [&] { return continuous_synthesis(run); });
    gated(12, "reproducibility", [&] { return reproducibility(run); });
  }
  std::printf("%s\n", failed ? "acceptance: FAILED" : "acceptance: all criteria passed");
  return failed ? 1 : 0;
}
