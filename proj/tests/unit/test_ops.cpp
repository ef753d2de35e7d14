#include <cmath>
#include <random>

#include "doctest.h"
#include "mtlface/core/ops.hpp"
#include "support/gradcheck.hpp"

using namespace mtlface;
using testsupport::check_gradients;
using testsupport::random_tensor;
using VD = Var<double>;
using VL = std::vector<VD>;

namespace {

// Weighted sum with fixed random weights so every output element matters.
VD probe_sum(const VD& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(y, ops::constant(random_tensor(y.shape(), rng))));
}

void expect_grad(const std::function<VD(const VL&)>& f,
                 std::vector<Tensor<double>> inputs, double tol = 1e-6) {
  auto rep = check_gradients(f, std::move(inputs));
  CHECK(rep.worst_rel < tol);
}

}  // namespace

TEST_SUITE("ops") {
  TEST_CASE("elementwise gradients") {
    std::mt19937_64 rng(1);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 3, 4}, rng);
    auto pos = random_tensor({2, 3, 4}, rng, 0.5, 2.0);
    expect_grad([](const VL& v) { return probe_sum(ops::add(v[0], v[1])); }, {a, b});
    expect_grad([](const VL& v) { return probe_sum(ops::sub(v[0], v[1])); }, {a, b});
    expect_grad([](const VL& v) { return probe_sum(ops::mul(v[0], v[1])); }, {a, b});
    expect_grad([](const VL& v) { return probe_sum(ops::square(v[0])); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::exp(v[0])); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::log(v[0])); }, {pos});
    expect_grad([](const VL& v) { return probe_sum(ops::sigmoid(v[0])); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::tanh(v[0])); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::leaky_relu(v[0], 0.2)); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::mul_scalar(ops::add_scalar(v[0], 3.0), -2.0)); }, {a});
  }

  TEST_CASE("expand and reductions") {
    std::mt19937_64 rng(2);
    auto a = random_tensor({2, 3, 1, 1}, rng);
    auto b = random_tensor({2, 1, 4, 5}, rng);
    auto c = random_tensor({3, 4, 5}, rng);
    expect_grad([](const VL& v) { return probe_sum(ops::expand(v[0], {2, 3, 4, 5})); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::expand(v[0], {2, 3, 4, 5})); }, {b});
    for (int d = 0; d < 3; ++d) {
      expect_grad([d](const VL& v) { return probe_sum(ops::sum_dim(v[0], d)); }, {c});
      expect_grad([d](const VL& v) { return probe_sum(ops::mean_dim(v[0], d)); }, {c});
      expect_grad([d](const VL& v) { return probe_sum(ops::max_dim(v[0], d)); }, {c});
    }
    expect_grad([](const VL& v) { return ops::mean(ops::square(v[0])); }, {c});
  }

  TEST_CASE("expand forward broadcasts") {
    auto a = Tensor<double>::from({1, 2, 1}, {1, 2});
    VD y = ops::expand(VD(a), {3, 2, 2});
    CHECK(y.value()[0] == 1);
    CHECK(y.value()[1] == 1);
    CHECK(y.value()[2] == 2);
    CHECK(y.value()[11] == 2);
  }

  TEST_CASE("shape ops") {
    std::mt19937_64 rng(3);
    auto a = random_tensor({4, 3}, rng);
    auto b = random_tensor({4, 2}, rng);
    expect_grad([](const VL& v) { return probe_sum(ops::narrow(v[0], 1, 2)); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::concat<double>({v[0], v[1]}, 1)); }, {a, b});
    expect_grad([](const VL& v) { return probe_sum(ops::concat<double>({v[0], v[0]}, 0)); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::reshape(v[0], {2, 6})); }, {a});
    expect_grad([](const VL& v) { return probe_sum(ops::index_select<double>(v[0], {3, 0, 3, 1})); }, {a});

    VD x(a.clone());
    VD n = ops::narrow(x, 1, 2);
    CHECK(n.value().same_storage(x.value()));
    CHECK(n.value()[0] == x.value()[3]);
  }

  TEST_CASE("matmul and linear") {
    std::mt19937_64 rng(4);
    auto a = random_tensor({3, 4}, rng);
    auto at = random_tensor({4, 3}, rng);
    auto b = random_tensor({4, 5}, rng);
    auto bt = random_tensor({5, 4}, rng);
    expect_grad([](const VL& v) { return probe_sum(ops::matmul(v[0], v[1])); }, {a, b});
    expect_grad([](const VL& v) { return probe_sum(ops::matmul(v[0], v[1], true, false)); }, {at, b});
    expect_grad([](const VL& v) { return probe_sum(ops::matmul(v[0], v[1], false, true)); }, {a, bt});
    expect_grad([](const VL& v) { return probe_sum(ops::matmul(v[0], v[1], true, true)); }, {at, bt});
    auto w = random_tensor({5, 4}, rng);
    auto bias = random_tensor({5}, rng);
    expect_grad([](const VL& v) { return probe_sum(ops::linear(v[0], v[1], v[2])); }, {a, w, bias});
    expect_grad([](const VL& v) { return probe_sum(ops::linear(v[0], v[1], VD())); }, {a, w});
  }

  TEST_CASE("conv2d gradients across geometries") {
    std::mt19937_64 rng(5);
    struct G { int b, cin, h, cout, k, stride, pad; };
    for (G g : {G{2, 3, 6, 4, 3, 1, 1}, G{1, 2, 7, 3, 3, 2, 1}, G{3, 4, 4, 2, 1, 1, 0},
                G{2, 2, 8, 2, 4, 2, 1}, G{1, 1, 5, 1, 7, 1, 3}}) {
      auto x = random_tensor({g.b, g.cin, g.h, g.h}, rng);
      auto w = random_tensor({g.cout, g.cin, g.k, g.k}, rng);
      auto bias = random_tensor({g.cout}, rng);
      const int s = g.stride, p = g.pad;
      expect_grad([s, p](const VL& v) { return probe_sum(ops::conv2d(v[0], v[1], v[2], s, p)); },
                  {x, w, bias});
    }
  }

  TEST_CASE("conv2d forward matches direct sum") {
    std::mt19937_64 rng(6);
    auto x = random_tensor({5, 2, 5, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    VD y = ops::conv2d(VD(x), VD(w), VD(), 2, 1);
    REQUIRE(y.shape() == Shape{5, 3, 3, 3});
    for (int n = 0; n < 5; ++n)
      for (int co = 0; co < 3; ++co)
        for (int oh = 0; oh < 3; ++oh)
          for (int ow = 0; ow < 3; ++ow) {
            double acc = 0;
            for (int ci = 0; ci < 2; ++ci)
              for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                  const int ih = oh * 2 - 1 + i, iw = ow * 2 - 1 + j;
                  if (ih < 0 || iw < 0 || ih >= 5 || iw >= 5) continue;
                  acc += x.at(n, ci, ih, iw) * w.at(co, ci, i, j);
                }
            CHECK(y.value().at(n, co, oh, ow) == doctest::Approx(acc).epsilon(1e-12));
          }
  }

  TEST_CASE("upsample and norms") {
    std::mt19937_64 rng(7);
    auto x = random_tensor({2, 3, 3, 4}, rng);
    expect_grad([](const VL& v) { return probe_sum(ops::upsample2x(v[0])); }, {x});
    expect_grad([](const VL& v) { return probe_sum(ops::instance_norm(v[0])); }, {x});
    expect_grad([](const VL& v) { return probe_sum(ops::normalize_channels(v[0])); }, {x});
    auto r = random_tensor({3, 5}, rng);
    expect_grad([](const VL& v) { return probe_sum(ops::normalize_rows(v[0])); }, {r});
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng);
    expect_grad(
        [](const VL& v) {
          Tensor<double> rm({3}), rv({3}, 1.0);
          return probe_sum(ops::batch_norm(v[0], v[1], v[2], rm, rv, true));
        },
        {x, gamma, beta});
    expect_grad(
        [](const VL& v) {
          Tensor<double> rm({3}, 0.1), rv({3}, 2.0);
          return probe_sum(ops::batch_norm(v[0], v[1], v[2], rm, rv, false));
        },
        {x, gamma, beta});
  }

  TEST_CASE("upsample of constant is constant") {
    VD y = ops::upsample2x(VD(Tensor<double>({1, 1, 3, 3}, 2.5)));
    for (double v : y.value().span()) CHECK(v == 2.5);
  }

  TEST_CASE("batch norm updates running statistics") {
    std::mt19937_64 rng(8);
    auto x = random_tensor({4, 2, 3, 3}, rng);
    Tensor<double> rm({2}), rv({2}, 1.0);
    ops::batch_norm(VD(x), VD(Tensor<double>({2}, 1.0)), VD(Tensor<double>({2})), rm, rv, true);
    double m0 = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) m0 += x[(n * 2) * 9 + i];
    m0 /= 36;
    CHECK(rm[0] == doctest::Approx(0.1 * m0));
  }

  TEST_CASE("spectral normalization") {
    std::mt19937_64 rng(9);
    auto w = random_tensor({4, 2, 3, 3}, rng);
    Tensor<double> u0 = random_tensor({4}, rng);
    expect_grad(
        [u0](const VL& v) { return probe_sum(ops::spectral_normalize(v[0], u0.clone(), false)); },
        {w});
    // Many power iterations converge to the top singular value.
    Tensor<double> u = u0.clone();
    VD wn;
    for (int i = 0; i < 200; ++i) wn = ops::spectral_normalize(VD(w), u, true);
    // Largest singular value of the normalized matrix is 1.
    Tensor<double> v({18});
    for (int it = 0; it < 500; ++it) {
      Tensor<double> t({4});
      if (it == 0) v.fill(1.0);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 18; ++c) t[r] += wn.value()[r * 18 + c] * v[c];
      Tensor<double> nv({18});
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 18; ++c) nv[c] += wn.value()[r * 18 + c] * t[r];
      double n = 0;
      for (double e : nv.span()) n += e * e;
      n = std::sqrt(n);
      for (auto& e : nv.span()) e /= n;
      v = nv;
    }
    double s = 0;
    for (int r = 0; r < 4; ++r) {
      double t = 0;
      for (int c = 0; c < 18; ++c) t += wn.value()[r * 18 + c] * v[c];
      s += t * t;
    }
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("softmax family and pick") {
    std::mt19937_64 rng(10);
    auto x = random_tensor({3, 6}, rng, -3, 3);
    expect_grad([](const VL& v) { return probe_sum(ops::log_softmax(v[0])); }, {x});
    expect_grad([](const VL& v) { return probe_sum(ops::softmax(v[0])); }, {x});
    expect_grad([](const VL& v) { return ops::sum(ops::pick(v[0], {0, 5, 2})); }, {x});
    CHECK_THROWS_AS(ops::pick(VD(x), {0, 6, 1}), std::out_of_range);
    VD s = ops::softmax(VD(x));
    for (int r = 0; r < 3; ++r) {
      double t = 0;
      for (int c = 0; c < 6; ++c) t += s.value().at(r, c);
      CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("gradient reversal") {
    std::mt19937_64 rng(11);
    auto x = random_tensor({2, 3}, rng);
    VD xv(x.clone(), true);
    VD y = ops::grad_reverse(xv, 1.0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x[i]);
    ops::sum(y).backward();
    for (double g : xv.grad().span()) CHECK(g == -1.0);
    CHECK_THROWS_AS(ops::grad_reverse(xv, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(ops::grad_reverse(xv, -1.0), std::invalid_argument);
  }

  TEST_CASE("shape errors") {
    VD a(Tensor<double>({2, 3})), b(Tensor<double>({3, 2}));
    CHECK_THROWS_AS(ops::add(a, b), ShapeError);
    CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
    CHECK_THROWS_AS(ops::expand(a, {2, 4}), ShapeError);
  }

  TEST_CASE("no-grad mode records nothing") {
    VD a(Tensor<double>({2}, 1.0), true);
    NoGradGuard g;
    VD y = ops::mul_scalar(a, 2.0);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("float path agrees with double path") {
    std::mt19937_64 rng(12);
    auto x = random_tensor({2, 4, 6, 6}, rng);
    auto w = random_tensor({5, 4, 3, 3}, rng);
    VD yd = ops::conv2d(VD(x), VD(w), VD(), 1, 1);
    Var<float> yf = ops::conv2d(Var<float>(x.cast<float>()), Var<float>(w.cast<float>()),
                                Var<float>(), 1, 1);
    for (std::size_t i = 0; i < yd.numel(); ++i)
      CHECK(std::abs(yd.value()[i] - yf.value()[i]) < 1e-4);
  }
}
