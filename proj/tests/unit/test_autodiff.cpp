#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "grad_check.hpp"
#include "s4ecg/adamw.hpp"
#include "s4ecg/autodiff.hpp"
#include "s4ecg/errors.hpp"

using namespace s4ecg;
using s4ecg::testing::check_gradients;
using s4ecg::testing::project;
using s4ecg::testing::random_tensor;

namespace {

// Nested-loop cross-correlation oracle.
Tensor conv1d_oracle(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), L = x.dim(2), Co = w.dim(0), K = w.dim(2);
  const std::size_t Lo = (L + 2 * pad - K) / stride + 1;
  Tensor y({B, Co, Lo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t t = 0; t < Lo; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < Ci; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            const long idx = static_cast<long>(t * stride + k) - static_cast<long>(pad);
            if (idx >= 0 && idx < static_cast<long>(L)) acc += w[(o * Ci + i) * K + k] * x[(b * Ci + i) * L + idx];
          }
        y[(b * Co + o) * Lo + t] = acc;
      }
  return y;
}

std::vector<double> causal_oracle(const std::vector<double>& u, const std::vector<double>& k) {
  std::vector<double> y(u.size(), 0.0);
  for (std::size_t t = 0; t < u.size(); ++t)
    for (std::size_t s = 0; s <= t; ++s) y[t] += k[s] * u[t - s];
  return y;
}

// Standard normal CDF by composite Simpson integration of the density.
double normal_cdf_quadrature(double x) {
  const double lo = -12.0;
  const int n = 200000;
  const double h = (x - lo) / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double acc = pdf(lo) + pdf(x);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(lo + i * h);
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("conv1d: 1-tap kernel scales the input") {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 3}, {1, 2, 3}));
  Var w = g.constant(Tensor({1, 1, 1}, {2}));
  const Tensor& y = ops::conv1d(x, w, 1, 0).value();
  CHECK(y.data == std::vector<double>{2, 4, 6});
}

TEST_CASE("conv1d: box filter with zero padding") {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 3}, {1, 1, 1}));
  Var w = g.constant(Tensor({1, 1, 3}, {1, 1, 1}));
  CHECK(ops::conv1d(x, w, 1, 1).value().data == std::vector<double>{2, 3, 2});
}

TEST_CASE("conv1d matches the nested-loop oracle for every stride/padding combination") {
  const Tensor x = random_tensor({2, 3, 16}, 1);
  const Tensor w = random_tensor({4, 3, 5}, 2);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u, 2u}) {
      Graph g;
      const Tensor y = ops::conv1d(g.constant(x), g.constant(w), stride, pad).value();
      const Tensor ref = conv1d_oracle(x, w, stride, pad);
      REQUIRE(y.shape == ref.shape);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv1d rejects mismatched channels and oversized kernels") {
  Graph g;
  Var x = g.constant(Tensor({1, 2, 4}));
  CHECK_THROWS_AS(ops::conv1d(x, g.constant(Tensor({1, 3, 3})), 1, 0), DimensionError);
  CHECK_THROWS_AS(ops::conv1d(x, g.constant(Tensor({1, 2, 7})), 1, 1), DimensionError);
  CHECK_THROWS_AS(ops::conv1d(x, g.constant(Tensor({1, 2, 3})), 0, 0), ArgumentError);
}

TEST_CASE("fft_causal_convolve: delta input reproduces the kernel") {
  Graph g;
  Var u = g.constant(Tensor({4}, {1, 0, 0, 0}));
  Var k = g.constant(Tensor({4}, {0.5, -1.25, 3, 7}));
  const auto& y = ops::fft_causal_convolve(u, k).value().data;
  const std::vector<double> expect{0.5, -1.25, 3, 7};
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("fft_causal_convolve: identity kernel") {
  Graph g;
  Var u = g.constant(Tensor({4}, {1, 1, 1, 1}));
  Var k = g.constant(Tensor({4}, {1, 0, 0, 0}));
  for (double v : ops::fft_causal_convolve(u, k).value().data) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("fft_causal_convolve equals the direct causal sum") {
  for (std::size_t len : {1u, 2u, 7u, 64u, 1000u}) {
    const Tensor u = random_tensor({len}, 10 + len);
    const Tensor k = random_tensor({len}, 20 + len);
    Graph g;
    const auto y = ops::fft_causal_convolve(g.constant(u), g.constant(k)).value().data;
    const auto ref = causal_oracle(u.data, k.data);
    double worst = 0.0;
    for (std::size_t t = 0; t < len; ++t) worst = std::max(worst, std::abs(y[t] - ref[t]));
    CAPTURE(len);
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("fft_causal_convolve broadcasts per-channel kernels over the batch") {
  const Tensor u = random_tensor({3, 2, 10}, 5);
  const Tensor k = random_tensor({2, 10}, 6);
  Graph g;
  const auto y = ops::fft_causal_convolve(g.constant(u), g.constant(k)).value().data;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 2; ++c) {
      std::vector<double> ur(&u.data[(b * 2 + c) * 10], &u.data[(b * 2 + c) * 10] + 10);
      std::vector<double> kr(&k.data[c * 10], &k.data[c * 10] + 10);
      const auto ref = causal_oracle(ur, kr);
      for (std::size_t t = 0; t < 10; ++t) CHECK(y[(b * 2 + c) * 10 + t] == doctest::Approx(ref[t]).epsilon(1e-10));
    }
  Graph g2;
  CHECK_THROWS_AS(ops::fft_causal_convolve(g2.constant(Tensor({4})), g2.constant(Tensor({5}))), DimensionError);
}

TEST_CASE("gelu values") {
  CHECK(gelu_value(0.0) == 0.0);
  CHECK(gelu_value(10.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(gelu_value(-10.0)) < 1e-12);
  CHECK(std::abs(gelu_value(1.0) - 1.0 * normal_cdf_quadrature(1.0)) < 1e-6);
  // The tanh form stays close to the exact one.
  for (double x = -4.0; x <= 4.0; x += 0.25) CHECK(std::abs(gelu_value(x, ops::GeluForm::kTanh) - gelu_value(x)) < 1e-3);
}

TEST_CASE("backward: linear loss gives the input as gradient") {
  Parameter w("w", Tensor({3}, {0.3, -1.0, 2.0}));
  Graph g;
  Var x = g.constant(Tensor({3}, {4.0, 5.0, -6.0}));
  backward(g, ops::sum(ops::mul(g.parameter(w), x)));
  CHECK(w.grad.data == std::vector<double>{4.0, 5.0, -6.0});
}

TEST_CASE("backward: small gelu network matches central differences at h=1e-4") {
  Parameter w("w", random_tensor({5}, 3));
  const Tensor x = random_tensor({5}, 4);
  auto loss = [&](bool run_backward) {
    Graph g;
    Var l = ops::sum(ops::gelu(ops::mul(g.parameter(w), g.constant(x))));
    if (run_backward) backward(g, l);
    return l.value()[0];
  };
  CHECK(check_gradients({&w}, loss, 1e-4).empty());
}

TEST_CASE("backward: disconnected parameter gets an exactly zero gradient") {
  Parameter used("used", Tensor({2}, {1.0, 2.0}));
  Parameter unused("unused", Tensor({2}, {3.0, 4.0}));
  used.zero_grad();
  unused.zero_grad();
  Graph g;
  Var a = g.parameter(used);
  g.parameter(unused);
  backward(g, ops::sum(ops::mul(a, a)));
  CHECK(unused.grad.data == std::vector<double>{0.0, 0.0});
  CHECK(used.grad.data == std::vector<double>{2.0, 4.0});
}

TEST_CASE("backward rejects non-scalar losses") {
  Parameter w("w", Tensor({2}, {1.0, 2.0}));
  Graph g;
  CHECK_THROWS_AS(backward(g, g.parameter(w)), ContractError);
}

TEST_CASE("gradients accumulate across fan-out") {
  Parameter w("w", Tensor({1}, {3.0}));
  w.zero_grad();
  Graph g;
  Var a = g.parameter(w);
  backward(g, ops::sum(ops::add(ops::mul(a, a), ops::scale(a, 5.0))));
  CHECK(w.grad[0] == doctest::Approx(2.0 * 3.0 + 5.0));
}

TEST_CASE("every differentiable op agrees with central finite differences") {
  SUBCASE("conv1d") {
    for (std::size_t stride : {1u, 2u})
      for (std::size_t pad : {0u, 1u, 2u}) {
        Parameter x("x", random_tensor({2, 3, 9}, 11));
        Parameter w("w", random_tensor({2, 3, 3}, 12));
        auto loss = [&](bool bw) {
          Graph g;
          Var l = project(ops::conv1d(g.parameter(x), g.parameter(w), stride, pad));
          if (bw) backward(g, l);
          return l.value()[0];
        };
        CHECK(check_gradients({&x, &w}, loss).empty());
      }
  }
  SUBCASE("fft_causal_convolve") {
    Parameter u("u", random_tensor({2, 3, 12}, 13));
    Parameter k("k", random_tensor({3, 12}, 14));
    auto loss = [&](bool bw) {
      Graph g;
      Var l = project(ops::fft_causal_convolve(g.parameter(u), g.parameter(k)));
      if (bw) backward(g, l);
      return l.value()[0];
    };
    CHECK(check_gradients({&u, &k}, loss).empty());
  }
  SUBCASE("gelu exact and tanh") {
    for (auto form : {ops::GeluForm::kExact, ops::GeluForm::kTanh}) {
      Parameter x("x", random_tensor({20}, 15, 2.0));
      auto loss = [&](bool bw) {
        Graph g;
        Var l = project(ops::gelu(g.parameter(x), form));
        if (bw) backward(g, l);
        return l.value()[0];
      };
      CHECK(check_gradients({&x}, loss).empty());
    }
  }
  SUBCASE("layer_norm_channels") {
    Parameter x("x", random_tensor({2, 4, 5}, 16));
    Parameter gamma("gamma", random_tensor({4}, 17));
    Parameter beta("beta", random_tensor({4}, 18));
    auto loss = [&](bool bw) {
      Graph g;
      Var l = project(ops::layer_norm_channels(g.parameter(x), g.parameter(gamma), g.parameter(beta)));
      if (bw) backward(g, l);
      return l.value()[0];
    };
    CHECK(check_gradients({&x, &gamma, &beta}, loss).empty());
  }
  SUBCASE("channel_mix, channel_scale, add_channel_bias, mean_time") {
    Parameter x("x", random_tensor({2, 3, 6}, 19));
    Parameter w("w", random_tensor({4, 3}, 20));
    Parameter b("b", random_tensor({4}, 21));
    Parameter s("s", random_tensor({4}, 22));
    Parameter c("c", random_tensor({4}, 23));
    auto loss = [&](bool bw) {
      Graph g;
      Var y = ops::channel_mix(g.parameter(x), g.parameter(w), g.parameter(b));
      y = ops::add_channel_bias(ops::channel_scale(y, g.parameter(s)), g.parameter(c));
      Var l = project(ops::mean_time(ops::gelu(y)));
      if (bw) backward(g, l);
      return l.value()[0];
    };
    CHECK(check_gradients({&x, &w, &b, &s, &c}, loss).empty());
  }
  SUBCASE("linear and bce_with_logits") {
    Parameter x("x", random_tensor({3, 5}, 24));
    Parameter w("w", random_tensor({2, 5}, 25));
    Parameter b("b", random_tensor({2}, 26));
    const Tensor targets({3, 2}, {1, 0, 0, 1, 1, 1});
    auto loss = [&](bool bw) {
      Graph g;
      Var l = ops::bce_with_logits(ops::linear(g.parameter(x), g.parameter(w), g.parameter(b)), targets);
      if (bw) backward(g, l);
      return l.value()[0];
    };
    CHECK(check_gradients({&x, &w, &b}, loss).empty());
  }
  SUBCASE("dropout with a fixed mask stream") {
    Parameter x("x", random_tensor({30}, 27));
    auto loss = [&](bool bw) {
      Graph g;
      Rng rng(5);
      Var l = project(ops::gelu(ops::dropout(g.parameter(x), 0.3, rng)));
      if (bw) backward(g, l);
      return l.value()[0];
    };
    CHECK(check_gradients({&x}, loss).empty());
  }
}

TEST_CASE("dropout is inverted and vanishes at p = 0") {
  Graph g;
  Var x = g.constant(Tensor({1000}, 1.0));
  Rng rng(1);
  CHECK(ops::dropout(x, 0.0, rng).id() == x.id());
  const auto& y = ops::dropout(x, 0.5, rng).value().data;
  for (double v : y) CHECK((v == 0.0 || v == 2.0));
  CHECK_THROWS_AS(ops::dropout(x, 1.0, rng), ArgumentError);
}

TEST_CASE("backward is bitwise deterministic for identical seeds") {
  auto run = [] {
    Parameter w("w", random_tensor({3, 2, 3}, 31));
    Parameter k("k", random_tensor({3, 16}, 32));
    w.zero_grad();
    k.zero_grad();
    Graph g;
    Rng rng(77);
    Var x = g.constant(random_tensor({4, 2, 16}, 33));
    Var y = ops::conv1d(x, g.parameter(w), 1, 1);
    y = ops::dropout(ops::gelu(ops::fft_causal_convolve(y, g.parameter(k))), 0.2, rng);
    backward(g, project(ops::mean_time(y)));
    std::vector<double> out = w.grad.data;
    out.insert(out.end(), k.grad.data.begin(), k.grad.data.end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK(Tensor({2, 3}).size() == 6);
}

// ---- AdamW ----

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  Parameter p("p", Tensor({3}, {1.0, -2.0, 0.5}));
  p.zero_grad();
  AdamW opt({.lr = 1e-3, .weight_decay = 0.0});
  std::vector<Parameter*> params{&p};
  opt.step(params);
  CHECK(p.value.data == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: first step equals the hand-evaluated formula") {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Parameter p("p", Tensor({2}, {0.7, -0.3}));
  p.grad = Tensor({2}, {0.25, -4.0});
  AdamW opt({.lr = lr, .beta1 = b1, .beta2 = b2, .eps = eps, .weight_decay = 0.0});
  std::vector<Parameter*> params{&p};
  opt.step(params);
  for (std::size_t i = 0; i < 2; ++i) {
    const double g = p.grad[i];
    const double m_hat = ((1 - b1) * g) / (1 - b1);
    const double v_hat = ((1 - b2) * g * g) / (1 - b2);
    const double expect = (i == 0 ? 0.7 : -0.3) - lr * m_hat / (std::sqrt(v_hat) + eps);
    CHECK(p.value[i] == doctest::Approx(expect).epsilon(1e-14));
    // Bias correction makes the first step a signed lr-sized move.
    CHECK(std::abs(p.value[i] - (i == 0 ? 0.7 : -0.3)) == doctest::Approx(lr).epsilon(1e-6));
  }
}

TEST_CASE("adamw: decay-only path shrinks by (1 - lr * wd)") {
  Parameter p("p", Tensor({2}, {2.0, -1.0}));
  p.zero_grad();
  AdamW opt({.lr = 1e-3, .weight_decay = 0.1});
  std::vector<Parameter*> params{&p};
  opt.step(params);
  CHECK(p.value[0] == doctest::Approx(2.0 * (1 - 1e-3 * 0.1)).epsilon(1e-15));
  CHECK(p.value[1] == doctest::Approx(-1.0 * (1 - 1e-3 * 0.1)).epsilon(1e-15));
}

TEST_CASE("adamw: non-finite gradient is rejected without touching state") {
  Parameter p("p", Tensor({2}, {1.0, 1.0}));
  p.grad = Tensor({2}, {0.5, std::nan("")});
  AdamW opt;
  std::vector<Parameter*> params{&p};
  CHECK_THROWS_AS(opt.step(params), NumericalFault);
  CHECK(p.value.data == std::vector<double>{1.0, 1.0});
  CHECK(opt.step_count() == 0);
}

TEST_CASE("adamw: step count increments once per update and moments track shapes") {
  Parameter a("a", Tensor({2, 2}, 1.0));
  Parameter b("b", Tensor({3}, 1.0));
  a.grad = Tensor({2, 2}, 0.1);
  b.grad = Tensor({3}, -0.1);
  AdamW opt;
  std::vector<Parameter*> params{&a, &b};
  for (int i = 0; i < 3; ++i) opt.step(params);
  CHECK(opt.step_count() == 3);
  CHECK(opt.first_moments()[0].size() == 4);
  CHECK(opt.second_moments()[1].size() == 3);
}
