#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "grad_check.hpp"
#include "s4ecg/errors.hpp"
#include "s4ecg/ssm.hpp"

using namespace s4ecg;
using namespace s4ecg::ssm;

namespace {

// Stable bank with randomized decay rates and steps; spectrum shape from HiPPO.
SsmParams random_stable(int n, int h, std::uint64_t seed, double log_dt_lo = std::log(1e-3),
                        double log_dt_hi = std::log(1.0)) {
  SsmParams p = init_diagonal_from_hippo(n, h, seed);
  std::mt19937_64 rng(seed ^ 0xABCDEFULL);
  std::uniform_real_distribution<double> re(-2.0, -0.05), ld(log_dt_lo, log_dt_hi);
  for (auto& a : p.a_diag) a = cplx(re(rng), a.imag());
  for (auto& l : p.log_delta) l = ld(rng);
  return p;
}

std::vector<double> random_signal(std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> u(len);
  for (double& v : u) v = normal(rng);
  return u;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("hippo_legs_dense closed form") {
  const Eigen::MatrixXd a1 = hippo_legs_dense(1);
  CHECK(a1(0, 0) == -1.0);
  const Eigen::MatrixXd a2 = hippo_legs_dense(2);
  CHECK(a2(0, 0) == -1.0);
  CHECK(a2(0, 1) == 0.0);
  CHECK(a2(1, 0) == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-15));
  CHECK(a2(1, 1) == -2.0);
  CHECK_THROWS_AS(hippo_legs_dense(0), ArgumentError);
  CHECK_THROWS_AS(hippo_legs_dense(-3), ArgumentError);
}

TEST_CASE("hippo_legs_dense eigenvalues have nonpositive real part") {
  for (int n : {2, 4, 8, 16}) {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(hippo_legs_dense(n));
    for (int i = 0; i < n; ++i) CHECK(solver.eigenvalues()(i).real() <= 0.0);
  }
}

TEST_CASE("init_diagonal_from_hippo") {
  const SsmParams p = init_diagonal_from_hippo(8, 5, 42);
  CHECK(p.n == 8);
  CHECK(p.h == 5);
  CHECK(p.a_diag.size() == 5 * 4);
  for (const cplx& a : p.a_diag) CHECK(a.real() < 0.0);
  for (std::size_t ch = 0; ch < p.h; ++ch) {
    CHECK(p.delta(ch) >= 1e-3);
    CHECK(p.delta(ch) <= 1e-1);
  }
  CHECK(p == init_diagonal_from_hippo(8, 5, 42));
  CHECK_FALSE(p == init_diagonal_from_hippo(8, 5, 43));
  CHECK_THROWS_AS(init_diagonal_from_hippo(7, 5, 42), ArgumentError);
  CHECK_THROWS_AS(init_diagonal_from_hippo(8, 0, 42), ArgumentError);
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("diagonal spectrum matches a general eigensolve of the normal HiPPO part") {
  for (int n : {2, 8, 16}) {
    // Independent construction: A + P P^T with P_i = sqrt(i + 1/2).
    Eigen::MatrixXd a = hippo_legs_dense(n);
    Eigen::VectorXd pv(n);
    for (int i = 0; i < n; ++i) pv(i) = std::sqrt(i + 0.5);
    const Eigen::MatrixXd normal = a + pv * pv.transpose();
    Eigen::EigenSolver<Eigen::MatrixXd> solver(normal);
    std::vector<double> imag;
    for (int i = 0; i < n; ++i) {
      CHECK(solver.eigenvalues()(i).real() == doctest::Approx(-0.5).epsilon(1e-9));
      if (solver.eigenvalues()(i).imag() > 0) imag.push_back(solver.eigenvalues()(i).imag());
    }
    std::sort(imag.begin(), imag.end());
    const auto spectrum = hippo_diagonal_spectrum(n);
    REQUIRE(imag.size() == spectrum.size());
    for (std::size_t i = 0; i < imag.size(); ++i) {
      CHECK(std::abs(spectrum[i].imag() - imag[i]) < 1e-9);
      CHECK(spectrum[i].real() == -0.5);
    }
  }
}

TEST_CASE("discretize_bilinear") {
  SsmParams p;
  p.n = 2;
  p.h = 1;
  p.a_diag = {cplx(0.0, 0.0)};
  p.b = {cplx(1.0, 0.0)};
  p.c = {cplx(1.0, 0.0)};
  p.d = {0.0};
  p.log_delta = {std::log(0.5)};
  DiscreteSsm d = discretize_bilinear(p, 0);
  CHECK(d.a_bar[0] == cplx(1.0, 0.0));
  CHECK(d.b_bar[0].real() == doctest::Approx(0.5).epsilon(1e-15));

  p.a_diag = {cplx(-1.0, 0.0)};
  p.log_delta = {std::log(2.0)};
  d = discretize_bilinear(p, 0);
  CHECK(std::abs(d.a_bar[0]) < 1e-15);

  // Third-order agreement with the matrix exponential.
  const SsmParams r = random_stable(8, 4, 9);
  for (std::size_t ch = 0; ch < r.h; ++ch) {
    SsmParams q = r;
    q.log_delta[ch] = std::log(0.01);
    const DiscreteSsm dq = discretize_bilinear(q, ch);
    for (std::size_t m = 0; m < q.modes(); ++m) {
      const cplx z = 0.01 * q.a_diag[q.index(ch, m)];
      CHECK(std::abs(dq.a_bar[m] - std::exp(z)) <= std::pow(std::abs(z), 3) / 12.0 * 1.05 + 1e-15);
    }
  }
}

TEST_CASE("bilinear map preserves stability for steps in [1e-4, 1]") {
  SsmParams p = random_stable(16, 8, 3);
  for (double delta : {1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0}) {
    for (auto& l : p.log_delta) l = std::log(delta);
    for (std::size_t ch = 0; ch < p.h; ++ch)
      for (const cplx& a : discretize_bilinear(p, ch).a_bar) CHECK(std::abs(a) < 1.0);
  }
}

TEST_CASE("kernel_naive examples") {
  DiscreteSsm integrator{{cplx(1.0, 0.0)}, {cplx(0.25, 0.0)}, {cplx(0.5, 0.0)}, 0.0};
  // 2 Re(c b_bar) = 2 * 0.5 * delta with delta = 0.25.
  for (double v : kernel_naive(integrator, 10).k) CHECK(v == 0.25);
  DiscreteSsm zero_c{{cplx(0.9, 0.1)}, {cplx(1.0, 0.0)}, {cplx(0.0, 0.0)}, 0.0};
  for (double v : kernel_naive(zero_c, 10).k) CHECK(v == 0.0);

  // Decay is measured against the kernel peak; K[0] alone can nearly cancel.
  // Steps stay small because the bilinear map pushes fast modes toward |a_bar| = 1.
  SsmParams p = random_stable(8, 6, 17, std::log(0.05), std::log(0.15));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> re(-6.0, -3.0);
  for (auto& a : p.a_diag) a = cplx(re(rng), a.imag());
  for (std::size_t ch = 0; ch < p.h; ++ch) {
    const SsmKernel k = kernel_naive(discretize_bilinear(p, ch), 256);
    double peak = 0.0, tail = 0.0;
    for (std::size_t t = 0; t < k.length(); ++t) {
      CHECK(std::isfinite(k.k[t]));
      peak = std::max(peak, std::abs(k.k[t]));
      if (t >= 240) tail = std::max(tail, std::abs(k.k[t]));
    }
    CHECK(tail < 1e-6 * peak);
  }
}

TEST_CASE("kernel_fft equals kernel_naive across the acceptance grid") {
  for (int n : {2, 8, 16}) {
    for (std::size_t len : {1u, 16u, 250u, 1024u}) {
      const SsmParams p = random_stable(n, 3, 100 + n + len);
      for (std::size_t ch = 0; ch < p.h; ++ch) {
        const DiscreteSsm d = discretize_bilinear(p, ch);
        const SsmKernel naive = kernel_naive(d, len);
        const SsmKernel fast = kernel_fft(p, ch, len);
        CAPTURE(n);
        CAPTURE(len);
        CHECK(max_abs_diff(naive.k, fast.k) < 1e-8);
        CHECK(fast.max_imag_residue < 1e-9);
        if (len == 1) CHECK(naive.k[0] == fast.k[0]);
      }
    }
  }
}

TEST_CASE("recurrence and convolution agree") {
  const SsmParams p = random_stable(8, 4, 5);
  for (std::size_t ch = 0; ch < p.h; ++ch) {
    const DiscreteSsm d = discretize_bilinear(p, ch);
    const SsmKernel k = kernel_naive(d, 200);

    std::vector<double> impulse(200, 0.0);
    impulse[0] = 1.0;
    const auto y = run_recurrent(d, impulse);
    CHECK(y[0] == doctest::Approx(d.d + k.k[0]).epsilon(1e-12));
    for (std::size_t t = 1; t < 200; ++t) CHECK(std::abs(y[t] - k.k[t]) < 1e-12);

    for (double v : run_recurrent(d, std::vector<double>(50, 0.0))) CHECK(v == 0.0);

    const auto u = random_signal(200, 70 + ch);
    CHECK(max_abs_diff(run_recurrent(d, u), run_convolution(k, d.d, u)) < 1e-8);
  }
}

TEST_CASE("recurrent_step rejects a wrongly sized state") {
  const DiscreteSsm d = discretize_bilinear(init_diagonal_from_hippo(4, 1, 1), 0);
  std::vector<cplx> state(3);
  CHECK_THROWS_AS(recurrent_step(d, state, 1.0), DimensionError);
}

TEST_CASE("sampling a continuous response at 100 Hz and 500 Hz agrees after downsampling") {
  // Slow input starting from rest with zero slope, so no step transient is
  // excited. Readout after the state update leads the continuous response by
  // half a sample; keeping the input band low keeps that lag below 1e-3.
  SsmParams p = init_diagonal_from_hippo(4, 2, 8);
  const double duration = 10.0;
  auto response = [&](double rate, std::size_t ch) {
    SsmParams q = p;
    q.log_delta[ch] = std::log(1.0 / rate);
    const auto len = static_cast<std::size_t>(std::lround(duration * rate));
    std::vector<double> u(len);
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / rate;
      u[i] = 1.0 - std::cos(2.0 * M_PI * 0.02 * t);
    }
    DiscreteSsm d = discretize_bilinear(q, ch);
    d.d = 0.0;
    return run_recurrent(d, u);
  };
  for (std::size_t ch = 0; ch < p.h; ++ch) {
    const auto slow = response(100.0, ch);
    const auto fast = response(500.0, ch);
    double peak = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < slow.size(); ++i) {
      peak = std::max(peak, std::abs(fast[5 * i]));
      worst = std::max(worst, std::abs(slow[i] - fast[5 * i]));
    }
    CHECK(worst / peak < 1e-3);
  }
}

TEST_CASE("rescale_step") {
  const SsmParams p = init_diagonal_from_hippo(8, 3, 2);
  CHECK(rescale_step(p, 100.0, 100.0) == p);
  const SsmParams q = rescale_step(p, 100.0, 500.0);
  for (std::size_t ch = 0; ch < p.h; ++ch) CHECK(q.delta(ch) == doctest::Approx(p.delta(ch) / 5.0).epsilon(1e-14));
  CHECK(q.a_diag == p.a_diag);
  CHECK(q.b == p.b);
  CHECK(q.c == p.c);
  CHECK(q.d == p.d);
  CHECK(rescale_step(q, 500.0, 100.0) == p);
  CHECK(rescale_step(rescale_step(p, 100.0, 200.0), 200.0, 100.0) == p);
  CHECK_THROWS_AS(rescale_step(p, 0.0, 100.0), ArgumentError);
  CHECK_THROWS_AS(rescale_step(p, 100.0, -5.0), ArgumentError);
}

TEST_CASE("SSMK1 parameter checkpoints") {
  const std::string path = temp_path("s4ecg_test_params.ssmk");
  const SsmParams p = rescale_step(init_diagonal_from_hippo(8, 3, 12), 100.0, 250.0);
  save_params(p, path);
  CHECK(load_params(path) == p);

  // Truncation is a format error.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  CHECK_THROWS_AS(load_params(path), FormatError);

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "SSMK2\n{}\n";
  }
  CHECK_THROWS_AS(load_params(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("kernel_op matches kernel_fft and its gradients match finite differences") {
  const std::size_t h = 3, m = 2, len = 24;
  const SsmParams p = random_stable(4, 3, 21, std::log(0.02), std::log(0.5));
  auto pick = [&](auto f) {
    Tensor t({h, m});
    for (std::size_t i = 0; i < h * m; ++i) t[i] = f(i);
    return t;
  };
  Parameter re_raw("re_raw", pick([&](std::size_t i) { return softplus_inverse(-p.a_diag[i].real()); }));
  Parameter im("im", pick([&](std::size_t i) { return p.a_diag[i].imag(); }));
  Parameter b_re("b_re", pick([&](std::size_t i) { return p.b[i].real(); }));
  Parameter b_im("b_im", pick([&](std::size_t i) { return p.b[i].imag(); }));
  Parameter c_re("c_re", pick([&](std::size_t i) { return p.c[i].real(); }));
  Parameter c_im("c_im", pick([&](std::size_t i) { return p.c[i].imag(); }));
  Parameter log_delta("log_delta", Tensor({h}, p.log_delta));
  const double shift = 0.3;

  auto build = [&](Graph& g) {
    SsmVars v{g.parameter(re_raw), g.parameter(im),   g.parameter(b_re),     g.parameter(b_im),
              g.parameter(c_re),   g.parameter(c_im), g.parameter(log_delta)};
    return kernel_op(v, shift, len);
  };
  {
    Graph g;
    const Tensor k = build(g).value();
    SsmParams shifted = p;
    shifted.rate_log_shift = shift;
    for (std::size_t ch = 0; ch < h; ++ch) {
      const auto ref = kernel_naive(discretize_bilinear(shifted, ch), len).k;
      for (std::size_t t = 0; t < len; ++t) CHECK(std::abs(k[ch * len + t] - ref[t]) < 1e-10);
    }
  }
  auto loss = [&](bool bw) {
    Graph g;
    Var l = s4ecg::testing::project(build(g));
    if (bw) backward(g, l);
    return l.value()[0];
  };
  const auto bad =
      s4ecg::testing::check_gradients({&re_raw, &im, &b_re, &b_im, &c_re, &c_im, &log_delta}, loss);
  for (const auto& b : bad) MESSAGE(b.param << "[" << b.index << "] " << b.analytic << " vs " << b.numeric);
  CHECK(bad.empty());
}

TEST_CASE("softplus helpers") {
  for (double y : {1e-3, 0.5, 3.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  CHECK_THROWS_AS(softplus_inverse(0.0), ArgumentError);
}
