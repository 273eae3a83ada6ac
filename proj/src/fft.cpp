#include "s4ecg/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>

#include "s4ecg/errors.hpp"

namespace s4ecg::fft {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct RealPlan {
  std::size_t n;
  double* real;
  fftw_complex* spec;
  fftw_plan forward;
  fftw_plan backward;

  explicit RealPlan(std::size_t size) : n(size) {
    real = fftw_alloc_real(n);
    spec = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), real, spec, FFTW_ESTIMATE);
    backward = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, real, FFTW_ESTIMATE);
  }
  ~RealPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
    fftw_free(real);
    fftw_free(spec);
  }
  RealPlan(const RealPlan&) = delete;
  RealPlan& operator=(const RealPlan&) = delete;
};

struct ComplexPlan {
  std::size_t n;
  fftw_complex* buf;
  fftw_plan forward;
  fftw_plan backward;

  explicit ComplexPlan(std::size_t size) : n(size) {
    buf = fftw_alloc_complex(n);
    std::lock_guard lock(planner_mutex());
    forward = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    backward = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~ComplexPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
    fftw_free(buf);
  }
  ComplexPlan(const ComplexPlan&) = delete;
  ComplexPlan& operator=(const ComplexPlan&) = delete;
};

RealPlan& real_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealPlan>(n);
  return *slot;
}

ComplexPlan& complex_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<ComplexPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<ComplexPlan>(n);
  return *slot;
}

}  // namespace

void rfft(std::span<const double> in, std::span<cplx> out) {
  const std::size_t n = in.size();
  if (n == 0 || out.size() != n / 2 + 1) throw DimensionError("rfft: output must hold n/2+1 bins");
  RealPlan& p = real_plan(n);
  std::copy(in.begin(), in.end(), p.real);
  fftw_execute(p.forward);
  auto* spec = reinterpret_cast<const cplx*>(p.spec);
  std::copy(spec, spec + out.size(), out.begin());
}

void irfft(std::span<const cplx> in, std::span<double> out) {
  const std::size_t n = out.size();
  if (n == 0 || in.size() != n / 2 + 1) throw DimensionError("irfft: input must hold n/2+1 bins");
  RealPlan& p = real_plan(n);
  std::copy(in.begin(), in.end(), reinterpret_cast<cplx*>(p.spec));
  fftw_execute(p.backward);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = p.real[i] * scale;
}

void dft(std::span<cplx> data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0) return;
  ComplexPlan& p = complex_plan(n);
  auto* buf = reinterpret_cast<cplx*>(p.buf);
  std::copy(data.begin(), data.end(), buf);
  fftw_execute(inverse ? p.backward : p.forward);
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = buf[i] * scale;
  } else {
    std::copy(buf, buf + n, data.begin());
  }
}

}  // namespace s4ecg::fft
