#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace s4ecg::fft {

using cplx = std::complex<double>;

// Thin wrappers over FFTW with per-size plan caching. Plans are created
// under a global lock; execution uses thread-local scratch buffers.

// Forward real transform: n real samples -> n/2+1 bins (unnormalized).
void rfft(std::span<const double> in, std::span<cplx> out);

// Inverse real transform: n/2+1 bins -> n real samples, scaled by 1/n.
void irfft(std::span<const cplx> in, std::span<double> out);

// In-place complex DFT. `inverse` uses e^{+2πi jk/n} and scales by 1/n.
void dft(std::span<cplx> data, bool inverse);

// Transform size used for causal linear convolution of length-L sequences.
constexpr std::size_t conv_size(std::size_t length) { return 2 * length; }

}  // namespace s4ecg::fft
