#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "s4ecg/autodiff.hpp"

namespace s4ecg::ssm {

using cplx = std::complex<double>;

// Continuous-time diagonal SSM bank: h independent scalar systems
//   x'(t) = diag(a) x(t) + b u(t),   y(t) = 2 Re(c . x(t)) + d u(t)
// Each channel stores n/2 complex modes; the conjugate partner of every mode
// is implicit, which is where the factor 2 Re(.) comes from.
struct SsmParams {
  std::size_t n = 0;  // state dimension, even
  std::size_t h = 0;  // channels
  std::vector<cplx> a_diag;         // [h][n/2]
  std::vector<cplx> b;              // [h][n/2]
  std::vector<cplx> c;              // [h][n/2]
  std::vector<double> d;            // [h]
  std::vector<double> log_delta;    // [h]
  // Added to every channel's log step at discretization. Sampling-rate
  // changes accumulate here so that a round trip restores the original bits.
  double rate_log_shift = 0.0;

  std::size_t modes() const { return n / 2; }
  std::size_t index(std::size_t channel, std::size_t mode) const { return channel * modes() + mode; }
  double delta(std::size_t channel) const;

  // Throws ArgumentError if any invariant is broken (Re(a) >= 0, sizes...).
  void validate() const;

  bool operator==(const SsmParams&) const = default;
};

// One channel after discretization; conjugate partners stay implicit.
struct DiscreteSsm {
  std::vector<cplx> a_bar;
  std::vector<cplx> b_bar;
  std::vector<cplx> c;
  double d = 0.0;
};

struct SsmKernel {
  std::vector<double> k;         // K[t], t = 0..L-1
  double max_imag_residue = 0.0; // largest |Im| dropped when taking the real part
  std::size_t length() const { return k.size(); }
};

struct InitOptions {
  double dt_min = 1e-3;
  double dt_max = 1e-1;
};

// HiPPO-LegS: A[i][j] = -sqrt(2i+1) sqrt(2j+1) (i > j), -(i+1) (i == j), 0 (i < j).
Eigen::MatrixXd hippo_legs_dense(int n);

// Normal part of HiPPO-LegS, -I/2 + S with S skew-symmetric.
Eigen::MatrixXd hippo_legs_normal(int n);

// The n/2 eigenvalues of hippo_legs_normal(n) with positive imaginary part,
// ascending by imaginary part.
std::vector<cplx> hippo_diagonal_spectrum(int n);

SsmParams init_diagonal_from_hippo(int n, int h, std::uint64_t seed, InitOptions opts = {});

// Bilinear (Tustin) map: a_bar = (1 + D a/2)/(1 - D a/2), b_bar = D b/(1 - D a/2).
DiscreteSsm discretize_bilinear(const SsmParams& params, std::size_t channel);

// K[t] = sum_modes 2 Re(c b_bar a_bar^t), by repeated multiplication.
SsmKernel kernel_naive(const DiscreteSsm& d, std::size_t length);

// Same kernel through its truncated generating function evaluated at the L-th
// roots of unity, sum_modes c b_bar (1 - a_bar^L)/(1 - a_bar z), followed by an
// inverse DFT.
SsmKernel kernel_fft(const DiscreteSsm& d, std::size_t length);
SsmKernel kernel_fft(const SsmParams& params, std::size_t channel, std::size_t length);

// x <- a_bar x + b_bar u; returns y = 2 Re(c . x) + d u. The state update
// precedes the readout so the impulse response starts at K[0] = 2 Re(c b_bar).
double recurrent_step(const DiscreteSsm& d, std::span<cplx> state, double u);

// Unrolls recurrent_step from the zero state.
std::vector<double> run_recurrent(const DiscreteSsm& d, std::span<const double> u);

// Direct O(L^2) causal convolution with the kernel plus the feedthrough term.
std::vector<double> run_convolution(const SsmKernel& kernel, double d, std::span<const double> u);

// Adapts a model calibrated at rate_train to inputs sampled at rate_test by
// shifting every log step by log(rate_train / rate_test).
SsmParams rescale_step(const SsmParams& params, double rate_train_hz, double rate_test_hz);
double rate_shift(double rate_train_hz, double rate_test_hz);

// Standalone SSMK1 checkpoint of one parameter bank.
void save_params(const SsmParams& params, const std::string& path);
SsmParams load_params(const std::string& path);

// --- trainable parameterization used by the model ---

// Re(a) = -softplus(re_raw) keeps every mode strictly stable during training.
double softplus(double x);
double softplus_inverse(double y);

struct SsmVars {
  Var re_raw;     // [h, m]
  Var im;         // [h, m]
  Var b_re, b_im; // [h, m]
  Var c_re, c_im; // [h, m]
  Var log_delta;  // [h]
};

// Differentiable kernel materialization for all channels: [h, length].
Var kernel_op(const SsmVars& vars, double rate_log_shift, std::size_t length);

}  // namespace s4ecg::ssm
