#include "s4ecg/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "s4ecg/checkpoint.hpp"
#include "s4ecg/errors.hpp"
#include "s4ecg/fft.hpp"
#include "s4ecg/random.hpp"

namespace s4ecg::ssm {

double SsmParams::delta(std::size_t channel) const {
  return std::exp(log_delta.at(channel) + rate_log_shift);
}

void SsmParams::validate() const {
  if (n == 0 || n % 2 != 0) throw ArgumentError("SsmParams: state dimension must be even and positive");
  if (h == 0) throw ArgumentError("SsmParams: at least one channel required");
  const std::size_t count = h * modes();
  if (a_diag.size() != count || b.size() != count || c.size() != count) {
    throw ArgumentError("SsmParams: mode arrays must hold h * n/2 entries");
  }
  if (d.size() != h || log_delta.size() != h) throw ArgumentError("SsmParams: d/log_delta must hold h entries");
  for (const cplx& a : a_diag) {
    if (!(a.real() < 0.0)) throw ArgumentError("SsmParams: Re(a) must be negative");
  }
  for (std::size_t ch = 0; ch < h; ++ch) {
    if (!(delta(ch) > 0.0) || !std::isfinite(delta(ch))) throw ArgumentError("SsmParams: step must be positive");
  }
}

Eigen::MatrixXd hippo_legs_dense(int n) {
  if (n <= 0) throw ArgumentError("hippo_legs_dense: n must be positive");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) a(i, j) = -std::sqrt(2.0 * i + 1.0) * std::sqrt(2.0 * j + 1.0);
    a(i, i) = -(i + 1.0);
  }
  return a;
}

Eigen::MatrixXd hippo_legs_normal(int n) {
  if (n <= 0) throw ArgumentError("hippo_legs_normal: n must be positive");
  // A + P P^T with P_i = sqrt(i + 1/2).
  Eigen::MatrixXd a = hippo_legs_dense(n);
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i) p(i) = std::sqrt(i + 0.5);
  Eigen::MatrixXd normal = a + p * p.transpose();
  // Diagonal is exactly -1/2 and the off-diagonal part exactly skew.
  for (int i = 0; i < n; ++i) {
    normal(i, i) = -0.5;
    for (int j = 0; j < i; ++j) {
      const double v = -0.5 * std::sqrt(2.0 * i + 1.0) * std::sqrt(2.0 * j + 1.0);
      normal(i, j) = v;
      normal(j, i) = -v;
    }
  }
  return normal;
}

std::vector<cplx> hippo_diagonal_spectrum(int n) {
  if (n <= 0 || n % 2 != 0) throw ArgumentError("hippo_diagonal_spectrum: n must be even and positive");
  const Eigen::MatrixXd normal = hippo_legs_normal(n);
  const Eigen::MatrixXd skew = normal + 0.5 * Eigen::MatrixXd::Identity(n, n);
  // i*S is Hermitian; if (iS)v = mu v then S v = -i mu v.
  const Eigen::MatrixXcd herm = cplx(0.0, 1.0) * skew.cast<cplx>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(herm, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalFault("hippo_diagonal_spectrum: eigensolve failed");
  std::vector<double> freqs;
  for (int i = 0; i < n; ++i) freqs.push_back(-solver.eigenvalues()(i));
  std::sort(freqs.begin(), freqs.end());
  std::vector<cplx> out;
  for (std::size_t i = freqs.size() / 2; i < freqs.size(); ++i) out.emplace_back(-0.5, freqs[i]);
  return out;
}

SsmParams init_diagonal_from_hippo(int n, int h, std::uint64_t seed, InitOptions opts) {
  if (n <= 0 || n % 2 != 0) throw ArgumentError("init_diagonal_from_hippo: n must be even and positive");
  if (h <= 0) throw ArgumentError("init_diagonal_from_hippo: h must be positive");
  if (!(opts.dt_min > 0.0) || opts.dt_max < opts.dt_min) throw ArgumentError("init_diagonal_from_hippo: bad step range");
  SsmParams p;
  p.n = static_cast<std::size_t>(n);
  p.h = static_cast<std::size_t>(h);
  const auto spectrum = hippo_diagonal_spectrum(n);
  const double lo = std::log(opts.dt_min), hi = std::log(opts.dt_max);
  for (std::size_t ch = 0; ch < p.h; ++ch) {
    Rng rng = make_rng(seed, ch);
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t m = 0; m < p.modes(); ++m) {
      p.a_diag.push_back(spectrum[m]);
      const double br = normal(rng), bi = normal(rng);
      p.b.emplace_back(br, bi);
      const double cr = normal(rng), ci = normal(rng);
      p.c.emplace_back(cr, ci);
    }
    p.d.push_back(std::normal_distribution<double>(0.0, 1.0)(rng));
    p.log_delta.push_back(lo + unit(rng) * (hi - lo));
  }
  return p;
}

namespace {

struct Bilinear {
  cplx a_bar;
  cplx b_scale;  // b_bar / b
};

Bilinear bilinear(cplx lambda, double delta) {
  const cplx half = 0.5 * delta * lambda;
  const cplx denom = 1.0 - half;
  if (std::abs(denom) < 1e-300) throw NumericalFault("bilinear discretization hit its pole (delta*lambda = 2)");
  return {(1.0 + half) / denom, delta / denom};
}

}  // namespace

DiscreteSsm discretize_bilinear(const SsmParams& params, std::size_t channel) {
  if (channel >= params.h) throw ArgumentError("discretize_bilinear: channel out of range");
  const double delta = params.delta(channel);
  if (!(delta > 0.0)) throw ArgumentError("discretize_bilinear: step must be positive");
  DiscreteSsm out;
  for (std::size_t m = 0; m < params.modes(); ++m) {
    const std::size_t i = params.index(channel, m);
    const Bilinear bl = bilinear(params.a_diag[i], delta);
    out.a_bar.push_back(bl.a_bar);
    out.b_bar.push_back(bl.b_scale * params.b[i]);
    out.c.push_back(params.c[i]);
  }
  out.d = params.d[channel];
  return out;
}

SsmKernel kernel_naive(const DiscreteSsm& d, std::size_t length) {
  SsmKernel out;
  out.k.assign(length, 0.0);
  for (std::size_t m = 0; m < d.a_bar.size(); ++m) {
    const cplx w = d.c[m] * d.b_bar[m];
    cplx power(1.0, 0.0);
    for (std::size_t t = 0; t < length; ++t) {
      out.k[t] += 2.0 * (w * power).real();
      power *= d.a_bar[m];
    }
  }
  return out;
}

SsmKernel kernel_fft(const DiscreteSsm& d, std::size_t length) {
  if (length == 0) throw ArgumentError("kernel_fft: length must be positive");
  const std::size_t modes = d.a_bar.size();
  if (length == 1) {
    // Single root of unity: the truncated series is just its t = 0 term.
    return kernel_naive(d, 1);
  }
  std::vector<cplx> w(modes), tail(modes);
  for (std::size_t m = 0; m < modes; ++m) {
    w[m] = d.c[m] * d.b_bar[m];
    tail[m] = 1.0 - std::pow(d.a_bar[m], static_cast<double>(length));
  }
  std::vector<cplx> spectrum(length);
  const double step = -2.0 * std::numbers::pi / static_cast<double>(length);
  for (std::size_t j = 0; j < length; ++j) {
    const cplx z = std::polar(1.0, step * static_cast<double>(j));
    cplx acc(0.0, 0.0);
    for (std::size_t m = 0; m < modes; ++m) {
      const cplx den = 1.0 - d.a_bar[m] * z;
      const cplx den_conj = 1.0 - std::conj(d.a_bar[m]) * z;
      if (std::abs(den) < 1e-14 || std::abs(den_conj) < 1e-14) {
        throw NumericalFault("kernel_fft: a_bar * z numerically equal to 1");
      }
      acc += w[m] * tail[m] / den + std::conj(w[m]) * std::conj(tail[m]) / den_conj;
    }
    spectrum[j] = acc;
  }
  fft::dft(spectrum, /*inverse=*/true);
  SsmKernel out;
  out.k.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    out.k[t] = spectrum[t].real();
    out.max_imag_residue = std::max(out.max_imag_residue, std::abs(spectrum[t].imag()));
  }
  return out;
}

SsmKernel kernel_fft(const SsmParams& params, std::size_t channel, std::size_t length) {
  return kernel_fft(discretize_bilinear(params, channel), length);
}

double recurrent_step(const DiscreteSsm& d, std::span<cplx> state, double u) {
  if (state.size() != d.a_bar.size()) throw DimensionError("recurrent_step: state length mismatch");
  double y = d.d * u;
  for (std::size_t m = 0; m < state.size(); ++m) {
    state[m] = d.a_bar[m] * state[m] + d.b_bar[m] * u;
    y += 2.0 * (d.c[m] * state[m]).real();
  }
  return y;
}

std::vector<double> run_recurrent(const DiscreteSsm& d, std::span<const double> u) {
  std::vector<cplx> state(d.a_bar.size(), cplx(0.0, 0.0));
  std::vector<double> y;
  y.reserve(u.size());
  for (double v : u) y.push_back(recurrent_step(d, state, v));
  return y;
}

std::vector<double> run_convolution(const SsmKernel& kernel, double d, std::span<const double> u) {
  if (kernel.length() < u.size()) throw DimensionError("run_convolution: kernel shorter than input");
  std::vector<double> y(u.size(), 0.0);
  for (std::size_t t = 0; t < u.size(); ++t) {
    double acc = d * u[t];
    for (std::size_t s = 0; s <= t; ++s) acc += kernel.k[s] * u[t - s];
    y[t] = acc;
  }
  return y;
}

double rate_shift(double rate_train_hz, double rate_test_hz) {
  if (!(rate_train_hz > 0.0) || !(rate_test_hz > 0.0)) throw ArgumentError("rescale_step: rates must be positive");
  // Written as a difference of logs so that shift(a, b) == -shift(b, a) bitwise.
  return std::log(rate_train_hz) - std::log(rate_test_hz);
}

SsmParams rescale_step(const SsmParams& params, double rate_train_hz, double rate_test_hz) {
  SsmParams out = params;
  out.rate_log_shift += rate_shift(rate_train_hz, rate_test_hz);
  return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ArgumentError("softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

namespace {

std::vector<double> split(const std::vector<cplx>& v, bool imag) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const cplx& z : v) out.push_back(imag ? z.imag() : z.real());
  return out;
}

}  // namespace

void save_params(const SsmParams& params, const std::string& path) {
  params.validate();
  checkpoint::Container c;
  c.kind = "ssm";
  c.meta = {{"n", params.n}, {"h", params.h}};
  const Shape modes_shape{params.h, params.modes()};
  c.sections = {
      {"a_re", modes_shape, split(params.a_diag, false)}, {"a_im", modes_shape, split(params.a_diag, true)},
      {"b_re", modes_shape, split(params.b, false)},      {"b_im", modes_shape, split(params.b, true)},
      {"c_re", modes_shape, split(params.c, false)},      {"c_im", modes_shape, split(params.c, true)},
      {"d", {params.h}, params.d},                        {"log_delta", {params.h}, params.log_delta},
      {"rate_log_shift", {1}, {params.rate_log_shift}},
  };
  checkpoint::write(c, path);
}

SsmParams load_params(const std::string& path) {
  const checkpoint::Container c = checkpoint::read(path);
  if (c.kind != "ssm") throw FormatError("'" + path + "' holds a '" + c.kind + "' checkpoint, not 'ssm'");
  SsmParams p;
  try {
    p.n = c.meta.at("n").get<std::size_t>();
    p.h = c.meta.at("h").get<std::size_t>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("'" + path + "': ssm header lacks n/h");
  }
  const Shape modes_shape{p.h, p.n / 2};
  auto get = [&](const char* name, const Shape& shape) -> const std::vector<double>& {
    const auto& s = c.section(name);
    if (s.shape != shape) throw ShapeError(std::string("section '") + name + "' has shape " + shape_string(s.shape));
    return s.values;
  };
  auto join = [&](const char* re, const char* im) {
    const auto& r = get(re, modes_shape);
    const auto& i = get(im, modes_shape);
    std::vector<cplx> out;
    for (std::size_t k = 0; k < r.size(); ++k) out.emplace_back(r[k], i[k]);
    return out;
  };
  p.a_diag = join("a_re", "a_im");
  p.b = join("b_re", "b_im");
  p.c = join("c_re", "c_im");
  p.d = get("d", {p.h});
  p.log_delta = get("log_delta", {p.h});
  p.rate_log_shift = get("rate_log_shift", {1})[0];
  p.validate();
  return p;
}

Var kernel_op(const SsmVars& vars, double rate_log_shift, std::size_t length) {
  const Shape& ms = vars.re_raw.shape();
  if (ms.size() != 2) throw DimensionError("kernel_op: mode parameters must be [h, m]");
  const std::size_t h = ms[0], modes = ms[1];
  for (const Var* v : {&vars.im, &vars.b_re, &vars.b_im, &vars.c_re, &vars.c_im}) {
    if (v->shape() != ms) throw DimensionError("kernel_op: mode parameter shapes differ");
  }
  if (vars.log_delta.value().size() != h) throw DimensionError("kernel_op: log_delta must have h entries");
  if (length == 0) throw ArgumentError("kernel_op: length must be positive");

  // Per-channel discretized quantities, saved for the backward pass.
  struct Saved {
    std::vector<cplx> lambda, a_bar, b_bar, b, c;
    std::vector<double> delta;
  };
  auto saved = std::make_shared<Saved>();
  const auto& re_raw = vars.re_raw.value().data;
  const auto& im = vars.im.value().data;
  const auto& b_re = vars.b_re.value().data;
  const auto& b_im = vars.b_im.value().data;
  const auto& c_re = vars.c_re.value().data;
  const auto& c_im = vars.c_im.value().data;
  const auto& log_delta = vars.log_delta.value().data;

  Tensor out({h, length});
  for (std::size_t ch = 0; ch < h; ++ch) {
    const double delta = std::exp(log_delta[ch] + rate_log_shift);
    saved->delta.push_back(delta);
    DiscreteSsm d;
    for (std::size_t m = 0; m < modes; ++m) {
      const std::size_t i = ch * modes + m;
      const cplx lambda(-softplus(re_raw[i]), im[i]);
      const cplx b(b_re[i], b_im[i]);
      const cplx c(c_re[i], c_im[i]);
      const Bilinear bl = bilinear(lambda, delta);
      saved->lambda.push_back(lambda);
      saved->a_bar.push_back(bl.a_bar);
      saved->b_bar.push_back(bl.b_scale * b);
      saved->b.push_back(b);
      saved->c.push_back(c);
      d.a_bar.push_back(bl.a_bar);
      d.b_bar.push_back(bl.b_scale * b);
      d.c.push_back(c);
    }
    const SsmKernel k = kernel_fft(d, length);
    std::copy(k.k.begin(), k.k.end(), out.data.begin() + static_cast<long>(ch * length));
  }

  std::vector<std::size_t> inputs{vars.re_raw.id(), vars.im.id(),   vars.b_re.id(),     vars.b_im.id(),
                                  vars.c_re.id(),   vars.c_im.id(), vars.log_delta.id()};
  return vars.re_raw.graph().record(std::move(out), inputs, [=](Graph& g, std::size_t self) {
    // Gradients use the convention g_z = dL/dRe z + i dL/dIm z. For real L
    // depending on 2 Re(f(z)) with f holomorphic, g_z = 2 conj(f'(z)) * dL/dK.
    const auto& gk = g.grad(self);
    std::vector<double> g_re_raw(h * modes, 0.0), g_im(h * modes, 0.0), g_bre(h * modes, 0.0),
        g_bim(h * modes, 0.0), g_cre(h * modes, 0.0), g_cim(h * modes, 0.0), g_logd(h, 0.0);
    for (std::size_t ch = 0; ch < h; ++ch) {
      const double* gch = &gk[ch * length];
      const double delta = saved->delta[ch];
      double dl_ddelta = 0.0;
      for (std::size_t m = 0; m < modes; ++m) {
        const std::size_t i = ch * modes + m;
        const cplx a = saved->a_bar[i];
        const cplx bb = saved->b_bar[i];
        const cplx c = saved->c[i];
        const cplx w = c * bb;
        // s0 = sum_t G[t] a^t, s1 = sum_{t>=1} G[t] t a^{t-1}.
        cplx s0(0.0, 0.0), s1(0.0, 0.0), power(1.0, 0.0), prev(1.0, 0.0);
        for (std::size_t t = 0; t < length; ++t) {
          s0 += gch[t] * power;
          if (t >= 1) {
            s1 += (gch[t] * static_cast<double>(t)) * prev;
            prev *= a;
          }
          power *= a;
        }
        const cplx g_w = 2.0 * std::conj(s0);
        const cplx g_a = 2.0 * std::conj(w * s1);
        const cplx g_c = std::conj(bb) * g_w;
        const cplx g_bbar = std::conj(c) * g_w;
        const cplx lambda = saved->lambda[i];
        const cplx denom = 1.0 - 0.5 * delta * lambda;
        const cplx denom2 = denom * denom;
        const cplx g_b = std::conj(delta / denom) * g_bbar;
        const cplx da_dlambda = delta / denom2;
        const cplx dbbar_dlambda = saved->b[i] * (0.5 * delta * delta) / denom2;
        const cplx g_lambda = std::conj(da_dlambda) * g_a + std::conj(dbbar_dlambda) * g_bbar;
        const cplx da_ddelta = lambda / denom2;
        const cplx dbbar_ddelta = saved->b[i] / denom2;
        dl_ddelta += (std::conj(g_a) * da_ddelta + std::conj(g_bbar) * dbbar_ddelta).real();

        const double raw = g.value(inputs[0]).data[i];
        g_re_raw[i] = -g_lambda.real() * sigmoid(raw);
        g_im[i] = g_lambda.imag();
        g_bre[i] = g_b.real();
        g_bim[i] = g_b.imag();
        g_cre[i] = g_c.real();
        g_cim[i] = g_c.imag();
      }
      g_logd[ch] = dl_ddelta * delta;
    }
    const std::vector<double>* parts[] = {&g_re_raw, &g_im, &g_bre, &g_bim, &g_cre, &g_cim, &g_logd};
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!g.needs_grad(inputs[k])) continue;
      auto& dst = g.grad(inputs[k]);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*parts[k])[i];
    }
  });
}

}  // namespace s4ecg::ssm
