#include "s4ecg/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "s4ecg/errors.hpp"
#include "s4ecg/fft.hpp"

namespace s4ecg {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& param) {
  Node node;
  node.value = param.value;
  node.param = &param;
  node.needs_grad = grad_enabled_ && param.requires_grad;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  Node node;
  node.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= id) throw ContractError("graph input recorded after its consumer");
    node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  }
  node.needs_grad = node.needs_grad && grad_enabled_;
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, id};
}

std::vector<double>& Graph::grad(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

const std::vector<double>* Graph::grad_if_any(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.grad.empty() ? nullptr : &node.grad;
}

void backward(Graph& graph, Var loss) {
  if (&loss.graph() != &graph) throw ContractError("loss does not belong to this graph");
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!graph.needs_grad(loss.id())) return;
  graph.grad(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = graph.nodes_[i];
    if (node.grad.empty() || !node.needs_grad) continue;
    for (std::size_t in : node.inputs) {
      if (in >= i) throw ContractError("node visited before its consumers");
    }
    if (node.backward) node.backward(graph, i);
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.shape != p.value.shape) p.zero_grad();
      for (std::size_t k = 0; k < node.grad.size(); ++k) p.grad.data[k] += node.grad[k];
    }
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu_value(double x, ops::GeluForm form) {
  if (form == ops::GeluForm::kTanh) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  }
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

namespace ops {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMatrix>;
using MapCM = Eigen::Map<const RowMatrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
  }
}

// Leading size (dim 0) and trailing size (dims >= 2) for [B, C, ...] tensors.
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], inner};
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!g.needs_grad(in)) continue;
      auto& gx = g.grad(in);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const auto& av = g.value(ia).data;
    const auto& bv2 = g.value(ib).data;
    if (g.needs_grad(ia)) {
      auto& ga = g.grad(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv2[i];
    }
    if (g.needs_grad(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data) v *= factor;
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia, factor](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  const std::size_t ia = a.id();
  return a.graph().record(Tensor({1}, {total}), {ia}, [ia](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    for (double& v : g.grad(ia)) v += gy;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var conv1d(Var input, Var weight, std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv1d input");
  require_rank(weight, 3, "conv1d weight");
  if (stride == 0) throw ArgumentError("conv1d: stride must be >= 1");
  const std::size_t batch = input.shape()[0], c_in = input.shape()[1], len = input.shape()[2];
  const std::size_t c_out = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != c_in) {
    throw DimensionError("conv1d: input has " + std::to_string(c_in) + " channels, weight expects " +
                         std::to_string(weight.shape()[1]));
  }
  if (k == 0 || k > len + 2 * padding) throw DimensionError("conv1d: kernel longer than padded input");
  const std::size_t l_out = (len + 2 * padding - k) / stride + 1;

  // Output positions t whose tap k lands inside the unpadded input.
  auto tap_range = [=](std::size_t tap) {
    const long lo_num = static_cast<long>(padding) - static_cast<long>(tap);
    const long s = static_cast<long>(stride);
    long lo = lo_num > 0 ? (lo_num + s - 1) / s : 0;
    const long hi_num = static_cast<long>(len + padding) - static_cast<long>(tap);  // t*s < hi_num
    long hi = hi_num > 0 ? (hi_num + s - 1) / s : 0;
    hi = std::min<long>(hi, static_cast<long>(l_out));
    return std::pair<std::size_t, std::size_t>(lo, std::max(lo, hi));
  };

  Tensor out({batch, c_out, l_out});
  const auto& x = input.value().data;
  const auto& w = weight.value().data;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double* y = &out.data[(b * c_out + o) * l_out];
      for (std::size_t i = 0; i < c_in; ++i) {
        const double* xr = &x[(b * c_in + i) * len];
        for (std::size_t tap = 0; tap < k; ++tap) {
          const double wv = w[(o * c_in + i) * k + tap];
          const auto [lo, hi] = tap_range(tap);
          for (std::size_t t = lo; t < hi; ++t) y[t] += wv * xr[t * stride + tap - padding];
        }
      }
    }
  }

  const std::size_t ix = input.id(), iw = weight.id();
  return input.graph().record(
      std::move(out), {ix, iw},
      [=](Graph& g, std::size_t self) {
        const auto& gy = g.grad(self);
        const auto& xv = g.value(ix).data;
        const auto& wv = g.value(iw).data;
        const bool want_x = g.needs_grad(ix), want_w = g.needs_grad(iw);
        std::vector<double>* gx = want_x ? &g.grad(ix) : nullptr;
        std::vector<double>* gw = want_w ? &g.grad(iw) : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const double* dy = &gy[(b * c_out + o) * l_out];
            for (std::size_t i = 0; i < c_in; ++i) {
              const std::size_t row = (b * c_in + i) * len;
              for (std::size_t tap = 0; tap < k; ++tap) {
                const std::size_t widx = (o * c_in + i) * k + tap;
                const auto [lo, hi] = tap_range(tap);
                if (want_x) {
                  const double w1 = wv[widx];
                  double* dx = &(*gx)[row];
                  for (std::size_t t = lo; t < hi; ++t) dx[t * stride + tap - padding] += w1 * dy[t];
                }
                if (want_w) {
                  double acc = 0.0;
                  for (std::size_t t = lo; t < hi; ++t) acc += dy[t] * xv[row + t * stride + tap - padding];
                  (*gw)[widx] += acc;
                }
              }
            }
          }
        }
      });
}

Var add_channel_bias(Var x, Var bias) {
  if (x.shape().size() < 2) throw DimensionError("add_channel_bias: input rank must be >= 2");
  const std::size_t channels = x.shape()[1];
  if (bias.value().size() != channels) throw DimensionError("add_channel_bias: bias length mismatch");
  const auto [outer, inner] = outer_inner(x.shape());
  Tensor out = x.value();
  const auto& bv = bias.value().data;
  for (std::size_t b = 0; b < outer; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      double* row = &out.data[(b * channels + c) * inner];
      for (std::size_t t = 0; t < inner; ++t) row[t] += bv[c];
    }
  const std::size_t ix = x.id(), ib = bias.id();
  return x.graph().record(std::move(out), {ix, ib}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    if (g.needs_grad(ix)) {
      auto& gx = g.grad(ix);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.needs_grad(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t b = 0; b < outer; ++b)
        for (std::size_t c = 0; c < channels; ++c) {
          const double* row = &gy[(b * channels + c) * inner];
          double acc = 0.0;
          for (std::size_t t = 0; t < inner; ++t) acc += row[t];
          gb[c] += acc;
        }
    }
  });
}

Var channel_scale(Var x, Var scale_by) {
  if (x.shape().size() < 2) throw DimensionError("channel_scale: input rank must be >= 2");
  const std::size_t channels = x.shape()[1];
  if (scale_by.value().size() != channels) throw DimensionError("channel_scale: scale length mismatch");
  const auto [outer, inner] = outer_inner(x.shape());
  Tensor out = x.value();
  const auto& sv = scale_by.value().data;
  for (std::size_t b = 0; b < outer; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      double* row = &out.data[(b * channels + c) * inner];
      for (std::size_t t = 0; t < inner; ++t) row[t] *= sv[c];
    }
  const std::size_t ix = x.id(), is = scale_by.id();
  return x.graph().record(std::move(out), {ix, is}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const auto& xv = g.value(ix).data;
    const auto& s = g.value(is).data;
    const bool want_x = g.needs_grad(ix), want_s = g.needs_grad(is);
    for (std::size_t b = 0; b < outer; ++b)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t off = (b * channels + c) * inner;
        if (want_x) {
          auto& gx = g.grad(ix);
          for (std::size_t t = 0; t < inner; ++t) gx[off + t] += gy[off + t] * s[c];
        }
        if (want_s) {
          double acc = 0.0;
          for (std::size_t t = 0; t < inner; ++t) acc += gy[off + t] * xv[off + t];
          g.grad(is)[c] += acc;
        }
      }
  });
}

Var fft_causal_convolve(Var signal, Var kernel) {
  const Shape& ss = signal.shape();
  const Shape& ks = kernel.shape();
  if (ss.empty() || ks.empty() || ss.back() != ks.back()) {
    throw DimensionError("fft_causal_convolve: trailing lengths differ (" + shape_string(ss) + " vs " +
                         shape_string(ks) + ")");
  }
  if (ks.size() > ss.size() || !std::equal(ks.begin(), ks.end(), ss.end() - static_cast<long>(ks.size()))) {
    throw DimensionError("fft_causal_convolve: kernel shape " + shape_string(ks) +
                         " does not broadcast against " + shape_string(ss));
  }
  const std::size_t len = ss.back();
  const std::size_t rows = signal.value().size() / len;
  const std::size_t krows = kernel.value().size() / len;
  const std::size_t n = fft::conv_size(len);
  const std::size_t bins = n / 2 + 1;

  auto kspec = std::make_shared<std::vector<fft::cplx>>(krows * bins);
  auto uspec = std::make_shared<std::vector<fft::cplx>>(rows * bins);
  std::vector<double> pad(n, 0.0);
  const auto& kv = kernel.value().data;
  for (std::size_t r = 0; r < krows; ++r) {
    std::copy_n(&kv[r * len], len, pad.begin());
    std::fill(pad.begin() + static_cast<long>(len), pad.end(), 0.0);
    fft::rfft(pad, std::span(kspec->data() + r * bins, bins));
  }

  Tensor out(ss);
  const auto& uv = signal.value().data;
  std::vector<fft::cplx> prod(bins);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&uv[r * len], len, pad.begin());
    std::fill(pad.begin() + static_cast<long>(len), pad.end(), 0.0);
    fft::cplx* us = uspec->data() + r * bins;
    fft::rfft(pad, std::span(us, bins));
    const fft::cplx* ksr = kspec->data() + (r % krows) * bins;
    for (std::size_t f = 0; f < bins; ++f) prod[f] = us[f] * ksr[f];
    fft::irfft(prod, pad);
    std::copy_n(pad.begin(), len, &out.data[r * len]);
  }

  const std::size_t iu = signal.id(), ik = kernel.id();
  return signal.graph().record(std::move(out), {iu, ik}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const bool want_u = g.needs_grad(iu), want_k = g.needs_grad(ik);
    std::vector<double> buf(n, 0.0);
    std::vector<fft::cplx> gspec(bins), tmp(bins);
    std::vector<fft::cplx> kacc(want_k ? krows * bins : 0);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&gy[r * len], len, buf.begin());
      std::fill(buf.begin() + static_cast<long>(len), buf.end(), 0.0);
      fft::rfft(buf, gspec);
      const std::size_t kr = r % krows;
      if (want_u) {
        const fft::cplx* ksr = kspec->data() + kr * bins;
        for (std::size_t f = 0; f < bins; ++f) tmp[f] = gspec[f] * std::conj(ksr[f]);
        fft::irfft(tmp, buf);
        auto& gu = g.grad(iu);
        for (std::size_t t = 0; t < len; ++t) gu[r * len + t] += buf[t];
      }
      if (want_k) {
        const fft::cplx* us = uspec->data() + r * bins;
        fft::cplx* acc = kacc.data() + kr * bins;
        for (std::size_t f = 0; f < bins; ++f) acc[f] += gspec[f] * std::conj(us[f]);
      }
    }
    if (want_k) {
      auto& gk = g.grad(ik);
      for (std::size_t kr = 0; kr < krows; ++kr) {
        fft::irfft(std::span<const fft::cplx>(kacc.data() + kr * bins, bins), buf);
        for (std::size_t t = 0; t < len; ++t) gk[kr * len + t] += buf[t];
      }
    }
  });
}

Var gelu(Var x, GeluForm form) {
  Tensor out = x.value();
  for (double& v : out.data) v = gelu_value(v, form);
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, form](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const auto& xv = g.value(ix).data;
    auto& gx = g.grad(ix);
    if (form == GeluForm::kTanh) {
      const double k = std::sqrt(2.0 / std::numbers::pi);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double v = xv[i];
        const double th = std::tanh(k * (v + 0.044715 * v * v * v));
        const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * 0.044715 * v * v);
        gx[i] += gy[i] * d;
      }
    } else {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double v = xv[i];
        const double d = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += gy[i] * d;
      }
    }
  });
}

Var layer_norm_channels(Var x, Var gamma, Var beta, double eps) {
  require_rank(x, 3, "layer_norm_channels");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  if (gamma.value().size() != ch || beta.value().size() != ch) {
    throw DimensionError("layer_norm_channels: affine parameters must have one entry per channel");
  }
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<double>>(batch * len);
  Tensor out(x.shape());
  const auto& xv = x.value().data;
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  std::vector<double> mu(len), var(len);
  const double inv_c = 1.0 / static_cast<double>(ch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(mu.begin(), mu.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    const double* xb = &xv[b * ch * len];
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < len; ++t) mu[t] += xb[c * len + t];
    for (double& m : mu) m *= inv_c;
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const double d = xb[c * len + t] - mu[t];
        var[t] += d * d;
      }
    double* is = &(*inv_std)[b * len];
    for (std::size_t t = 0; t < len; ++t) is[t] = 1.0 / std::sqrt(var[t] * inv_c + eps);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = (b * ch + c) * len + t;
        const double h = (xv[i] - mu[t]) * is[t];
        (*xhat)[i] = h;
        out.data[i] = gv[c] * h + bv[c];
      }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(std::move(out), {ix, ig, ib}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const auto& gam = g.value(ig).data;
    if (g.needs_grad(ig) || g.needs_grad(ib)) {
      std::vector<double> dg(ch, 0.0), db(ch, 0.0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t i = (b * ch + c) * len + t;
            dg[c] += gy[i] * (*xhat)[i];
            db[c] += gy[i];
          }
      if (g.needs_grad(ig)) {
        auto& gg = g.grad(ig);
        for (std::size_t c = 0; c < ch; ++c) gg[c] += dg[c];
      }
      if (g.needs_grad(ib)) {
        auto& gb = g.grad(ib);
        for (std::size_t c = 0; c < ch; ++c) gb[c] += db[c];
      }
    }
    if (!g.needs_grad(ix)) return;
    auto& gx = g.grad(ix);
    std::vector<double> m1(len), m2(len);
    for (std::size_t b = 0; b < batch; ++b) {
      std::fill(m1.begin(), m1.end(), 0.0);
      std::fill(m2.begin(), m2.end(), 0.0);
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = (b * ch + c) * len + t;
          const double dh = gy[i] * gam[c];
          m1[t] += dh;
          m2[t] += dh * (*xhat)[i];
        }
      const double* is = &(*inv_std)[b * len];
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = (b * ch + c) * len + t;
          const double dh = gy[i] * gam[c];
          gx[i] += is[t] * (dh - m1[t] * inv_c - (*xhat)[i] * m2[t] * inv_c);
        }
    }
  });
}

Var channel_mix(Var x, Var weight, Var bias) {
  require_rank(x, 3, "channel_mix");
  require_rank(weight, 2, "channel_mix weight");
  const std::size_t batch = x.shape()[0], c_in = x.shape()[1], len = x.shape()[2];
  const std::size_t c_out = weight.shape()[0];
  if (weight.shape()[1] != c_in) throw DimensionError("channel_mix: weight input width mismatch");
  if (bias.value().size() != c_out) throw DimensionError("channel_mix: bias length mismatch");
  Tensor out({batch, c_out, len});
  MapCM w(weight.value().data.data(), c_out, c_in);
  const auto& bv = bias.value().data;
  for (std::size_t b = 0; b < batch; ++b) {
    MapCM xb(&x.value().data[b * c_in * len], c_in, len);
    MapM yb(&out.data[b * c_out * len], c_out, len);
    yb.noalias() = w * xb;
    for (std::size_t o = 0; o < c_out; ++o) yb.row(o).array() += bv[o];
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.graph().record(std::move(out), {ix, iw, ib}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    MapCM wv(g.value(iw).data.data(), c_out, c_in);
    const bool want_x = g.needs_grad(ix), want_w = g.needs_grad(iw), want_b = g.needs_grad(ib);
    RowMatrix dw = RowMatrix::Zero(want_w ? c_out : 0, want_w ? c_in : 0);
    for (std::size_t b = 0; b < batch; ++b) {
      MapCM dy(&gy[b * c_out * len], c_out, len);
      if (want_x) {
        MapM dx(&g.grad(ix)[b * c_in * len], c_in, len);
        dx.noalias() += wv.transpose() * dy;
      }
      if (want_w) {
        MapCM xb(&g.value(ix).data[b * c_in * len], c_in, len);
        dw.noalias() += dy * xb.transpose();
      }
      if (want_b) {
        auto& gb = g.grad(ib);
        for (std::size_t o = 0; o < c_out; ++o) gb[o] += dy.row(o).sum();
      }
    }
    if (want_w) {
      MapM gw(g.grad(iw).data(), c_out, c_in);
      gw += dw;
    }
  });
}

Var dropout(Var x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    (*mask)[i] = u < p ? 0.0 : keep_scale;
    out.data[i] *= (*mask)[i];
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, mask](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(ix);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

Var mean_time(Var x) {
  require_rank(x, 3, "mean_time");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  Tensor out({batch, ch});
  const auto& xv = x.value().data;
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t r = 0; r < batch * ch; ++r) {
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t) acc += xv[r * len + t];
    out.data[r] = acc * inv;
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {ix}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(ix);
    for (std::size_t r = 0; r < batch * ch; ++r) {
      const double v = gy[r] * inv;
      for (std::size_t t = 0; t < len; ++t) gx[r * len + t] += v;
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::size_t batch = x.shape()[0], n_in = x.shape()[1], n_out = weight.shape()[0];
  if (weight.shape()[1] != n_in) throw DimensionError("linear: weight input width mismatch");
  if (bias.value().size() != n_out) throw DimensionError("linear: bias length mismatch");
  Tensor out({batch, n_out});
  MapCM xv(x.value().data.data(), batch, n_in);
  MapCM wv(weight.value().data.data(), n_out, n_in);
  MapM y(out.data.data(), batch, n_out);
  y.noalias() = xv * wv.transpose();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < n_out; ++o) y(b, o) += bias.value().data[o];
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.graph().record(std::move(out), {ix, iw, ib}, [=](Graph& g, std::size_t self) {
    MapCM dy(g.grad(self).data(), batch, n_out);
    if (g.needs_grad(ix)) {
      MapM dx(g.grad(ix).data(), batch, n_in);
      dx.noalias() += dy * MapCM(g.value(iw).data.data(), n_out, n_in);
    }
    if (g.needs_grad(iw)) {
      MapM dw(g.grad(iw).data(), n_out, n_in);
      dw.noalias() += dy.transpose() * MapCM(g.value(ix).data.data(), batch, n_in);
    }
    if (g.needs_grad(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < n_out; ++o) gb[o] += dy(b, o);
    }
  });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  if (logits.shape() != targets.shape) {
    throw DimensionError("bce_with_logits: logits " + shape_string(logits.shape()) + " vs targets " +
                         shape_string(targets.shape));
  }
  const auto& z = logits.value().data;
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * targets.data[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const std::size_t iz = logits.id();
  auto y = std::make_shared<std::vector<double>>(targets.data);
  return logits.graph().record(Tensor({1}, {total / n}), {iz}, [iz, y, n](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    const auto& zv = g.value(iz).data;
    auto& gz = g.grad(iz);
    for (std::size_t i = 0; i < zv.size(); ++i) gz[i] += gy * (sigmoid(zv[i]) - (*y)[i]) / n;
  });
}

}  // namespace ops
}  // namespace s4ecg
