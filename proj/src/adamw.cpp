#include "s4ecg/adamw.hpp"

#include <cmath>

#include "s4ecg/errors.hpp"

namespace s4ecg {

void AdamW::step(std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("AdamW: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (m_[i].size() != p.value.size()) throw DimensionError("AdamW: moment buffer shape mismatch for " + p.name);
    if (!p.requires_grad) continue;
    if (p.grad.size() != p.value.size()) throw DimensionError("AdamW: missing gradient for " + p.name);
    for (double g : p.grad.data) {
      if (!std::isfinite(g)) throw NumericalFault("AdamW: non-finite gradient in " + p.name);
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.requires_grad) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad.data[k];
      double& w = p.value.data[k];
      w -= hyper_.lr * hyper_.weight_decay * w;
      m[k] = hyper_.beta1 * m[k] + (1.0 - hyper_.beta1) * g;
      v[k] = hyper_.beta2 * v[k] + (1.0 - hyper_.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w -= hyper_.lr * m_hat / (std::sqrt(v_hat) + hyper_.eps);
    }
  }
}

}  // namespace s4ecg
