#pragma once

#include <cstddef>
#include <vector>

#include "s4ecg/tensor.hpp"

namespace s4ecg {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay and a constant learning rate:
//   p <- p - lr * wd * p
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWHyper hyper) : hyper_(hyper) {}

  // Applies one update to every parameter with requires_grad, using its
  // current grad buffer. Throws NumericalFault (leaving all parameters and
  // moments untouched) if any gradient entry is non-finite.
  void step(std::vector<Parameter*>& params);

  std::size_t step_count() const { return step_; }
  const AdamWHyper& hyper() const { return hyper_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamWHyper hyper_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace s4ecg
