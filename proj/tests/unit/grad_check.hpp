#pragma once

// Central finite-difference oracle for reverse-mode gradients. Test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "s4ecg/autodiff.hpp"

namespace s4ecg::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = normal(rng);
  return t;
}

// Projects an arbitrary output onto a fixed random direction to get a scalar.
inline Var project(Var out, std::uint64_t seed = 99) {
  Graph& g = out.graph();
  Var r = g.constant(random_tensor(out.shape(), seed));
  return ops::sum(ops::mul(out, r));
}

struct GradMismatch {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// `loss_fn` builds a fresh graph over `params` and returns the scalar loss
// value; when `run_backward` is set it must also call backward().
using LossFn = std::function<double(bool run_backward)>;

inline std::vector<GradMismatch> check_gradients(const std::vector<Parameter*>& params, const LossFn& loss_fn,
                                                 double h = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  loss_fn(true);
  std::vector<GradMismatch> bad;
  for (Parameter* p : params) {
    const std::vector<double> analytic = p->grad.data;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data[i];
      p->value.data[i] = orig + h;
      const double up = loss_fn(false);
      p->value.data[i] = orig - h;
      const double down = loss_fn(false);
      p->value.data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(numeric - analytic[i]);
      const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
      if (err > abs_floor && err > rel_tol * scale) bad.push_back({p->name, i, analytic[i], numeric});
    }
  }
  return bad;
}

}  // namespace s4ecg::testing
