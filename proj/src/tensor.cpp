#include "s4ecg/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "s4ecg/errors.hpp"

namespace s4ecg {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(numel(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

void Parameter::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor(value.shape);
  std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

}  // namespace s4ecg
