#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "s4ecg/random.hpp"
#include "s4ecg/tensor.hpp"

namespace s4ecg {

class Graph;

// Handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run tape. Nodes are appended in evaluation order, so the node
// list is topologically sorted by construction and backward() is a reverse
// sweep. One Graph per forward pass; it is not shared across threads.
class Graph {
 public:
  // Receives the graph and the id of the node whose gradient is ready.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& param);

  // Appends an op result. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  // Gradient accumulator of node `id`, allocated (zeroed) on first access.
  std::vector<double>& grad(std::size_t id);
  const std::vector<double>* grad_if_any(std::size_t id) const;

  friend void backward(Graph& graph, Var loss);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Reverse sweep from a scalar loss. Parameter gradients are *added* to
// Parameter::grad so several passes accumulate; call zero_grad() between steps.
void backward(Graph& graph, Var loss);

namespace ops {

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);

// x[B, Cin, L] (*) w[Cout, Cin, K] -> [B, Cout, Lout], cross-correlation.
Var conv1d(Var input, Var weight, std::size_t stride, std::size_t padding);

// Adds bias[C] along dimension 1 of x[B, C, ...].
Var add_channel_bias(Var x, Var bias);

// Multiplies x[B, C, ...] by scale[C] along dimension 1.
Var channel_scale(Var x, Var scale);

// Causal linear convolution along the last axis via length-2L real FFTs:
// out[t] = sum_{s<=t} kernel[s] * signal[t-s]. Kernel rows broadcast over
// leading signal rows (kernel [C, L] against signal [B, C, L]).
Var fft_causal_convolve(Var signal, Var kernel);

enum class GeluForm { kExact, kTanh };
Var gelu(Var x, GeluForm form = GeluForm::kExact);

// Normalizes x[B, C, L] over C independently at every (b, t).
Var layer_norm_channels(Var x, Var gamma, Var beta, double eps = 1e-5);

// Pointwise linear map across channels: x[B, Cin, L] -> [B, Cout, L].
Var channel_mix(Var x, Var weight, Var bias);

// Inverted dropout; identity when p == 0.
Var dropout(Var x, double p, Rng& rng);

// Mean over the last axis: [B, C, L] -> [B, C].
Var mean_time(Var x);

// x[B, In] -> [B, Out].
Var linear(Var x, Var weight, Var bias);

// Mean binary cross-entropy with logits over all entries.
Var bce_with_logits(Var logits, const Tensor& targets);

}  // namespace ops

// Plain-value helpers shared by ops and tests.
double gelu_value(double x, ops::GeluForm form = ops::GeluForm::kExact);
double sigmoid(double x);

}  // namespace s4ecg
