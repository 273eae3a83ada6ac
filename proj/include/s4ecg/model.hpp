#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "s4ecg/adamw.hpp"
#include "s4ecg/autodiff.hpp"
#include "s4ecg/data.hpp"
#include "s4ecg/ssm.hpp"

namespace s4ecg::model {

struct ModelConfig {
  std::size_t in_channels = 12;
  std::size_t width = 32;  // H
  std::size_t n_blocks = 4;
  std::size_t state_dim = 8;  // N
  std::size_t n_labels = 4;
  double dropout_p = 0.1;
  double input_window_s = 2.5;
  double sample_rate_hz = 100.0;  // rate the SSM steps are calibrated for
  ops::GeluForm gelu = ops::GeluForm::kExact;

  void validate() const;
  std::size_t window_samples() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Closed-form count of trainable scalars.
std::size_t expected_parameter_count(const ModelConfig& config);

struct S4Block {
  Parameter norm_gamma, norm_beta;             // [H]
  Parameter re_raw, im, b_re, b_im, c_re, c_im;  // [H, N/2]
  Parameter log_delta, d;                      // [H]
  Parameter mix_w;                             // [H, H]
  Parameter mix_b;                             // [H]
};

class Model {
 public:
  Model() = default;
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  // x: [B, in_channels, L] -> logits [B, n_labels]. `rng` drives dropout and
  // is only consulted when training is true.
  Var forward(Graph& graph, Var x, bool training, Rng* rng = nullptr);
  // Evaluation-mode forward without a gradient tape.
  Tensor predict_logits(const Tensor& x);

  // Rate the model currently expects; retargeting shifts every SSM step by
  // log(current / new) and touches nothing else.
  double sample_rate_hz() const { return rate_hz_; }
  double rate_log_shift() const { return rate_log_shift_; }
  void retarget(double rate_hz);
  Model rescaled(double rate_train_hz, double rate_test_hz) const;

  // Exports block i's SSM as a plain parameter bank (with the model-level shift).
  ssm::SsmParams block_ssm(std::size_t i) const;

  Parameter enc_w;  // [H, in_channels, 3]
  Parameter enc_b;  // [H]
  std::vector<S4Block> blocks;
  Parameter head_w;  // [n_labels, H]
  Parameter head_b;  // [n_labels]

 private:
  friend Model load_checkpoint(const std::string&, const std::optional<ModelConfig>&);
  ModelConfig config_;
  double rate_hz_ = 0.0;
  double rate_log_shift_ = 0.0;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

void save_checkpoint(const Model& model, const std::string& path);
// With `expected`, any disagreement in architecture is reported as ShapeError.
Model load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt);

// ---- training ---------------------------------------------------------------

struct TrainHyper {
  std::size_t batch = 32;
  std::size_t epochs = 50;
  AdamWHyper optim;  // lr 1e-3, weight decay 0.01
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::size_t steps = 0;
};

// Optional per-epoch hook: (epoch index, mean loss).
using EpochHook = std::function<void(std::size_t, double)>;

// One random crop per record per epoch, shuffled mini-batches, BCE-with-logits.
// Records must be sampled at the model's current rate and carry
// config.in_channels channels. Throws NumericalFault on a non-finite loss.
TrainResult train(Model& model, const data::RecordSet& records, const data::LabelVocabulary& vocab,
                  const TrainHyper& hyper, const EpochHook& hook = {});

// Stacks equally long crops into a [B, C, W] tensor.
Tensor stack_crops(const std::vector<data::Crop>& crops, std::size_t channels);

}  // namespace s4ecg::model
