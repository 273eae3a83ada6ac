#include "s4ecg/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "s4ecg/checkpoint.hpp"
#include "s4ecg/errors.hpp"

namespace s4ecg::model {

namespace {

constexpr std::size_t kEncoderKernel = 3;

// Stream ids for parameter initialization; block i uses kBlockStream + i.
constexpr std::uint64_t kEncoderStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kBlockStream = 100;

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data) v = u(rng);
}

const char* gelu_name(ops::GeluForm f) { return f == ops::GeluForm::kExact ? "exact" : "tanh"; }

}  // namespace

void ModelConfig::validate() const {
  if (in_channels == 0) throw ArgumentError("model: in_channels must be positive");
  if (width == 0) throw ArgumentError("model: width must be positive");
  if (n_blocks == 0) throw ArgumentError("model: n_blocks must be at least 1");
  if (state_dim == 0 || state_dim % 2 != 0) throw ArgumentError("model: state_dim must be a positive even number");
  if (n_labels == 0) throw ArgumentError("model: n_labels must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ArgumentError("model: dropout_p must lie in [0, 1)");
  if (!(input_window_s > 0.0)) throw ArgumentError("model: input window must be positive");
  if (!(sample_rate_hz > 0.0)) throw ArgumentError("model: sample rate must be positive");
}

std::size_t ModelConfig::window_samples() const { return data::window_samples(input_window_s, sample_rate_hz); }

nlohmann::json ModelConfig::to_json() const {
  return {{"in_channels", in_channels}, {"width", width},       {"n_blocks", n_blocks},
          {"state_dim", state_dim},     {"n_labels", n_labels}, {"dropout_p", dropout_p},
          {"input_window_s", input_window_s}, {"sample_rate_hz", sample_rate_hz}, {"gelu", gelu_name(gelu)},
          {"pooling", "mean"}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.n_blocks = j.at("n_blocks").get<std::size_t>();
    c.state_dim = j.at("state_dim").get<std::size_t>();
    c.n_labels = j.at("n_labels").get<std::size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.input_window_s = j.at("input_window_s").get<double>();
    c.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    const std::string g = j.value("gelu", "exact");
    if (g != "exact" && g != "tanh") throw FormatError("model config: unknown gelu form '" + g + "'");
    c.gelu = g == "exact" ? ops::GeluForm::kExact : ops::GeluForm::kTanh;
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t h = c.width, m = c.state_dim / 2;
  const std::size_t encoder = h * c.in_channels * kEncoderKernel + h;
  const std::size_t block = 2 * h          // layer norm
                            + 6 * h * m    // Re/Im of a, b, c
                            + 2 * h        // log step, feedthrough
                            + h * h + h;   // pointwise mix
  const std::size_t head = c.n_labels * h + c.n_labels;
  return encoder + c.n_blocks * block + head;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  rate_hz_ = config_.sample_rate_hz;
  const std::size_t h = config_.width, m = config_.state_dim / 2;
  enc_w = Parameter("encoder.weight", Tensor({h, config_.in_channels, kEncoderKernel}));
  enc_b = Parameter("encoder.bias", Tensor({h}));
  blocks.resize(config_.n_blocks);
  for (std::size_t i = 0; i < config_.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    S4Block& b = blocks[i];
    b.norm_gamma = Parameter(p + "norm.gamma", Tensor({h}, 1.0));
    b.norm_beta = Parameter(p + "norm.beta", Tensor({h}));
    b.re_raw = Parameter(p + "ssm.re_raw", Tensor({h, m}));
    b.im = Parameter(p + "ssm.im", Tensor({h, m}));
    b.b_re = Parameter(p + "ssm.b_re", Tensor({h, m}));
    b.b_im = Parameter(p + "ssm.b_im", Tensor({h, m}));
    b.c_re = Parameter(p + "ssm.c_re", Tensor({h, m}));
    b.c_im = Parameter(p + "ssm.c_im", Tensor({h, m}));
    b.log_delta = Parameter(p + "ssm.log_delta", Tensor({h}));
    b.d = Parameter(p + "ssm.d", Tensor({h}));
    b.mix_w = Parameter(p + "mix.weight", Tensor({h, h}));
    b.mix_b = Parameter(p + "mix.bias", Tensor({h}));
  }
  head_w = Parameter("head.weight", Tensor({config_.n_labels, h}));
  head_b = Parameter("head.bias", Tensor({config_.n_labels}));
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = {&enc_w, &enc_b};
  for (S4Block& b : blocks) {
    for (Parameter* p : {&b.norm_gamma, &b.norm_beta, &b.re_raw, &b.im, &b.b_re, &b.b_im, &b.c_re, &b.c_im,
                         &b.log_delta, &b.d, &b.mix_w, &b.mix_b}) {
      out.push_back(p);
    }
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

Var Model::forward(Graph& g, Var x, bool training, Rng* rng) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("forward: input must be [batch, channels, length], got " + shape_string(s));
  if (s[1] != config_.in_channels) {
    throw DimensionError("forward: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                         std::to_string(s[1]));
  }
  if (s[2] < kEncoderKernel) throw ArgumentError("forward: input shorter than the encoder kernel");
  const bool use_dropout = training && config_.dropout_p > 0.0;
  if (use_dropout && rng == nullptr) throw ArgumentError("forward: training with dropout needs an rng");
  const std::size_t length = s[2];

  Var h = ops::add_channel_bias(ops::conv1d(x, g.parameter(enc_w), 1, 1), g.parameter(enc_b));
  for (S4Block& b : blocks) {
    Var u = ops::layer_norm_channels(h, g.parameter(b.norm_gamma), g.parameter(b.norm_beta));
    const ssm::SsmVars vars{g.parameter(b.re_raw), g.parameter(b.im),   g.parameter(b.b_re),     g.parameter(b.b_im),
                            g.parameter(b.c_re),   g.parameter(b.c_im), g.parameter(b.log_delta)};
    Var kernel = ssm::kernel_op(vars, rate_log_shift_, length);
    Var y = ops::add(ops::fft_causal_convolve(u, kernel), ops::channel_scale(u, g.parameter(b.d)));
    y = ops::channel_mix(ops::gelu(y, config_.gelu), g.parameter(b.mix_w), g.parameter(b.mix_b));
    if (use_dropout) y = ops::dropout(y, config_.dropout_p, *rng);
    h = ops::add(h, y);
  }
  return ops::linear(ops::mean_time(h), g.parameter(head_w), g.parameter(head_b));
}

Tensor Model::predict_logits(const Tensor& x) {
  Graph g(false);
  return forward(g, g.constant(x), false).value();
}

void Model::retarget(double rate_hz) {
  rate_log_shift_ += ssm::rate_shift(rate_hz_, rate_hz);
  rate_hz_ = rate_hz;
}

Model Model::rescaled(double rate_train_hz, double rate_test_hz) const {
  Model out = *this;
  out.rate_log_shift_ += ssm::rate_shift(rate_train_hz, rate_test_hz);
  out.rate_hz_ = rate_test_hz;
  return out;
}

ssm::SsmParams Model::block_ssm(std::size_t i) const {
  const S4Block& b = blocks.at(i);
  ssm::SsmParams p;
  p.n = config_.state_dim;
  p.h = config_.width;
  const std::size_t total = p.h * p.modes();
  for (std::size_t k = 0; k < total; ++k) {
    p.a_diag.emplace_back(-ssm::softplus(b.re_raw.value[k]), b.im.value[k]);
    p.b.emplace_back(b.b_re.value[k], b.b_im.value[k]);
    p.c.emplace_back(b.c_re.value[k], b.c_im.value[k]);
  }
  p.d = b.d.value.data;
  p.log_delta = b.log_delta.value.data;
  p.rate_log_shift = rate_log_shift_;
  return p;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  Model m(config);
  const std::size_t h = config.width;

  Rng enc_rng = make_rng(seed, kEncoderStream);
  const double enc_bound = 1.0 / std::sqrt(static_cast<double>(config.in_channels * kEncoderKernel));
  fill_uniform(m.enc_w.value, enc_bound, enc_rng);
  fill_uniform(m.enc_b.value, enc_bound, enc_rng);

  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    S4Block& b = m.blocks[i];
    const std::uint64_t block_seed = stream_seed(seed, kBlockStream + i);
    const ssm::SsmParams p =
        ssm::init_diagonal_from_hippo(static_cast<int>(config.state_dim), static_cast<int>(h), block_seed);
    for (std::size_t k = 0; k < p.a_diag.size(); ++k) {
      b.re_raw.value[k] = ssm::softplus_inverse(-p.a_diag[k].real());
      b.im.value[k] = p.a_diag[k].imag();
      b.b_re.value[k] = p.b[k].real();
      b.b_im.value[k] = p.b[k].imag();
      b.c_re.value[k] = p.c[k].real();
      b.c_im.value[k] = p.c[k].imag();
    }
    b.log_delta.value.data = p.log_delta;
    b.d.value.data = p.d;
    Rng mix_rng = make_rng(block_seed, 1);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    fill_uniform(b.mix_w.value, bound, mix_rng);
    fill_uniform(b.mix_b.value, bound, mix_rng);
  }

  Rng head_rng = make_rng(seed, kHeadStream);
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(h));
  fill_uniform(m.head_w.value, head_bound, head_rng);
  fill_uniform(m.head_b.value, head_bound, head_rng);
  return m;
}

void save_checkpoint(const Model& model, const std::string& path) {
  checkpoint::Container c;
  c.kind = "model";
  c.meta = {{"config", model.config().to_json()},
            {"sample_rate_hz", model.sample_rate_hz()},
            {"rate_log_shift", model.rate_log_shift()}};
  for (const Parameter* p : model.parameters()) c.sections.push_back({p->name, p->value.shape, p->value.data});
  checkpoint::write(c, path);
}

Model load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
  const checkpoint::Container c = checkpoint::read(path);
  if (c.kind != "model") throw FormatError("'" + path + "' holds a '" + c.kind + "' checkpoint, not a model");
  if (!c.meta.contains("config")) throw FormatError("'" + path + "': model checkpoint without config");
  const ModelConfig stored = ModelConfig::from_json(c.meta.at("config"));
  if (expected && !(*expected == stored)) {
    throw ShapeError("'" + path + "': checkpoint config " + stored.to_json().dump() + " does not match expected " +
                     expected->to_json().dump());
  }
  Model m(stored);
  for (Parameter* p : m.parameters()) {
    const checkpoint::Section* s = nullptr;
    for (const auto& sec : c.sections) {
      if (sec.name == p->name) s = &sec;
    }
    if (s == nullptr) throw FormatError("'" + path + "': missing section '" + p->name + "'");
    if (s->shape != p->value.shape) {
      throw ShapeError("'" + path + "': section '" + p->name + "' has shape " + shape_string(s->shape) +
                       ", model expects " + shape_string(p->value.shape));
    }
    p->value.data = s->values;
  }
  try {
    m.rate_hz_ = c.meta.at("sample_rate_hz").get<double>();
    m.rate_log_shift_ = c.meta.at("rate_log_shift").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return m;
}

// ---- training ---------------------------------------------------------------

Tensor stack_crops(const std::vector<data::Crop>& crops, std::size_t channels) {
  if (crops.empty()) throw ArgumentError("stack_crops: empty batch");
  const std::size_t w = crops.front().window;
  Tensor out({crops.size(), channels, w});
  for (std::size_t b = 0; b < crops.size(); ++b) {
    if (crops[b].window != w || crops[b].data.size() != channels * w) {
      throw DimensionError("stack_crops: crops differ in shape");
    }
    std::copy(crops[b].data.begin(), crops[b].data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * channels * w));
  }
  return out;
}

TrainResult train(Model& model, const data::RecordSet& records, const data::LabelVocabulary& vocab,
                  const TrainHyper& hyper, const EpochHook& hook) {
  const ModelConfig& cfg = model.config();
  if (records.empty()) throw ArgumentError("train: no records");
  if (hyper.batch == 0) throw ArgumentError("train: batch size must be positive");
  if (vocab.size() != cfg.n_labels) {
    throw DimensionError("train: vocabulary has " + std::to_string(vocab.size()) + " labels, model expects " +
                         std::to_string(cfg.n_labels));
  }
  for (const auto& r : records) {
    if (r.channels != cfg.in_channels) throw DimensionError("train: record '" + r.id + "' channel count mismatch");
    if (r.rate_hz != model.sample_rate_hz()) {
      throw ArgumentError("train: record '" + r.id + "' is sampled at a rate the model is not calibrated for");
    }
  }

  Rng order_rng = make_rng(hyper.seed, 1);
  Rng crop_rng = make_rng(hyper.seed, 2);
  Rng dropout_rng = make_rng(hyper.seed, 3);
  AdamW opt(hyper.optim);
  std::vector<Parameter*> params = model.parameters();

  TrainResult result;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      std::vector<data::Crop> crops;
      Tensor targets({end - start, cfg.n_labels});
      for (std::size_t i = start; i < end; ++i) {
        const data::Record& r = records[order[i]];
        crops.push_back(data::random_crop(r, cfg.input_window_s, crop_rng));
        const auto y = data::target_vector(r, vocab);
        std::copy(y.begin(), y.end(), targets.data.begin() + static_cast<std::ptrdiff_t>((i - start) * cfg.n_labels));
      }
      Graph g;
      Var logits = model.forward(g, g.constant(stack_crops(crops, cfg.in_channels)), true, &dropout_rng);
      Var loss = ops::bce_with_logits(logits, targets);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericalFault("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(result.steps));
      }
      for (Parameter* p : params) p->zero_grad();
      backward(g, loss);
      opt.step(params);
      loss_sum += value;
      ++batches;
      ++result.steps;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (hook) hook(epoch, result.epoch_loss.back());
  }
  return result;
}

}  // namespace s4ecg::model
