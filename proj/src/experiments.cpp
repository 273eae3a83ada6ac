#include "s4ecg/experiments.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "s4ecg/errors.hpp"

#ifndef S4ECG_VERSION
#define S4ECG_VERSION "0.0.0"
#endif

namespace s4ecg::experiments {

const char* version() { return S4ECG_VERSION; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::logic_error&) {
  }
  throw ArgumentError("config " + key + ": '" + v + "' is not a number");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ArgumentError("config " + key + ": '" + v + "' is not a nonnegative integer");
  }
  try {
    return std::stoull(v);
  } catch (const std::out_of_range&) {
    throw ArgumentError("config " + key + ": '" + v + "' is out of range");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ArgumentError("config " + key + ": '" + v + "' is not a boolean");
}

data::LabelKind to_kind(const std::string& v) {
  if (v == "amplitude") return data::LabelKind::kAmplitude;
  if (v == "extra" || v == "extra_wave") return data::LabelKind::kExtraWave;
  if (v == "width") return data::LabelKind::kWidth;
  if (v == "rhythm") return data::LabelKind::kRhythm;
  throw ArgumentError("config data.kinds: unknown label kind '" + v + "'");
}

const char* kind_name(data::LabelKind k) {
  switch (k) {
    case data::LabelKind::kAmplitude: return "amplitude";
    case data::LabelKind::kExtraWave: return "extra";
    case data::LabelKind::kWidth: return "width";
    default: return "rhythm";
  }
}

std::string sidecar_default(const std::string& binary_pattern) {
  std::filesystem::path p(binary_pattern);
  p.replace_extension(".tsv");
  return p.string();
}

}  // namespace

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double("list", item));
  if (out.empty()) throw ArgumentError("empty list '" + text + "'");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(text)) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto lo = to_uint("seed", trim(item.substr(0, dash)));
      const auto hi = to_uint("seed", trim(item.substr(dash + 1)));
      if (hi < lo) throw ArgumentError("seed range '" + item + "' is descending");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      out.push_back(to_uint("seed", item));
    }
  }
  if (out.empty()) throw ArgumentError("seed list is empty");
  return out;
}

RunConfig::RunConfig() {
  train.epochs = 10;  // desk scale; the full protocol uses 50
}

void RunConfig::set(const std::string& dotted, const std::string& raw) {
  const std::string value = trim(raw);
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ArgumentError("config key '" + dotted + "' needs a section, e.g. model.width");
  const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
  auto is = [&](const char* s, const char* k) { return section == s && key == k; };

  if (is("data", "n_records")) data.n_records = to_uint(dotted, value);
  else if (is("data", "channels")) data.channels = to_uint(dotted, value);
  else if (is("data", "rate_hz")) data.rate_hz = to_double(dotted, value);
  else if (is("data", "duration_s")) data.duration_s = to_double(dotted, value);
  else if (is("data", "n_labels")) data.n_labels = to_uint(dotted, value);
  else if (is("data", "seed")) data.seed = to_uint(dotted, value);
  else if (is("data", "noise")) data.noise = to_double(dotted, value);
  else if (is("data", "beat_period_s")) data.beat_period_s = to_double(dotted, value);
  else if (is("data", "rhythm_offset")) data.rhythm_offset = to_double(dotted, value);
  else if (is("data", "cooccurrence")) data.cooccurrence = to_double(dotted, value);
  else if (is("data", "priors")) data.priors = parse_double_list(value);
  else if (is("data", "kinds")) {
    data.kinds.clear();
    for (const auto& k : split_list(value)) data.kinds.push_back(to_kind(k));
  } else if (is("data", "path")) dataset_path = value;
  else if (is("data", "sidecar")) sidecar_path = value;
  else if (is("data", "min_count")) min_count = to_uint(dotted, value);
  else if (is("data", "k_folds")) k_folds = to_uint(dotted, value);
  else if (is("model", "width")) model.width = to_uint(dotted, value);
  else if (is("model", "n_blocks")) model.n_blocks = to_uint(dotted, value);
  else if (is("model", "state_dim")) model.state_dim = to_uint(dotted, value);
  else if (is("model", "dropout_p")) model.dropout_p = to_double(dotted, value);
  else if (is("model", "input_window_s")) model.input_window_s = to_double(dotted, value);
  else if (is("model", "gelu")) {
    if (value != "exact" && value != "tanh") throw ArgumentError("config model.gelu: expected exact or tanh");
    model.gelu = value == "exact" ? ops::GeluForm::kExact : ops::GeluForm::kTanh;
  } else if (is("train", "batch")) train.batch = to_uint(dotted, value);
  else if (is("train", "epochs")) train.epochs = to_uint(dotted, value);
  else if (is("train", "lr")) train.optim.lr = to_double(dotted, value);
  else if (is("train", "weight_decay")) train.optim.weight_decay = to_double(dotted, value);
  else if (is("eval", "n_iter")) n_iter = to_uint(dotted, value);
  else if (is("eval", "conf")) conf = to_double(dotted, value);
  else if (is("eval", "threshold")) threshold = to_double(dotted, value);
  else if (is("eval", "n_crops")) n_crops = to_uint(dotted, value);
  else if (is("experiment", "seeds")) seeds = parse_seed_list(value);
  else if (is("experiment", "train_rates")) train_rates = parse_double_list(value);
  else if (is("experiment", "test_rates")) test_rates = parse_double_list(value);
  else if (is("experiment", "windows_s")) windows_s = parse_double_list(value);
  else if (is("experiment", "paired")) {
    if (!to_bool(dotted, value)) throw ArgumentError("config experiment.paired: only paired resampling is supported");
  } else {
    throw ArgumentError("unknown config key '" + dotted + "'");
  }
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ArgumentError("at least one seed is required");
  if (k_folds < 3) throw ArgumentError("k_folds must be at least 3");
  if (n_crops == 0) throw ArgumentError("n_crops must be positive");
  if (n_iter == 0) throw ArgumentError("n_iter must be positive");
  if (!(threshold > 0.4 && threshold <= 1.0)) throw ArgumentError("threshold must lie in (0.4, 1]");
  if (!(conf > 0.0 && conf < 1.0)) throw ArgumentError("conf must lie in (0, 1)");
  if (train.batch == 0) throw ArgumentError("batch must be positive");
  if (!(train.optim.lr >= 0.0)) throw ArgumentError("lr must be nonnegative");
  for (const auto* list : {&train_rates, &test_rates, &windows_s}) {
    if (list->empty()) throw ArgumentError("rate and window lists must not be empty");
    for (double v : *list) {
      if (!(v > 0.0)) throw ArgumentError("rates and windows must be positive");
    }
  }
  model::ModelConfig m = model;
  m.in_channels = std::max<std::size_t>(m.in_channels, 1);
  m.n_labels = std::max<std::size_t>(m.n_labels, 1);
  m.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : data.kinds) kinds.push_back(kind_name(k));
  return {
      {"data",
       {{"n_records", data.n_records}, {"channels", data.channels}, {"rate_hz", data.rate_hz},
        {"duration_s", data.duration_s}, {"n_labels", data.n_labels}, {"seed", data.seed}, {"noise", data.noise},
        {"beat_period_s", data.beat_period_s}, {"rhythm_offset", data.rhythm_offset},
        {"cooccurrence", data.cooccurrence}, {"priors", data.priors}, {"kinds", kinds}, {"path", dataset_path},
        {"sidecar", sidecar_path}, {"min_count", min_count}, {"k_folds", k_folds}}},
      {"model", model.to_json()},
      {"train",
       {{"batch", train.batch}, {"epochs", train.epochs}, {"lr", train.optim.lr},
        {"weight_decay", train.optim.weight_decay}}},
      {"eval", {{"n_iter", n_iter}, {"conf", conf}, {"threshold", threshold}, {"n_crops", n_crops}}},
      {"experiment",
       {{"seeds", seeds}, {"train_rates", train_rates}, {"test_rates", test_rates}, {"windows_s", windows_s}}},
  };
}

RunConfig load_config(const std::string& path, RunConfig base) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ArgumentError("config '" + path + "': " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ArgumentError("config '" + path + "': key '" + section + "' outside a [section]");
    for (const auto& [key, value] : body) base.set(section + "." + key, value.data());
  }
  return base;
}

// ---- dataset -----------------------------------------------------------------

std::string Dataset::path_for(const std::string& pattern, double rate_hz) const {
  std::string out = pattern;
  const auto pos = out.find("{rate}");
  if (pos != std::string::npos) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", rate_hz);
    out.replace(pos, 6, buf);
  }
  return out;
}

Dataset::Dataset(const RunConfig& config) : config_(config) {
  data::RecordSet label_view;
  if (config.dataset_path.empty()) {
    generator_.emplace(config.data);
    channels_ = config.data.channels;
    native_rate_ = config.data.rate_hz;
    for (std::size_t i = 0; i < config.data.n_records; ++i) {
      const data::RecordSpec spec = generator_->spec(i);
      data::Record r;
      r.id = "syn" + std::to_string(i);
      for (std::size_t k = 0; k < spec.positive.size(); ++k) {
        if (spec.positive[k]) r.labels.push_back(data::label_name(k));
      }
      label_view.push_back(std::move(r));
    }
  } else {
    native_rate_ = config.data.rate_hz;
    const std::string bin = path_for(config.dataset_path, native_rate_);
    const std::string side =
        path_for(config.sidecar_path.empty() ? sidecar_default(config.dataset_path) : config.sidecar_path, native_rate_);
    if (!std::filesystem::exists(bin)) throw ArgumentError("dataset file '" + bin + "' does not exist");
    data::RecordSet loaded = data::read_dataset(bin, side);
    if (loaded.empty()) throw ArgumentError("dataset '" + bin + "' is empty");
    channels_ = loaded.front().channels;
    for (auto& r : loaded) {
      if (r.channels != channels_) throw ArgumentError("dataset records differ in channel count");
      data::Record v;
      v.id = r.id;
      v.labels = r.labels;
      label_view.push_back(std::move(v));
    }
  }
  for (const auto& r : label_view) {
    ids_.push_back(r.id);
    labels_.push_back(r.labels);
  }
  vocab_ = data::filter_rare_labels(label_view, config.min_count);
  folds_ = data::stratified_folds(label_view, vocab_, config.k_folds, config.data.seed);
}

data::RecordSet Dataset::records(double rate_hz, const std::vector<std::size_t>& indices) const {
  const std::set<std::string> keep(vocab_.labels.begin(), vocab_.labels.end());
  data::RecordSet out;
  out.reserve(indices.size());
  if (generator_) {
    for (std::size_t i : indices) out.push_back(generator_->render(i, rate_hz));
  } else {
    const std::string bin = path_for(config_.dataset_path, rate_hz);
    const std::string side =
        path_for(config_.sidecar_path.empty() ? sidecar_default(config_.dataset_path) : config_.sidecar_path, rate_hz);
    if (!std::filesystem::exists(bin)) {
      throw ArgumentError("missing rate variant: no dataset file '" + bin + "' for " + format_number(rate_hz) + " Hz");
    }
    data::RecordSet all = data::read_dataset(bin, side);
    if (all.size() != ids_.size()) throw ArgumentError("dataset '" + bin + "' lists a different record set");
    for (std::size_t i : indices) {
      if (all[i].id != ids_[i]) throw ArgumentError("dataset '" + bin + "' lists records in a different order");
      if (all[i].rate_hz != rate_hz) {
        throw ArgumentError("dataset '" + bin + "': record '" + all[i].id + "' is not sampled at " +
                            format_number(rate_hz) + " Hz");
      }
      out.push_back(std::move(all[i]));
    }
  }
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j].id = ids_[indices[j]];
    std::erase_if(out[j].labels, [&](const std::string& l) { return !keep.contains(l); });
  }
  return out;
}

model::ModelConfig model_config_for(const RunConfig& config, const Dataset& dataset, double rate_hz) {
  model::ModelConfig m = config.model;
  m.in_channels = dataset.channels();
  m.n_labels = dataset.vocab().size();
  m.sample_rate_hz = rate_hz;
  return m;
}

TrainedRun train_run(const RunConfig& config, const Dataset& dataset, double rate_hz, std::uint64_t seed,
                     std::ostream* log) {
  const data::RecordSet train_set = dataset.records(rate_hz, dataset.folds().train_indices());
  TrainedRun run{model::build_model(model_config_for(config, dataset, rate_hz), seed), {}};
  model::TrainHyper hyper = config.train;
  hyper.seed = stream_seed(seed, 0x5452);
  model::EpochHook hook;
  if (log) {
    hook = [&](std::size_t epoch, double loss) {
      *log << "seed " << seed << " rate " << format_number(rate_hz) << " Hz window "
           << format_number(config.model.input_window_s) << " s: epoch " << epoch + 1 << "/" << hyper.epochs
           << " loss " << format_number(loss) << std::endl;
    };
  }
  run.trace = model::train(run.model, train_set, dataset.vocab(), hyper, hook);
  return run;
}

eval::PredictionSet evaluate_run(model::Model& model, const data::RecordSet& records, const data::LabelVocabulary& vocab,
                                 std::size_t n_crops) {
  return eval::predict_records(model, records, vocab, n_crops);
}

CellStats cell_stats(std::vector<double> values) {
  CellStats s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / static_cast<double>(s.values.size());
  if (s.values.size() > 1) {
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
  }
  return s;
}

std::vector<RateCell> rate_matrix(const RunConfig& config, std::ostream* log) {
  config.validate();
  const Dataset dataset(config);
  const auto test_idx = dataset.folds().test_indices();
  std::map<double, data::RecordSet> test_sets;
  for (double r : config.test_rates) test_sets.emplace(r, dataset.records(r, test_idx));

  std::vector<RateCell> cells;
  for (double train_rate : config.train_rates) {
    std::map<double, std::vector<double>> per_test;
    for (std::uint64_t seed : config.seeds) {
      TrainedRun run = train_run(config, dataset, train_rate, seed, log);
      for (double test_rate : config.test_rates) {
        // Only the SSM step sizes change; nothing is resampled.
        model::Model m = run.model.rescaled(train_rate, test_rate);
        const auto preds = evaluate_run(m, test_sets.at(test_rate), dataset.vocab(), config.n_crops);
        const double auc = eval::macro_auc(preds).value;
        per_test[test_rate].push_back(auc);
        if (log) {
          *log << "seed " << seed << " train " << format_number(train_rate) << " Hz test " << format_number(test_rate)
               << " Hz: macro AUC " << format_number(auc) << std::endl;
        }
      }
    }
    for (double test_rate : config.test_rates) cells.push_back({train_rate, test_rate, cell_stats(per_test[test_rate])});
  }
  return cells;
}

void write_rate_matrix_csv(std::ostream& out, const std::vector<RateCell>& cells, const std::vector<std::uint64_t>& seeds) {
  out << "train_rate_hz,test_rate_hz,mean_macro_auc,sd_macro_auc,n_seeds";
  for (auto s : seeds) out << ",auc_seed" << s;
  out << '\n';
  for (const auto& c : cells) {
    out << format_number(c.train_rate) << ',' << format_number(c.test_rate) << ',' << format_number(c.auc.mean) << ','
        << format_number(c.auc.sd) << ',' << c.auc.values.size();
    for (double v : c.auc.values) out << ',' << format_number(v);
    out << '\n';
  }
}

std::vector<WindowRow> window_sweep(const RunConfig& config, std::ostream* log) {
  config.validate();
  const Dataset dataset(config);
  const double rate = dataset.native_rate();
  const data::RecordSet test_set = dataset.records(rate, dataset.folds().test_indices());
  std::vector<WindowRow> rows;
  for (double w : config.windows_s) {
    RunConfig cw = config;
    cw.model.input_window_s = w;
    std::vector<double> aucs;
    for (std::uint64_t seed : config.seeds) {
      TrainedRun run = train_run(cw, dataset, rate, seed, log);
      const double auc = eval::macro_auc(evaluate_run(run.model, test_set, dataset.vocab(), config.n_crops)).value;
      aucs.push_back(auc);
      if (log) *log << "seed " << seed << " window " << format_number(w) << " s: macro AUC " << format_number(auc) << std::endl;
    }
    rows.push_back({w, cell_stats(std::move(aucs))});
  }
  return rows;
}

void write_window_sweep_csv(std::ostream& out, const std::vector<WindowRow>& rows, const std::vector<std::uint64_t>& seeds) {
  out << "window_s,mean_macro_auc,sd_macro_auc,n_seeds";
  for (auto s : seeds) out << ",auc_seed" << s;
  out << '\n';
  for (const auto& r : rows) {
    out << format_number(r.window_s) << ',' << format_number(r.auc.mean) << ',' << format_number(r.auc.sd) << ','
        << r.auc.values.size();
    for (double v : r.auc.values) out << ',' << format_number(v);
    out << '\n';
  }
}

void write_pair_detail_csv(std::ostream& out, const eval::ComparisonVerdict& v) {
  out << "label,run_a,run_b,delta,verdict\n";
  auto emit = [&](const std::string& name, const eval::VerdictSummary& s) {
    for (std::size_t i = 0; i < v.runs_a; ++i)
      for (std::size_t j = 0; j < v.runs_b; ++j) {
        const std::size_t k = i * v.runs_b + j;
        out << name << ',' << i << ',' << j << ',' << format_number(s.deltas[k]) << ','
            << eval::significance_name(s.pairs[k]) << '\n';
      }
  };
  emit("macro", v.overall);
  for (std::size_t l = 0; l < v.per_label.size(); ++l) {
    emit(l < v.label_names.size() ? v.label_names[l] : "label" + std::to_string(l), v.per_label[l]);
  }
}

void write_manifest(const std::string& dir, const std::string& command, const RunConfig& config,
                    const std::vector<std::string>& outputs) {
  const nlohmann::json m = {{"command", command},      {"version", version()}, {"seeds", config.seeds},
                            {"config", config.to_json()}, {"outputs", outputs}};
  std::ofstream out(std::filesystem::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest in '" + dir + "'");
  out << m.dump(2) << '\n';
}

}  // namespace s4ecg::experiments
