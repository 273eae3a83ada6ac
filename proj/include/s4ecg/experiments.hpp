#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "s4ecg/data.hpp"
#include "s4ecg/eval.hpp"
#include "s4ecg/model.hpp"

namespace s4ecg::experiments {

const char* version();

// Everything a command needs. Defaults are the desk-scale settings.
struct RunConfig {
  data::SyntheticConfig data;
  // Imported data instead of synthetic: ECGR1 path, "{rate}" is replaced by the
  // rate in Hz (%g) so one file per rate can be supplied. Sidecar likewise;
  // defaults to the binary path with its extension replaced by ".tsv".
  std::string dataset_path;
  std::string sidecar_path;
  std::size_t min_count = 10;
  std::size_t k_folds = 10;

  model::ModelConfig model;  // in_channels, n_labels and sample_rate_hz are filled from the data
  model::TrainHyper train;

  std::size_t n_iter = 200;
  double conf = 0.95;
  double threshold = 0.6;
  std::size_t n_crops = 10;

  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<double> train_rates = {100.0};
  std::vector<double> test_rates = {100.0, 200.0, 500.0};
  std::vector<double> windows_s = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};

  RunConfig();

  // "section.key" = "value"; throws ArgumentError on unknown keys or bad values.
  void set(const std::string& dotted_key, const std::string& value);
  void validate() const;
  nlohmann::json to_json() const;
};

// Flat INI-style file: [section] headers, key = value lines, '#'/';' comments.
RunConfig load_config(const std::string& path, RunConfig base = {});

std::vector<double> parse_double_list(const std::string& text);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);  // "0,1,2" or "0-4"

// Label/fold view of a dataset plus on-demand rendering at any rate.
class Dataset {
 public:
  explicit Dataset(const RunConfig& config);

  const data::LabelVocabulary& vocab() const { return vocab_; }
  const data::FoldAssignment& folds() const { return folds_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t channels() const { return channels_; }
  double native_rate() const { return native_rate_; }

  // Records at `rate_hz` (rendered or loaded), labels restricted to the vocabulary.
  data::RecordSet records(double rate_hz, const std::vector<std::size_t>& indices) const;

 private:
  std::string path_for(const std::string& pattern, double rate_hz) const;

  RunConfig config_;
  std::optional<data::SyntheticGenerator> generator_;
  std::vector<std::string> ids_;
  std::vector<std::vector<std::string>> labels_;
  data::LabelVocabulary vocab_;
  data::FoldAssignment folds_;
  std::size_t channels_ = 0;
  double native_rate_ = 0.0;
};

model::ModelConfig model_config_for(const RunConfig& config, const Dataset& dataset, double rate_hz);

struct TrainedRun {
  model::Model model;
  model::TrainResult trace;
};

// Builds and trains one model on the training folds at `rate_hz`.
TrainedRun train_run(const RunConfig& config, const Dataset& dataset, double rate_hz, std::uint64_t seed,
                     std::ostream* log = nullptr);

// Test-fold predictions with TTA; the model must already expect `records`' rate.
eval::PredictionSet evaluate_run(model::Model& model, const data::RecordSet& records, const data::LabelVocabulary& vocab,
                                 std::size_t n_crops);

struct CellStats {
  std::vector<double> values;  // one per seed
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single seed
};
CellStats cell_stats(std::vector<double> values);

struct RateCell {
  double train_rate = 0.0, test_rate = 0.0;
  CellStats auc;
};

std::vector<RateCell> rate_matrix(const RunConfig& config, std::ostream* log = nullptr);
void write_rate_matrix_csv(std::ostream& out, const std::vector<RateCell>& cells, const std::vector<std::uint64_t>& seeds);

struct WindowRow {
  double window_s = 0.0;
  CellStats auc;
};

std::vector<WindowRow> window_sweep(const RunConfig& config, std::ostream* log = nullptr);
void write_window_sweep_csv(std::ostream& out, const std::vector<WindowRow>& rows, const std::vector<std::uint64_t>& seeds);

// Pair-level detail for compare: label,run_a,run_b,delta,verdict.
void write_pair_detail_csv(std::ostream& out, const eval::ComparisonVerdict& verdict);

// Writes <dir>/manifest.json: command, version, config snapshot, seeds, outputs.
void write_manifest(const std::string& dir, const std::string& command, const RunConfig& config,
                    const std::vector<std::string>& outputs);

std::string format_number(double v);  // %.10g, the format of every emitted CSV number

}  // namespace s4ecg::experiments
