#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "s4ecg/data.hpp"
#include "s4ecg/model.hpp"

namespace s4ecg::eval {

struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<std::string> label_names;  // may be empty when unknown
  std::size_t n_labels = 0;
  std::vector<double> scores;        // [records][labels], probabilities
  std::vector<std::uint8_t> labels;  // [records][labels], 0/1

  std::size_t size() const { return ids.size(); }
  double score(std::size_t r, std::size_t l) const { return scores[r * n_labels + l]; }
  std::uint8_t label(std::size_t r, std::size_t l) const { return labels[r * n_labels + l]; }
  void validate() const;
  // Same records (ids, order), label vocabulary and ground truth.
  bool comparable_with(const PredictionSet& other) const;
};

// Mann-Whitney AUC with ties counted 1/2; nullopt when only one class is present.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MacroAuc {
  double value = 0.0;
  std::vector<std::optional<double>> per_label;
  std::vector<std::size_t> excluded;  // labels lacking a positive or a negative
};

// Unweighted mean over labels with both classes; ArgumentError if none qualify.
MacroAuc macro_auc(const PredictionSet& preds);
// Same on the multiset of rows `rows` (duplicates allowed); value is NaN when
// no label qualifies instead of throwing, for use inside resampling loops.
MacroAuc macro_auc_rows(const PredictionSet& preds, std::span<const std::size_t> rows);

// ---- test-time augmentation --------------------------------------------------

// Crop starts round(i (samples - window) / (n - 1)); all zero when samples <= window.
// n is raised above n_crops when that many windows cannot cover the record.
std::vector<std::size_t> tta_starts(std::size_t samples, std::size_t window, std::size_t n_crops);

// Mean of per-crop sigmoid outputs over n_crops overlapping windows of the
// model's input length (measured at the record's own rate).
std::vector<double> tta_predict(model::Model& model, const data::Record& record, std::size_t n_crops = 10);

PredictionSet predict_records(model::Model& model, const data::RecordSet& records, const data::LabelVocabulary& vocab,
                              std::size_t n_crops = 10);

// ---- bootstrap significance ----------------------------------------------------

enum class Significance { kABetter, kAWorse, kInconclusive };
const char* significance_name(Significance s);

struct BootstrapOptions {
  std::size_t n_iter = 1000;
  double conf = 0.95;
  std::uint64_t seed = 0;
  bool paired = true;
  std::optional<std::size_t> label;  // single-label AUC difference instead of macro AUC
};

struct BootstrapResult {
  double delta = 0.0;  // statistic on the full test set
  double lo = 0.0, hi = 0.0;
  Significance significant = Significance::kInconclusive;
  std::size_t valid_iterations = 0;  // replicates where the statistic was defined
};

// Percentile with linear interpolation between order statistics (q in [0, 1]).
double percentile(std::vector<double> values, double q);

// Iteration i draws its resample from make_rng(seed, i), so results do not
// depend on evaluation order. Unpaired mode draws B's rows after A's from the
// same stream.
BootstrapResult bootstrap_compare(const PredictionSet& a, const PredictionSet& b, const BootstrapOptions& options = {});

struct VerdictSummary {
  std::vector<Significance> pairs;  // [runs_a][runs_b]
  std::vector<double> deltas;       // observed delta per pair, same layout
  double fraction_better = 0.0;
  double fraction_worse = 0.0;
  Significance verdict = Significance::kInconclusive;
  double median_delta = 0.0;
  double sd_delta = 0.0;  // sample standard deviation across pairs
};

struct ComparisonVerdict {
  std::size_t runs_a = 0, runs_b = 0;
  VerdictSummary overall;
  std::vector<VerdictSummary> per_label;  // empty unless requested
  std::vector<std::string> label_names;
};

struct VerdictOptions {
  std::size_t n_iter = 1000;
  double threshold = 0.6;
  std::uint64_t seed = 0;
  bool per_label = false;
};

// A is better iff fraction_better >= threshold, worse iff fraction_worse >=
// threshold; if both hold (possible only for threshold <= 0.5) the verdict is
// inconclusive. Throws ArgumentError for threshold outside (0.4, 1].
Significance decide(double fraction_better, double fraction_worse, double threshold);
VerdictSummary summarize_pairs(std::vector<Significance> pairs, const std::vector<double>& deltas, double threshold);

ComparisonVerdict multi_run_verdict(const std::vector<PredictionSet>& runs_a, const std::vector<PredictionSet>& runs_b,
                                    const VerdictOptions& options = {});

// CSV: label,median_delta,sd_delta,frac_better,frac_worse,verdict; first row "macro".
void write_verdict_csv(std::ostream& out, const ComparisonVerdict& verdict);

// ---- prediction files ---------------------------------------------------------

// Optional first line "#labels<TAB>a,b,c", then one line per record:
// id<TAB>score1,score2,...<TAB>label1,label2,... (0/1).
void write_predictions(const PredictionSet& preds, const std::string& path);
PredictionSet read_predictions(const std::string& path);

}  // namespace s4ecg::eval
