#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s4ecg/random.hpp"

namespace s4ecg::data {

// One multichannel recording. Samples are stored channel-major as float32,
// matching the on-disk ECGR1 layout.
struct Record {
  std::string id;
  double rate_hz = 0.0;
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<float> signal;  // [channels][samples]
  std::vector<std::string> labels;

  double duration_s() const { return static_cast<double>(samples) / rate_hz; }
  float at(std::size_t channel, std::size_t t) const { return signal[channel * samples + t]; }
  bool has_label(const std::string& label) const;
  void validate() const;
};

using RecordSet = std::vector<Record>;

// ---- synthetic ECG-like corpus -------------------------------------------

enum class LabelKind {
  kAmplitude,  // taller QRS on a lead group
  kExtraWave,  // additional deflection after the QRS on a lead group
  kWidth,      // wider QRS on a lead group
  kRhythm,     // beats arrive in short/long pairs; same mean rate
};

struct SyntheticConfig {
  std::size_t n_records = 2000;
  std::size_t channels = 12;
  double rate_hz = 100.0;
  double duration_s = 10.0;
  std::size_t n_labels = 4;
  std::uint64_t seed = 0;
  double noise = 0.15;          // std of band-limited noise; also scales baseline wander
  double beat_period_s = 1.0;   // mean inter-beat interval
  double rhythm_offset = 0.4;   // short interval = (1 - offset) * period
  double cooccurrence = 0.0;    // probability a label reuses the record's shared uniform
  std::vector<double> priors;   // per-label prevalence; empty means 0.3 for all
  std::vector<LabelKind> kinds; // per-label effect; empty cycles amplitude/extra/width/rhythm
};

std::string label_name(std::size_t k);
LabelKind label_kind(const SyntheticConfig& config, std::size_t k);
double label_prior(const SyntheticConfig& config, std::size_t k);

// Latent description of one synthetic record; rendering is a pure function
// of (spec, rate), so a record can be sampled at any rate.
struct RecordSpec {
  std::size_t index = 0;
  double phase_s = 0.0;
  std::vector<bool> positive;  // per label
  std::uint64_t noise_seed = 0;
};

class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SyntheticConfig config);

  const SyntheticConfig& config() const { return config_; }
  RecordSpec spec(std::size_t index) const;
  // Continuous-time value of channel `channel` at time t (seconds).
  double value(const RecordSpec& spec, std::size_t channel, double t) const;
  Record render(const RecordSpec& spec, double rate_hz) const;
  Record render(std::size_t index, double rate_hz) const { return render(spec(index), rate_hz); }
  RecordSet generate() const;
  RecordSet generate(double rate_hz, const std::vector<std::size_t>& indices) const;

 private:
  SyntheticConfig config_;
  std::size_t noise_grid_points_ = 0;
};

inline RecordSet generate_synthetic(const SyntheticConfig& config) { return SyntheticGenerator(config).generate(); }

// ---- label vocabulary and folds -------------------------------------------

struct LabelVocabulary {
  std::vector<std::string> labels;
  std::vector<std::size_t> counts;

  std::size_t size() const { return labels.size(); }
  // Index of `label`, or size() if absent.
  std::size_t index_of(const std::string& label) const;
};

LabelVocabulary count_labels(const RecordSet& records);

// Drops labels occurring fewer than min_count times from the vocabulary and
// from every record. Throws ArgumentError when nothing survives.
LabelVocabulary filter_rare_labels(RecordSet& records, std::size_t min_count = 10);

struct FoldAssignment {
  std::size_t k = 10;
  std::vector<std::string> ids;
  std::vector<std::size_t> fold_of;  // parallel to ids

  std::size_t fold(const std::string& id) const;
  std::vector<std::size_t> members(std::size_t fold) const;
  std::vector<std::size_t> train_indices() const;       // folds 0 .. k-3
  std::vector<std::size_t> validation_indices() const;  // fold k-2
  std::vector<std::size_t> test_indices() const;        // fold k-1
};

// Iterative (rarest-label-first) multilabel stratification followed by a
// repair pass; every vocabulary label ends up in every fold or the call
// throws ArgumentError naming the label.
FoldAssignment stratified_folds(const RecordSet& records, const LabelVocabulary& vocab, std::size_t k,
                                std::uint64_t seed);

// ---- cropping ---------------------------------------------------------------

std::size_t window_samples(double window_s, double rate_hz);

struct Crop {
  std::vector<double> data;  // [channels][window]
  std::size_t offset = 0;
  std::size_t window = 0;
};

// Window copied from `offset`; positions past the record end are zero.
Crop crop_at(const Record& record, std::size_t offset, std::size_t window);

// Uniform start in [0, samples - window]; shorter records are right-padded.
Crop random_crop(const Record& record, double window_s, Rng& rng);

// Multi-hot target row for a record under a vocabulary.
std::vector<double> target_vector(const Record& record, const LabelVocabulary& vocab);

// ---- ECGR1 files ------------------------------------------------------------

void write_dataset(const RecordSet& records, const std::string& binary_path, const std::string& sidecar_path);
RecordSet read_dataset(const std::string& binary_path, const std::string& sidecar_path);

// Converts <dir>/<id>.f32 files (channel-major little-endian float32) listed in
// a label sidecar into records.
RecordSet import_raw(const std::string& directory, const std::string& sidecar_path, std::size_t channels);

}  // namespace s4ecg::data
