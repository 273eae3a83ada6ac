#include "s4ecg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "s4ecg/errors.hpp"

namespace s4ecg::data {

bool Record::has_label(const std::string& label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

void Record::validate() const {
  if (!(rate_hz > 0.0)) throw ArgumentError("record '" + id + "': rate must be positive");
  if (channels == 0 || samples == 0) throw ArgumentError("record '" + id + "': empty signal");
  if (signal.size() != channels * samples) throw DimensionError("record '" + id + "': signal size mismatch");
}

// ---- synthetic ------------------------------------------------------------

namespace {

constexpr double kNoiseGridHz = 50.0;
constexpr double kTemplateBefore = 0.35;  // seconds of beat template before the QRS
constexpr double kTemplateAfter = 0.7;

double gauss(double x, double sigma) {
  const double z = x / sigma;
  return std::exp(-0.5 * z * z);
}

bool in_lead_group(std::size_t channel, std::size_t label, std::size_t channels) {
  return channels < 3 || (channel + label) % 3 == 0;
}

double lead_gain(std::size_t channel, std::size_t channels) {
  return 0.4 + 0.8 * std::cos(2.0 * std::numbers::pi * static_cast<double>(channel) /
                                  static_cast<double>(std::max<std::size_t>(channels, 1)) + 0.3);
}

struct Beats {
  std::vector<double> times;  // ascending
};

Beats beat_times(const SyntheticConfig& cfg, const RecordSpec& spec) {
  bool irregular = false;
  for (std::size_t k = 0; k < spec.positive.size(); ++k) {
    if (spec.positive[k] && label_kind(cfg, k) == LabelKind::kRhythm) irregular = true;
  }
  Beats b;
  const double period = cfg.beat_period_s;
  const double shift = irregular ? cfg.rhythm_offset * period : 0.0;
  for (long j = -2;; ++j) {
    double t = spec.phase_s + static_cast<double>(j) * period;
    if (j % 2 != 0) t -= shift;
    if (t > cfg.duration_s + kTemplateBefore + period) break;
    b.times.push_back(t);
  }
  return b;
}

struct NoiseTrack {
  std::vector<double> grid;
  double wander_phase = 0.0;
};

NoiseTrack noise_track(const SyntheticConfig& cfg, const RecordSpec& spec, std::size_t channel, std::size_t points) {
  NoiseTrack n;
  if (cfg.noise <= 0.0) return n;
  Rng rng = make_rng(spec.noise_seed, channel);
  std::normal_distribution<double> normal(0.0, cfg.noise);
  n.grid.resize(points);
  for (double& v : n.grid) v = normal(rng);
  n.wander_phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  return n;
}

double evaluate(const SyntheticConfig& cfg, const RecordSpec& spec, std::size_t channel, double t, const Beats& beats,
                const NoiseTrack& noise) {
  double qrs_amp = 1.0, qrs_sigma = 0.02;
  for (std::size_t k = 0; k < spec.positive.size(); ++k) {
    if (!spec.positive[k] || !in_lead_group(channel, k, cfg.channels)) continue;
    const LabelKind kind = label_kind(cfg, k);
    if (kind == LabelKind::kAmplitude) qrs_amp *= 1.6;
    if (kind == LabelKind::kWidth) qrs_sigma *= 1.8;
  }
  double beat_sum = 0.0;
  auto it = std::lower_bound(beats.times.begin(), beats.times.end(), t - kTemplateAfter);
  for (; it != beats.times.end() && *it <= t + kTemplateBefore; ++it) {
    const double tau = t - *it;
    double v = 0.12 * gauss(tau + 0.16, 0.025) + qrs_amp * gauss(tau, qrs_sigma) + 0.3 * gauss(tau - 0.3, 0.06);
    for (std::size_t k = 0; k < spec.positive.size(); ++k) {
      if (spec.positive[k] && label_kind(cfg, k) == LabelKind::kExtraWave && in_lead_group(channel, k, cfg.channels)) {
        v += 0.35 * gauss(tau - (0.12 + 0.03 * static_cast<double>((k / 4) % 4)), 0.025);
      }
    }
    beat_sum += v;
  }
  double value = lead_gain(channel, cfg.channels) * beat_sum;
  if (!noise.grid.empty()) {
    const double pos = t * kNoiseGridHz;
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i0);
    const std::size_t i1 = std::min(i0 + 1, noise.grid.size() - 1);
    value += (1.0 - frac) * noise.grid[std::min(i0, noise.grid.size() - 1)] + frac * noise.grid[i1];
    value += 2.0 * cfg.noise * std::sin(2.0 * std::numbers::pi * 0.25 * t + noise.wander_phase);
  }
  return value;
}

}  // namespace

std::string label_name(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "L%02zu", k);
  return buf;
}

LabelKind label_kind(const SyntheticConfig& config, std::size_t k) {
  if (!config.kinds.empty()) return config.kinds.at(k);
  static constexpr LabelKind cycle[] = {LabelKind::kAmplitude, LabelKind::kExtraWave, LabelKind::kWidth,
                                        LabelKind::kRhythm};
  return cycle[k % 4];
}

double label_prior(const SyntheticConfig& config, std::size_t k) {
  return config.priors.empty() ? 0.3 : config.priors.at(k);
}

SyntheticGenerator::SyntheticGenerator(SyntheticConfig config) : config_(std::move(config)) {
  if (config_.n_records == 0 || config_.channels == 0 || config_.n_labels == 0) {
    throw ArgumentError("synthetic: record, channel and label counts must be positive");
  }
  if (!(config_.rate_hz > 0.0)) throw ArgumentError("synthetic: rate must be positive");
  if (!(config_.beat_period_s > 0.0)) throw ArgumentError("synthetic: beat period must be positive");
  if (config_.duration_s < config_.beat_period_s) {
    throw ArgumentError("synthetic: duration shorter than one pulse period");
  }
  if (!config_.priors.empty() && config_.priors.size() != config_.n_labels) {
    throw ArgumentError("synthetic: priors must list one value per label");
  }
  if (!config_.kinds.empty() && config_.kinds.size() != config_.n_labels) {
    throw ArgumentError("synthetic: kinds must list one value per label");
  }
  if (config_.rhythm_offset < 0.0 || config_.rhythm_offset >= 1.0) {
    throw ArgumentError("synthetic: rhythm offset must lie in [0, 1)");
  }
  noise_grid_points_ = static_cast<std::size_t>(std::ceil(config_.duration_s * kNoiseGridHz)) + 2;
}

RecordSpec SyntheticGenerator::spec(std::size_t index) const {
  Rng rng = make_rng(config_.seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RecordSpec s;
  s.index = index;
  s.phase_s = unit(rng) * config_.beat_period_s;
  const double shared = unit(rng);
  for (std::size_t k = 0; k < config_.n_labels; ++k) {
    const double coin = unit(rng);
    const double own = unit(rng);
    const double u = coin < config_.cooccurrence ? shared : own;
    s.positive.push_back(u < label_prior(config_, k));
  }
  s.noise_seed = rng();
  return s;
}

double SyntheticGenerator::value(const RecordSpec& spec, std::size_t channel, double t) const {
  return evaluate(config_, spec, channel, t, beat_times(config_, spec),
                  noise_track(config_, spec, channel, noise_grid_points_));
}

Record SyntheticGenerator::render(const RecordSpec& spec, double rate_hz) const {
  if (!(rate_hz > 0.0)) throw ArgumentError("synthetic: rate must be positive");
  Record r;
  r.id = "syn" + std::to_string(spec.index);
  r.rate_hz = rate_hz;
  r.channels = config_.channels;
  r.samples = static_cast<std::size_t>(std::llround(config_.duration_s * rate_hz));
  if (r.samples == 0) throw ArgumentError("synthetic: rate too low for the configured duration");
  r.signal.resize(r.channels * r.samples);
  const Beats beats = beat_times(config_, spec);
  for (std::size_t c = 0; c < r.channels; ++c) {
    const NoiseTrack noise = noise_track(config_, spec, c, noise_grid_points_);
    for (std::size_t i = 0; i < r.samples; ++i) {
      const double t = static_cast<double>(i) / rate_hz;
      r.signal[c * r.samples + i] = static_cast<float>(evaluate(config_, spec, c, t, beats, noise));
    }
  }
  for (std::size_t k = 0; k < spec.positive.size(); ++k) {
    if (spec.positive[k]) r.labels.push_back(label_name(k));
  }
  return r;
}

RecordSet SyntheticGenerator::generate() const {
  RecordSet out;
  out.reserve(config_.n_records);
  for (std::size_t i = 0; i < config_.n_records; ++i) out.push_back(render(i, config_.rate_hz));
  return out;
}

RecordSet SyntheticGenerator::generate(double rate_hz, const std::vector<std::size_t>& indices) const {
  RecordSet out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(render(i, rate_hz));
  return out;
}

// ---- vocabulary and folds -----------------------------------------------------

std::size_t LabelVocabulary::index_of(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  return static_cast<std::size_t>(it - labels.begin());
}

LabelVocabulary count_labels(const RecordSet& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) {
    std::set<std::string> unique(r.labels.begin(), r.labels.end());
    for (const auto& l : unique) ++counts[l];
  }
  LabelVocabulary v;
  for (const auto& [label, count] : counts) {
    v.labels.push_back(label);
    v.counts.push_back(count);
  }
  return v;
}

LabelVocabulary filter_rare_labels(RecordSet& records, std::size_t min_count) {
  const LabelVocabulary all = count_labels(records);
  LabelVocabulary kept;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.counts[i] >= min_count) {
      kept.labels.push_back(all.labels[i]);
      kept.counts.push_back(all.counts[i]);
    }
  }
  if (kept.labels.empty()) {
    throw ArgumentError("no label occurs at least " + std::to_string(min_count) + " times");
  }
  const std::set<std::string> keep(kept.labels.begin(), kept.labels.end());
  for (auto& r : records) {
    std::erase_if(r.labels, [&](const std::string& l) { return !keep.contains(l); });
  }
  return kept;
}

std::size_t FoldAssignment::fold(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw ArgumentError("record '" + id + "' has no fold");
  return fold_of[static_cast<std::size_t>(it - ids.begin())];
}

std::vector<std::size_t> FoldAssignment::members(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == f) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] + 2 < k) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::validation_indices() const { return members(k - 2); }
std::vector<std::size_t> FoldAssignment::test_indices() const { return members(k - 1); }

FoldAssignment stratified_folds(const RecordSet& records, const LabelVocabulary& vocab, std::size_t k,
                                std::uint64_t seed) {
  if (k < 3) throw ArgumentError("stratified_folds: need at least 3 folds (train/validation/test)");
  const std::size_t n = records.size();
  const std::size_t n_labels = vocab.size();
  Rng rng = make_rng(seed, 0);

  // Label membership per record, restricted to the vocabulary.
  std::vector<std::vector<std::size_t>> record_labels(n);
  std::vector<std::size_t> total(n_labels, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> ids;
    for (const auto& l : records[i].labels) {
      const std::size_t li = vocab.index_of(l);
      if (li < n_labels) ids.insert(li);
    }
    record_labels[i].assign(ids.begin(), ids.end());
    for (std::size_t li : record_labels[i]) ++total[li];
  }
  for (std::size_t li = 0; li < n_labels; ++li) {
    if (total[li] < k) {
      throw ArgumentError("stratified_folds: label '" + vocab.labels[li] + "' occurs " + std::to_string(total[li]) +
                          " times, fewer than " + std::to_string(k) + " folds");
    }
  }

  std::vector<double> capacity(k, static_cast<double>(n) / static_cast<double>(k));
  std::vector<std::vector<double>> desired(n_labels, std::vector<double>(k));
  for (std::size_t li = 0; li < n_labels; ++li) {
    std::fill(desired[li].begin(), desired[li].end(), static_cast<double>(total[li]) / static_cast<double>(k));
  }

  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  std::vector<std::size_t> fold_of(n, kUnassigned);
  std::vector<std::size_t> remaining = total;

  auto assign = [&](std::size_t rec, std::size_t f) {
    fold_of[rec] = f;
    capacity[f] -= 1.0;
    for (std::size_t li : record_labels[rec]) {
      desired[li][f] -= 1.0;
      --remaining[li];
    }
  };
  auto pick_fold = [&](const std::vector<double>* label_desire) {
    std::vector<std::size_t> best;
    double best_label = -1e300, best_cap = -1e300;
    for (std::size_t f = 0; f < k; ++f) {
      const double ld = label_desire ? (*label_desire)[f] : 0.0;
      const double cap = capacity[f];
      if (ld > best_label || (ld == best_label && cap > best_cap)) {
        best = {f};
        best_label = ld;
        best_cap = cap;
      } else if (ld == best_label && cap == best_cap) {
        best.push_back(f);
      }
    }
    if (best.size() == 1) return best[0];
    return best[std::uniform_int_distribution<std::size_t>(0, best.size() - 1)(rng)];
  };

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  while (true) {
    std::size_t rarest = n_labels;
    for (std::size_t li = 0; li < n_labels; ++li) {
      if (remaining[li] > 0 && (rarest == n_labels || remaining[li] < remaining[rarest])) rarest = li;
    }
    if (rarest == n_labels) break;
    for (std::size_t rec : order) {
      if (fold_of[rec] != kUnassigned) continue;
      if (!std::binary_search(record_labels[rec].begin(), record_labels[rec].end(), rarest)) continue;
      assign(rec, pick_fold(&desired[rarest]));
    }
  }
  for (std::size_t rec : order) {
    if (fold_of[rec] == kUnassigned) assign(rec, pick_fold(nullptr));
  }

  // Repair: move a record into any fold that lacks a label, as long as the
  // source fold keeps every label the record carries.
  std::vector<std::vector<std::size_t>> per_fold(n_labels, std::vector<std::size_t>(k, 0));
  for (std::size_t rec = 0; rec < n; ++rec)
    for (std::size_t li : record_labels[rec]) ++per_fold[li][fold_of[rec]];
  for (std::size_t li = 0; li < n_labels; ++li) {
    for (std::size_t f = 0; f < k; ++f) {
      if (per_fold[li][f] > 0) continue;
      bool fixed = false;
      for (std::size_t rec : order) {
        if (!std::binary_search(record_labels[rec].begin(), record_labels[rec].end(), li)) continue;
        const std::size_t src = fold_of[rec];
        const bool safe = std::all_of(record_labels[rec].begin(), record_labels[rec].end(),
                                      [&](std::size_t l2) { return per_fold[l2][src] >= 2; });
        if (!safe) continue;
        for (std::size_t l2 : record_labels[rec]) {
          --per_fold[l2][src];
          ++per_fold[l2][f];
        }
        fold_of[rec] = f;
        fixed = true;
        break;
      }
      if (!fixed) {
        throw ArgumentError("stratified_folds: cannot place label '" + vocab.labels[li] + "' in fold " +
                            std::to_string(f));
      }
    }
  }

  FoldAssignment out;
  out.k = k;
  out.fold_of = std::move(fold_of);
  for (const auto& r : records) out.ids.push_back(r.id);
  return out;
}

// ---- cropping -----------------------------------------------------------------

std::size_t window_samples(double window_s, double rate_hz) {
  if (!(window_s > 0.0) || !(rate_hz > 0.0)) throw ArgumentError("window and rate must be positive");
  const auto w = static_cast<std::size_t>(std::llround(window_s * rate_hz));
  return std::max<std::size_t>(w, 1);
}

Crop crop_at(const Record& record, std::size_t offset, std::size_t window) {
  Crop c;
  c.offset = offset;
  c.window = window;
  c.data.assign(record.channels * window, 0.0);
  const std::size_t avail = offset < record.samples ? std::min(window, record.samples - offset) : 0;
  for (std::size_t ch = 0; ch < record.channels; ++ch) {
    const float* src = &record.signal[ch * record.samples + offset];
    double* dst = &c.data[ch * window];
    for (std::size_t t = 0; t < avail; ++t) dst[t] = src[t];
  }
  return c;
}

Crop random_crop(const Record& record, double window_s, Rng& rng) {
  const std::size_t window = window_samples(window_s, record.rate_hz);
  std::size_t offset = 0;
  if (record.samples > window) {
    offset = std::uniform_int_distribution<std::size_t>(0, record.samples - window)(rng);
  }
  return crop_at(record, offset, window);
}

std::vector<double> target_vector(const Record& record, const LabelVocabulary& vocab) {
  std::vector<double> y(vocab.size(), 0.0);
  for (const auto& l : record.labels) {
    const std::size_t i = vocab.index_of(l);
    if (i < y.size()) y[i] = 1.0;
  }
  return y;
}

// ---- ECGR1 --------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "ECGR1 I/O assumes a little-endian host");

constexpr char kMagic[8] = {'E', 'C', 'G', 'R', '1', 0, 0, 0};
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kEntryBytes = 24;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("'" + path + "': truncated ECGR1 file");
  return v;
}

std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", rate);
  return buf;
}

struct SidecarRow {
  std::string id;
  double rate = 0.0;
  std::vector<std::string> labels;
};

std::vector<SidecarRow> read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sidecar '" + path + "'");
  std::vector<SidecarRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": expected id<TAB>rate<TAB>labels");
    }
    SidecarRow row;
    row.id = line.substr(0, t1);
    try {
      row.rate = std::stod(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": bad rate");
    }
    std::stringstream labels(line.substr(t2 + 1));
    std::string label;
    while (std::getline(labels, label, ',')) {
      if (!label.empty()) row.labels.push_back(label);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_dataset(const RecordSet& records, const std::string& binary_path, const std::string& sidecar_path) {
  std::ofstream bin(binary_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("cannot open '" + binary_path + "' for writing");
  bin.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(bin, static_cast<std::uint32_t>(records.size()));
  put<std::uint32_t>(bin, 0);
  std::uint64_t offset = kHeaderBytes + kEntryBytes * records.size();
  for (const auto& r : records) {
    r.validate();
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(r.channels));
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(r.samples));
    put<double>(bin, r.rate_hz);
    put<std::uint64_t>(bin, offset);
    offset += r.signal.size() * sizeof(float);
  }
  for (const auto& r : records) {
    bin.write(reinterpret_cast<const char*>(r.signal.data()), static_cast<std::streamsize>(r.signal.size() * sizeof(float)));
  }
  if (!bin) throw FormatError("write to '" + binary_path + "' failed");

  std::ofstream side(sidecar_path, std::ios::trunc);
  if (!side) throw FormatError("cannot open '" + sidecar_path + "' for writing");
  for (const auto& r : records) {
    if (r.id.find_first_of("\t\n") != std::string::npos) throw FormatError("record id contains a tab or newline");
    side << r.id << '\t' << format_rate(r.rate_hz) << '\t';
    for (std::size_t i = 0; i < r.labels.size(); ++i) side << (i ? "," : "") << r.labels[i];
    side << '\n';
  }
}

RecordSet read_dataset(const std::string& binary_path, const std::string& sidecar_path) {
  std::ifstream bin(binary_path, std::ios::binary);
  if (!bin) throw FormatError("cannot open '" + binary_path + "'");
  char magic[8];
  bin.read(magic, sizeof(magic));
  if (!bin || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("'" + binary_path + "' is not an ECGR1 file (bad magic)");
  }
  const auto count = get<std::uint32_t>(bin, binary_path);
  get<std::uint32_t>(bin, binary_path);
  const auto file_size = std::filesystem::file_size(binary_path);

  const std::vector<SidecarRow> rows = read_sidecar(sidecar_path);
  if (rows.size() != count) {
    throw FormatError("sidecar '" + sidecar_path + "' lists " + std::to_string(rows.size()) + " records, binary has " +
                      std::to_string(count));
  }
  RecordSet records(count);
  std::vector<std::uint64_t> offsets(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Record& r = records[i];
    r.channels = get<std::uint32_t>(bin, binary_path);
    r.samples = get<std::uint32_t>(bin, binary_path);
    r.rate_hz = get<double>(bin, binary_path);
    offsets[i] = get<std::uint64_t>(bin, binary_path);
    if (offsets[i] + r.channels * r.samples * sizeof(float) > file_size) {
      throw FormatError("'" + binary_path + "': record " + std::to_string(i) + " runs past end of file");
    }
    if (rows[i].rate != r.rate_hz) throw FormatError("record '" + rows[i].id + "': sidecar rate disagrees with binary");
    r.id = rows[i].id;
    r.labels = rows[i].labels;
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    Record& r = records[i];
    r.signal.resize(r.channels * r.samples);
    bin.seekg(static_cast<std::streamoff>(offsets[i]));
    bin.read(reinterpret_cast<char*>(r.signal.data()), static_cast<std::streamsize>(r.signal.size() * sizeof(float)));
    if (!bin) throw FormatError("'" + binary_path + "': truncated sample block");
    r.validate();
  }
  return records;
}

RecordSet import_raw(const std::string& directory, const std::string& sidecar_path, std::size_t channels) {
  if (channels == 0) throw ArgumentError("import: channel count must be positive");
  RecordSet records;
  for (const auto& row : read_sidecar(sidecar_path)) {
    const auto path = std::filesystem::path(directory) / (row.id + ".f32");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("import: missing sample file '" + path.string() + "'");
    const auto bytes = std::filesystem::file_size(path);
    if (bytes == 0 || bytes % (sizeof(float) * channels) != 0) {
      throw FormatError("import: '" + path.string() + "' size is not a multiple of channels * 4 bytes");
    }
    Record r;
    r.id = row.id;
    r.rate_hz = row.rate;
    r.channels = channels;
    r.samples = bytes / (sizeof(float) * channels);
    r.labels = row.labels;
    r.signal.resize(r.channels * r.samples);
    in.read(reinterpret_cast<char*>(r.signal.data()), static_cast<std::streamsize>(bytes));
    r.validate();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace s4ecg::data
