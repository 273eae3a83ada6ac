#include "s4ecg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "s4ecg/errors.hpp"

namespace s4ecg::eval {

void PredictionSet::validate() const {
  if (scores.size() != ids.size() * n_labels || labels.size() != scores.size()) {
    throw DimensionError("prediction set: scores and labels must both be records x labels");
  }
  if (!label_names.empty() && label_names.size() != n_labels) {
    throw DimensionError("prediction set: label name count differs from label columns");
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw ArgumentError("prediction set: scores must lie in [0, 1]");
  }
  for (auto l : labels) {
    if (l > 1) throw ArgumentError("prediction set: labels must be 0 or 1");
  }
}

bool PredictionSet::comparable_with(const PredictionSet& other) const {
  return ids == other.ids && n_labels == other.n_labels && labels == other.labels &&
         (label_names.empty() || other.label_names.empty() || label_names == other.label_names);
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw ArgumentError("auc: non-finite score");
    n_pos += labels[i] != 0;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank sum of positives with average ranks inside tie groups.
  double rank_sum = 0.0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    std::size_t pos_in_group = 0;
    while (end < n && scores[order[end]] == scores[order[start]]) pos_in_group += labels[order[end++]] != 0;
    const double avg_rank = 0.5 * static_cast<double>(start + 1 + end);
    rank_sum += avg_rank * static_cast<double>(pos_in_group);
    start = end;
  }
  const double p = static_cast<double>(n_pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(n_neg));
}

MacroAuc macro_auc_rows(const PredictionSet& preds, std::span<const std::size_t> rows) {
  MacroAuc out;
  std::vector<double> s(rows.size());
  std::vector<std::uint8_t> y(rows.size());
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t l = 0; l < preds.n_labels; ++l) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      s[i] = preds.score(rows[i], l);
      y[i] = preds.label(rows[i], l);
    }
    const auto a = auc(s, y);
    out.per_label.push_back(a);
    if (a) {
      sum += *a;
      ++valid;
    } else {
      out.excluded.push_back(l);
    }
  }
  out.value = valid ? sum / static_cast<double>(valid) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

MacroAuc macro_auc(const PredictionSet& preds) {
  preds.validate();
  std::vector<std::size_t> rows(preds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  MacroAuc m = macro_auc_rows(preds, rows);
  if (std::isnan(m.value)) throw ArgumentError("macro_auc: no label has both classes present");
  return m;
}

// ---- test-time augmentation --------------------------------------------------

std::vector<std::size_t> tta_starts(std::size_t samples, std::size_t window, std::size_t n_crops) {
  if (n_crops == 0) throw ArgumentError("tta: need at least one crop");
  if (window == 0) throw ArgumentError("tta: window must be positive");
  if (samples <= window) return std::vector<std::size_t>(n_crops, 0);
  // Too few crops would leave gaps between windows; add crops until the
  // stride is at most one window.
  const std::size_t needed = (samples - window + window - 1) / window + 1;
  n_crops = std::max(n_crops, needed);
  std::vector<std::size_t> starts(n_crops, 0);
  const double span = static_cast<double>(samples - window);
  for (std::size_t i = 0; i < n_crops; ++i) {
    starts[i] = static_cast<std::size_t>(std::llround(static_cast<double>(i) * span / static_cast<double>(n_crops - 1)));
  }
  return starts;
}

std::vector<double> tta_predict(model::Model& model, const data::Record& record, std::size_t n_crops) {
  const std::size_t window = data::window_samples(model.config().input_window_s, record.rate_hz);
  const std::vector<std::size_t> starts = tta_starts(record.samples, window, n_crops);
  const bool degenerate = std::all_of(starts.begin(), starts.end(), [&](std::size_t s) { return s == starts[0]; });
  std::vector<data::Crop> crops;
  for (std::size_t s : degenerate ? std::vector<std::size_t>{starts[0]} : starts) {
    crops.push_back(data::crop_at(record, s, window));
  }
  const Tensor logits = model.predict_logits(model::stack_crops(crops, record.channels));
  const std::size_t n_labels = model.config().n_labels;
  // Mean written as first + mean deviation so identical crops average exactly.
  std::vector<double> probs(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) {
    const double first = sigmoid(logits[l]);
    double dev = 0.0;
    for (std::size_t c = 1; c < crops.size(); ++c) dev += sigmoid(logits[c * n_labels + l]) - first;
    probs[l] = first + dev / static_cast<double>(crops.size());
  }
  return probs;
}

PredictionSet predict_records(model::Model& model, const data::RecordSet& records, const data::LabelVocabulary& vocab,
                              std::size_t n_crops) {
  if (vocab.size() != model.config().n_labels) throw DimensionError("predict: vocabulary and model disagree on labels");
  PredictionSet p;
  p.n_labels = vocab.size();
  p.label_names = vocab.labels;
  for (const auto& r : records) {
    p.ids.push_back(r.id);
    const auto probs = tta_predict(model, r, n_crops);
    p.scores.insert(p.scores.end(), probs.begin(), probs.end());
    for (double y : data::target_vector(r, vocab)) p.labels.push_back(y > 0.5 ? 1 : 0);
  }
  return p;
}

// ---- bootstrap ------------------------------------------------------------------

const char* significance_name(Significance s) {
  switch (s) {
    case Significance::kABetter: return "A_better";
    case Significance::kAWorse: return "A_worse";
    default: return "inconclusive";
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

double statistic(const PredictionSet& p, std::span<const std::size_t> rows, const std::optional<std::size_t>& label) {
  if (!label) return macro_auc_rows(p, rows).value;
  std::vector<double> s(rows.size());
  std::vector<std::uint8_t> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s[i] = p.score(rows[i], *label);
    y[i] = p.label(rows[i], *label);
  }
  return auc(s, y).value_or(std::numeric_limits<double>::quiet_NaN());
}

}  // namespace

BootstrapResult bootstrap_compare(const PredictionSet& a, const PredictionSet& b, const BootstrapOptions& options) {
  a.validate();
  b.validate();
  if (!a.comparable_with(b)) throw ArgumentError("bootstrap: prediction sets cover different records or labels");
  if (a.size() == 0) throw ArgumentError("bootstrap: empty prediction set");
  if (options.n_iter == 0) throw ArgumentError("bootstrap: n_iter must be positive");
  if (!(options.conf > 0.0 && options.conf < 1.0)) throw ArgumentError("bootstrap: conf must lie in (0, 1)");
  if (options.label && *options.label >= a.n_labels) throw ArgumentError("bootstrap: label index out of range");

  const std::size_t n = a.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  BootstrapResult r;
  r.delta = statistic(a, all, options.label) - statistic(b, all, options.label);
  if (std::isnan(r.delta)) throw ArgumentError("bootstrap: statistic undefined on the full test set");

  std::vector<double> deltas;
  deltas.reserve(options.n_iter);
  std::vector<std::size_t> rows_a(n), rows_b(n);
  for (std::size_t it = 0; it < options.n_iter; ++it) {
    Rng rng = make_rng(options.seed, it);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& i : rows_a) i = pick(rng);
    if (options.paired) {
      rows_b = rows_a;
    } else {
      for (auto& i : rows_b) i = pick(rng);
    }
    const double d = statistic(a, rows_a, options.label) - statistic(b, rows_b, options.label);
    if (std::isfinite(d)) deltas.push_back(d);
  }
  r.valid_iterations = deltas.size();
  if (deltas.empty()) throw ArgumentError("bootstrap: statistic undefined on every resample");
  const double tail = (1.0 - options.conf) / 2.0;
  r.lo = percentile(deltas, tail);
  r.hi = percentile(deltas, 1.0 - tail);
  r.significant = r.lo > 0.0 ? Significance::kABetter : r.hi < 0.0 ? Significance::kAWorse : Significance::kInconclusive;
  return r;
}

Significance decide(double fraction_better, double fraction_worse, double threshold) {
  if (!(threshold > 0.4 && threshold <= 1.0)) throw ArgumentError("verdict threshold must lie in (0.4, 1]");
  const bool better = fraction_better >= threshold;
  const bool worse = fraction_worse >= threshold;
  if (better && !worse) return Significance::kABetter;
  if (worse && !better) return Significance::kAWorse;
  return Significance::kInconclusive;
}

VerdictSummary summarize_pairs(std::vector<Significance> pairs, const std::vector<double>& deltas, double threshold) {
  VerdictSummary s;
  s.pairs = std::move(pairs);
  if (s.pairs.empty()) throw ArgumentError("verdict: no comparisons");
  if (deltas.size() != s.pairs.size()) throw DimensionError("verdict: one delta per comparison expected");
  const auto total = static_cast<double>(s.pairs.size());
  s.fraction_better = static_cast<double>(std::count(s.pairs.begin(), s.pairs.end(), Significance::kABetter)) / total;
  s.fraction_worse = static_cast<double>(std::count(s.pairs.begin(), s.pairs.end(), Significance::kAWorse)) / total;
  s.verdict = decide(s.fraction_better, s.fraction_worse, threshold);
  s.deltas = deltas;
  std::vector<double> finite;
  for (double d : deltas) {
    if (std::isfinite(d)) finite.push_back(d);
  }
  if (finite.empty()) {
    s.median_delta = s.sd_delta = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.median_delta = percentile(finite, 0.5);
  if (finite.size() > 1) {
    const double mean = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
    double ss = 0.0;
    for (double d : finite) ss += (d - mean) * (d - mean);
    s.sd_delta = std::sqrt(ss / static_cast<double>(finite.size() - 1));
  }
  return s;
}

ComparisonVerdict multi_run_verdict(const std::vector<PredictionSet>& runs_a, const std::vector<PredictionSet>& runs_b,
                                    const VerdictOptions& options) {
  decide(0.0, 0.0, options.threshold);  // validates the threshold up front
  if (runs_a.empty() || runs_b.empty()) throw ArgumentError("verdict: both sides need at least one run");
  ComparisonVerdict v;
  v.runs_a = runs_a.size();
  v.runs_b = runs_b.size();
  v.label_names = runs_a.front().label_names;
  const std::size_t n_labels = runs_a.front().n_labels;

  std::vector<Significance> pairs;
  std::vector<double> deltas;
  std::vector<std::vector<Significance>> label_pairs(options.per_label ? n_labels : 0);
  std::vector<std::vector<double>> label_deltas(label_pairs.size());
  for (std::size_t i = 0; i < runs_a.size(); ++i) {
    for (std::size_t j = 0; j < runs_b.size(); ++j) {
      const std::uint64_t pair_seed = stream_seed(options.seed, i * runs_b.size() + j);
      BootstrapOptions bo;
      bo.n_iter = options.n_iter;
      bo.seed = pair_seed;
      const BootstrapResult r = bootstrap_compare(runs_a[i], runs_b[j], bo);
      pairs.push_back(r.significant);
      deltas.push_back(r.delta);
      for (std::size_t l = 0; l < label_pairs.size(); ++l) {
        bo.label = l;
        bo.seed = stream_seed(pair_seed, 1 + l);
        try {
          const BootstrapResult rl = bootstrap_compare(runs_a[i], runs_b[j], bo);
          label_pairs[l].push_back(rl.significant);
          label_deltas[l].push_back(rl.delta);
        } catch (const ArgumentError&) {
          // Label without both classes on this test set: no evidence either way.
          label_pairs[l].push_back(Significance::kInconclusive);
          label_deltas[l].push_back(std::numeric_limits<double>::quiet_NaN());
        }
      }
    }
  }
  v.overall = summarize_pairs(std::move(pairs), deltas, options.threshold);
  for (std::size_t l = 0; l < label_pairs.size(); ++l) {
    v.per_label.push_back(summarize_pairs(std::move(label_pairs[l]), label_deltas[l], options.threshold));
  }
  return v;
}

void write_verdict_csv(std::ostream& out, const ComparisonVerdict& v) {
  auto row = [&](const std::string& name, const VerdictSummary& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%s\n", name.c_str(), s.median_delta, s.sd_delta,
                  s.fraction_better, s.fraction_worse, significance_name(s.verdict));
    out << buf;
  };
  out << "label,median_delta,sd_delta,frac_better,frac_worse,verdict\n";
  row("macro", v.overall);
  for (std::size_t l = 0; l < v.per_label.size(); ++l) {
    row(l < v.label_names.size() ? v.label_names[l] : "label" + std::to_string(l), v.per_label[l]);
  }
}

// ---- prediction files ---------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

void write_predictions(const PredictionSet& p, const std::string& path) {
  p.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  if (!p.label_names.empty()) {
    out << "#labels\t";
    for (std::size_t l = 0; l < p.n_labels; ++l) out << (l ? "," : "") << p.label_names[l];
    out << '\n';
  }
  char buf[32];
  for (std::size_t r = 0; r < p.size(); ++r) {
    out << p.ids[r] << '\t';
    for (std::size_t l = 0; l < p.n_labels; ++l) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.score(r, l));
      out << (l ? "," : "") << buf;
    }
    out << '\t';
    for (std::size_t l = 0; l < p.n_labels; ++l) out << (l ? "," : "") << int(p.label(r, l));
    out << '\n';
  }
  if (!out) throw FormatError("write to '" + path + "' failed");
}

PredictionSet read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  PredictionSet p;
  bool width_known = false;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#labels\t", 0) == 0) {
      p.label_names = split(line.substr(8), ',');
      continue;
    }
    const auto fields = split(line, '\t');
    if (fields.size() != 3) fail("expected id<TAB>scores<TAB>labels");
    const auto scores = split(fields[1], ',');
    const auto labels = split(fields[2], ',');
    if (!width_known) {
      p.n_labels = scores.size();
      width_known = true;
    }
    if (scores.size() != p.n_labels || labels.size() != p.n_labels) fail("inconsistent label count");
    p.ids.push_back(fields[0]);
    for (const auto& s : scores) {
      try {
        std::size_t used = 0;
        p.scores.push_back(std::stod(s, &used));
        if (used != s.size()) fail("bad score '" + s + "'");
      } catch (const std::logic_error&) {
        fail("bad score '" + s + "'");
      }
    }
    for (const auto& l : labels) {
      if (l != "0" && l != "1") fail("labels must be 0 or 1");
      p.labels.push_back(l == "1" ? 1 : 0);
    }
  }
  if (!width_known && !p.label_names.empty()) p.n_labels = p.label_names.size();
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return p;
}

}  // namespace s4ecg::eval
