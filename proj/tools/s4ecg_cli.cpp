// s4ecg command-line front end: dataset generation/import, training,
// evaluation, run comparison and the two transfer experiments.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "s4ecg/errors.hpp"
#include "s4ecg/experiments.hpp"

namespace fs = std::filesystem;
using namespace s4ecg;
using experiments::RunConfig;

namespace {

struct Common {
  std::string config_path;
  std::string seeds;
  std::string out = ".";
  std::vector<std::string> sets;
  std::size_t epochs = 0;
  std::size_t n_iter = 0;
  double threshold = 0.0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI-style config file ([data], [model], [train], [eval], [experiment])");
  cmd->add_option("--seed", c.seeds, "Seed list, e.g. 0,1,2 or 0-9");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--set", c.sets, "Override one config key: section.key=value (repeatable)");
  cmd->add_option("--epochs", c.epochs, "Training epochs");
  cmd->add_option("--n-iter", c.n_iter, "Bootstrap iterations");
  cmd->add_option("--threshold", c.threshold, "Fraction of significant pair comparisons needed for a verdict");
  cmd->add_flag("--quiet", c.quiet, "No progress output");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = experiments::load_config(c.config_path);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects section.key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.seeds.empty()) cfg.seeds = experiments::parse_seed_list(c.seeds);
  if (c.epochs) cfg.train.epochs = c.epochs;
  if (c.n_iter) cfg.n_iter = c.n_iter;
  if (c.threshold != 0.0) cfg.threshold = c.threshold;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ArgumentError("output directory '" + c.out + "' is not writable");
  return dir;
}

std::ostream* progress(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

std::string rate_tag(double r) {
  std::string s = experiments::format_number(r);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw ArgumentError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void cmd_gen_data(const Common& c, const std::vector<double>& rates) {
  RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c);
  const experiments::Dataset ds(cfg);
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::string> outputs;
  for (double r : rates.empty() ? std::vector<double>{cfg.data.rate_hz} : rates) {
    const std::string stem = "dataset_" + rate_tag(r);
    const data::RecordSet recs = ds.records(r, all);
    data::write_dataset(recs, (dir / (stem + ".ecgr1")).string(), (dir / (stem + ".tsv")).string());
    outputs.push_back(stem + ".ecgr1");
    outputs.push_back(stem + ".tsv");
  }
  std::string folds = "id\tfold\n";
  for (std::size_t i = 0; i < ds.size(); ++i) folds += ds.folds().ids[i] + "\t" + std::to_string(ds.folds().fold_of[i]) + "\n";
  write_text(dir / "folds.tsv", folds);
  outputs.push_back("folds.tsv");
  experiments::write_manifest(dir.string(), "gen-data", cfg, outputs);
}

void cmd_import(const Common& c, const std::string& raw_dir, const std::string& sidecar, std::size_t channels) {
  RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c);
  const data::RecordSet recs = data::import_raw(raw_dir, sidecar, channels);
  data::write_dataset(recs, (dir / "dataset.ecgr1").string(), (dir / "dataset.tsv").string());
  experiments::write_manifest(dir.string(), "import", cfg, {"dataset.ecgr1", "dataset.tsv"});
}

void cmd_train(const Common& c, const std::vector<double>& rates, const std::vector<double>& windows) {
  RunConfig cfg = resolve(c);
  if (!windows.empty()) cfg.model.input_window_s = windows.front();
  const double rate = rates.empty() ? cfg.data.rate_hz : rates.front();
  const fs::path dir = out_dir(c);
  const experiments::Dataset ds(cfg);
  const data::RecordSet test = ds.records(rate, ds.folds().test_indices());
  std::vector<std::string> outputs;
  std::string summary = "seed,macro_auc,final_loss\n";
  for (auto seed : cfg.seeds) {
    auto run = experiments::train_run(cfg, ds, rate, seed, progress(c));
    const std::string tag = "seed" + std::to_string(seed);
    model::save_checkpoint(run.model, (dir / ("model_" + tag + ".ssmk")).string());
    std::string loss = "epoch,loss\n";
    for (std::size_t e = 0; e < run.trace.epoch_loss.size(); ++e) {
      loss += std::to_string(e + 1) + "," + experiments::format_number(run.trace.epoch_loss[e]) + "\n";
    }
    write_text(dir / ("loss_" + tag + ".csv"), loss);
    const auto preds = experiments::evaluate_run(run.model, test, ds.vocab(), cfg.n_crops);
    eval::write_predictions(preds, (dir / ("pred_" + tag + ".tsv")).string());
    summary += std::to_string(seed) + "," + experiments::format_number(eval::macro_auc(preds).value) + "," +
               experiments::format_number(run.trace.epoch_loss.empty() ? 0.0 : run.trace.epoch_loss.back()) + "\n";
    outputs.insert(outputs.end(), {"model_" + tag + ".ssmk", "loss_" + tag + ".csv", "pred_" + tag + ".tsv"});
  }
  write_text(dir / "train_summary.csv", summary);
  outputs.push_back("train_summary.csv");
  experiments::write_manifest(dir.string(), "train", cfg, outputs);
}

void cmd_eval(const Common& c, const std::string& model_path, const std::vector<double>& rates) {
  RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c);
  std::vector<fs::path> checkpoints =
      fs::is_directory(model_path) ? list_files(model_path, ".ssmk") : std::vector<fs::path>{model_path};
  if (checkpoints.empty()) throw ArgumentError("no checkpoints (*.ssmk) in '" + model_path + "'");
  const experiments::Dataset ds(cfg);
  const auto test_idx = ds.folds().test_indices();
  std::vector<std::string> outputs;
  std::string table = "checkpoint,train_rate_hz,test_rate_hz,macro_auc,excluded_labels\n";
  for (const auto& ck : checkpoints) {
    model::Model m = model::load_checkpoint(ck.string());
    if (m.config().n_labels != ds.vocab().size() || m.config().in_channels != ds.channels()) {
      throw ArgumentError("checkpoint '" + ck.string() + "' does not match the dataset's channels or labels");
    }
    for (double r : rates.empty() ? std::vector<double>{m.sample_rate_hz()} : rates) {
      model::Model mr = m.rescaled(m.sample_rate_hz(), r);
      const auto preds = experiments::evaluate_run(mr, ds.records(r, test_idx), ds.vocab(), cfg.n_crops);
      const auto macro = eval::macro_auc(preds);
      const std::string name = ck.stem().string() + "_" + rate_tag(r) + "Hz.tsv";
      eval::write_predictions(preds, (dir / ("pred_" + name)).string());
      outputs.push_back("pred_" + name);
      table += ck.filename().string() + "," + experiments::format_number(m.sample_rate_hz()) + "," +
               experiments::format_number(r) + "," + experiments::format_number(macro.value) + "," +
               std::to_string(macro.excluded.size()) + "\n";
    }
  }
  write_text(dir / "eval.csv", table);
  outputs.push_back("eval.csv");
  experiments::write_manifest(dir.string(), "eval", cfg, outputs);
}

void cmd_compare(const Common& c, const std::string& runs_a, const std::string& runs_b) {
  RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c);
  auto load = [](const std::string& d) {
    std::vector<eval::PredictionSet> runs;
    for (const auto& p : list_files(d, ".tsv")) runs.push_back(eval::read_predictions(p.string()));
    if (runs.empty()) throw ArgumentError("no prediction files (*.tsv) in '" + d + "'");
    return runs;
  };
  const auto a = load(runs_a), b = load(runs_b);
  for (const auto* side : {&a, &b})
    for (const auto& p : *side) {
      if (!p.comparable_with(a.front())) {
        throw ArgumentError("prediction files disagree on records or label vocabulary");
      }
    }
  eval::VerdictOptions vo;
  vo.n_iter = cfg.n_iter;
  vo.threshold = cfg.threshold;
  vo.seed = cfg.seeds.front();
  vo.per_label = true;
  const auto verdict = eval::multi_run_verdict(a, b, vo);
  std::ofstream v(dir / "verdict.csv", std::ios::trunc), d(dir / "pairs.csv", std::ios::trunc);
  if (!v || !d) throw FormatError("cannot write verdict files in '" + dir.string() + "'");
  eval::write_verdict_csv(v, verdict);
  experiments::write_pair_detail_csv(d, verdict);
  experiments::write_manifest(dir.string(), "compare", cfg, {"verdict.csv", "pairs.csv"});
  if (!c.quiet) {
    std::cerr << "macro: " << eval::significance_name(verdict.overall.verdict) << " (better "
              << verdict.overall.fraction_better << ", worse " << verdict.overall.fraction_worse << ")\n";
  }
}

void cmd_rate_matrix(const Common& c, const std::vector<double>& test_rates, const std::vector<double>& train_rates) {
  RunConfig cfg = resolve(c);
  if (!test_rates.empty()) cfg.test_rates = test_rates;
  if (!train_rates.empty()) cfg.train_rates = train_rates;
  const fs::path dir = out_dir(c);
  const auto cells = experiments::rate_matrix(cfg, progress(c));
  std::ofstream out(dir / "rate_matrix.csv", std::ios::trunc);
  experiments::write_rate_matrix_csv(out, cells, cfg.seeds);
  experiments::write_manifest(dir.string(), "rate-matrix", cfg, {"rate_matrix.csv"});
}

void cmd_window_sweep(const Common& c, const std::vector<double>& windows) {
  RunConfig cfg = resolve(c);
  if (!windows.empty()) cfg.windows_s = windows;
  const fs::path dir = out_dir(c);
  const auto rows = experiments::window_sweep(cfg, progress(c));
  std::ofstream out(dir / "window_sweep.csv", std::ios::trunc);
  experiments::write_window_sweep_csv(out, rows, cfg.seeds);
  experiments::write_manifest(dir.string(), "window-sweep", cfg, {"window_sweep.csv"});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S4-style ECG sequence classification toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(experiments::version()));
  Common common;
  std::vector<double> rates, train_rates, windows;
  std::string raw_dir, sidecar, model_path, runs_a, runs_b;
  std::size_t channels = 12;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic corpus to ECGR1 files");
  auto* imp = app.add_subcommand("import", "Convert per-record float32 files plus a label sidecar to ECGR1");
  auto* trn = app.add_subcommand("train", "Train one model per seed; save checkpoints and test predictions");
  auto* evl = app.add_subcommand("eval", "Evaluate checkpoints on the test fold, optionally at other rates");
  auto* cmp = app.add_subcommand("compare", "Bootstrap comparison of two run directories");
  auto* rmx = app.add_subcommand("rate-matrix", "Train at each rate, evaluate at every rate by step rescaling");
  auto* wsw = app.add_subcommand("window-sweep", "Train and evaluate across input window sizes");
  for (auto* cmd : {gen, imp, trn, evl, cmp, rmx, wsw}) add_common(cmd, common);

  for (auto* cmd : {gen, trn, evl, rmx}) {
    cmd->add_option("--rate", rates, "Sampling rate(s) in Hz")->delimiter(',');
  }
  rmx->add_option("--train-rate", train_rates, "Training rate(s) in Hz")->delimiter(',');
  for (auto* cmd : {trn, wsw}) cmd->add_option("--window-s", windows, "Input window(s) in seconds")->delimiter(',');
  imp->add_option("--raw-dir", raw_dir, "Directory of <id>.f32 files")->required();
  imp->add_option("--sidecar", sidecar, "Label sidecar id<TAB>rate<TAB>labels")->required();
  imp->add_option("--channels", channels, "Channels per record");
  evl->add_option("--model", model_path, "Checkpoint file or directory of checkpoints")->required();
  cmp->add_option("--runs-a", runs_a, "Directory of prediction files for model A")->required();
  cmp->add_option("--runs-b", runs_b, "Directory of prediction files for model B")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) cmd_gen_data(common, rates);
    else if (*imp) cmd_import(common, raw_dir, sidecar, channels);
    else if (*trn) cmd_train(common, rates, windows);
    else if (*evl) cmd_eval(common, model_path, rates);
    else if (*cmp) cmd_compare(common, runs_a, runs_b);
    else if (*rmx) cmd_rate_matrix(common, rates, train_rates);
    else if (*wsw) cmd_window_sweep(common, windows);
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
