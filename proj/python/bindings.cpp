#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "s4ecg/data.hpp"
#include "s4ecg/errors.hpp"
#include "s4ecg/eval.hpp"
#include "s4ecg/experiments.hpp"
#include "s4ecg/model.hpp"
#include "s4ecg/ssm.hpp"

namespace py = pybind11;
using namespace s4ecg;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

Tensor to_tensor(const DArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

py::array_t<float> record_signal(const data::Record& r) {
  py::array_t<float> out({static_cast<py::ssize_t>(r.channels), static_cast<py::ssize_t>(r.samples)});
  std::copy(r.signal.begin(), r.signal.end(), out.mutable_data());
  return out;
}

// [records, labels] score and 0/1 matrices -> PredictionSet with synthetic ids.
eval::PredictionSet prediction_set(const DArray& scores, const py::array_t<std::uint8_t, py::array::forcecast>& labels) {
  if (scores.ndim() != 2 || labels.ndim() != 2 || scores.shape(0) != labels.shape(0) ||
      scores.shape(1) != labels.shape(1)) {
    throw DimensionError("scores and labels must be matching [records, labels] matrices");
  }
  eval::PredictionSet p;
  p.n_labels = static_cast<std::size_t>(scores.shape(1));
  for (py::ssize_t r = 0; r < scores.shape(0); ++r) p.ids.push_back("r" + std::to_string(r));
  p.scores.assign(scores.data(), scores.data() + scores.size());
  p.labels.assign(labels.data(), labels.data() + labels.size());
  p.validate();
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "S4-style state space models for multichannel ECG classification";
  m.attr("__version__") = experiments::version();

  py::register_exception<NumericalFault>(m, "NumericalFault", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  // ---- ssm
  py::class_<ssm::SsmParams>(m, "SsmParams")
      .def_readonly("n", &ssm::SsmParams::n)
      .def_readonly("h", &ssm::SsmParams::h)
      .def_readwrite("a_diag", &ssm::SsmParams::a_diag)
      .def_readwrite("b", &ssm::SsmParams::b)
      .def_readwrite("c", &ssm::SsmParams::c)
      .def_readwrite("d", &ssm::SsmParams::d)
      .def_readwrite("log_delta", &ssm::SsmParams::log_delta)
      .def_readonly("rate_log_shift", &ssm::SsmParams::rate_log_shift)
      .def("delta", &ssm::SsmParams::delta, py::arg("channel"))
      .def("validate", &ssm::SsmParams::validate)
      .def("__eq__", [](const ssm::SsmParams& a, const ssm::SsmParams& b) { return a == b; });

  m.def("hippo_legs_dense", &ssm::hippo_legs_dense, py::arg("n"));
  m.def("init_diagonal_from_hippo", [](int n, int h, std::uint64_t seed) { return ssm::init_diagonal_from_hippo(n, h, seed); },
        py::arg("n"), py::arg("h"), py::arg("seed") = 0);
  m.def("kernel_naive",
        [](const ssm::SsmParams& p, std::size_t ch, std::size_t length) {
          return to_numpy(ssm::kernel_naive(ssm::discretize_bilinear(p, ch), length).k);
        },
        py::arg("params"), py::arg("channel"), py::arg("length"));
  m.def("kernel_fft",
        [](const ssm::SsmParams& p, std::size_t ch, std::size_t length) {
          return to_numpy(ssm::kernel_fft(p, ch, length).k);
        },
        py::arg("params"), py::arg("channel"), py::arg("length"));
  m.def("run_recurrent",
        [](const ssm::SsmParams& p, std::size_t ch, const DArray& u) {
          return to_numpy(ssm::run_recurrent(ssm::discretize_bilinear(p, ch), {u.data(), static_cast<std::size_t>(u.size())}));
        },
        py::arg("params"), py::arg("channel"), py::arg("u"));
  m.def("rescale_step", &ssm::rescale_step, py::arg("params"), py::arg("rate_train_hz"), py::arg("rate_test_hz"));

  // ---- data
  py::class_<data::SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("n_records", &data::SyntheticConfig::n_records)
      .def_readwrite("channels", &data::SyntheticConfig::channels)
      .def_readwrite("rate_hz", &data::SyntheticConfig::rate_hz)
      .def_readwrite("duration_s", &data::SyntheticConfig::duration_s)
      .def_readwrite("n_labels", &data::SyntheticConfig::n_labels)
      .def_readwrite("seed", &data::SyntheticConfig::seed)
      .def_readwrite("noise", &data::SyntheticConfig::noise)
      .def_readwrite("beat_period_s", &data::SyntheticConfig::beat_period_s)
      .def_readwrite("rhythm_offset", &data::SyntheticConfig::rhythm_offset)
      .def_readwrite("cooccurrence", &data::SyntheticConfig::cooccurrence)
      .def_readwrite("priors", &data::SyntheticConfig::priors);

  py::class_<data::Record>(m, "Record")
      .def(py::init<>())
      .def_readwrite("id", &data::Record::id)
      .def_readwrite("rate_hz", &data::Record::rate_hz)
      .def_readwrite("labels", &data::Record::labels)
      .def_property(
          "signal", record_signal,
          [](data::Record& r, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            if (a.ndim() != 2) throw DimensionError("signal must be [channels, samples]");
            r.channels = static_cast<std::size_t>(a.shape(0));
            r.samples = static_cast<std::size_t>(a.shape(1));
            r.signal.assign(a.data(), a.data() + a.size());
          })
      .def_property_readonly("channels", [](const data::Record& r) { return r.channels; })
      .def_property_readonly("samples", [](const data::Record& r) { return r.samples; })
      .def("__repr__", [](const data::Record& r) {
        return "<Record " + r.id + " " + std::to_string(r.channels) + "x" + std::to_string(r.samples) + ">";
      });

  m.def("generate_synthetic",
        [](const data::SyntheticConfig& c, std::optional<double> rate_hz) {
          data::SyntheticGenerator gen(c);
          if (!rate_hz) return gen.generate();
          std::vector<std::size_t> idx(c.n_records);
          for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
          return gen.generate(*rate_hz, idx);
        },
        py::arg("config"), py::arg("rate_hz") = py::none());

  py::class_<data::LabelVocabulary>(m, "LabelVocabulary")
      .def_readonly("labels", &data::LabelVocabulary::labels)
      .def_readonly("counts", &data::LabelVocabulary::counts)
      .def("__len__", &data::LabelVocabulary::size);
  m.def("count_labels", &data::count_labels, py::arg("records"));
  // Returns (vocabulary, records with rare labels removed).
  m.def("filter_rare_labels",
        [](data::RecordSet records, std::size_t min_count) {
          auto vocab = data::filter_rare_labels(records, min_count);
          return py::make_tuple(vocab, records);
        },
        py::arg("records"), py::arg("min_count") = 10);

  py::class_<data::FoldAssignment>(m, "FoldAssignment")
      .def_readonly("k", &data::FoldAssignment::k)
      .def_readonly("ids", &data::FoldAssignment::ids)
      .def_readonly("fold_of", &data::FoldAssignment::fold_of)
      .def("train_indices", &data::FoldAssignment::train_indices)
      .def("validation_indices", &data::FoldAssignment::validation_indices)
      .def("test_indices", &data::FoldAssignment::test_indices);
  m.def("stratified_folds", &data::stratified_folds, py::arg("records"), py::arg("vocab"), py::arg("k") = 10,
        py::arg("seed") = 0);

  m.def("write_dataset", &data::write_dataset, py::arg("records"), py::arg("binary_path"), py::arg("sidecar_path"));
  m.def("read_dataset", &data::read_dataset, py::arg("binary_path"), py::arg("sidecar_path"));

  // ---- model
  py::class_<model::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("in_channels", &model::ModelConfig::in_channels)
      .def_readwrite("width", &model::ModelConfig::width)
      .def_readwrite("n_blocks", &model::ModelConfig::n_blocks)
      .def_readwrite("state_dim", &model::ModelConfig::state_dim)
      .def_readwrite("n_labels", &model::ModelConfig::n_labels)
      .def_readwrite("dropout_p", &model::ModelConfig::dropout_p)
      .def_readwrite("input_window_s", &model::ModelConfig::input_window_s)
      .def_readwrite("sample_rate_hz", &model::ModelConfig::sample_rate_hz)
      .def("validate", &model::ModelConfig::validate)
      .def("window_samples", &model::ModelConfig::window_samples);

  py::class_<model::TrainHyper>(m, "TrainHyper")
      .def(py::init<>())
      .def_readwrite("batch", &model::TrainHyper::batch)
      .def_readwrite("epochs", &model::TrainHyper::epochs)
      .def_readwrite("seed", &model::TrainHyper::seed)
      .def_property(
          "lr", [](const model::TrainHyper& h) { return h.optim.lr; },
          [](model::TrainHyper& h, double v) { h.optim.lr = v; })
      .def_property(
          "weight_decay", [](const model::TrainHyper& h) { return h.optim.weight_decay; },
          [](model::TrainHyper& h, double v) { h.optim.weight_decay = v; });

  py::class_<model::Model>(m, "Model")
      .def_property_readonly("config", &model::Model::config)
      .def_property_readonly("sample_rate_hz", &model::Model::sample_rate_hz)
      .def("parameter_count", &model::Model::parameter_count)
      .def("predict_logits", [](model::Model& self, const DArray& x) { return from_tensor(self.predict_logits(to_tensor(x))); },
           py::arg("x"))
      .def("rescaled", &model::Model::rescaled, py::arg("rate_train_hz"), py::arg("rate_test_hz"))
      .def("block_ssm", &model::Model::block_ssm, py::arg("block"))
      .def("save", [](const model::Model& self, const std::string& path) { model::save_checkpoint(self, path); },
           py::arg("path"))
      .def(
          "train",
          [](model::Model& self, const data::RecordSet& records, const data::LabelVocabulary& vocab,
             const model::TrainHyper& hyper) {
            py::gil_scoped_release release;
            return model::train(self, records, vocab, hyper).epoch_loss;
          },
          py::arg("records"), py::arg("vocab"), py::arg("hyper"))
      .def("predict_proba",
           [](model::Model& self, const data::Record& record, std::size_t n_crops) {
             return to_numpy(eval::tta_predict(self, record, n_crops));
           },
           py::arg("record"), py::arg("n_crops") = 10);
  m.def("build_model", &model::build_model, py::arg("config"), py::arg("seed") = 0);
  m.def("load_checkpoint", [](const std::string& path) { return model::load_checkpoint(path); }, py::arg("path"));

  // ---- eval
  m.def("auc",
        [](const DArray& scores, const py::array_t<std::uint8_t, py::array::forcecast>& labels) {
          if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
          return eval::auc({scores.data(), static_cast<std::size_t>(scores.size())},
                           {labels.data(), static_cast<std::size_t>(labels.size())});
        },
        py::arg("scores"), py::arg("labels"));
  m.def("macro_auc",
        [](const DArray& scores, const py::array_t<std::uint8_t, py::array::forcecast>& labels) {
          const auto r = eval::macro_auc(prediction_set(scores, labels));
          return py::make_tuple(r.value, r.per_label);
        },
        py::arg("scores"), py::arg("labels"));
  m.def("tta_starts", &eval::tta_starts, py::arg("samples"), py::arg("window"), py::arg("n_crops") = 10);
  m.def("bootstrap_compare",
        [](const DArray& scores_a, const DArray& scores_b, const py::array_t<std::uint8_t, py::array::forcecast>& labels,
           std::size_t n_iter, double conf, std::uint64_t seed, bool paired) {
          eval::BootstrapOptions o;
          o.n_iter = n_iter;
          o.conf = conf;
          o.seed = seed;
          o.paired = paired;
          const auto r = eval::bootstrap_compare(prediction_set(scores_a, labels), prediction_set(scores_b, labels), o);
          py::dict d;
          d["delta"] = r.delta;
          d["lo"] = r.lo;
          d["hi"] = r.hi;
          d["verdict"] = eval::significance_name(r.significant);
          d["valid_iterations"] = r.valid_iterations;
          return d;
        },
        py::arg("scores_a"), py::arg("scores_b"), py::arg("labels"), py::arg("n_iter") = 1000, py::arg("conf") = 0.95,
        py::arg("seed") = 0, py::arg("paired") = true);
  m.def("decide",
        [](double better, double worse, double threshold) {
          return eval::significance_name(eval::decide(better, worse, threshold));
        },
        py::arg("fraction_better"), py::arg("fraction_worse"), py::arg("threshold") = 0.6);

  // ---- experiments
  py::class_<experiments::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def("set", &experiments::RunConfig::set, py::arg("key"), py::arg("value"))
      .def("validate", &experiments::RunConfig::validate)
      .def("to_json", [](const experiments::RunConfig& c) { return c.to_json().dump(); })
      .def_readwrite("seeds", &experiments::RunConfig::seeds)
      .def_readwrite("train_rates", &experiments::RunConfig::train_rates)
      .def_readwrite("test_rates", &experiments::RunConfig::test_rates)
      .def_readwrite("windows_s", &experiments::RunConfig::windows_s);
  m.def("load_config", [](const std::string& path) { return experiments::load_config(path); }, py::arg("path"));
  m.def("rate_matrix_csv",
        [](const experiments::RunConfig& c) {
          std::ostringstream out;
          {
            py::gil_scoped_release release;
            experiments::write_rate_matrix_csv(out, experiments::rate_matrix(c), c.seeds);
          }
          return out.str();
        },
        py::arg("config"));
  m.def("window_sweep_csv",
        [](const experiments::RunConfig& c) {
          std::ostringstream out;
          {
            py::gil_scoped_release release;
            experiments::write_window_sweep_csv(out, experiments::window_sweep(c), c.seeds);
          }
          return out.str();
        },
        py::arg("config"));
}
