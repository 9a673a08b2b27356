#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "disco/aggregation.hpp"
#include "disco/data.hpp"
#include "disco/model.hpp"
#include "disco/node.hpp"
#include "disco/simharness.hpp"
#include "disco/task.hpp"

namespace py = pybind11;
using namespace disco;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::dict dataset_dict(const Dataset& d) {
  py::array_t<double> x({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.num_features)});
  std::copy(d.features.begin(), d.features.end(), x.mutable_data());
  py::array_t<std::uint32_t> y(static_cast<py::ssize_t>(d.size()));
  std::copy(d.labels.begin(), d.labels.end(), y.mutable_data());
  py::dict out;
  out["features"] = x;
  out["labels"] = y;
  out["num_classes"] = d.num_classes;
  out["label_names"] = d.label_names;
  return out;
}

py::tuple run_report(const Scenario& s) {
  const ExperimentReport r = run_scenario(s);
  return py::make_tuple(to_json(r).dump(), report_csv(r));
}

}  // namespace

PYBIND11_MODULE(_disco, m) {
  m.doc() = "Native core of the disco collaborative-learning framework";

  static py::exception<Error> error(m, "DiscoError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(error_code_name(e.code())) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "run_scenario_file",
      [](const std::string& path) {
        return run_report(load_scenario(path));
      },
      py::arg("path"), "Run a scenario file; returns (report_json, metrics_csv).");

  m.def(
      "run_scenario_json",
      [](const std::string& text, const std::string& base_dir) {
        return run_report(scenario_from_json(nlohmann::json::parse(text), base_dir));
      },
      py::arg("text"), py::arg("base_dir") = ".", "Run an inline scenario; returns (report_json, metrics_csv).");

  m.def(
      "normalize_task_spec",
      [](const std::string& text) {
        const TaskSpec spec = task_spec_from_json(nlohmann::json::parse(text));
        spec.validate();
        return to_json(spec).dump();
      },
      py::arg("text"), "Validate a task spec and return it with defaults filled in.");

  m.def(
      "load_csv", [](const std::string& path, const std::string& label) { return dataset_dict(load_csv(path, label)); },
      py::arg("path"), py::arg("label_column") = "label");

  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels) { return dataset_dict(load_idx(images, labels)); },
      py::arg("images"), py::arg("labels"));

  m.def(
      "train_solo",
      [](const std::string& spec_json, const std::string& csv, const std::string& label) {
        const TaskSpec spec = task_spec_from_json(nlohmann::json::parse(spec_json));
        spec.validate();
        const TrainResult r = run_solo(spec, load_csv(csv, label));
        py::list metrics;
        for (const EpochMetrics& e : r.metrics) metrics.append(py::make_tuple(e.epoch, e.loss, e.accuracy));
        return py::make_tuple(to_array(r.params.values), metrics);
      },
      py::arg("spec_json"), py::arg("csv_path"), py::arg("label_column") = "label",
      "Train alone on a CSV file; returns (flat params, [(epoch, loss, accuracy)]).");

  m.def(
      "evaluate_checkpoint",
      [](const std::string& model, const std::string& csv, const std::string& label) {
        const EvalResult e = evaluate(load_checkpoint(model), load_csv(csv, label));
        return py::make_tuple(e.loss, e.accuracy);
      },
      py::arg("model_path"), py::arg("csv_path"), py::arg("label_column") = "label");

  m.def(
      "fedavg",
      [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& updates,
         const std::vector<std::uint64_t>& sample_counts, bool uniform) {
        if (!sample_counts.empty() && sample_counts.size() != updates.size()) {
          throw Error(ErrorCode::kCountMismatch, "fedavg: sample_counts must match updates");
        }
        std::vector<Contribution> cs;
        for (std::size_t i = 0; i < updates.size(); ++i) {
          Contribution c;
          c.client_id = i + 1;
          c.payload.values = from_array(updates[i]);
          c.payload.manifest = {{"update", {c.payload.values.size()}}};
          if (!sample_counts.empty()) c.sample_count = sample_counts[i];
          cs.push_back(std::move(c));
        }
        return to_array(fedavg(cs, uniform ? Weighting::kUniform : Weighting::kSampleCount).global_update.values);
      },
      py::arg("updates"), py::arg("sample_counts") = std::vector<std::uint64_t>{}, py::arg("uniform") = false);
}
