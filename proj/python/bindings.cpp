#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "circuit_lab/analysis.hpp"
#include "circuit_lab/cli.hpp"
#include "circuit_lab/errors.hpp"
#include "circuit_lab/persistence.hpp"
#include "circuit_lab/train.hpp"

namespace py = pybind11;
using namespace circuit_lab;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(std::span<const double> v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

void assign_tensor(Tensor& t, py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  if (shape != t.shape()) throw InvalidInput("array shape does not match the tensor");
  std::copy(a.data(), a.data() + a.size(), t.data());
}

py::array_t<std::uint32_t> dataset_tokens(const Dataset& ds) {
  py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(ds.T())});
  auto* p = out.mutable_data();
  for (const auto& e : ds) p = std::copy(e.tokens.begin(), e.tokens.end(), p);
  return out;
}

py::array_t<std::uint32_t> dataset_labels(const Dataset& ds) {
  py::array_t<std::uint32_t> out(static_cast<py::ssize_t>(ds.size()));
  auto* p = out.mutable_data();
  for (const auto& e : ds) *p++ = e.label;
  return out;
}

Dataset dataset_from_arrays(std::uint32_t p, std::uint32_t k,
                            py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast> tokens,
                            py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast> labels) {
  if (tokens.ndim() != 2 || labels.ndim() != 1 || tokens.shape(0) != labels.shape(0))
    throw InvalidInput("tokens must be (n, T) and labels (n,)");
  const auto n = static_cast<std::size_t>(tokens.shape(0));
  const auto T = static_cast<std::size_t>(tokens.shape(1));
  std::vector<Example> examples(n);
  for (std::size_t i = 0; i < n; ++i) {
    examples[i].tokens.assign(tokens.data() + i * T, tokens.data() + (i + 1) * T);
    examples[i].label = labels.data()[i];
  }
  return Dataset(p, static_cast<std::uint32_t>(T), k, std::move(examples));
}

py::dict metric_dict(const MetricRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["epoch"] = r.epoch;
  d["phase"] = to_string(r.phase);
  d["train_loss"] = r.train_loss;
  d["train_acc"] = r.train_acc;
  d["test_loss"] = r.test_loss;
  d["test_acc"] = r.test_acc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "One-layer cross-attention transformer on prefix-sum tasks";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IncompatibleVersion>(m, "IncompatibleVersion", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  // Data ---------------------------------------------------------------------
  m.def("oracle_label", [](const std::vector<Token>& tokens, std::uint32_t k, std::uint32_t p) {
    return oracle_label(tokens, k, p);
  }, py::arg("tokens"), py::arg("k"), py::arg("p"));

  py::class_<TaskConfig>(m, "TaskConfig")
      .def(py::init([](std::uint32_t p, std::uint32_t p_max, std::uint32_t T, std::uint32_t k,
                       std::size_t n_train, std::size_t n_test, const std::string& sampling,
                       std::uint64_t seed) {
             return TaskConfig{p, p_max, T, k, n_train, n_test, sampling_from_string(sampling), seed};
           }),
           py::arg("p"), py::arg("p_max"), py::arg("T"), py::arg("k"), py::arg("n_train"),
           py::arg("n_test"), py::arg("sampling") = "without_replacement", py::arg("seed") = 0)
      .def_readwrite("p", &TaskConfig::p)
      .def_readwrite("p_max", &TaskConfig::p_max)
      .def_readwrite("T", &TaskConfig::T)
      .def_readwrite("k", &TaskConfig::k)
      .def_readwrite("n_train", &TaskConfig::n_train)
      .def_readwrite("n_test", &TaskConfig::n_test)
      .def_readwrite("seed", &TaskConfig::seed)
      .def("validate", &TaskConfig::validate);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&dataset_from_arrays), py::arg("p"), py::arg("k"), py::arg("tokens"),
           py::arg("labels"))
      .def_property_readonly("p", &Dataset::p)
      .def_property_readonly("T", &Dataset::T)
      .def_property_readonly("k", &Dataset::k)
      .def_property_readonly("tokens", &dataset_tokens)
      .def_property_readonly("labels", &dataset_labels)
      .def("__len__", &Dataset::size)
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def("generate_dataset", [](const TaskConfig& cfg) {
    auto split = generate_dataset(cfg);
    return py::make_tuple(std::move(split.train), std::move(split.test));
  }, py::arg("config"), "Returns (train, test).");
  m.def("enumerate_dataset", &enumerate_dataset, py::arg("p"), py::arg("T"), py::arg("k"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("dataset"));

  // Model --------------------------------------------------------------------
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](std::uint32_t p_max, std::uint32_t T, std::uint32_t d,
                       std::optional<std::uint32_t> h) {
             return ModelConfig{p_max, T, d, h.value_or(4 * d)};
           }),
           py::arg("p_max"), py::arg("T"), py::arg("d"), py::arg("h") = py::none())
      .def_readwrite("p_max", &ModelConfig::p_max)
      .def_readwrite("T", &ModelConfig::T)
      .def_readwrite("d", &ModelConfig::d)
      .def_readwrite("h", &ModelConfig::h)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
      .def("__repr__", [](const ModelConfig& c) {
        return "ModelConfig(p_max=" + std::to_string(c.p_max) + ", T=" + std::to_string(c.T) +
               ", d=" + std::to_string(c.d) + ", h=" + std::to_string(c.h) + ")";
      });

  py::class_<ModelParams>(m, "ModelParams")
      .def_static("zeros", &ModelParams::zeros, py::arg("config"))
      .def_property_readonly("config", &ModelParams::config)
      .def_property_readonly_static("names", [](py::object) {
        std::vector<std::string> names(kTensorNames.begin(), kTensorNames.end());
        return names;
      })
      .def("tensor", [](const ModelParams& p, const std::string& name) { return to_numpy(p.tensor(name)); },
           py::arg("name"), "A copy of the named tensor.")
      .def("set_tensor", [](ModelParams& p, const std::string& name, py::array_t<double> a) {
        assign_tensor(p.tensor(name), a);
      }, py::arg("name"), py::arg("values"))
      .def("flatten", [](const ModelParams& p) { return to_numpy(p.flatten()); })
      .def("assign_flat", [](ModelParams& p, py::array_t<double, py::array::c_style | py::array::forcecast> a) {
        p.assign_flat(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
      })
      .def("__len__", &ModelParams::total_size)
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));
  m.def("param_count", &param_count, py::arg("config"));
  m.def("lerp", [](const ModelParams& a, const ModelParams& b, double t) { return circuit_lab::lerp(a, b, t); },
        py::arg("a"), py::arg("b"), py::arg("t"));

  m.def("forward", [](const ModelParams& params, const std::vector<Token>& tokens) {
    const auto tr = forward(params, tokens);
    py::dict d;
    d["z"] = to_numpy(tr.z);
    d["s"] = to_numpy(tr.s);
    d["z_A"] = to_numpy(tr.z_A);
    d["z_bar_A"] = to_numpy(tr.z_bar_A);
    d["z_O"] = to_numpy(tr.z_O);
    d["logits"] = to_numpy(tr.logits);
    d["probs"] = to_numpy(tr.probs);
    return d;
  }, py::arg("params"), py::arg("tokens"));

  m.def("loss_and_grads", [](const ModelParams& params, const Dataset& batch) {
    auto r = loss_and_grads(params, batch.examples());
    return py::make_tuple(r.loss, r.correct, std::move(r.grads));
  }, py::arg("params"), py::arg("batch"), "Returns (mean loss, correct count, grads).");

  m.def("grad_check", [](const ModelParams& params, const Dataset& batch, double h) {
    const auto r = grad_check_model(params, batch.examples(), h);
    return py::make_tuple(r.max_rel_error, r.deterministic);
  }, py::arg("params"), py::arg("batch"), py::arg("h") = 1e-5,
     "Returns (max relative error, deterministic).");

  m.def("evaluate", [](const ModelParams& params, const Dataset& ds) {
    const auto r = evaluate(params, ds);
    return py::make_tuple(r.loss, r.accuracy);
  }, py::arg("params"), py::arg("dataset"), "Returns (loss, accuracy).");

  m.def("attention_weights", [](const ModelParams& params, const std::vector<Token>& tokens) {
    return to_numpy(attention_weights(params, tokens));
  }, py::arg("params"), py::arg("tokens"));
  m.def("mean_attention", [](const ModelParams& params, const Dataset& ds) {
    return to_numpy(mean_attention(params, ds));
  }, py::arg("params"), py::arg("dataset"));

  // Training -----------------------------------------------------------------
  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def_readonly("model", &ExperimentConfig::model)
      .def_property_readonly("num_phases", [](const ExperimentConfig& c) { return c.phases.size(); })
      .def("task_for", &ExperimentConfig::task_for, py::arg("phase_index"))
      .def("to_text", &serialize_config)
      .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; });

  m.def("parse_config", [](const std::string& text) { return parse_config(text).config; },
        py::arg("text"));
  m.def("load_config", [](const std::filesystem::path& path) { return load_config(path).config; },
        py::arg("path"));

  m.def("run_curriculum", [](const ExperimentConfig& cfg) {
    RunArtifacts art;
    {
      py::gil_scoped_release release;
      art = run_curriculum(cfg);
    }
    py::list metrics;
    for (const auto& row : art.metrics) metrics.append(metric_dict(row));
    py::dict out;
    out["metrics"] = metrics;
    out["final_params"] = std::move(art.final_params);
    out["total_steps"] = art.total_steps;
    return out;
  }, py::arg("config"), "Runs every phase in memory; returns metrics and final parameters.");

  // Analysis -----------------------------------------------------------------
  m.def("interpolate_losses", [](const ModelParams& a, const ModelParams& b, const Dataset& train,
                                 std::optional<Dataset> test, std::size_t points) {
    const auto prof = interpolate_losses(a, b, train, test ? *test : Dataset{}, points);
    py::dict d;
    d["t"] = to_numpy(prof.ts);
    d["train_loss"] = to_numpy(prof.train_losses);
    if (!prof.test_losses.empty()) d["test_loss"] = to_numpy(prof.test_losses);
    return d;
  }, py::arg("a"), py::arg("b"), py::arg("train"), py::arg("test") = py::none(),
     py::arg("points") = kDefaultInterpolationPoints);
  m.def("barrier_ratio", [](const std::vector<double>& losses) { return barrier_ratio(losses); },
        py::arg("losses"));

  m.def("export_clusters", [](const ModelParams& params, const Dataset& ds, std::uint32_t modulus) {
    const auto rows = export_clusters(params, ds, modulus);
    const auto d = static_cast<py::ssize_t>(params.config().d);
    py::array_t<double> z({static_cast<py::ssize_t>(rows.size()), d});
    py::array_t<std::uint32_t> labels(static_cast<py::ssize_t>(rows.size()));
    auto* zp = z.mutable_data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      zp = std::copy(rows[i].z_A.begin(), rows[i].z_A.end(), zp);
      labels.mutable_data()[i] = rows[i].label;
    }
    return py::make_tuple(z, labels);
  }, py::arg("params"), py::arg("dataset"), py::arg("modulus"), "Returns (z_A rows, labels).");

  m.def("cluster_purity", [](const ModelParams& params, const Dataset& ds, std::uint32_t modulus) {
    const auto rows = export_clusters(params, ds, modulus);
    return cluster_purity(rows, modulus).purity;
  }, py::arg("params"), py::arg("dataset"), py::arg("modulus"));

  // Persistence --------------------------------------------------------------
  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("format_version", &Checkpoint::format_version)
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("step", &Checkpoint::step)
      .def_property_readonly("phase", [](const Checkpoint& c) { return to_string(c.phase); })
      .def_readonly("params", &Checkpoint::params);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def("cli_main", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli_main(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the command line tool in-process; returns (exit code, stdout, stderr).");
}
