#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "iskd/checkpoint.hpp"
#include "iskd/config.hpp"
#include "iskd/experiments.hpp"
#include "iskd/json_io.hpp"
#include "iskd/losses.hpp"
#include "iskd/ops.hpp"

namespace py = pybind11;
using namespace iskd;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
BasicTensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  BasicTensor<T> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.raw());
  return t;
}

template <typename T>
Array<T> to_array(const BasicTensor<T>& t) {
  Array<T> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.raw(), t.raw() + t.size(), a.mutable_data());
  return a;
}

std::vector<int> to_labels(const Array<int>& a) { return {a.data(), a.data() + a.size()}; }

py::tuple loss_tuple(const LossResult<double>& r) { return py::make_tuple(r.loss, to_array(r.dlogits)); }

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_iskd, m) {
  m.doc() = "Iterative self knowledge distillation core";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("matmul", [](const Array<double>& a, const Array<double>& b) {
    return to_array(matmul(to_tensor(a), to_tensor(b)));
  });
  m.def("softmax", [](const Array<double>& x) { return to_array(softmax(to_tensor(x))); });

  m.def("cross_entropy", [](const Array<double>& logits, const Array<int>& labels) {
    return loss_tuple(cross_entropy(to_tensor(logits), std::span<const int>(to_labels(labels))));
  });
  m.def(
      "kl_distill",
      [](const Array<double>& student, const Array<double>& teacher, double temperature,
         bool t2_scale) {
        KDConfig kd{0.5, temperature, t2_scale};
        return loss_tuple(kl_distill(to_tensor(student), to_tensor(teacher), kd));
      },
      py::arg("student"), py::arg("teacher"), py::arg("temperature") = 1.0,
      py::arg("t2_scale") = false);
  m.def(
      "kd_total",
      [](const Array<double>& student, const Array<double>& teacher, const Array<int>& labels,
         double alpha, double temperature) {
        KDConfig kd{alpha, temperature, false};
        kd.validate();
        const auto l = to_labels(labels);
        return loss_tuple(kd_total(to_tensor(student), to_tensor(teacher), std::span<const int>(l), kd));
      },
      py::arg("student"), py::arg("teacher"), py::arg("labels"), py::arg("alpha"),
      py::arg("temperature") = 1.0);

  m.def("linear_fit", [](std::vector<double> x, std::vector<double> y) {
    const FitResult f = linear_fit(x, y);
    py::dict d;
    d["slope"] = f.slope;
    d["intercept"] = f.intercept;
    d["pearson_r"] = f.pearson_r;
    return d;
  });
  m.def("stop_decision", [](std::vector<double> history, double epsilon, std::size_t max_iterations) {
    return stop_decision(history, epsilon, max_iterations) == StopDecision::stop ? "stop" : "proceed";
  });

  m.def("split_indices_7_3", [](std::size_t n, std::uint64_t seed) {
    SplitIndices s = split_indices_7_3(n, seed);
    return py::make_tuple(s.train, s.test);
  });
  m.def(
      "synth_pothole",
      [](std::size_t n, std::size_t size, std::uint64_t seed) {
        Dataset d = synth_pothole(n, size, seed);
        return py::make_tuple(to_array(d.images), Array<int>(d.labels.size(), d.labels.data()));
      },
      py::arg("n"), py::arg("size") = 16, py::arg("seed") = 7);

  py::class_<Network>(m, "Network")
      .def_static(
          "preset",
          [](const std::string& name, std::vector<std::size_t> input_shape, std::size_t classes,
             std::uint64_t seed) {
            Network net = build_network(preset_architecture(name, input_shape, classes));
            SeededRng rng(seed);
            init_params(net, rng);
            return net;
          },
          py::arg("name"), py::arg("input_shape"), py::arg("classes"), py::arg("seed") = 1)
      .def_static("load", [](const std::string& path) { return load_checkpoint(path).network; })
      .def("save", [](const Network& net, const std::string& path) { save_checkpoint(net, {}, path); })
      .def("predict", [](const Network& net, const Array<float>& batch) {
        return to_array(net.predict(to_tensor(batch)));
      })
      .def_property_readonly("param_count", &Network::param_count)
      .def_property_readonly("param_names", [](const Network& net) {
        std::vector<std::string> names;
        for (const auto& p : net.params()) names.push_back(p.name);
        return names;
      })
      .def("param", [](const Network& net, const std::string& name) {
        return to_array(net.param(name).value);
      });

  m.def(
      "parse_config",
      [](std::optional<std::string> path, const py::dict& overrides) {
        ConfigOverrides o;
        for (const auto& [k, v] : overrides) {
          const auto key = py::cast<std::string>(k);
          if (key == "seed") o.seed = py::cast<std::uint64_t>(v);
          else if (key == "alpha") o.alpha = py::cast<double>(v);
          else if (key == "epochs") o.epochs = py::cast<std::size_t>(v);
          else if (key == "arch") o.arch = py::cast<std::string>(v);
          else if (key == "dataset") o.dataset = py::cast<std::string>(v);
          else if (key == "alphas") o.alphas = py::cast<std::vector<double>>(v);
          else if (key == "epsilon") o.epsilon = py::cast<double>(v);
          else if (key == "max_iterations") o.max_iterations = py::cast<std::size_t>(v);
          else if (key == "save_epoch_checkpoints") o.save_epoch_checkpoints = py::cast<bool>(v);
          else if (key == "total_epochs") o.total_epochs = py::cast<std::size_t>(v);
          else throw ConfigError("unknown override", key);
        }
        std::optional<std::filesystem::path> p;
        if (path) p = *path;
        return json_to_py(config_to_json(parse_config(p, o)));
      },
      py::arg("path") = py::none(), py::arg("overrides") = py::dict());

  m.def(
      "run_iskd",
      [](const py::dict& config, const std::string& out_dir) {
        const std::string text = py::cast<std::string>(py::module_::import("json").attr("dumps")(config));
        const RunConfig c = config_from_json(nlohmann::json::parse(text));
        RunReport report;
        {
          py::gil_scoped_release release;
          report = run_iskd(c, out_dir);
        }
        return json_to_py(report_to_json(report));
      },
      py::arg("config"), py::arg("out_dir") = "");
}
