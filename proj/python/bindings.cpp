#include <filesystem>
#include <string>

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "qtn/checkpoint.hpp"
#include "qtn/data.hpp"
#include "qtn/errors.hpp"
#include "qtn/loss.hpp"
#include "qtn/metrics.hpp"
#include "qtn/model.hpp"
#include "qtn/trainer.hpp"

namespace py = pybind11;
using namespace qtn;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const F64Array& a) {
  if (a.ndim() != 4) throw ShapeError("expected a 4-d array (n, c, h, w)");
  Tensor<double> t(a.shape(0), a.shape(1), a.shape(2), a.shape(3));
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

F64Array to_array(const Tensor<double>& t) {
  F64Array a({t.n(), t.c(), t.shape().h, t.shape().w});
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

LabelMap to_labels(const U8Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected a 3-d label array (n, h, w)");
  return LabelMap(a.shape(0), a.shape(1), a.shape(2), std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

std::span<const std::uint8_t> u8span(const U8Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

// Holds its own parameters so a Python object can run forward passes.
struct PyModel {
  Parameters<double> params;
  explicit PyModel(Parameters<double> p) : params(std::move(p)) {}

  F64Array forward(const F64Array& x, bool train) {
    Network<double> net(params);
    return to_array(net.forward(to_tensor(x), train ? Mode::kTrain : Mode::kInfer, false));
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "QuickTumorNet core bindings";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  m.attr("NUM_CLASSES") = kNumClasses;

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("in_channels", &ModelConfig::in_channels)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("base_channels", &ModelConfig::base_channels)
      .def_readwrite("depth", &ModelConfig::depth)
      .def_readwrite("dense_kernel", &ModelConfig::dense_kernel)
      .def_readwrite("input_h", &ModelConfig::input_h)
      .def_readwrite("input_w", &ModelConfig::input_w)
      .def("validate", &ModelConfig::validate)
      .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(" + to_json(c).dump() + ")"; });

  m.def("parameter_count", &parameter_count, py::arg("config") = ModelConfig{});
  m.def("block_names", &block_names, py::arg("config") = ModelConfig{});

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const ModelConfig& c, std::uint64_t seed) { return PyModel(build_model<double>(c, seed)); }),
           py::arg("config") = ModelConfig{}, py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return PyModel(load_weights<double>(p).params); },
          py::arg("path"))
      .def("save", [](const PyModel& self, const std::filesystem::path& p) { save_weights(self.params, p); })
      .def_property_readonly("config", [](const PyModel& self) { return self.params.config; })
      .def("forward", &PyModel::forward, py::arg("x"), py::arg("train") = false,
           "Class probabilities (n, C, h, w) for an input (n, 1, h, w).")
      .def("tensor_names", [](const PyModel& self) {
        std::vector<std::string> names;
        for (const auto& e : self.params.tensors.entries()) names.push_back(e.name);
        return names;
      });

  m.def(
      "loss",
      [](const F64Array& probs, const U8Array& labels, double threshold) {
        LossConfig cfg;
        cfg.threshold = threshold;
        const auto t = loss_forward(to_tensor(probs), to_labels(labels), cfg);
        py::dict d;
        d["total"] = t.total;
        d["l1"] = t.l1;
        d["l2"] = t.l2;
        py::list classes;
        for (const auto& c : t.classes) {
          py::dict k;
          k["l1"] = c.l1;
          k["l2"] = c.l2;
          k["gamma1"] = c.gamma1;
          k["gamma2"] = c.gamma2;
          classes.append(k);
        }
        d["classes"] = classes;
        return d;
      },
      py::arg("probs"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def(
      "dice",
      [](const U8Array& pred, const U8Array& truth, std::uint8_t c) {
        if (pred.size() != truth.size()) throw ShapeError("pred and truth sizes differ");
        return dice_per_class(u8span(pred), u8span(truth), c);
      },
      py::arg("pred"), py::arg("truth"), py::arg("cls"));

  m.def(
      "roc_auc",
      [](const F64Array& scores, const U8Array& positive) {
        if (scores.size() != positive.size()) throw ShapeError("scores and labels sizes differ");
        return roc_auc(std::span<const double>(scores.data(), scores.size()), u8span(positive)).auc;
      },
      py::arg("scores"), py::arg("positive"));

  m.def(
      "read_mask",
      [](const std::filesystem::path& p) {
        const Mask2D mk = read_qtns_mask(p);
        U8Array a({mk.h, mk.w});
        std::copy(mk.labels.begin(), mk.labels.end(), a.mutable_data());
        return a;
      },
      py::arg("path"));
  m.def(
      "read_image",
      [](const std::filesystem::path& p) {
        const Image2D im = read_qtns_image(p);
        py::array_t<float> a({im.h, im.w});
        std::copy(im.pixels.begin(), im.pixels.end(), a.mutable_data());
        return a;
      },
      py::arg("path"));

  m.def(
      "synth",
      [](const std::filesystem::path& out, std::size_t count, std::size_t size, std::uint64_t seed) {
        SynthConfig sc;
        sc.count = count;
        sc.size = size;
        sc.seed = seed;
        return synth_generate(sc, out).manifest.rows.size();
      },
      py::arg("out"), py::arg("count"), py::arg("size") = 64, py::arg("seed") = 0,
      "Writes synthetic slices under `out`; returns the number of rows.");
}
