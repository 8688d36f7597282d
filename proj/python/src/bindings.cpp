// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ecaf/cli.hpp"
#include "ecaf/data_io.hpp"
#include "ecaf/network.hpp"
#include "ecaf/objectives.hpp"
#include "ecaf/verify.hpp"

namespace py = pybind11;
using ecaf::Index;
using ecaf::Shape;
using ecaf::Tensor;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  FloatArray out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ecaf::ModelConfig make_config(Index base_channels, std::vector<Index> heads, std::uint64_t seed) {
  ecaf::ModelConfig cfg;
  cfg.base_channels = base_channels;
  cfg.heads = std::move(heads);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-light image enhancement network: inference, metrics, data and verification.";

  py::register_exception<ecaf::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ecaf::DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ecaf::FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<ecaf::IoError>(m, "IoError", PyExc_OSError);

  py::class_<ecaf::Model<float>>(m, "Model")
      .def(py::init([](Index base_channels, std::vector<Index> heads, std::uint64_t seed) {
             return ecaf::Model<float>(make_config(base_channels, std::move(heads), seed));
           }),
           py::arg("base_channels") = 8, py::arg("heads") = std::vector<Index>{2, 2, 2},
           py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return ecaf::load_model<float>(path); },
                  py::arg("path"))
      .def("save", [](const ecaf::Model<float>& model, const std::string& path) { ecaf::save_model(model, path); },
           py::arg("path"))
      .def("enhance",
           [](const ecaf::Model<float>& model, const FloatArray& img) {
             const Tensor<float> in = to_tensor(img);
             Tensor<float> out;
             {
               py::gil_scoped_release release;
               out = model.enhance(in);
             }
             return to_array(out);
           },
           py::arg("image"), "Enhances a [3,H,W] or [B,3,H,W] float array with values in [0, 1].")
      .def_property_readonly("parameter_count", &ecaf::Model<float>::parameter_count)
      .def_property_readonly("config", [](const ecaf::Model<float>& model) {
        py::dict d;
        for (const auto& [k, v] : model.config().to_key_values()) d[py::str(k)] = v;
        return d;
      });

  m.def("load_image", [](const std::string& path) { return to_array(ecaf::load_image(path)); }, py::arg("path"));
  m.def("save_image", [](const FloatArray& img, const std::string& path) { ecaf::save_image(to_tensor(img), path); },
        py::arg("image"), py::arg("path"));
  m.def("psnr", [](const FloatArray& a, const FloatArray& b) { return ecaf::psnr(to_tensor(a), to_tensor(b)); },
        py::arg("pred"), py::arg("ref"));
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return ecaf::ssim(to_tensor(a), to_tensor(b)); },
        py::arg("pred"), py::arg("ref"));

  m.def("synth_dataset",
        [](const std::string& out_dir, Index pairs, Index size, std::uint64_t seed, bool force) {
          ecaf::SynthOptions opt;
          opt.pairs = pairs;
          opt.size = size;
          opt.seed = seed;
          opt.force = force;
          const auto manifest = ecaf::build_synth_dataset(opt, out_dir);
          std::vector<std::pair<std::string, std::string>> out;
          for (const auto& p : manifest.pairs) out.emplace_back(manifest.resolve(p.low), manifest.resolve(p.ref));
          return out;
        },
        py::arg("out_dir"), py::arg("pairs") = 8, py::arg("size") = 64, py::arg("seed") = 0,
        py::arg("force") = false, "Writes a synthetic low/normal-light dataset; returns resolved (low, ref) paths.");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = ecaf::cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");

  m.def("verify",
        [](const std::vector<int>& ids, std::uint64_t seed) {
          ecaf::verify::Options opt;
          opt.seed = seed;
          std::vector<ecaf::verify::CriterionResult> results;
          {
            py::gil_scoped_release release;
            results = ecaf::verify::run(ids, opt);
          }
          py::list out;
          for (const auto& r : results) {
            py::list checks;
            for (const auto& c : r.checks)
              checks.append(py::dict(py::arg("name") = c.name, py::arg("passed") = c.passed,
                                     py::arg("detail") = c.detail));
            out.append(py::dict(py::arg("id") = r.id, py::arg("title") = r.title, py::arg("passed") = r.passed,
                                py::arg("seconds") = r.seconds, py::arg("checks") = checks));
          }
          return out;
        },
        py::arg("criteria"), py::arg("seed") = 0, "Runs acceptance criteria by id; an empty list runs all.");
}
