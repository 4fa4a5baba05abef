#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "drgn/core/checkpoint.hpp"
#include "drgn/core/config.hpp"
#include "drgn/core/errors.hpp"
#include "drgn/degradation/degradation.hpp"
#include "drgn/metrics/metrics.hpp"
#include "drgn/mfn/mfn.hpp"
#include "drgn/refinement/refinement.hpp"
#include "drgn/training/training.hpp"

namespace py = pybind11;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

drgn::ImageTensor to_image(const Array& a, drgn::Role role = drgn::Role::image) {
  if (a.ndim() != 3) throw drgn::ShapeError("expected an HxWxC array");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  const auto c = static_cast<int>(a.shape(2));
  std::vector<double> data(a.data(), a.data() + a.size());
  return drgn::ImageTensor(h, w, c, std::move(data), role);
}

Array to_array(const drgn::ImageTensor& img) {
  Array out({img.height(), img.width(), img.channels()});
  std::copy(img.data(), img.data() + img.size(), out.mutable_data());
  return out;
}

drgn::RunConfig parse(const std::string& text) {
  return drgn::config_from_json(nlohmann::json::parse(text));
}

// Generators restored from a checkpoint file.
struct Model {
  explicit Model(const std::filesystem::path& path)
      : checkpoint(drgn::load_checkpoint(path)), deg(drgn::training::load_deg(checkpoint)) {
    if (checkpoint.re_params) re.emplace(drgn::training::load_reg(checkpoint));
  }

  Array degradation(const Array& lowlight) const {
    return to_array(drgn::degradation::predict_degradation(to_image(lowlight), deg).field());
  }

  Array enhance(const Array& lowlight) const {
    if (!re) throw drgn::FormatError("checkpoint has no refinement generator");
    return to_array(drgn::refinement::enhance(to_image(lowlight), deg, *re));
  }

  drgn::Checkpoint checkpoint;
  drgn::mfn::MfnParams deg;
  std::optional<drgn::mfn::MfnParams> re;
};

}  // namespace

PYBIND11_MODULE(_drgn, m) {
  m.doc() = "Degradation-to-refinement low-light enhancement";

  auto base = py::register_exception<drgn::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<drgn::ShapeError>(m, "ShapeError", base);
  py::register_exception<drgn::PairingError>(m, "PairingError", base);
  py::register_exception<drgn::DecodeError>(m, "DecodeError", base);
  py::register_exception<drgn::ConfigError>(m, "ConfigError", base);
  py::register_exception<drgn::ConfigMismatchError>(m, "ConfigMismatchError", base);
  py::register_exception<drgn::FormatError>(m, "FormatError", base);
  py::register_exception<drgn::DistributionError>(m, "DistributionError", base);
  py::register_exception<drgn::EmptyReferenceError>(m, "EmptyReferenceError", base);
  py::register_exception<drgn::EmptyDatasetError>(m, "EmptyDatasetError", base);
  py::register_exception<drgn::GradientError>(m, "GradientError", base);

  m.def("default_config", [] { return drgn::to_json(drgn::RunConfig{}).dump(); },
        "Default configuration as a JSON string");
  m.def("desk_config", [] { return drgn::to_json(drgn::desk_profile()).dump(); });
  m.def("apply_overrides", [](const std::string& config, const std::vector<std::string>& sets) {
    auto cfg = parse(config);
    for (const auto& s : sets) drgn::apply_override(cfg, s);
    cfg.validate();
    return drgn::to_json(cfg).dump();
  });
  m.def("lr_schedule", [](std::int64_t step, const std::string& config) {
    return drgn::training::lr_schedule(step, parse(config));
  }, py::arg("step"), py::arg("config") = drgn::to_json(drgn::RunConfig{}).dump());

  m.def("psnr", [](const Array& a, const Array& b) {
    return drgn::metrics::psnr(to_image(a), to_image(b));
  });
  m.def("ssim", [](const Array& a, const Array& b) {
    return drgn::metrics::ssim_index(to_image(a), to_image(b));
  });
  m.def("charbonnier", [](const Array& a, const Array& b, double eps) {
    return drgn::refinement::charbonnier(to_image(a, drgn::Role::feature),
                                         to_image(b, drgn::Role::feature), eps);
  }, py::arg("a"), py::arg("b"), py::arg("eps") = 1e-3);
  m.def("soft_histogram", [](const Array& values) {
    return drgn::degradation::soft_histogram(std::span<const double>(values.data(), values.size()));
  });
  m.def("kl_div", [](const std::vector<double>& p, const std::vector<double>& q) {
    return drgn::degradation::kl_div(p, q);
  });
  m.def("adversarial_objective", [](double real, double fake) {
    return drgn::degradation::adversarial_objective(real, fake);
  });
  m.def("gaussian_pyramid", [](const Array& img, int levels) {
    std::vector<Array> out;
    for (const auto& lvl : drgn::mfn::build_pyramid(to_image(img, drgn::Role::feature), levels)) {
      out.push_back(to_array(lvl));
    }
    return out;
  });
  m.def("evaluate_dirs", [](const std::filesystem::path& pred, const std::filesystem::path& gt) {
    return drgn::metrics::report_to_json(drgn::metrics::evaluate_dirs(pred, gt)).dump();
  }, "MetricReport as a JSON string");
  m.def("train", [](const std::string& config, const std::filesystem::path& data,
                    const std::filesystem::path& refs, const std::filesystem::path& out,
                    std::int64_t max_steps) {
    py::gil_scoped_release release;
    drgn::training::train_all(parse(config), {data, refs, out}, max_steps);
  }, py::arg("config"), py::arg("data"), py::arg("refs"), py::arg("out"),
     py::arg("max_steps") = 0);

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>())
      .def_property_readonly("stage", [](const Model& self) { return self.checkpoint.stage; })
      .def_property_readonly("step", [](const Model& self) { return self.checkpoint.step; })
      .def_property_readonly("config", [](const Model& self) {
        return drgn::to_json(self.checkpoint.config).dump();
      })
      .def("degradation", &Model::degradation, "Predicted degradation map, HxWx3 in [-1,1]")
      .def("enhance", &Model::enhance, "Full two-stage enhancement, HxWx3 in [0,1]");
}
