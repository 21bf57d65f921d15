// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0
//
// _ins: python bindings for the main operations (input encoding, volume
// compositing, patch sampling, perceptual losses, checkpoint rendering).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "ins/pipelines.h"

namespace py = pybind11;
using namespace ins;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<int>(a.shape(d)));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from(shape, std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int d : t.shape()) shape.push_back(d);
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

const FeatureExtractor& shared_surrogate() {
  static FeatureExtractor ex = FeatureExtractor::surrogate();
  return ex;
}

// Rendering access to a trained container.
class PyCheckpoint {
 public:
  explicit PyCheckpoint(const std::string& path)
      : model_(model_from_checkpoint(Checkpoint::load(path))) {}

  std::string kind() const { return field_kind_name(model_.field.config().kind); }
  std::string phase() const { return phase_name(model_.field.phase()); }
  int64_t step() const { return model_.global_step; }
  int style_count() const { return model_.field.config().style_count; }

  py::tuple render(const py::array_t<double, py::array::c_style | py::array::forcecast>& pose,
                   int height, int width, double focal,
                   const std::optional<std::vector<double>>& code, double near, double far,
                   int samples) {
    if (pose.size() != 16) throw ArgumentError("pose must be a 4x4 matrix");
    Camera cam;
    for (int i = 0; i < 16; ++i) cam.pose[static_cast<size_t>(i)] = pose.data()[i];
    cam.width = width;
    cam.height = height;
    cam.focal = focal;
    std::optional<StyleCode> style;
    if (code) {
      style.emplace();
      style->weights = *code;
    }
    Frame frame = render_view(model_, cam, style ? &*style : nullptr, near, far, samples);
    Tensor color({height, width, 3});
    std::copy(frame.color.data.begin(), frame.color.data.end(), color.data());
    Tensor depth({height, width});
    if (!frame.depth.data.empty())
      std::copy(frame.depth.data.begin(), frame.depth.data.end(), depth.data());
    return py::make_tuple(array_from_tensor(color), array_from_tensor(depth));
  }

  double sdf(double x, double y, double z) { return model_.field.sdf_distance({x, y, z}); }

  std::vector<double> sdf_normal(double x, double y, double z) {
    const Vec3 n = model_.field.sdf_normal({x, y, z});
    return {n[0], n[1], n[2]};
  }

 private:
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_ins, m) {
  m.doc() = "Stylized implicit neural representations: core operations";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);

  m.def(
      "positional_encoding",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, int freqs,
         bool include_input) {
        return array_from_tensor(positional_encoding(tensor_from_array(x), freqs, include_input));
      },
      py::arg("x"), py::arg("freqs"), py::arg("include_input") = true);

  m.def(
      "composite",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& colors,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& densities,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& deltas,
         const std::vector<double>& background) {
        if (background.size() != 3) throw ArgumentError("background must have 3 entries");
        RenderResult r = composite(tensor_from_array(colors), tensor_from_array(densities),
                                   tensor_from_array(deltas),
                                   {background[0], background[1], background[2]});
        py::dict out;
        out["color"] = array_from_tensor(r.color);
        out["depth"] = array_from_tensor(r.depth);
        out["weights"] = array_from_tensor(r.weights);
        out["transmittance"] = array_from_tensor(r.transmittance);
        return out;
      },
      py::arg("colors"), py::arg("densities"), py::arg("deltas"),
      py::arg("background") = std::vector<double>{1.0, 1.0, 1.0});

  m.def("pixel_grid", [](int height, int width) { return array_from_tensor(pixel_grid(height, width)); });

  m.def(
      "stride_patch",
      [](int height, int width, int side, int stride, uint64_t seed) {
        Rng rng(seed);
        auto pixels = stride_patch(height, width, side, stride, rng);
        py::array_t<int64_t> out({static_cast<py::ssize_t>(pixels.size()), py::ssize_t(2)});
        auto view = out.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < view.shape(0); ++i) {
          view(i, 0) = pixels[static_cast<size_t>(i)].first;
          view(i, 1) = pixels[static_cast<size_t>(i)].second;
        }
        return out;
      },
      py::arg("height"), py::arg("width"), py::arg("side"), py::arg("stride"), py::arg("seed") = 0);

  m.def("gram", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f) {
    return array_from_tensor(gram(tensor_from_array(f)));
  });

  // Perceptual losses over the deterministic surrogate backbone. Images are
  // [3, H, W] in [0, 1].
  auto chw = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img) {
    if (img.ndim() != 3 || img.shape(0) != 3) throw ArgumentError("image must be [3, H, W]");
    const int h = static_cast<int>(img.shape(1));
    const int w = static_cast<int>(img.shape(2));
    std::vector<double> data(img.data(), img.data() + img.size());
    return std::pair<Tensor, std::pair<int, int>>(Tensor::from({3, h * w}, std::move(data)),
                                                  {h, w});
  };
  m.def("content_loss",
        [chw](const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& c) {
          auto [yt, ys] = chw(y);
          auto [ct, cs] = chw(c);
          if (ys != cs) throw ArgumentError("content_loss: shape mismatch");
          return content_loss(shared_surrogate(), yt, ct, ys.first, ys.second);
        });
  m.def("style_loss",
        [chw](const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& s) {
          auto [yt, ys] = chw(y);
          auto [st, ss] = chw(s);
          return style_loss(shared_surrogate(), yt, ys.first, ys.second, st, ss.first, ss.second);
        });
  m.def("recon_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
          return recon_loss(tensor_from_array(a), tensor_from_array(b));
        });
  m.def("geometry_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
          return geometry_loss(tensor_from_array(a), tensor_from_array(b));
        });

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("kind", &PyCheckpoint::kind)
      .def_property_readonly("phase", &PyCheckpoint::phase)
      .def_property_readonly("step", &PyCheckpoint::step)
      .def_property_readonly("style_count", &PyCheckpoint::style_count)
      .def("render", &PyCheckpoint::render, py::arg("pose"), py::arg("height"), py::arg("width"),
           py::arg("focal"), py::arg("code") = std::nullopt, py::arg("near") = 2.0,
           py::arg("far") = 6.0, py::arg("samples") = 16)
      .def("sdf", &PyCheckpoint::sdf)
      .def("sdf_normal", &PyCheckpoint::sdf_normal);
}
