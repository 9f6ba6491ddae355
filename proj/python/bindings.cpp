#include "magic/experiment.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace magic;

PYBIND11_MODULE(_magic, m) {
  m.doc() = "Low-dose CT reconstruction core";

  auto base = py::register_exception<Error>(m, "MagicError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  auto io = py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", io.ptr());
  py::register_exception<InternalError>(m, "InternalError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("set_num_threads", &set_num_threads);

  py::class_<ScanGeometry>(m, "ScanGeometry")
      .def(py::init<>())
      .def_static("desk", &ScanGeometry::desk, py::arg("size") = 64, py::arg("views") = 180)
      .def_static("clinical", &ScanGeometry::clinical)
      .def_readwrite("source_to_center", &ScanGeometry::source_to_center)
      .def_readwrite("detector_to_center", &ScanGeometry::detector_to_center)
      .def_readwrite("n_detectors", &ScanGeometry::n_detectors)
      .def_readwrite("detector_pitch", &ScanGeometry::detector_pitch)
      .def_readwrite("n_views", &ScanGeometry::n_views)
      .def_readwrite("angular_span", &ScanGeometry::angular_span)
      .def_readwrite("image_rows", &ScanGeometry::image_rows)
      .def_readwrite("image_cols", &ScanGeometry::image_cols)
      .def_readwrite("pixel_size", &ScanGeometry::pixel_size)
      .def("violations", &ScanGeometry::violations)
      .def("validate", &ScanGeometry::validate);

  py::class_<Projector>(m, "Projector")
      .def(py::init<const ScanGeometry&>())
      .def("forward", [](const Projector& p, const Matrix& img) { return p.forward(ImageGrid(img)).values; })
      .def("back", [](const Projector& p, const Matrix& sino) { return p.back(Sinogram(sino)).values; })
      .def("normal_operator_norm", &Projector::normal_operator_norm)
      .def_property_readonly("geometry", &Projector::geometry);

  m.def(
      "fbp",
      [](const Matrix& sino, const ScanGeometry& g, const std::string& filter) {
        return fbp_reconstruct(Sinogram(sino), g, parse_fbp_filter(filter)).values;
      },
      py::arg("sinogram"), py::arg("geometry"), py::arg("filter") = "ramp");

  m.def(
      "simulate_lowdose",
      [](const Matrix& clean, double i0, double electronic_variance, std::uint64_t seed) {
        DoseModel d;
        d.incident_photons = i0;
        d.electronic_variance = electronic_variance;
        d.seed = seed;
        return simulate_lowdose(Sinogram(clean), d).values;
      },
      py::arg("clean"), py::arg("incident_photons") = 1e5, py::arg("electronic_variance") = 10.0,
      py::arg("seed") = 0);
  m.def("dose_photons", [](const std::string& tier) { return DoseModel::preset(tier).incident_photons; });

  m.def(
      "phantom",
      [](const std::string& kind, int rows, int cols, std::uint64_t seed) {
        return make_phantom(parse_phantom_kind(kind), rows, cols, seed).values;
      },
      py::arg("kind") = "shepp-logan", py::arg("rows") = 64, py::arg("cols") = 64, py::arg("seed") = 0);

  m.def(
      "psnr",
      [](const Matrix& pred, const Matrix& ref, double peak) -> std::optional<double> {
        return peak > 0.0 ? psnr(ImageGrid(pred), ImageGrid(ref), peak) : psnr(ImageGrid(pred), ImageGrid(ref));
      },
      py::arg("pred"), py::arg("ref"), py::arg("peak") = 0.0);
  m.def(
      "ssim",
      [](const Matrix& pred, const Matrix& ref, double dynamic_range) {
        SsimOptions o;
        o.dynamic_range = dynamic_range;
        return ssim(ImageGrid(pred), ImageGrid(ref), o);
      },
      py::arg("pred"), py::arg("ref"), py::arg("dynamic_range") = 0.0);

  m.def(
      "extract_patches",
      [](const Matrix& img, int patch, int step) {
        const auto layout = PatchLayout::make(static_cast<int>(img.rows()), static_cast<int>(img.cols()), patch, patch,
                                              step, step);
        return extract_patches(img, layout);
      },
      py::arg("image"), py::arg("patch") = 6, py::arg("step") = 2);
  m.def(
      "assemble_patches",
      [](const Matrix& X, int rows, int cols, int patch, int step) {
        return assemble_patches(X, PatchLayout::make(rows, cols, patch, patch, step, step));
      },
      py::arg("patches"), py::arg("rows"), py::arg("cols"), py::arg("patch") = 6, py::arg("step") = 2);

  // Edge list (i, j, weight) with i < j of the k-NN graph over the rows of X.
  m.def(
      "knn_graph",
      [](const Matrix& X, int k) {
        const auto g = build_graph(X, k);
        std::vector<std::tuple<int, int, double>> edges;
        for (int i = 0; i < g.weights.outerSize(); ++i)
          for (SparseMatrix::InnerIterator it(g.weights, i); it; ++it)
            if (i < it.col()) edges.emplace_back(i, static_cast<int>(it.col()), it.value());
        return edges;
      },
      py::arg("features"), py::arg("k") = 8);
  m.def(
      "normalized_laplacian",
      [](const Matrix& X, int k) { return Matrix(normalized_laplacian(build_graph(X, k))); }, py::arg("features"),
      py::arg("k") = 8);

  py::class_<MagicNetwork>(m, "Network")
      .def_static("load", &MagicNetwork::load)
      .def("save", &MagicNetwork::save)
      .def_property_readonly("blocks", &MagicNetwork::size)
      .def_property_readonly("parameter_count", &MagicNetwork::parameter_count)
      .def_property_readonly("geometry", &MagicNetwork::geometry)
      .def("reconstruct", [](const MagicNetwork& net, const Matrix& sino, const Matrix& x0) {
        return reconstruct(net, Sinogram(sino), ImageGrid(x0)).values;
      });

  // Validated configuration echoed back as TOML, plus the defaulted keys.
  m.def(
      "load_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        const auto c = load_config(path, overrides);
        return py::make_tuple(c.config.to_toml(), c.defaults_applied);
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "parse_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        const auto c = config_from_table(parse_toml(text), overrides);
        return py::make_tuple(c.config.to_toml(), c.defaults_applied);
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{});

  m.def("load_raw", [](const std::string& path) { return load_raw(path).values; });
  m.def("save_raw", [](const Matrix& values, const std::string& path) { save_raw(values, path); });
}
