#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <cstring>

#include "cem/degradations.hpp"
#include "cem/engine.hpp"
#include "cem/error.hpp"
#include "cem/imaging.hpp"
#include "cem/library.hpp"
#include "cem/model.hpp"
#include "cem/reporting.hpp"

namespace py = pybind11;
using namespace cem;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) float array -> ImageBuffer. Values are clamped.
ImageBuffer to_image(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw DimensionError("image must be (H, W) or (H, W, C)");
  const int h = int(a.shape(0)), w = int(a.shape(1));
  const int c = a.ndim() == 3 ? int(a.shape(2)) : 1;
  std::vector<float> data(a.data(), a.data() + a.size());
  return ImageBuffer(h, w, c, std::move(data));
}

py::array_t<float> to_array(const ImageBuffer& img) {
  py::array_t<float> out({img.height(), img.width(), img.channels()});
  std::memcpy(out.mutable_data(), img.data().data(), img.size() * sizeof(float));
  return out;
}

RoiRect to_roi(const std::vector<int>& v) {
  if (v.size() != 4) throw InvalidArgument("roi must be (x, y, w, h)");
  return {v[0], v[1], v[2], v[3]};
}

DegradationSpec make_spec(const std::string& task, int scale, double sigma) {
  switch (parse_task(task)) {
    case Task::sr: return DegradationSpec::super_resolution(scale);
    case Task::dn: return DegradationSpec::denoising(sigma);
    case Task::dr: return DegradationSpec::deraining();
    default: throw InvalidArgument("library task must be sr, dn or dr");
  }
}

ChannelMode parse_metric(const std::string& m) {
  if (m == "rgb") return ChannelMode::rgb;
  if (m == "luma") return ChannelMode::luma;
  throw InvalidArgument("metric must be rgb or luma");
}

py::array_t<double> effects_grid(const CausalEffectMap& cem) {
  py::array_t<double> out({cem.grid.rows, cem.grid.cols});
  std::memcpy(out.mutable_data(), cem.effects.data(), cem.effects.size() * sizeof(double));
  return out;
}

std::vector<double> flat_effects(const py::handle& h) {
  if (py::isinstance<CausalEffectMap>(h)) return h.cast<const CausalEffectMap&>().effects;
  auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(h);
  if (!a) throw InvalidArgument("expected a CausalEffectMap or an array of effects");
  return {a.data(), a.data() + a.size()};
}

py::dict stats_dict(const EffectStats& s) {
  py::dict d;
  d["positive_pct"] = s.positive_pct;
  d["negative_pct"] = s.negative_pct;
  d["none_pct"] = s.none_pct;
  d["range_min_db"] = s.range_min_db;
  d["range_max_db"] = s.range_max_db;
  d["epsilon"] = s.epsilon;
  return d;
}

}  // namespace

PYBIND11_MODULE(_cem, m) {
  m.doc() = "Causal effect maps for image restoration models";

  auto base = py::register_exception<Error>(m, "CemError", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<BackendError>(m, "BackendError", base.ptr());

  m.attr("ROI_SENTINEL") = kRoiSentinel;

  m.def(
      "psnr",
      [](const FloatArray& a, const FloatArray& b, std::optional<std::vector<int>> roi,
         const std::string& metric) {
        const auto ia = to_image(a), ib = to_image(b);
        return roi ? psnr(ia, ib, to_roi(*roi), parse_metric(metric))
                   : psnr(ia, ib, parse_metric(metric));
      },
      py::arg("a"), py::arg("b"), py::arg("roi") = py::none(), py::arg("metric") = "rgb",
      "PSNR with peak 1, capped at 100 dB. roi is (x, y, w, h).");
  m.def(
      "resize_bicubic",
      [](const FloatArray& img, int h, int w) { return to_array(resize_bicubic(to_image(img), h, w)); },
      py::arg("image"), py::arg("height"), py::arg("width"));
  m.def(
      "degrade",
      [](const FloatArray& img, const std::string& task, std::uint64_t seed, int scale,
         double sigma, std::uint32_t stream) {
        return to_array(degrade(to_image(img), make_spec(task, scale, sigma), seed, stream));
      },
      py::arg("image"), py::arg("task"), py::arg("seed") = 0, py::arg("scale") = 4,
      py::arg("sigma") = 50.0, py::arg("stream") = 0);
  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); });
  m.def("write_image", [](const FloatArray& img, const std::filesystem::path& p) {
    write_image(to_image(img), p);
  });

  py::class_<InterventionLibrary>(m, "Library")
      .def_static(
          "build",
          [](const std::filesystem::path& dir, const std::string& task, std::size_t pool,
             std::uint64_t seed, int patch_size, int scale, double sigma) {
            LibraryBuildOptions o;
            o.pool_size = pool;
            o.seed = seed;
            o.patch_size = patch_size;
            py::gil_scoped_release nogil;
            return build_library(dir, make_spec(task, scale, sigma), o);
          },
          py::arg("image_dir"), py::arg("task"), py::arg("pool") = 20000, py::arg("seed") = 0,
          py::arg("patch_size") = 8, py::arg("scale") = 4, py::arg("sigma") = 50.0)
      .def_static(
          "from_patches",
          [](const std::vector<FloatArray>& patches, const std::string& task, int scale,
             double sigma) {
            std::vector<ImageBuffer> pool;
            for (const auto& p : patches) pool.push_back(to_image(p));
            return make_library(std::move(pool), make_spec(task, scale, sigma));
          },
          py::arg("patches"), py::arg("task") = "dn", py::arg("scale") = 4,
          py::arg("sigma") = 50.0)
      .def_static("load", &load_library, py::arg("dir"))
      .def("save", [](const InterventionLibrary& l, const std::filesystem::path& d) { save_library(l, d); })
      .def("__len__", &InterventionLibrary::size)
      .def_readonly("patch_size", &InterventionLibrary::patch_size)
      .def_readonly("channels", &InterventionLibrary::channels)
      .def_property_readonly("task",
                             [](const InterventionLibrary& l) { return to_string(l.degradation.task); })
      .def("patch", [](const InterventionLibrary& l, std::size_t i) { return to_array(l.pool.at(i)); })
      .def_property_readonly("g_values", [](const InterventionLibrary& l) { return l.g_values; });

  py::class_<CausalEffectMap>(m, "CausalEffectMap")
      .def_property_readonly("effects", &effects_grid,
                             "(rows, cols) effects in dB; ROI patches hold +inf")
      .def_readonly("baseline_db", &CausalEffectMap::baseline_db)
      .def_readonly("inference_count", &CausalEffectMap::inference_count)
      .def_readonly("sensitive_count", &CausalEffectMap::sensitive_count)
      .def_readonly("unrelated_count", &CausalEffectMap::unrelated_count)
      .def_property_readonly("model", [](const CausalEffectMap& c) { return c.model.name; })
      .def_property_readonly("mode", [](const CausalEffectMap& c) { return to_string(c.config.mode); })
      .def("to_json", [](const CausalEffectMap& c) { return cem_to_json(c).dump(2); })
      .def("write", [](const CausalEffectMap& c, const std::filesystem::path& p) { write_cem_json(c, p); })
      .def_static("read", &read_cem_json, py::arg("path"));

  m.def(
      "compute_cem",
      [](const std::string& model, const FloatArray& input, const FloatArray& gt,
         const std::vector<int>& roi, const InterventionLibrary& library,
         const std::string& mode, int T, int C, int F, double tau, std::uint64_t seed,
         int workers, const std::string& sampling, const std::string& metric, int patch_size) {
        EngineConfig cfg;
        cfg.mode = parse_mode(mode);
        cfg.T = T;
        cfg.C = C;
        cfg.F = F;
        cfg.tau = tau;
        cfg.seed = seed;
        cfg.workers = workers;
        cfg.sampling = parse_sampling(sampling);
        cfg.metric = parse_metric(metric);
        cfg.patch_size = patch_size;
        cfg.validate();
        auto in = to_image(input);
        auto g = to_image(gt);
        py::gil_scoped_release nogil;
        CemProblem prob(open_model(model), std::move(in), std::move(g), to_roi(roi), patch_size,
                        cfg.metric);
        const auto dens = estimate_density(library, cfg.density_bins);
        return compute_cem(prob, library, dens, cfg);
      },
      py::arg("model"), py::arg("input"), py::arg("gt"), py::arg("roi"), py::arg("library"),
      py::arg("mode") = "fast", py::arg("T") = 500, py::arg("C") = 3, py::arg("F") = 50,
      py::arg("tau") = 0.01, py::arg("seed") = 0, py::arg("workers") = 1,
      py::arg("sampling") = "density", py::arg("metric") = "rgb", py::arg("patch_size") = 8,
      "Causal effect map of `model` (builtin:NAME, subprocess:CMD or onnx:FILE).");

  m.def(
      "similarity_score",
      [](const py::handle& ref, const py::handle& cand) {
        return similarity_score(flat_effects(ref), flat_effects(cand));
      },
      py::arg("reference"), py::arg("candidate"));
  m.def(
      "classify_effects",
      [](const py::handle& effects, double epsilon) {
        return stats_dict(classify_effects(flat_effects(effects), epsilon));
      },
      py::arg("effects"), py::arg("epsilon") = 0.01);
  m.def(
      "render_heatmap",
      [](const CausalEffectMap& c, const FloatArray& input, int display_factor) {
        HeatmapOptions o;
        o.display_factor = display_factor;
        return to_array(render_heatmap_image(c, to_image(input), o));
      },
      py::arg("cem"), py::arg("input"), py::arg("display_factor") = 4);
  m.def(
      "inference_count",
      [](const std::string& mode, std::uint64_t n_outside, std::uint64_t sensitive, int T, int C,
         int F) {
        EngineConfig cfg;
        cfg.mode = parse_mode(mode);
        cfg.T = T;
        cfg.C = C;
        cfg.F = F;
        return inference_count(cfg, n_outside, sensitive);
      },
      py::arg("mode"), py::arg("n_outside"), py::arg("sensitive") = 0, py::arg("T") = 500,
      py::arg("C") = 3, py::arg("F") = 50);
}
