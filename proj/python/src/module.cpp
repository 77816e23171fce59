// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings. Images cross the boundary as float64 arrays of shape
// (H, W, C); configs as JSON text (the npbir package converts dicts).

#include "npbir/io_metrics.hpp"
#include "npbir/pbir.hpp"
#include "npbir/pipeline.hpp"
#include "npbir/shading.hpp"
#include "npbir/volume_render.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace npbir;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageBuffer to_image(const Array& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected an array of shape (H, W) or (H, W, C)");
    const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    ImageBuffer img(w, h, c);
    std::memcpy(img.data.data(), a.data(), img.data.size() * sizeof(double));
    return img;
}

Array to_array(const ImageBuffer& img) {
    Array a({img.height, img.width, img.channels});
    std::memcpy(a.mutable_data(), img.data.data(), img.data.size() * sizeof(double));
    return a;
}

Vec3 to_vec3(const std::array<double, 3>& v) { return {v[0], v[1], v[2]}; }

shading::SgMixture to_sg(const std::vector<std::tuple<std::array<double, 3>, double, std::array<double, 3>>>& lobes) {
    shading::SgMixture mix;
    for (const auto& [axis, lambda, amp] : lobes)
        mix.push_back({to_vec3(axis).normalized(), lambda, Rgb(amp[0], amp[1], amp[2])});
    return mix;
}

pipeline::RunContext context(const std::string& config_json, bool deterministic, bool verbose) {
    pipeline::RunContext ctx;
    if (!config_json.empty()) ctx.config = pipeline::merge_config(pipeline::default_config(), pipeline::Json::parse(config_json));
    ctx.deterministic = deterministic;
    ctx.verbose = verbose;
    return ctx;
}

}  // namespace

PYBIND11_MODULE(_npbir, m) {
    m.doc() = "npbir native core";

    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);

    // Images and metrics
    m.def("read_pfm", [](const std::string& path) { return to_array(io::read_pfm(path)); }, py::arg("path"));
    m.def("write_pfm", [](const std::string& path, const Array& img) { io::write_pfm(path, to_image(img)); },
          py::arg("path"), py::arg("image"));
    m.def("mse", [](const Array& a, const Array& b) { return io::mse(to_image(a), to_image(b)); });
    m.def("psnr", [](const Array& a, const Array& b, double peak) { return io::psnr(to_image(a), to_image(b), peak); },
          py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
    m.def("ssim", [](const Array& a, const Array& b) { return io::ssim(to_image(a), to_image(b)); });
    m.def(
        "albedo_alignment",
        [](const Array& pred, const Array& gt, const Array& mask) {
            const auto s = io::albedo_alignment(to_image(pred), to_image(gt), to_image(mask));
            return py::make_tuple(py::make_tuple(s.scale[0], s.scale[1], s.scale[2]), s.degenerate);
        },
        py::arg("pred"), py::arg("gt"), py::arg("mask"),
        "Per-channel least-squares scale taking pred toward gt over mask > 0.5; returns (scale, degenerate).");

    // Volume rendering building blocks
    m.def("alpha_from_sdf", &volren::alpha_from_sdf, py::arg("sdf_i"), py::arg("sdf_next"), py::arg("sharpness"));
    m.def(
        "composite",
        [](const std::vector<double>& alphas, const std::vector<std::array<double, 3>>& radiances) {
            std::vector<Rgb> rad;
            for (const auto& r : radiances) rad.emplace_back(r[0], r[1], r[2]);
            const auto c = volren::composite(alphas, rad);
            return py::make_tuple(py::make_tuple(c.color[0], c.color[1], c.color[2]), c.weights,
                                  c.residual_transmittance);
        },
        py::arg("alphas"), py::arg("radiances"), "Returns (color, weights, residual transmittance).");

    // Lighting
    m.def(
        "sg_eval",
        [](const std::vector<std::tuple<std::array<double, 3>, double, std::array<double, 3>>>& lobes,
           const std::array<double, 3>& w) {
            const Rgb v = shading::sg_eval(to_sg(lobes), to_vec3(w).normalized());
            return py::make_tuple(v[0], v[1], v[2]);
        },
        py::arg("lobes"), py::arg("direction"), "lobes: [(axis, lambda, amplitude_rgb), ...]");
    m.def(
        "envmap_from_sg",
        [](const std::vector<std::tuple<std::array<double, 3>, double, std::array<double, 3>>>& lobes, int width,
           int height) { return to_array(shading::envmap_from_sg(to_sg(lobes), width, height).image); },
        py::arg("lobes"), py::arg("width"), py::arg("height"));

    // Rendering
    py::class_<Camera>(m, "Camera")
        .def_static(
            "look_at",
            [](const std::array<double, 3>& eye, const std::array<double, 3>& target, const std::array<double, 3>& up,
               double fov_y_deg, int width, int height) {
                return Camera::look_at(to_vec3(eye), to_vec3(target), to_vec3(up), fov_y_deg, width, height);
            },
            py::arg("eye"), py::arg("target"), py::arg("up"), py::arg("fov_y_deg"), py::arg("width"),
            py::arg("height"))
        .def_readonly("width", &Camera::width)
        .def_readonly("height", &Camera::height);

    py::class_<pbir::TexturedAssets>(m, "Assets")
        .def_static("load", &pbir::load_assets, py::arg("directory"))
        .def("save", [](const pbir::TexturedAssets& a, const std::string& dir) { pbir::save_assets(dir, a); })
        .def_property_readonly("albedo", [](const pbir::TexturedAssets& a) { return to_array(a.albedo); })
        .def_property_readonly("roughness", [](const pbir::TexturedAssets& a) { return to_array(a.roughness); })
        .def_property_readonly("vertex_count", [](const pbir::TexturedAssets& a) { return a.mesh.vertex_count(); })
        .def_property_readonly("triangle_count", [](const pbir::TexturedAssets& a) { return a.mesh.triangle_count(); });

    m.def(
        "path_trace",
        [](const pbir::TexturedAssets& assets, const Camera& camera, int spp, int max_depth, bool gi, uint64_t seed) {
            ImageBuffer img;
            {
                py::gil_scoped_release release;
                img = pbir::path_trace(assets, camera, {spp, max_depth, gi, seed, true});
            }
            return to_array(img);
        },
        py::arg("assets"), py::arg("camera"), py::arg("spp") = 64, py::arg("max_depth") = 3, py::arg("gi") = true,
        py::arg("seed") = 0);

    // Pipeline stages; `config` is JSON merged onto the defaults.
    m.def("default_config", [] { return pipeline::default_config().dump(); });
    m.def("config_hash", [](const std::string& cfg) { return pipeline::config_hash(pipeline::Json::parse(cfg)); });
    m.def("read_manifest_hash", &pipeline::read_manifest_hash, py::arg("directory"));

    const auto release = py::call_guard<py::gil_scoped_release>();
    m.def(
        "make_toy",
        [](const std::string& shape, const std::string& out, const std::string& cfg, bool det, bool verbose) {
            pipeline::cmd_make_toy(toy::parse_kind(shape), out, context(cfg, det, verbose));
        },
        py::arg("shape"), py::arg("out"), py::arg("config") = "", py::arg("deterministic") = false,
        py::arg("verbose") = false, release);
    m.def(
        "surface",
        [](const std::string& data, const std::string& out, const std::string& cfg, bool det, bool verbose) {
            pipeline::cmd_surface(data, out, context(cfg, det, verbose));
        },
        py::arg("data"), py::arg("out"), py::arg("config") = "", py::arg("deterministic") = false,
        py::arg("verbose") = false, release);
    m.def(
        "distill",
        [](const std::string& data, const std::string& surface, const std::string& out, const std::string& cfg,
           bool det, bool verbose) { pipeline::cmd_distill(data, surface, out, context(cfg, det, verbose)); },
        py::arg("data"), py::arg("surface"), py::arg("out"), py::arg("config") = "",
        py::arg("deterministic") = false, py::arg("verbose") = false, release);
    m.def(
        "pbir",
        [](const std::string& data, const std::string& out, const std::string& assets, bool const_init,
           const std::string& mesh, const std::string& cfg, bool det, bool verbose) {
            pipeline::PbirInputs in;
            in.data = data;
            in.assets = assets;
            in.const_init = const_init;
            in.mesh = mesh;
            pipeline::cmd_pbir(in, out, context(cfg, det, verbose));
        },
        py::arg("data"), py::arg("out"), py::arg("assets") = "", py::arg("const_init") = false,
        py::arg("mesh") = "", py::arg("config") = "", py::arg("deterministic") = false, py::arg("verbose") = false,
        release);
    m.def(
        "render",
        [](const std::string& assets, const std::string& data, const std::string& out, const std::string& split,
           const std::string& env, double exposure, const std::string& cfg, bool det, bool verbose) {
            pipeline::RenderInputs in;
            in.assets = assets;
            in.data = data;
            in.split = split;
            in.env = env;
            in.exposure = exposure;
            pipeline::cmd_render(in, out, context(cfg, det, verbose));
        },
        py::arg("assets"), py::arg("data"), py::arg("out"), py::arg("split") = "all", py::arg("env") = "",
        py::arg("exposure") = 0.0, py::arg("config") = "", py::arg("deterministic") = false,
        py::arg("verbose") = false, release);
    m.def(
        "evaluate",
        [](const std::string& pred, const std::string& gt, const std::string& out, const std::string& cfg, bool det) {
            pipeline::EvalReport rep;
            {
                py::gil_scoped_release r;
                rep = pipeline::cmd_eval(pred, gt, out, context(cfg, det, false));
            }
            const auto mean = pipeline::mean_row(rep.images);
            py::dict d;
            d["views"] = rep.images.size();
            d["psnr"] = mean.psnr;
            d["ssim"] = mean.ssim;
            d["mse"] = mean.mse;
            if (rep.chamfer) d["chamfer"] = *rep.chamfer;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("out"), py::arg("config") = "", py::arg("deterministic") = false);
}
