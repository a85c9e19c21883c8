#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stprompt/harness.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

stp::ExperimentConfig parse_config(const std::string& text) {
    stp::ExperimentConfig c = text.empty() ? stp::ExperimentConfig::defaults() : stp::config_from_json(json::parse(text));
    c.validate();
    return c;
}

stp::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return stp::Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

py::array_t<double> to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    py::array_t<double> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict render(const std::string& config_text, std::uint64_t seed) {
    const stp::ExperimentConfig c = parse_config(config_text);
    stp::Scene scene;
    {
        py::gil_scoped_release release;
        scene = c.scene.objects.empty() ? stp::generate(stp::draw_scene_specs(c, seed, 1, "eval").front())
                                        : stp::generate(c.scene);
    }
    const auto& L = scene.truth.layout;
    const auto H = static_cast<py::ssize_t>(scene.spec.height), W = static_cast<py::ssize_t>(scene.spec.width);
    const auto C = static_cast<py::ssize_t>(scene.spec.channels);
    const auto V = static_cast<py::ssize_t>(L.views), T = static_cast<py::ssize_t>(L.frames);
    std::vector<double> pixels, depth;
    for (const auto& f : scene.frames) {
        pixels.insert(pixels.end(), f.pixels.begin(), f.pixels.end());
        depth.insert(depth.end(), f.depth.begin(), f.depth.end());
    }
    std::vector<double> labels;
    for (auto l : scene.truth.labels) labels.push_back(static_cast<double>(l));
    const std::vector<py::ssize_t> grid{V, T, static_cast<py::ssize_t>(L.rows), static_cast<py::ssize_t>(L.cols)};
    py::list pairs;
    for (const auto& p : stp::emit_instructions(scene.truth, c.templates, scene.id).pairs) {
        py::dict d;
        d["instruction"] = p.instruction;
        d["answer"] = p.answer;
        d["task"] = stp::to_string(p.task);
        pairs.append(d);
    }
    py::dict out;
    out["id"] = scene.id;
    out["pixels"] = to_array(pixels, {V, T, H, W, C});
    out["depth"] = to_array(depth, {V, T, H, W});
    out["labels"] = to_array(labels, grid);
    out["flow"] = to_array(scene.truth.flow, grid);
    out["instructions"] = pairs;
    out["json"] = stp::scene_to_json(scene);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Spatiotemporal prompt toolkit";

    m.def("default_config", [] { return stp::config_to_json(stp::ExperimentConfig::defaults()).dump(); });
    m.def("normalize_config", [](const std::string& text) { return stp::config_to_json(parse_config(text)).dump(); },
          py::arg("config_json"));
    m.def("config_hash", [](const std::string& text) { return stp::config_hash(parse_config(text)); },
          py::arg("config_json"));
    m.def("render_scene", &render, py::arg("config_json") = "", py::arg("seed") = 0);

    m.def(
        "train",
        [](const std::string& text) {
            const stp::ExperimentConfig c = parse_config(text);
            stp::MetricsReport r;
            {
                py::gil_scoped_release release;
                r = stp::run_experiment(c);
            }
            return stp::report_to_json(r).dump();
        },
        py::arg("config_json"));
    m.def("report_table", [](const std::string& text) { return stp::report_table(stp::report_from_json(json::parse(text))); },
          py::arg("report_json"));

    m.def(
        "fd_check",
        [](const std::string& text, std::uint64_t seed, double eps, double tol) {
            const stp::ExperimentConfig c = stp::fd_config(parse_config(text));
            stp::FdReport r;
            {
                py::gil_scoped_release release;
                r = stp::pipeline_fd_check(c, seed, eps, tol);
            }
            py::dict out;
            out["max_rel_error"] = r.max_rel_error;
            out["entries"] = r.entries_checked;
            out["parameters"] = r.checked_params;
            out["passed"] = r.passed();
            return out;
        },
        py::arg("config_json") = "", py::arg("seed") = 0, py::arg("eps") = 1e-6, py::arg("tol") = 1e-4);

    m.def(
        "silhouette",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, const std::vector<int>& labels) {
            return stp::compute_silhouette(to_matrix(x), labels);
        },
        py::arg("features"), py::arg("labels"));
    m.def(
        "motion_modulation",
        [](const std::vector<double>& flow, std::size_t tokens_per_frame) {
            return stp::motion_modulation(flow, tokens_per_frame);
        },
        py::arg("flow"), py::arg("tokens_per_frame"));
    m.def(
        "unproject",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& K,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& R, std::array<double, 3> T, double u,
           double v, double depth) {
            stp::Camera cam{to_matrix(K), to_matrix(R), T};
            cam.validate();
            return stp::unproject(cam, u, v, depth);
        },
        py::arg("K"), py::arg("R"), py::arg("T"), py::arg("u"), py::arg("v"), py::arg("depth"));
    m.def(
        "project",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& K,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& R, std::array<double, 3> T,
           std::array<double, 3> x) {
            stp::Camera cam{to_matrix(K), to_matrix(R), T};
            cam.validate();
            const stp::Projection p = stp::project(cam, x);
            return std::array<double, 3>{p.u, p.v, p.depth};
        },
        py::arg("K"), py::arg("R"), py::arg("T"), py::arg("x"));

    py::register_exception<stp::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<stp::GeometryError>(m, "GeometryError", PyExc_ValueError);
}
