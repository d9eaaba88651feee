#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rksp/kss.hpp"
#include "rksp/profiler.hpp"
#include "rksp/report.hpp"
#include "rksp/risk_eval.hpp"
#include "rksp/snapshot_store.hpp"

namespace py = pybind11;
using namespace rksp;

namespace {

Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw Error(ErrorCode::InvalidArgument, "precision must be f32 or f64, got " + s);
}

ProfilerConfig config_from_kwargs(const py::kwargs& kwargs) {
    ProfilerConfig config;
    for (const auto& item : kwargs) {
        const std::string key = py::str(item.first);
        std::string value;
        if (py::isinstance<py::bool_>(item.second))
            value = item.second.cast<bool>() ? "true" : "false";
        else
            value = py::str(item.second);
        if (!apply_profiler_key(config, key, value))
            throw Error(ErrorCode::InvalidArgument, "unknown profiler option " + key);
    }
    config.validate();
    return config;
}

py::object json_to_python(const Json& doc) {
    return py::module_::import("json").attr("loads")(dump_json(doc));
}

CohortResult cohort_from(const std::vector<double>& scores, const std::vector<bool>& diverged) {
    if (scores.size() != diverged.size())
        throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
    CohortResult c;
    for (std::size_t i = 0; i < scores.size(); ++i) c.trials.push_back({scores[i], diverged[i], ""});
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Residual-stream spectral profiling";

    py::exception<Error>(m, "RkspError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object type = py::module_::import("rksp._core").attr("RkspError");
            py::object exc = type(py::str(e.what()));
            exc.attr("code") = error_name(e.code());
            if (auto* nf = dynamic_cast<const NonFiniteDataError*>(&e)) {
                exc.attr("layer") = nf->layer();
                exc.attr("column") = nf->column();
            }
            PyErr_SetObject(type.ptr(), exc.ptr());
        }
    });

    py::class_<SnapshotDataset>(m, "Dataset")
        .def_static(
            "from_stream",
            [](std::vector<Matrix> states, const std::string& precision, std::string tag) {
                return SnapshotDataset::from_stream(std::move(states), parse_precision(precision), std::move(tag));
            },
            py::arg("states"), py::arg("precision") = "f64", py::arg("source_tag") = "",
            "Hidden states h_0..h_L, each d x N (columns are samples).")
        .def_static(
            "from_pairs",
            [](std::vector<Matrix> xs, std::vector<Matrix> ys, const std::string& precision, std::string tag) {
                return SnapshotDataset::from_pairs(std::move(xs), std::move(ys), parse_precision(precision),
                                                   std::move(tag));
            },
            py::arg("xs"), py::arg("ys"), py::arg("precision") = "f64", py::arg("source_tag") = "")
        .def_static("load", &load_dataset, py::arg("path"))
        .def_static("load_csv", &load_dataset_csv, py::arg("directory"))
        .def("save", [](const SnapshotDataset& d, const std::filesystem::path& p) { write_dataset(d, p); },
             py::arg("path"))
        .def("save_csv", [](const SnapshotDataset& d, const std::filesystem::path& p) { write_dataset_csv(d, p); },
             py::arg("directory"))
        .def_property_readonly("layer_count", &SnapshotDataset::layer_count)
        .def_property_readonly("hidden_dim", &SnapshotDataset::hidden_dim)
        .def_property_readonly("sample_count", &SnapshotDataset::sample_count)
        .def_property_readonly("stream_mode", &SnapshotDataset::stream_mode)
        .def_property_readonly("precision",
                               [](const SnapshotDataset& d) { return d.precision() == Precision::F32 ? "f32" : "f64"; })
        .def_property_readonly("source_tag", &SnapshotDataset::source_tag)
        .def("x", &SnapshotDataset::x, py::arg("layer"))
        .def("y", &SnapshotDataset::y, py::arg("layer"))
        .def("consecutive", &SnapshotDataset::consecutive)
        .def("validate", &SnapshotDataset::validate)
        .def("subsample", &subsample_columns, py::arg("n"), py::arg("seed"))
        .def("__eq__", &SnapshotDataset::operator==)
        .def("__repr__", [](const SnapshotDataset& d) {
            return "<rksp.Dataset L=" + std::to_string(d.layer_count()) + " d=" + std::to_string(d.hidden_dim()) +
                   " N=" + std::to_string(d.sample_count()) + (d.stream_mode() ? " stream>" : " pairs>");
        });

    m.def("subsample_indices", &subsample_indices, py::arg("total"), py::arg("n"), py::arg("seed"),
          "Column indices kept by Dataset.subsample.");
    m.def("container_format", &container_format_description);

    m.def(
        "profile",
        [](const SnapshotDataset& d, const py::kwargs& kwargs) {
            const ProfilerConfig config = config_from_kwargs(kwargs);
            SpectralProfile p;
            {
                py::gil_scoped_release release;
                p = profile(d, config);
            }
            return json_to_python(profile_to_json(p, config));
        },
        py::arg("dataset"),
        "Profile report as a dict. Keyword options mirror the CLI config file keys.");

    m.def(
        "auroc", [](const std::vector<double>& s, const std::vector<bool>& y) { return auroc(cohort_from(s, y)); },
        py::arg("scores"), py::arg("diverged"));
    m.def(
        "ece",
        [](const std::vector<double>& s, const std::vector<bool>& y, int bins) {
            return ece(cohort_from(s, y), bins).ece;
        },
        py::arg("scores"), py::arg("diverged"), py::arg("bins") = 10);
    m.def(
        "fisher_exact",
        [](std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
            return fisher_exact({{{a, b}, {c, d}}});
        },
        py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"), "Two-sided p for [[a, b], [c, d]].");

    m.def(
        "kss_operator_gradient",
        [](const Matrix& b, double temperature, double tau_u, double tau_l, double gamma, double beta) {
            KssConfig c;
            c.temperature = temperature;
            c.tau_u = tau_u;
            c.tau_l = tau_l;
            c.gamma = gamma;
            c.beta = beta;
            c.validate();
            const KssEvaluation e = kss_operator_gradient(b, c);
            return py::make_tuple(e.loss, e.grad_wrt_operator);
        },
        py::arg("b"), py::arg("temperature") = 20.0, py::arg("tau_u") = 1.05, py::arg("tau_l") = 0.90,
        py::arg("gamma") = 0.4, py::arg("beta") = 1.0, "(loss, dL/dB) for a square operator.");
}
