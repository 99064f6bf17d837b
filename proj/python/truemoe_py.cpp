#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "truemoe/config.hpp"
#include "truemoe/forge.hpp"
#include "truemoe/losses.hpp"
#include "truemoe/metrics.hpp"
#include "truemoe/pipeline.hpp"
#include "truemoe/routing.hpp"

namespace py = pybind11;
using namespace truemoe;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<float> to_vector(const FloatArray& a) { return std::vector<float>(a.data(), a.data() + a.size()); }
std::vector<double> to_vector(const DoubleArray& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

BasicTensor<double> to_matrix(const DoubleArray& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
    return BasicTensor<double>({std::size_t(a.shape(0)), std::size_t(a.shape(1))}, to_vector(a));
}

GateParams identity_gate(std::size_t n) {
    GateParams g;
    g.weight = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) g.weight[i * n + i] = 1.0f;
    g.bias = Tensor({n});
    return g;
}

py::dict meta_dict(const Provenance& p) {
    py::dict d;
    d["label"] = p.label == Label::real ? "real" : "fake";
    d["family"] = p.family ? py::cast(to_string(*p.family)) : py::none();
    d["artifact_scale"] = p.artifact_scale ? py::cast(*p.artifact_scale) : py::none();
    d["content_category"] = p.content_category;
    d["seed"] = p.seed;
    return d;
}

py::dict stats_dict(const PhaseStats& st) {
    py::dict d;
    for (const auto& [k, v] : st) d[py::str(k)] = v;
    return d;
}

}  // namespace

PYBIND11_MODULE(truemoe, m) {
    m.doc() = "Mixture of discriminative experts for synthetic image detection";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", error.ptr());
    py::register_exception<NumericError>(m, "NumericError", error.ptr());
    py::register_exception<DomainError>(m, "DomainError", error.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<StateError>(m, "StateError", error.ptr());
    auto io = py::register_exception<IoError>(m, "IoError", error.ptr());
    py::register_exception<DecodeError>(m, "DecodeError", io.ptr());

    py::class_<Config>(m, "Config")
        .def(py::init<>())
        .def_readwrite("data_root", &Config::data_root)
        .def_readwrite("work_dir", &Config::work_dir)
        .def_readwrite("seed", &Config::seed)
        .def_readwrite("beta", &Config::beta)
        .def_readwrite("alpha", &Config::alpha)
        .def_readwrite("perturbation", &Config::perturbation)
        .def_readwrite("perturb_probability", &Config::perturb_probability)
        .def("set_split", [](Config& c, const std::string& split, int real, int a, int b, int cc) {
            c.splits[std::size_t(parse_split(split))] = SplitCounts{real, {a, b, cc}};
        }, py::arg("split"), py::arg("real"), py::arg("a"), py::arg("b"), py::arg("c"))
        .def("__str__", [](const Config& c) { return format_config(c); });
    m.def("parse_config", &parse_config, py::arg("text"));
    m.def("load_config", &load_config, py::arg("path"));
    m.def("format_config", &format_config, py::arg("config"));

    m.def("generate_split", [](const std::string& split, int real, int a, int b, int c, std::uint64_t seed) {
        py::list out;
        for (const auto& img : generate_split(SplitCounts{real, {a, b, c}}, parse_split(split), seed)) {
            const auto& s = img.pixels.shape();
            py::array_t<float> px({s[0], s[1], s[2]});
            std::copy(img.pixels.values().begin(), img.pixels.values().end(), px.mutable_data());
            out.append(py::make_tuple(px, meta_dict(img.meta)));
        }
        return out;
    }, py::arg("split"), py::arg("real"), py::arg("a"), py::arg("b"), py::arg("c"), py::arg("seed"),
       "List of (pixels [3,64,64] float32, provenance dict).");

    m.def("bce_loss", [](double p, int y) { return bce_loss(p, y); }, py::arg("p"), py::arg("y"));
    m.def("contrastive_loss", [](const DoubleArray& fi, const DoubleArray& ft, double tau) {
        return contrastive_loss(to_matrix(fi), to_matrix(ft), tau);
    }, py::arg("f_img"), py::arg("f_txt"), py::arg("tau"));
    m.def("routing_loss", [](const DoubleArray& u, const DoubleArray& fg, double fm) {
        return routing_loss<double>(to_vector(u), to_vector(fg), fm);
    }, py::arg("u"), py::arg("f_g"), py::arg("f_m"));
    m.def("balance_loss", [](const DoubleArray& d, const DoubleArray& p) {
        return balance_loss<double>(to_vector(d), to_vector(p));
    }, py::arg("d"), py::arg("p"));
    m.def("total_loss", [](double ld, double lr, double lb, double alpha, double beta) {
        return total_loss(ld, lr, lb, LossWeights{alpha, beta});
    }, py::arg("l_d"), py::arg("l_router"), py::arg("l_balance"), py::arg("alpha") = 0.5, py::arg("beta") = 1e-2);

    m.def("dense_gate", [](const FloatArray& z) {
        const auto v = to_vector(z);
        return dense_gate<float>(v, identity_gate(v.size()));
    }, py::arg("logits"), "Softmax gate over raw logits.");
    m.def("sparse_gate", [](const FloatArray& z, int k) {
        const auto v = to_vector(z);
        return sparse_gate<float>(v, identity_gate(v.size()), k);
    }, py::arg("logits"), py::arg("k"), "Top-k softmax gate over raw logits (no noise).");

    m.def("accuracy", [](const FloatArray& s, std::vector<int> y) { return accuracy(to_vector(s), y); },
          py::arg("scores"), py::arg("labels"));
    m.def("average_precision", [](const FloatArray& s, std::vector<int> y) {
        return average_precision(to_vector(s), y);
    }, py::arg("scores"), py::arg("labels"));
    m.def("parse_report", [](const std::string& text) { return format_report(parse_report(text)); },
          py::arg("text"), "Validates a report file's text and returns it re-serialized.");

    std::vector<std::string> phases;
    for (Phase p : kPhaseOrder) phases.push_back(to_string(p));
    m.attr("PHASES") = phases;

    py::class_<Session>(m, "Session")
        .def(py::init<Config>(), py::arg("config"))
        .def("generate", [](Session& s) {
            const auto& c = s.config();
            for (int k = 0; k < 3; ++k) s.set_images(Split(k), generate_split(c.splits[std::size_t(k)], Split(k), c.seed));
        }, "Generate every split in memory from the config's counts and seed.")
        .def("run_phase", [](Session& s, const std::string& p) { return stats_dict(s.run_phase(parse_phase(p))); },
             py::arg("phase"))
        .def("run_all", [](Session& s) { return stats_dict(s.run_all()); })
        .def("load", [](Session& s, const std::string& p) { s.load(parse_phase(p)); }, py::arg("phase"))
        .def_readwrite("write_checkpoints", &Session::write_checkpoints)
        .def("evaluate", [](Session& s, const std::string& split) {
            const auto ev = s.evaluate(parse_split(split), perturbation_from_config(s.config()));
            py::dict d;
            d["truemoe"] = format_report(ev.truemoe);
            d["baseline"] = format_report(ev.baseline);
            d["macc"] = ev.truemoe.macc;
            d["baseline_macc"] = ev.baseline.macc;
            d["usage_entropy"] = ev.usage_entropy;
            py::list levels;
            for (const auto& sc : ev.scores) levels.append(sc.decision.level);
            d["levels"] = levels;
            return d;
        }, py::arg("split") = "test");
}
