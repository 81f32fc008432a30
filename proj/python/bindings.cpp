// Python bindings: numpy arrays in, numpy arrays out.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "saliency_forge/core.hpp"
#include "saliency_forge/ensembles.hpp"
#include "saliency_forge/errors.hpp"
#include "saliency_forge/metrics.hpp"
#include "saliency_forge/oracle.hpp"
#include "saliency_forge/rbm.hpp"
#include "saliency_forge/run_config.hpp"
#include "saliency_forge/superpixels.hpp"

namespace py = pybind11;
using namespace saliency_forge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

AttributionMap to_map(const Array& a, const std::string& source = "map") {
    if (a.ndim() != 2) throw ValidationError("expected an H×W array, got " + std::to_string(a.ndim()) + " dimensions");
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    return make_map(h, w, std::vector<double>(a.data(), a.data() + h * w), source);
}

// Accepts H×W (one channel) or C×H×W.
ImageTensor to_image(const Array& a) {
    if (a.ndim() == 2) {
        const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
        return make_image(1, h, w, std::vector<double>(a.data(), a.data() + h * w));
    }
    if (a.ndim() != 3) throw ValidationError("expected a C×H×W image");
    const auto c = static_cast<std::size_t>(a.shape(0)), h = static_cast<std::size_t>(a.shape(1)),
               w = static_cast<std::size_t>(a.shape(2));
    return make_image(c, h, w, std::vector<double>(a.data(), a.data() + c * h * w));
}

AttributionStack to_stack(const Array& maps) {
    if (maps.ndim() != 3) throw ValidationError("expected an N×H×W stack of maps");
    const auto n = static_cast<std::size_t>(maps.shape(0)), h = static_cast<std::size_t>(maps.shape(1)),
               w = static_cast<std::size_t>(maps.shape(2));
    AttributionStack stack;
    stack.id = "python";
    for (std::size_t k = 0; k < n; ++k) {
        const double* begin = maps.data() + k * h * w;
        char name[16];
        std::snprintf(name, sizeof name, "map%03zu", k);
        stack.maps.push_back(make_map(h, w, std::vector<double>(begin, begin + h * w), name));
    }
    return stack;
}

py::array_t<double> from_map(const AttributionMap& m) {
    py::array_t<double> out({m.height, m.width});
    std::copy(m.scores.begin(), m.scores.end(), out.mutable_data());
    return out;
}

StubOracle stub_oracle(const std::string& spec) { return StubOracle(parse_stub_spec(spec).stub); }

MetricSpec metric_spec(MetricKind kind, double step_fraction, const std::string& baseline, std::size_t irof_segments) {
    MetricSpec spec;
    spec.kind = kind;
    spec.step_fraction = step_fraction;
    spec.baseline = parse_baseline_kind(baseline);
    spec.irof_segments = irof_segments;
    spec.validate();
    return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Attribution-map ensembles and faithfulness metrics";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<TrainingDivergedError>(m, "TrainingDivergedError", PyExc_ArithmeticError);
    py::register_exception<OracleUnavailableError>(m, "OracleUnavailableError", PyExc_ConnectionError);

    m.def("normalize_map", [](const Array& a) { return from_map(normalize_map(to_map(a))); }, py::arg("map"),
          "Clip negatives to 0, then min-max scale to [0, 1].");

    m.def("mean_ensemble", [](const Array& maps) { return from_map(mean_ensemble(normalize_stack(to_stack(maps))).map); },
          py::arg("maps"));
    m.def("variance_ensemble",
          [](const Array& maps, double epsilon) {
              return from_map(variance_ensemble(normalize_stack(to_stack(maps)), epsilon).map);
          },
          py::arg("maps"), py::arg("epsilon") = 1e-6);

    m.def(
        "rbm_ensemble",
        [](const Array& maps, std::uint64_t seed, const std::string& preset, const std::string& flip_policy,
           std::optional<std::size_t> n_iterations, std::optional<Array> image, std::optional<std::string> stub,
           const std::string& flip_metric, double step_fraction) {
            auto stack = normalize_stack(to_stack(maps));
            if (image) stack.image = to_image(*image);
            EnsembleConfig cfg;
            cfg.method = EnsembleMethod::Rbm;
            cfg.rbm_train = train_preset(preset);
            if (n_iterations) cfg.rbm_train.n_iterations = *n_iterations;
            cfg.rbm_train.seed = RngSeed{seed};
            cfg.flip_policy = parse_flip_policy(flip_policy);
            cfg.flip_metric.kind = parse_metric_kind(flip_metric);
            cfg.flip_metric.step_fraction = step_fraction;
            std::unique_ptr<StubOracle> oracle;
            if (stub) oracle = std::make_unique<StubOracle>(parse_stub_spec(*stub).stub);
            const auto out = aggregate(stack, cfg, oracle.get());
            return py::make_tuple(from_map(out.map), out.flipped);
        },
        py::arg("maps"), py::arg("seed") = 0, py::arg("preset") = "cifar", py::arg("flip_policy") = "flip_detection",
        py::arg("n_iterations") = py::none(), py::arg("image") = py::none(), py::arg("stub") = py::none(),
        py::arg("flip_metric") = "deletion", py::arg("step_fraction") = 0.01,
        "Returns (map, flipped). metric_optimization needs image and stub.");

    py::class_<RbmParams>(m, "RbmParams")
        .def(py::init([](Eigen::MatrixXd w, Eigen::VectorXd b, Eigen::VectorXd c) {
                 RbmParams p{std::move(w), std::move(b), std::move(c)};
                 p.validate();
                 return p;
             }),
             py::arg("weights"), py::arg("visible_bias"), py::arg("hidden_bias"))
        .def_readwrite("weights", &RbmParams::weights)
        .def_readwrite("visible_bias", &RbmParams::visible_bias)
        .def_readwrite("hidden_bias", &RbmParams::hidden_bias);

    m.def(
        "train_rbm",
        [](const SampleMatrix& samples, Eigen::Index n_hidden, const std::string& preset, std::uint64_t seed,
           std::optional<std::size_t> n_iterations) {
            TrainConfig cfg = train_preset(preset);
            cfg.seed = RngSeed{seed};
            if (n_iterations) cfg.n_iterations = *n_iterations;
            return train_cd(samples, cfg, n_hidden);
        },
        py::arg("samples"), py::arg("n_hidden") = 1, py::arg("preset") = "cifar", py::arg("seed") = 0,
        py::arg("n_iterations") = py::none());
    m.def("hidden_posterior", [](const RbmParams& p, const SampleMatrix& s) { return hidden_posterior_rows(p, s); },
          py::arg("params"), py::arg("samples"));
    m.def("exact_log_likelihood", &exact_log_likelihood, py::arg("params"), py::arg("samples"));
    m.def("mirror_hidden_unit", &mirror_hidden_unit, py::arg("params"), py::arg("j") = 0);

    m.def(
        "slic",
        [](const Array& image, std::size_t k, double compactness) {
            const auto seg = slic(to_image(image), k, compactness);
            py::array_t<int> out({seg.height, seg.width});
            std::copy(seg.labels.begin(), seg.labels.end(), out.mutable_data());
            return out;
        },
        py::arg("image"), py::arg("k"), py::arg("compactness") = kDefaultSlicCompactness);

    auto metric = [&m](const char* name, MetricKind kind) {
        m.def(
            name,
            [kind](const Array& image, const Array& map, const std::string& stub, double step_fraction,
                   const std::string& baseline, std::size_t irof_segments) {
                const auto oracle = stub_oracle(stub);
                const auto spec = metric_spec(kind, step_fraction, baseline, irof_segments);
                return evaluate_metric(to_image(image), normalize_map(to_map(map)), oracle, spec).value;
            },
            py::arg("image"), py::arg("map"), py::arg("stub"), py::arg("step_fraction") = 0.01,
            py::arg("baseline") = "black", py::arg("irof_segments") = kDefaultSlicSegments);
    };
    metric("deletion_auc", MetricKind::Deletion);
    metric("insertion_auc", MetricKind::Insertion);
    metric("irof_aoc", MetricKind::Irof);

    m.def("noise_map", [](std::size_t h, std::size_t w, std::uint64_t seed) { return from_map(make_noise_map(h, w, RngSeed{seed})); },
          py::arg("height"), py::arg("width"), py::arg("seed") = 0);
}
