#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protots/checkpoint.hpp"
#include "protots/errors.hpp"
#include "protots/evaluation.hpp"
#include "protots/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace protots;

namespace {

// Checkpoint plus the normalized dataset it was last pointed at.
class PyModel {
public:
    explicit PyModel(ModelCheckpoint ck) : ck_(std::move(ck)) {}

    static PyModel train(const std::string& schema_json, const std::string& csv, const std::string& config_json) {
        const auto config = json::parse(config_json);
        ModelCheckpoint ck;
        ck.schema = json::parse(schema_json).get<VariableSchema>();
        const auto raw = parse_csv(csv, ck.schema);
        ck.normalizer = Normalizer::fit(raw);
        const auto data = ck.normalizer.transform(raw);
        const auto mc = config.value("model", json::object()).get<ModelConfig>();
        const auto tc = config.value("train", json::object()).get<TrainConfig>();
        TrainingData windows{make_windows(data, ck.schema, Split::kTrain), make_windows(data, ck.schema, Split::kVal)};
        ck.model = ProtoTSModel(ck.schema, mc);
        if (config.value("init_patterns", true)) ck.model.init_patterns_from_data(windows.train);
        PyModel m(std::move(ck));
        {
            py::gil_scoped_release release;
            m.last_report_ = staged_train(m.ck_.model, windows, tc);
        }
        m.ck_.train_config = tc;
        m.ck_.seed_lineage = {mc.seed, tc.seed};
        m.ck_.revision = 1;
        return m;
    }

    static PyModel load(const std::string& path) { return PyModel(load_checkpoint(path)); }
    void save(const std::string& path) const { save_checkpoint(ck_, path); }

    std::string tree() const { return tree_to_json(ck_.model.tree()).dump(); }
    std::string schema() const { return json(ck_.schema).dump(); }
    std::string report() const { return json(last_report_).dump(); }
    std::uint64_t revision() const { return ck_.revision; }

    py::array_t<double> predict(const std::string& csv, const std::string& split) const {
        const auto windows = windows_for(csv, split);
        const std::size_t h = ck_.schema.horizon_H;
        py::array_t<double> out({windows.size(), h});
        auto view = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const auto p = ck_.model.predict(windows[i]);
            for (std::size_t t = 0; t < h; ++t) view(i, t) = p[t];
        }
        return out;
    }

    std::string evaluate(const std::string& csv, const std::string& split) const {
        return json(protots::evaluate(ck_.model, windows_for(csv, split))).dump();
    }

    std::string explain(const std::string& csv, const std::string& split, std::size_t instance) const {
        const auto windows = windows_for(csv, split);
        if (instance >= windows.size()) throw py::index_error("instance outside the split");
        return json(protots::explain(ck_.model, windows[instance], instance)).dump();
    }

    std::string activations(const std::string& csv, const std::string& split, std::size_t k) const {
        return json(activation_report(ck_.model, windows_for(csv, split), k)).dump();
    }

    std::vector<NodeId> split_node(NodeId id, std::size_t m, std::uint64_t seed) {
        auto children = ck_.model.tree().split(id, m, seed, ck_.model.config().split_jitter);
        ck_.seed_lineage.push_back(seed);
        ++ck_.revision;
        return children;
    }

    void edit_pattern(NodeId id, const std::vector<double>& pattern, bool lock) {
        ck_.model.tree().edit_pattern(id, pattern, lock);
        ++ck_.revision;
    }

private:
    std::vector<WindowInstance> windows_for(const std::string& csv, const std::string& split) const {
        const auto data = ck_.normalizer.transform(parse_csv(csv, ck_.schema));
        return make_windows(data, ck_.schema, parse_split(split));
    }

    ModelCheckpoint ck_;
    TrainReport last_report_;
};

py::tuple synth(const std::string& config_json, std::uint64_t seed) {
    const auto ds = synth_generate(json::parse(config_json).get<SynthConfig>(), seed);
    return py::make_tuple(to_csv(ds.bundle, ds.schema), json(ds.schema).dump(), ds.regime);
}

}  // namespace

PYBIND11_MODULE(_protots, m) {
    m.doc() = "Interpretable prototype forecaster (native core)";

    py::register_exception<Error>(m, "ProtoTSError", PyExc_RuntimeError);
    py::register_exception<CorruptionError>(m, "CorruptionError", PyExc_RuntimeError);
    py::register_exception<VersionError>(m, "VersionError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def("synth", &synth, py::arg("config_json"), py::arg("seed"),
          "Returns (csv text, schema JSON, per-row regime labels).");

    py::class_<PyModel>(m, "Model")
        .def_static("train", &PyModel::train, py::arg("schema_json"), py::arg("csv"), py::arg("config_json"))
        .def_static("load", &PyModel::load, py::arg("path"))
        .def("save", &PyModel::save, py::arg("path"))
        .def("tree", &PyModel::tree)
        .def("schema", &PyModel::schema)
        .def("report", &PyModel::report)
        .def_property_readonly("revision", &PyModel::revision)
        .def("predict", &PyModel::predict, py::arg("csv"), py::arg("split") = "test")
        .def("evaluate", &PyModel::evaluate, py::arg("csv"), py::arg("split") = "test")
        .def("explain", &PyModel::explain, py::arg("csv"), py::arg("split") = "test", py::arg("instance") = 0)
        .def("activations", &PyModel::activations, py::arg("csv"), py::arg("split") = "test", py::arg("k") = 3)
        .def("split", &PyModel::split_node, py::arg("node"), py::arg("m") = 2, py::arg("seed") = 0)
        .def("edit_pattern", &PyModel::edit_pattern, py::arg("node"), py::arg("pattern"), py::arg("lock") = false);
}
