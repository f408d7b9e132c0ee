#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "softqe/error.hpp"
#include "softqe/experiment.hpp"
#include "softqe/json_io.hpp"

namespace py = pybind11;
using namespace softqe;

// Configs and reports cross the boundary as JSON text; the Python wrapper
// converts to and from dicts.

namespace {

std::vector<Judgment> to_qrels(const std::map<std::string, int>& grades)
{
    std::vector<Judgment> out;
    for (const auto& [doc, g] : grades) out.push_back({doc, g});
    return out;
}

Ranking to_ranking(const std::vector<std::string>& ids)
{
    Ranking r;
    for (std::size_t i = 0; i < ids.size(); ++i) r.docs.push_back({ids[i], -static_cast<double>(i)});
    return r;
}

std::string loss_json(const TrainedModel& m)
{
    Json rows = Json::array();
    auto row = [](std::size_t epoch, const LossRecord& r) {
        return Json{{"epoch", epoch}, {"L_cont", r.contrastive}, {"L_dist", r.distillation},
                    {"L_KL", r.kl},   {"total", r.total}};
    };
    rows.push_back(row(0, m.initial));
    for (std::size_t e = 0; e < m.loss_history.size(); ++e) rows.push_back(row(e + 1, m.loss_history[e]));
    return rows.dump();
}

}  // namespace

PYBIND11_MODULE(_softqe, m)
{
    m.doc() = "Dense retrieval with distilled query expansion";

    // Translators run newest first, so the base class goes first.
    const auto& base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<InputError>(m, "InputError", base.ptr());
    py::register_exception<LookupError>(m, "LookupError", base.ptr());
    py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
    py::register_exception<SerializationError>(m, "SerializationError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

    py::class_<Corpus>(m, "Corpus")
        .def_property_readonly("num_documents", [](const Corpus& c) { return c.documents().size(); })
        .def_property_readonly("num_queries", [](const Corpus& c) { return c.queries().size(); })
        .def_property_readonly("content_hash", &Corpus::content_hash)
        .def("query_ids",
             [](const Corpus& c, const std::string& split) {
                 std::vector<std::string> ids;
                 for (const Query* q : c.queries_in(parse_split(split))) ids.push_back(q->id);
                 return ids;
             },
             py::arg("split") = "eval")
        .def("without_expansions", &Corpus::without_expansions)
        .def("write", [](const Corpus& c, const std::filesystem::path& dir) { write_corpus(c, dir); });

    m.def("_generate_corpus", [](const std::string& config) {
        return generate_corpus(corpus_config_from_json(Json::parse(config)));
    });
    m.def("read_corpus", &read_corpus_directory, py::arg("dir"));

    py::class_<TrainedModel>(m, "Model")
        .def_property_readonly("lineage", [](const TrainedModel& t) { return t.provenance.lineage; })
        .def_property_readonly("query_checksum", [](const TrainedModel& t) { return checksum(t.query_params); })
        .def_property_readonly("passage_checksum", [](const TrainedModel& t) { return checksum(t.passage_params); })
        .def("_losses", &loss_json)
        .def("save", [](const TrainedModel& t, const Corpus& c, const std::filesystem::path& dir) {
            write_run_directory(t, c, dir);
        });

    m.def("load_model", &model_from_run_directory, py::arg("dir"));

    m.def(
        "_train",
        [](const std::string& lineage, const Corpus& corpus, const std::string& config, const TrainedModel* teacher,
           std::optional<std::filesystem::path> cache_dir) {
            const TrainConfig cfg = lineage_config(lineage, train_config_from_json(Json::parse(config)));
            std::optional<TargetSet> targets;
            if (teacher && cfg.objective != Objective::score_only_kd)
                targets = precompute_teacher_targets(*teacher, corpus, cache_dir);
            py::gil_scoped_release release;
            return train_lineage(lineage, corpus, cfg, teacher, targets);
        },
        py::arg("lineage"), py::arg("corpus"), py::arg("config"), py::arg("teacher") = py::none(),
        py::arg("cache_dir") = std::nullopt);

    m.def("_evaluate", [](const TrainedModel& model, const Corpus& corpus, const std::string& input) {
        return dump(to_json(evaluate(model, corpus, parse_query_input(input)).report));
    });

    m.def("_run_experiment", [](const std::string& spec, const std::filesystem::path& out) {
        py::gil_scoped_release release;
        run_experiment(experiment_spec_from_json(Json::parse(spec)), out);
    });
    m.def("assemble_report", &assemble_report, py::arg("out"));

    m.def(
        "mrr_at_k",
        [](const std::vector<std::string>& ranked, const std::map<std::string, int>& qrels, std::size_t k) {
            return mrr_at_k(to_ranking(ranked), to_qrels(qrels), k);
        },
        py::arg("ranked"), py::arg("qrels"), py::arg("k") = 10);
    m.def(
        "recall_at_k",
        [](const std::vector<std::string>& ranked, const std::map<std::string, int>& qrels, std::size_t k) {
            return recall_at_k(to_ranking(ranked), to_qrels(qrels), k);
        },
        py::arg("ranked"), py::arg("qrels"), py::arg("k"));
    m.def(
        "ndcg_at_k",
        [](const std::vector<std::string>& ranked, const std::map<std::string, int>& qrels, std::size_t k) {
            return ndcg_at_k(to_ranking(ranked), to_qrels(qrels), k);
        },
        py::arg("ranked"), py::arg("qrels"), py::arg("k") = 10);

    m.def(
        "paired_t_test",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            const TTestResult r = paired_t_test(a, b);
            return py::dict(py::arg("t") = r.t, py::arg("p") = r.p, py::arg("dof") = r.dof,
                            py::arg("mean_difference") = r.mean_difference);
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "contrastive_loss",
        [](std::vector<double> query, std::vector<double> positive, std::vector<std::vector<double>> negatives) {
            const LossResult r = contrastive_loss({std::move(query), std::move(positive), std::move(negatives)});
            return py::make_tuple(r.total, r.grads.query);
        },
        py::arg("query"), py::arg("positive"), py::arg("negatives"));
    m.def(
        "distillation_loss",
        [](const std::vector<double>& student, const std::vector<double>& teacher) {
            const DistillationResult r = distillation_loss(student, teacher);
            return py::make_tuple(r.loss, r.grad);
        },
        py::arg("student"), py::arg("teacher"));

    m.attr("lineages") = known_lineages();
}
