// Command-line driver: gen-data, train, eval, experiment, compare.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "softqe/corpus.hpp"
#include "softqe/error.hpp"
#include "softqe/eval.hpp"
#include "softqe/experiment.hpp"
#include "softqe/hash.hpp"
#include "softqe/json_io.hpp"
#include "softqe/trainer.hpp"

namespace fs = std::filesystem;
using namespace softqe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> set;
};

void add_common(CLI::App* app, Common& c, bool config_required = false)
{
    auto* opt = app->add_option("--config", c.config, "JSON configuration file");
    if (config_required) opt->required();
    app->add_option("--seed", c.seed, "Seed override");
    app->add_option("--out", c.out, "Output directory")->required();
    app->add_option("--set", c.set, "Override a config key: key=value (dotted keys for nested objects)");
}

/// The config file (or {}) with every --set applied.
Json load_config(const Common& c)
{
    Json j = c.config.empty() ? Json::object() : read_json_file(c.config);
    for (const auto& kv : c.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
        const std::string value = kv.substr(eq + 1);
        Json parsed = Json::parse(value, nullptr, false);
        if (parsed.is_discarded()) parsed = value;
        Json* node = &j;
        std::string key = kv.substr(0, eq);
        for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.')) {
            node = &(*node)[key.substr(0, dot)];
            key = key.substr(dot + 1);
        }
        (*node)[key] = parsed;
    }
    return j;
}

std::optional<fs::path> cache_dir_from_env()
{
    const char* v = std::getenv("SOFTQE_CACHE_DIR");
    if (v == nullptr || *v == '\0') return std::nullopt;
    return fs::path(v);
}

int cmd_gen_data(const Common& c)
{
    CorpusConfig config = corpus_config_from_json(load_config(c));
    if (c.seed) config.seed = *c.seed;
    const Corpus corpus = generate_corpus(config);
    write_corpus(corpus, c.out);
    write_text_file(fs::path(c.out) / "corpus_config.json", dump(to_json(config)));
    write_text_file(fs::path(c.out) / "corpus_hash.txt", to_hex(corpus.content_hash()) + "\n");
    return kExitOk;
}

struct TrainArgs {
    std::string corpus;
    std::string lineage;
    std::string teacher;
    bool no_freeze = false;
};

int cmd_train(const Common& c, const TrainArgs& a)
{
    if (!is_known_lineage(a.lineage)) throw ConfigError("unknown lineage '" + a.lineage + "'");
    if (lineage_needs_teacher(a.lineage) && a.teacher.empty())
        throw ConfigError("--lineage " + a.lineage + " requires --teacher <q2d run directory>");
    TrainConfig config = train_config_from_json(load_config(c));
    if (c.seed) config.seed = *c.seed;
    if (a.no_freeze) config.freeze_passage_encoder = false;
    config = lineage_config(a.lineage, config);

    const Corpus corpus = read_corpus_directory(a.corpus);
    std::optional<TrainedModel> teacher;
    if (!a.teacher.empty()) teacher = model_from_run_directory(a.teacher);
    std::optional<TargetSet> targets;
    if (teacher && config.objective != Objective::score_only_kd) {
        targets = precompute_teacher_targets(*teacher, corpus, cache_dir_from_env());
        for (const auto& w : targets->warnings) std::cerr << "warning: " << w << '\n';
    }
    try {
        const TrainedModel model =
            train_lineage(a.lineage, corpus, config, teacher ? &*teacher : nullptr, targets);
        write_run_directory(model, corpus, c.out);
    } catch (const NumericalError& e) {
        fs::create_directories(c.out);
        std::ostringstream diag;
        diag << "numerical failure: " << e.what() << "\n\nconfig:\n" << dump(to_json(config));
        write_text_file(fs::path(c.out) / "diagnostics.txt", diag.str());
        throw;
    }
    return kExitOk;
}

struct EvalArgs {
    std::string run;
    std::string corpus;
    std::string query_input = "q";
    std::size_t depth = 1000;
};

int cmd_eval(const Common& c, const EvalArgs& a)
{
    const QueryInput mode = parse_query_input(a.query_input);
    const TrainedModel model = model_from_run_directory(a.run);
    const Corpus corpus = read_corpus_directory(a.corpus);
    EvalOptions options;
    const Json j = load_config(c);
    if (!j.empty()) {
        if (j.contains("mrr")) options.cutoffs.mrr = j.at("mrr").get<std::size_t>();
        if (j.contains("recall")) options.cutoffs.recall = j.at("recall").get<std::vector<std::size_t>>();
        if (j.contains("ndcg")) options.cutoffs.ndcg = j.at("ndcg").get<std::size_t>();
    }
    const EvalResult r = evaluate(model, corpus, mode, options);
    fs::create_directories(c.out);
    write_text_file(fs::path(c.out) / metrics_file_name(mode), dump(to_json(r.report)));
    std::ostringstream trec;
    write_trec_run(trec, r.rankings, model.provenance.lineage, a.depth);
    write_text_file(fs::path(c.out) / ("run_" + to_string(mode) + ".trec"), trec.str());
    for (const auto& [name, v] : r.report.aggregates) std::cout << name << '\t' << v << '\n';
    return kExitOk;
}

int cmd_experiment(const Common& c, bool regenerate)
{
    if (regenerate) {
        assemble_report(c.out);
        return kExitOk;
    }
    ExperimentSpec spec = experiment_spec_from_json(load_config(c));
    if (c.seed) spec.seeds = {*c.seed};
    ExperimentOptions options;
    options.cache_dir = cache_dir_from_env();
    options.log = &std::cerr;
    run_experiment(spec, c.out, options);
    return kExitOk;
}

struct CompareArgs {
    std::string a;
    std::string b;
    std::string metric = "mrr@10";
};

int cmd_compare(const Common& c, const CompareArgs& args)
{
    const MetricReport ra = metric_report_from_json(read_json_file(args.a));
    const MetricReport rb = metric_report_from_json(read_json_file(args.b));
    auto ia = ra.per_query.find(args.metric);
    auto ib = rb.per_query.find(args.metric);
    if (ia == ra.per_query.end() || ib == rb.per_query.end())
        throw InputError("metric '" + args.metric + "' missing from a report");
    std::vector<double> va, vb;
    for (const auto& [qid, x] : ia->second) {
        auto it = ib->second.find(qid);
        if (it == ib->second.end()) throw IntegrityError("query '" + qid + "' missing from " + args.b);
        va.push_back(x);
        vb.push_back(it->second);
    }
    if (va.size() != ib->second.size()) throw IntegrityError("reports cover different query sets");
    const TTestResult t = paired_t_test(va, vb);
    Json j{{"metric", args.metric},
           {"a", args.a},
           {"b", args.b},
           {"mean_a", ra.aggregates.at(args.metric)},
           {"mean_b", rb.aggregates.at(args.metric)},
           {"t", std::isinf(t.t) ? Json(t.t > 0 ? "inf" : "-inf") : Json(t.t)},
           {"p", t.p},
           {"p_one_sided_a_greater", one_sided_p_greater(t)},
           {"dof", t.dof},
           {"degenerate", t.degenerate}};
    fs::create_directories(c.out);
    write_text_file(fs::path(c.out) / "compare.json", dump(j));
    std::cout << dump(j);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Desk-scale dense retrieval with query-expansion distillation"};
    app.require_subcommand(1);

    Common common;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
    add_common(gen, common, true);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train one lineage into a run directory");
    add_common(train, common);
    train->add_option("--corpus", train_args.corpus, "Corpus directory from gen-data")->required();
    train->add_option("--lineage", train_args.lineage, "dpr, q2d, softqe, score_only_kd, ...")->required();
    train->add_option("--teacher", train_args.teacher, "Teacher (q2d) run directory");
    train->add_flag("--no-freeze-passages", train_args.no_freeze, "Train the passage encoder too");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a run directory");
    add_common(eval, common);
    eval->add_option("--run", eval_args.run, "Run directory")->required();
    eval->add_option("--corpus", eval_args.corpus, "Corpus directory")->required();
    eval->add_option("--query-input", eval_args.query_input, "q or q_plus");
    eval->add_option("--depth", eval_args.depth, "Rows per query in the TREC run file");

    bool regenerate = false;
    auto* exp = app.add_subcommand("experiment", "Run lineages x seeds and write report.md");
    add_common(exp, common);
    exp->add_flag("--regenerate", regenerate, "Rebuild the report from stored artifacts only");

    CompareArgs compare_args;
    auto* cmp = app.add_subcommand("compare", "Paired t-test between two metric reports");
    add_common(cmp, common);
    cmp->add_option("a", compare_args.a, "First metrics JSON")->required();
    cmp->add_option("b", compare_args.b, "Second metrics JSON")->required();
    cmp->add_option("--metric", compare_args.metric, "Metric key");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common);
        if (train->parsed()) return cmd_train(common, train_args);
        if (eval->parsed()) return cmd_eval(common, eval_args);
        if (exp->parsed()) return cmd_experiment(common, regenerate);
        if (cmp->parsed()) return cmd_compare(common, compare_args);
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
