#include "softqe/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "softqe/error.hpp"

namespace softqe {

namespace fs = std::filesystem;

const std::vector<std::string>& known_lineages()
{
    static const std::vector<std::string> names{
        "dpr",           "q2d",           "softqe",          "softqe_unfrozen", "softqe_dist_only",
        "softqe_cont_only", "softqe_combined", "softqe_kd",     "score_only_kd"};
    return names;
}

bool is_known_lineage(const std::string& lineage)
{
    const auto& names = known_lineages();
    return std::find(names.begin(), names.end(), lineage) != names.end();
}

bool lineage_needs_teacher(const std::string& lineage)
{
    return is_known_lineage(lineage) && lineage != "dpr" && lineage != "q2d";
}

QueryInput default_query_input(const std::string& lineage)
{
    return lineage == "q2d" ? QueryInput::q_plus : QueryInput::q;
}

TrainConfig lineage_config(const std::string& lineage, TrainConfig c)
{
    if (!is_known_lineage(lineage)) throw ConfigError("unknown lineage '" + lineage + "'");
    const double beta = c.schedule.per_epoch.empty() ? 0.0 : c.schedule.per_epoch.front().beta;
    if (lineage == "dpr" || lineage == "q2d") {
        c.objective = Objective::contrastive;
    } else if (lineage == "score_only_kd") {
        c.objective = Objective::score_only_kd;
    } else if (lineage == "softqe_kd") {
        c.objective = Objective::kd_composite;
    } else {
        c.objective = Objective::softqe;
        if (lineage == "softqe_unfrozen") c.freeze_passage_encoder = false;
        if (lineage == "softqe_dist_only") c.schedule = LossSchedule::constant(c.epochs, 1.0, beta);
        if (lineage == "softqe_cont_only") c.schedule = LossSchedule::constant(c.epochs, 0.0, beta);
        if (lineage == "softqe_combined")
            c.schedule = LossSchedule::constant(c.epochs, c.schedule.alpha_after, beta);
    }
    c.validate();
    return c;
}

TrainedModel train_lineage(const std::string& lineage, const Corpus& corpus,
                           const TrainConfig& config, const TrainedModel* teacher,
                           const std::optional<TargetSet>& targets)
{
    if (!is_known_lineage(lineage)) throw ConfigError("unknown lineage '" + lineage + "'");
    if (lineage_needs_teacher(lineage) && teacher == nullptr)
        throw ConfigError("lineage '" + lineage + "' needs a teacher");
    TrainedModel m;
    if (lineage == "dpr") m = train_dpr(corpus, config);
    else if (lineage == "q2d") m = train_q2d_teacher(corpus, config);
    else if (lineage == "score_only_kd") m = train_score_only_kd(corpus, *teacher, config);
    else m = train_softqe_student(corpus, *teacher, config, targets);
    m.provenance.lineage = lineage;
    return m;
}

TrainedModel model_from_run_directory(const fs::path& dir)
{
    RunDirectory run = read_run_directory(dir);
    TrainedModel m;
    m.query_params = std::move(run.query_params);
    m.passage_params = std::move(run.passage_params);
    m.config = std::move(run.config);
    m.provenance = std::move(run.provenance);
    return m;
}

std::string Cell::label() const
{
    return input == default_query_input(lineage) ? lineage : lineage + ":" + to_string(input);
}

Cell parse_cell(const std::string& s)
{
    const auto colon = s.find(':');
    Cell c;
    c.lineage = s.substr(0, colon);
    if (!is_known_lineage(c.lineage)) throw ConfigError("unknown lineage '" + c.lineage + "'");
    try {
        c.input = colon == std::string::npos ? default_query_input(c.lineage)
                                             : parse_query_input(s.substr(colon + 1));
    } catch (const InputError& e) {
        throw ConfigError(std::string("cell '") + s + "': " + e.what());
    }
    return c;
}

void ExperimentSpec::validate() const
{
    if (seeds.empty()) throw ConfigError("experiment: at least one seed is required");
    if (cells.empty()) throw ConfigError("experiment: at least one cell is required");
    std::set<std::string> labels;
    for (const auto& c : cells) {
        if (!is_known_lineage(c.lineage)) throw ConfigError("unknown lineage '" + c.lineage + "'");
        if (!labels.insert(c.label()).second)
            throw ConfigError("experiment: duplicate cell '" + c.label() + "'");
    }
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("experiment: duplicate seed");
    for (const auto& [name, j] : lineage_overrides) {
        if (!is_known_lineage(name)) throw ConfigError("unknown lineage '" + name + "'");
    }
    if (!corpus_dir) corpus.validate();
    train.validate();
}

TrainConfig ExperimentSpec::config_for(const std::string& lineage, std::uint64_t seed) const
{
    TrainConfig c = train;
    if (auto it = lineage_overrides.find(lineage); it != lineage_overrides.end())
        c = train_config_from_json(it->second, c);
    c.seed = seed;
    return lineage_config(lineage, c);
}

Json to_json(const ExperimentSpec& spec)
{
    Json cells = Json::array();
    for (const auto& c : spec.cells) cells.push_back(c.lineage + ":" + to_string(c.input));
    Json j{{"name", spec.name}};
    if (spec.corpus_dir) j["corpus_dir"] = spec.corpus_dir->string();
    else j["corpus"] = to_json(spec.corpus);
    j["cells"] = cells;
    j["train"] = to_json(spec.train);
    Json over = Json::object();
    for (const auto& [name, o] : spec.lineage_overrides) over[name] = o;
    j["lineages"] = over;
    j["seeds"] = spec.seeds;
    j["cutoffs"] = {{"mrr", spec.cutoffs.mrr}, {"recall", spec.cutoffs.recall}, {"ndcg", spec.cutoffs.ndcg}};
    j["baseline"] = spec.baseline;
    return j;
}

ExperimentSpec experiment_spec_from_json(const Json& j)
{
    if (!j.is_object()) throw ConfigError("experiment: expected a JSON object");
    static const std::set<std::string> known{"name",  "corpus",   "corpus_dir", "cells",
                                             "train", "lineages", "seeds",      "cutoffs",
                                             "baseline"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("experiment: unknown key '" + key + "'");
    }
    ExperimentSpec s;
    try {
        if (j.contains("name")) s.name = j.at("name").get<std::string>();
        if (j.contains("corpus") && j.contains("corpus_dir"))
            throw ConfigError("experiment: give either corpus or corpus_dir, not both");
        if (j.contains("corpus")) s.corpus = corpus_config_from_json(j.at("corpus"));
        if (j.contains("corpus_dir")) s.corpus_dir = j.at("corpus_dir").get<std::string>();
        if (j.contains("cells")) {
            s.cells.clear();
            for (const auto& c : j.at("cells")) s.cells.push_back(parse_cell(c.get<std::string>()));
        }
        if (j.contains("train")) s.train = train_config_from_json(j.at("train"));
        if (j.contains("lineages")) {
            for (const auto& [name, o] : j.at("lineages").items()) s.lineage_overrides[name] = o;
        }
        if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("cutoffs")) {
            const auto& c = j.at("cutoffs");
            if (c.contains("mrr")) s.cutoffs.mrr = c.at("mrr").get<std::size_t>();
            if (c.contains("recall")) s.cutoffs.recall = c.at("recall").get<std::vector<std::size_t>>();
            if (c.contains("ndcg")) s.cutoffs.ndcg = c.at("ndcg").get<std::size_t>();
        }
        if (j.contains("baseline")) s.baseline = j.at("baseline").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment: ") + e.what());
    }
    s.validate();
    return s;
}

fs::path cell_directory(const fs::path& out, const std::string& lineage, std::uint64_t seed)
{
    return out / "runs" / lineage / ("seed-" + std::to_string(seed));
}

std::string metrics_file_name(QueryInput input) { return "metrics_" + to_string(input) + ".json"; }

namespace {

std::string trec_file_name(QueryInput input) { return "run_" + to_string(input) + ".trec"; }

const char* kFailedFile = "failed.txt";

void record_failure(const fs::path& dir, const std::string& what)
{
    fs::create_directories(dir);
    write_text_file(dir / kFailedFile, what + "\n");
}

// Students are trained after the teacher so that every seed trains it once.
std::vector<std::string> training_order(const ExperimentSpec& spec)
{
    std::vector<std::string> order;
    bool teacher = false;
    for (const auto& c : spec.cells) teacher = teacher || c.lineage == "q2d" || lineage_needs_teacher(c.lineage);
    if (teacher) order.push_back("q2d");
    for (const auto& c : spec.cells) {
        if (std::find(order.begin(), order.end(), c.lineage) == order.end()) order.push_back(c.lineage);
    }
    return order;
}

}  // namespace

void run_experiment(const ExperimentSpec& spec, const fs::path& out, const ExperimentOptions& options)
{
    spec.validate();
    fs::create_directories(out);
    write_text_file(out / "experiment.json", dump(to_json(spec)));
    const Corpus corpus = spec.corpus_dir ? read_corpus_directory(*spec.corpus_dir)
                                          : generate_corpus(spec.corpus);
    EvalOptions eval_options;
    eval_options.cutoffs = spec.cutoffs;

    const auto order = training_order(spec);
    for (std::uint64_t seed : spec.seeds) {
        std::optional<TrainedModel> teacher;
        std::optional<TargetSet> targets;
        std::string teacher_failure;
        for (const auto& lineage : order) {
            const fs::path dir = cell_directory(out, lineage, seed);
            fs::remove_all(dir);
            if (options.log) *options.log << "[" << spec.name << "] " << lineage << " seed " << seed << std::endl;
            try {
                if (lineage_needs_teacher(lineage) && !teacher)
                    throw IntegrityError("teacher unavailable: " + teacher_failure);
                const TrainConfig config = spec.config_for(lineage, seed);
                if (lineage_needs_teacher(lineage) && !targets)
                    targets = precompute_teacher_targets(*teacher, corpus, options.cache_dir);
                TrainedModel model = train_lineage(lineage, corpus, config,
                                                   teacher ? &*teacher : nullptr, targets);
                write_run_directory(model, corpus, dir);
                for (const auto& cell : spec.cells) {
                    if (cell.lineage != lineage) continue;
                    const EvalResult r = evaluate(model, corpus, cell.input, eval_options);
                    write_text_file(dir / metrics_file_name(cell.input), dump(to_json(r.report)));
                    std::ostringstream trec;
                    write_trec_run(trec, r.rankings, lineage + "-" + std::to_string(seed), 1000);
                    write_text_file(dir / trec_file_name(cell.input), trec.str());
                }
                if (lineage == "q2d") teacher = std::move(model);
            } catch (const Error& e) {
                if (lineage == "q2d") teacher_failure = e.what();
                record_failure(dir, e.what());
                if (options.log) *options.log << "  failed: " << e.what() << std::endl;
            }
        }
    }
    assemble_report(out);
}

namespace {

std::string fmt(const char* format, double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, format, x);
    return buf;
}

struct CellData {
    Cell cell;
    /// seed -> report, successful seeds only
    std::map<std::uint64_t, MetricReport> reports;
    std::vector<std::uint64_t> failed;
};

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v)
{
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Per-query values of `metric` for a and b, paired over common seeds and queries.
std::pair<std::vector<double>, std::vector<double>> paired_values(const CellData& a, const CellData& b,
                                                                  const std::string& metric,
                                                                  std::optional<std::uint64_t> only_seed = {})
{
    std::vector<double> va, vb;
    for (const auto& [seed, ra] : a.reports) {
        if (only_seed && seed != *only_seed) continue;
        auto rb = b.reports.find(seed);
        if (rb == b.reports.end()) continue;
        const auto& qa = ra.per_query.at(metric);
        const auto& qb = rb->second.per_query.at(metric);
        for (const auto& [qid, x] : qa) {
            auto it = qb.find(qid);
            if (it == qb.end()) continue;
            va.push_back(x);
            vb.push_back(it->second);
        }
    }
    return {va, vb};
}

Json test_json(const TTestResult& t)
{
    return Json{{"t", std::isinf(t.t) ? Json(t.t > 0 ? "inf" : "-inf") : Json(t.t)},
                {"p", t.p},
                {"dof", t.dof},
                {"mean_difference", t.mean_difference},
                {"degenerate", t.degenerate}};
}

std::optional<TTestResult> try_test(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() < 2) return std::nullopt;
    return paired_t_test(a, b);
}

}  // namespace

void assemble_report(const fs::path& out)
{
    const ExperimentSpec spec = experiment_spec_from_json(read_json_file(out / "experiment.json"));
    const auto names = metric_names(spec.cutoffs);
    const std::string& sig_metric = names.front();

    std::vector<CellData> data;
    for (const auto& cell : spec.cells) {
        CellData d{cell, {}, {}};
        for (std::uint64_t seed : spec.seeds) {
            const fs::path dir = cell_directory(out, cell.lineage, seed);
            const fs::path file = dir / metrics_file_name(cell.input);
            if (fs::exists(dir / kFailedFile) || !fs::exists(file)) {
                d.failed.push_back(seed);
                continue;
            }
            d.reports.emplace(seed, metric_report_from_json(read_json_file(file)));
        }
        data.push_back(std::move(d));
    }

    const CellData* base = nullptr;
    for (const auto& d : data) {
        if (d.cell.label() == spec.baseline) base = &d;
    }

    // Pairwise matrix over pooled per-query values, then per-seed tests against the baseline.
    Json pairs = Json::object();
    std::map<std::string, std::optional<TTestResult>> vs_base;
    for (const auto& a : data) {
        Json row = Json::object();
        for (const auto& b : data) {
            if (&a == &b) continue;
            auto [va, vb] = paired_values(a, b, sig_metric);
            auto t = try_test(va, vb);
            row[b.cell.label()] = t ? test_json(*t) : Json(nullptr);
            if (&b == base) vs_base[a.cell.label()] = t;
        }
        pairs[a.cell.label()] = row;
    }
    Json per_seed = Json::object();
    if (base != nullptr) {
        for (const auto& a : data) {
            if (&a == base) continue;
            Json row = Json::object();
            for (std::uint64_t seed : spec.seeds) {
                auto [va, vb] = paired_values(a, *base, sig_metric, seed);
                auto t = try_test(va, vb);
                row[std::to_string(seed)] = t ? test_json(*t) : Json(nullptr);
            }
            per_seed[a.cell.label()] = row;
        }
    }
    Json sig{{"metric", sig_metric},
             {"baseline", base ? Json(spec.baseline) : Json(nullptr)},
             {"alpha", 0.05},
             {"pooled", pairs},
             {"per_seed_vs_baseline", per_seed}};
    write_text_file(out / "significance.json", dump(sig));

    const bool sig_column = base != nullptr && data.size() > 1;
    const bool multi_seed = spec.seeds.size() > 1;
    std::ostringstream md;
    md << "# " << spec.name << "\n\n";
    md << "Seeds:";
    for (std::size_t i = 0; i < spec.seeds.size(); ++i) md << (i ? ", " : " ") << spec.seeds[i];
    md << ". ";
    md << (multi_seed ? "Cells show mean ± sd over seeds." : "Cells show the single seed's value.");
    if (sig_column)
        md << " † marks p < 0.05 in a paired t-test of pooled per-query " << sig_metric << " against "
           << spec.baseline << ".";
    md << "\n\n| run |";
    for (const auto& n : names) md << ' ' << n << " |";
    if (sig_column) md << " p vs " << spec.baseline << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < names.size(); ++i) md << "---|";
    if (sig_column) md << "---|";
    md << '\n';
    for (const auto& d : data) {
        md << "| " << d.cell.label() << " |";
        if (d.reports.empty()) {
            for (std::size_t i = 0; i < names.size(); ++i) md << " failed |";
            if (sig_column) md << " |";
            md << '\n';
            continue;
        }
        const auto t = vs_base.find(d.cell.label());
        const bool dagger = t != vs_base.end() && t->second && t->second->p < 0.05;
        for (const auto& n : names) {
            std::vector<double> v;
            for (const auto& [seed, r] : d.reports) v.push_back(r.aggregates.at(n));
            md << ' ' << fmt("%.4f", mean_of(v));
            if (multi_seed) md << " ± " << fmt("%.4f", sd_of(v));
            if (dagger && n == sig_metric) md << " †";
            md << " |";
        }
        if (sig_column) {
            if (t != vs_base.end() && t->second) md << ' ' << fmt("%.4g", t->second->p) << " |";
            else md << " |";
        }
        md << '\n';
    }
    bool any_failed = false;
    for (const auto& d : data) any_failed = any_failed || !d.failed.empty();
    if (any_failed) {
        md << "\nFailed runs:\n\n";
        for (const auto& d : data) {
            for (std::uint64_t seed : d.failed)
                md << "- " << d.cell.label() << " seed " << seed << "\n";
        }
    }

    // Loss curves and final losses per trained lineage.
    std::ostringstream csv;
    csv << "lineage,seed,epoch,L_cont,L_dist,L_KL,total\n";
    std::vector<std::string> lineages;
    for (const auto& c : spec.cells) {
        if (std::find(lineages.begin(), lineages.end(), c.lineage) == lineages.end())
            lineages.push_back(c.lineage);
    }
    md << "\nFinal-epoch training losses (mean over seeds):\n\n| lineage | L_cont | L_dist | L_KL | total |\n|---|---|---|---|---|\n";
    for (const auto& lineage : lineages) {
        std::vector<std::vector<double>> finals(4);
        for (std::uint64_t seed : spec.seeds) {
            const fs::path file = cell_directory(out, lineage, seed) / "loss_history.csv";
            if (!fs::exists(file) || fs::exists(cell_directory(out, lineage, seed) / kFailedFile)) continue;
            std::ifstream in(file);
            std::string line;
            std::getline(in, line);
            std::string last;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                csv << lineage << ',' << seed << ',' << line << '\n';
                last = line;
            }
            std::istringstream row(last);
            std::string field;
            std::getline(row, field, ',');
            for (auto& f : finals) {
                std::getline(row, field, ',');
                f.push_back(std::stod(field));
            }
        }
        md << "| " << lineage << " |";
        for (const auto& f : finals) md << ' ' << (f.empty() ? std::string("failed") : fmt("%.4f", mean_of(f))) << " |";
        md << '\n';
    }
    write_text_file(out / "losses.csv", csv.str());
    write_text_file(out / "report.md", md.str());
}

}  // namespace softqe
