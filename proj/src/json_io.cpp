#include "softqe/json_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"

namespace softqe {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& what)
{
    if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError(what + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_field(const Json& j, const char* key, T& out, const std::string& what)
{
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(what + ": key '" + key + "' has the wrong type");
    }
}

std::uint64_t parse_hex(const std::string& s)
{
    std::uint64_t v = 0;
    if (s.empty() || s.size() > 16) throw SerializationError("bad hex value '" + s + "'");
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw SerializationError("bad hex value '" + s + "'");
    }
    return v;
}

std::string format_double(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

Json to_json(const CorpusConfig& c)
{
    return Json{{"num_topics", c.num_topics},
                {"vocab_size", c.vocab_size},
                {"background_vocab", c.background_vocab},
                {"num_docs", c.num_docs},
                {"doc_len", c.doc_len},
                {"salient_terms_per_doc", c.salient_terms_per_doc},
                {"num_train_queries", c.num_train_queries},
                {"num_eval_queries", c.num_eval_queries},
                {"query_keep_fraction", c.query_keep_fraction},
                {"sibling_rate", c.sibling_rate},
                {"sibling_shared_fraction", c.sibling_shared_fraction},
                {"expander_recovery_rate", c.expander_recovery_rate},
                {"expander_noise_rate", c.expander_noise_rate},
                {"expander_noise_source", to_string(c.expander_noise_source)},
                {"seed", c.seed}};
}

CorpusConfig corpus_config_from_json(const Json& j, CorpusConfig c)
{
    const std::string what = "corpus config";
    reject_unknown(j,
                   {"num_topics", "vocab_size", "background_vocab", "num_docs", "doc_len",
                    "salient_terms_per_doc", "num_train_queries", "num_eval_queries",
                    "query_keep_fraction", "sibling_rate", "sibling_shared_fraction",
                    "expander_recovery_rate", "expander_noise_rate",
                    "expander_noise_source", "seed"},
                   what);
    read_field(j, "num_topics", c.num_topics, what);
    read_field(j, "vocab_size", c.vocab_size, what);
    read_field(j, "background_vocab", c.background_vocab, what);
    read_field(j, "num_docs", c.num_docs, what);
    read_field(j, "doc_len", c.doc_len, what);
    read_field(j, "salient_terms_per_doc", c.salient_terms_per_doc, what);
    read_field(j, "num_train_queries", c.num_train_queries, what);
    read_field(j, "num_eval_queries", c.num_eval_queries, what);
    read_field(j, "query_keep_fraction", c.query_keep_fraction, what);
    read_field(j, "sibling_rate", c.sibling_rate, what);
    read_field(j, "sibling_shared_fraction", c.sibling_shared_fraction, what);
    read_field(j, "expander_recovery_rate", c.expander_recovery_rate, what);
    read_field(j, "expander_noise_rate", c.expander_noise_rate, what);
    if (j.contains("expander_noise_source")) {
        std::string s;
        read_field(j, "expander_noise_source", s, what);
        c.expander_noise_source = parse_noise_source(s);
    }
    read_field(j, "seed", c.seed, what);
    return c;
}

Json to_json(const LossSchedule& s)
{
    Json per = Json::array();
    for (const auto& w : s.per_epoch) per.push_back({{"alpha", w.alpha}, {"beta", w.beta}});
    return Json{{"per_epoch", per},
                {"warmup_epochs", s.warmup_epochs},
                {"alpha_warm", s.alpha_warm},
                {"alpha_after", s.alpha_after}};
}

LossSchedule schedule_from_json(const Json& j, std::size_t epochs)
{
    const std::string what = "schedule";
    if (!j.is_object()) throw ConfigError("schedule: expected a JSON object");
    if (j.contains("per_epoch")) {
        reject_unknown(j, {"per_epoch", "warmup_epochs", "alpha_warm", "alpha_after"}, what);
        LossSchedule s;
        for (const auto& e : j.at("per_epoch")) {
            LossWeights w;
            reject_unknown(e, {"alpha", "beta"}, what);
            read_field(e, "alpha", w.alpha, what);
            read_field(e, "beta", w.beta, what);
            s.per_epoch.push_back(w);
        }
        read_field(j, "warmup_epochs", s.warmup_epochs, what);
        read_field(j, "alpha_warm", s.alpha_warm, what);
        read_field(j, "alpha_after", s.alpha_after, what);
        s.validate();
        return s;
    }
    std::string kind;
    read_field(j, "kind", kind, what);
    double beta = 0.0;
    read_field(j, "beta", beta, what);
    if (kind == "step") {
        reject_unknown(j, {"kind", "warmup_epochs", "alpha_warm", "alpha_after", "beta"}, what);
        std::size_t warm = 3;
        double a_warm = 1.0, a_after = 0.2;
        read_field(j, "warmup_epochs", warm, what);
        read_field(j, "alpha_warm", a_warm, what);
        read_field(j, "alpha_after", a_after, what);
        if (warm > epochs)
            throw ConfigError("schedule: warmup_epochs exceeds the number of epochs");
        return LossSchedule::step(epochs, warm, a_warm, a_after, beta);
    }
    if (kind == "constant") {
        reject_unknown(j, {"kind", "alpha", "beta"}, what);
        double alpha = 0.0;
        read_field(j, "alpha", alpha, what);
        return LossSchedule::constant(epochs, alpha, beta);
    }
    throw ConfigError("schedule: 'kind' must be step or constant (or give per_epoch)");
}

Json to_json(const TrainConfig& c)
{
    return Json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"optimizer", to_string(c.optimizer)},
                {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
                {"negatives_per_query", c.negatives_per_query},
                {"random_negatives_per_query", c.random_negatives_per_query},
                {"schedule", to_json(c.schedule)},
                {"freeze_passage_encoder", c.freeze_passage_encoder},
                {"objective", to_string(c.objective)},
                {"seed", c.seed},
                {"dims", {{"d_emb", c.dims.d_emb}, {"d_hidden", c.dims.d_hidden}, {"d_out", c.dims.d_out}}},
                {"normalize_output", c.normalize_output},
                {"grad_clip_norm", c.grad_clip_norm},
                {"bm25_k1", c.bm25_k1},
                {"bm25_b", c.bm25_b},
                {"init_student_from_teacher", c.init_student_from_teacher},
                {"shared_initialization", c.shared_initialization},
                {"cross_encoder",
                 {{"mode", to_string(c.cross_encoder.mode)},
                  {"temperature", c.cross_encoder.temperature},
                  {"noise_sd", c.cross_encoder.noise_sd},
                  {"seed", c.cross_encoder.seed}}},
                {"kl_direction", to_string(c.kl_direction)}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c)
{
    const std::string what = "train config";
    reject_unknown(j,
                   {"epochs", "batch_size", "learning_rate", "optimizer", "adam",
                    "negatives_per_query", "random_negatives_per_query", "schedule",
                    "freeze_passage_encoder", "objective", "seed", "dims", "normalize_output",
                    "grad_clip_norm", "bm25_k1", "bm25_b", "init_student_from_teacher",
                    "shared_initialization", "cross_encoder", "kl_direction"},
                   what);
    const std::size_t old_epochs = c.epochs;
    read_field(j, "epochs", c.epochs, what);
    read_field(j, "batch_size", c.batch_size, what);
    read_field(j, "learning_rate", c.learning_rate, what);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        reject_unknown(a, {"beta1", "beta2", "epsilon"}, "adam");
        read_field(a, "beta1", c.adam.beta1, what);
        read_field(a, "beta2", c.adam.beta2, what);
        read_field(a, "epsilon", c.adam.epsilon, what);
    }
    read_field(j, "negatives_per_query", c.negatives_per_query, what);
    read_field(j, "random_negatives_per_query", c.random_negatives_per_query, what);
    if (j.contains("schedule")) {
        c.schedule = schedule_from_json(j.at("schedule"), c.epochs);
    } else if (c.epochs != old_epochs) {
        c.schedule = default_schedule(c.epochs);
    }
    read_field(j, "freeze_passage_encoder", c.freeze_passage_encoder, what);
    if (j.contains("objective")) c.objective = parse_objective(j.at("objective").get<std::string>());
    read_field(j, "seed", c.seed, what);
    if (j.contains("dims")) {
        const auto& d = j.at("dims");
        reject_unknown(d, {"d_emb", "d_hidden", "d_out"}, "dims");
        read_field(d, "d_emb", c.dims.d_emb, what);
        read_field(d, "d_hidden", c.dims.d_hidden, what);
        read_field(d, "d_out", c.dims.d_out, what);
    }
    read_field(j, "normalize_output", c.normalize_output, what);
    read_field(j, "grad_clip_norm", c.grad_clip_norm, what);
    read_field(j, "bm25_k1", c.bm25_k1, what);
    read_field(j, "bm25_b", c.bm25_b, what);
    read_field(j, "init_student_from_teacher", c.init_student_from_teacher, what);
    read_field(j, "shared_initialization", c.shared_initialization, what);
    if (j.contains("cross_encoder")) {
        const auto& x = j.at("cross_encoder");
        reject_unknown(x, {"mode", "temperature", "noise_sd", "seed"}, "cross_encoder");
        if (x.contains("mode")) c.cross_encoder.mode = parse_scorer_mode(x.at("mode").get<std::string>());
        read_field(x, "temperature", c.cross_encoder.temperature, what);
        read_field(x, "noise_sd", c.cross_encoder.noise_sd, what);
        read_field(x, "seed", c.cross_encoder.seed, what);
    }
    if (j.contains("kl_direction"))
        c.kl_direction = parse_kl_direction(j.at("kl_direction").get<std::string>());
    c.validate();
    return c;
}

Json to_json(const TrainProvenance& p)
{
    Json j{{"lineage", p.lineage},
           {"corpus_hash", to_hex(p.corpus_hash)},
           {"expansion_hash", to_hex(p.expansion_hash)},
           {"seed", p.seed},
           {"teacher_checksum", p.teacher_checksum ? Json(to_hex(*p.teacher_checksum)) : Json(nullptr)},
           {"targets_from_cache", p.targets_from_cache},
           {"padded_negatives", p.padded_negatives}};
    return j;
}

TrainProvenance provenance_from_json(const Json& j)
{
    try {
        TrainProvenance p;
        p.lineage = j.at("lineage").get<std::string>();
        p.corpus_hash = parse_hex(j.at("corpus_hash").get<std::string>());
        p.expansion_hash = parse_hex(j.at("expansion_hash").get<std::string>());
        p.seed = j.at("seed").get<std::uint64_t>();
        if (!j.at("teacher_checksum").is_null())
            p.teacher_checksum = parse_hex(j.at("teacher_checksum").get<std::string>());
        p.targets_from_cache = j.at("targets_from_cache").get<bool>();
        p.padded_negatives = j.at("padded_negatives").get<std::size_t>();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw SerializationError(std::string("provenance.json: ") + e.what());
    }
}

Json to_json(const MetricReport& r)
{
    Json per = Json::object();
    for (const auto& [metric, values] : r.per_query) {
        Json m = Json::object();
        for (const auto& [qid, v] : values) m[qid] = v;
        per[metric] = m;
    }
    Json agg = Json::object();
    for (const auto& [metric, v] : r.aggregates) agg[metric] = v;
    return Json{{"query_input", r.query_input},
                {"corpus_hash", r.corpus_hash},
                {"model_checksum", r.model_checksum},
                {"cutoffs", {{"mrr", r.cutoffs.mrr}, {"recall", r.cutoffs.recall}, {"ndcg", r.cutoffs.ndcg}}},
                {"num_queries", r.num_queries},
                {"excluded_queries", r.excluded_queries},
                {"aggregates", agg},
                {"per_query", per}};
}

MetricReport metric_report_from_json(const Json& j)
{
    try {
        MetricReport r;
        r.query_input = j.at("query_input").get<std::string>();
        r.corpus_hash = j.at("corpus_hash").get<std::string>();
        r.model_checksum = j.at("model_checksum").get<std::string>();
        const auto& c = j.at("cutoffs");
        r.cutoffs.mrr = c.at("mrr").get<std::size_t>();
        r.cutoffs.recall = c.at("recall").get<std::vector<std::size_t>>();
        r.cutoffs.ndcg = c.at("ndcg").get<std::size_t>();
        r.num_queries = j.at("num_queries").get<std::size_t>();
        r.excluded_queries = j.at("excluded_queries").get<std::size_t>();
        for (const auto& [metric, v] : j.at("aggregates").items()) r.aggregates[metric] = v.get<double>();
        for (const auto& [metric, values] : j.at("per_query").items()) {
            auto& m = r.per_query[metric];
            for (const auto& [qid, v] : values.items()) m[qid] = v.get<double>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SerializationError(std::string("metric report: ") + e.what());
    }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SerializationError("cannot write " + path.string());
    out << text;
    if (!out) throw SerializationError("write failed for " + path.string());
}

std::string loss_history_csv(const TrainedModel& model)
{
    std::ostringstream out;
    out << "epoch,L_cont,L_dist,L_KL,total\n";
    auto row = [&](std::size_t epoch, const LossRecord& r) {
        out << epoch << ',' << format_double(r.contrastive) << ',' << format_double(r.distillation)
            << ',' << format_double(r.kl) << ',' << format_double(r.total) << '\n';
    };
    row(0, model.initial);
    for (std::size_t e = 0; e < model.loss_history.size(); ++e) row(e + 1, model.loss_history[e]);
    return out.str();
}

void write_run_directory(const TrainedModel& model, const Corpus& corpus, const fs::path& dir)
{
    fs::create_directories(dir);
    write_text_file(dir / "config.json", dump(to_json(model.config)));
    save_model_checkpoint(model, dir / "model.ckpt");
    write_text_file(dir / "loss_history.csv", loss_history_csv(model));
    Json prov = to_json(model.provenance);
    Json updates = Json::array();
    for (const auto& e : model.loss_history)
        updates.push_back({{"query", e.query_update_norm}, {"passage", e.passage_update_norm}});
    prov["update_norms"] = updates;
    write_text_file(dir / "provenance.json", dump(prov));

    const auto set = build_training_set(corpus, model.config.negatives_per_query,
                                        model.config.bm25_k1, model.config.bm25_b,
                                        model.config.seed);
    Json neg = Json::object();
    for (const auto& ex : set.examples) {
        Json ids = Json::array();
        for (std::size_t d : ex.negatives) ids.push_back(corpus.documents()[d].id);
        neg[ex.query_id] = ids;
    }
    write_text_file(dir / "negatives.json", dump(neg));
}

RunDirectory read_run_directory(const fs::path& dir)
{
    for (const char* name : {"config.json", "model.ckpt", "provenance.json"}) {
        if (!fs::exists(dir / name))
            throw InputError("run directory " + dir.string() + " is missing " + name);
    }
    RunDirectory run;
    run.config = train_config_from_json(read_json_file(dir / "config.json"));
    auto [q, p] = load_model_checkpoint(dir / "model.ckpt");
    run.query_params = std::move(q);
    run.passage_params = std::move(p);
    Json prov = read_json_file(dir / "provenance.json");
    prov.erase("update_norms");
    run.provenance = provenance_from_json(prov);
    return run;
}

}  // namespace softqe
