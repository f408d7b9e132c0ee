#include "softqe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/trainer.hpp"

namespace softqe {

DenseIndex build_dense_index(const EncoderParams& passage_params, const Corpus& corpus)
{
    const auto& docs = corpus.documents();
    DenseIndex index;
    index.embeddings = Matrix(docs.size(), passage_params.dims().d_out);
    index.doc_ids.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        Embedding e;
        try {
            e = encode(passage_params, docs[i].tokens);
        } catch (const InputError& err) {
            throw InputError("document '" + docs[i].id + "': " + err.what());
        }
        std::copy(e.values.begin(), e.values.end(), index.embeddings.row(i).begin());
        index.doc_ids.push_back(docs[i].id);
    }
    return index;
}

Ranking search(const DenseIndex& index, std::span<const double> query_emb, std::size_t k,
               const std::string& query_id)
{
    const std::size_t n = index.size();
    if (k < 1 || k > n)
        throw InputError("search: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) +
                         "]");
    if (query_emb.size() != index.embeddings.cols)
        throw InputError("search: query dimension does not match the index");
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = dot(index.embeddings.row(i), query_emb);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Rows follow ascending doc id, so position order is the tie-break.
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      better);
    Ranking r;
    r.query_id = query_id;
    r.docs.reserve(k);
    for (std::size_t i = 0; i < k; ++i) r.docs.push_back({index.doc_ids[order[i]], scores[order[i]]});
    return r;
}

namespace {

std::unordered_map<std::string, int> grades_of(const std::vector<Judgment>& qrels)
{
    std::unordered_map<std::string, int> g;
    for (const auto& j : qrels) {
        if (j.relevance >= 1) g[j.doc_id] = j.relevance;
    }
    return g;
}

}  // namespace

double mrr_at_k(const Ranking& ranking, const std::vector<Judgment>& qrels, std::size_t k)
{
    if (k < 1) throw InputError("mrr_at_k: k must be >= 1");
    const auto g = grades_of(qrels);
    const std::size_t depth = std::min(k, ranking.docs.size());
    for (std::size_t i = 0; i < depth; ++i) {
        if (g.contains(ranking.docs[i].doc_id)) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

double recall_at_k(const Ranking& ranking, const std::vector<Judgment>& qrels, std::size_t k)
{
    if (k < 1) throw InputError("recall_at_k: k must be >= 1");
    const auto g = grades_of(qrels);
    if (g.empty()) throw InputError("recall_at_k: query has no relevant documents");
    const std::size_t depth = std::min(k, ranking.docs.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < depth; ++i) hits += g.contains(ranking.docs[i].doc_id) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(g.size());
}

double ndcg_at_k(const Ranking& ranking, const std::vector<Judgment>& qrels, std::size_t k)
{
    if (k < 1) throw InputError("ndcg_at_k: k must be >= 1");
    const auto g = grades_of(qrels);
    if (g.empty()) throw InputError("ndcg_at_k: query has no relevant documents");
    const std::size_t depth = std::min(k, ranking.docs.size());
    double dcg = 0.0;
    for (std::size_t i = 0; i < depth; ++i) {
        auto it = g.find(ranking.docs[i].doc_id);
        if (it != g.end()) dcg += it->second / std::log2(static_cast<double>(i + 2));
    }
    std::vector<int> ideal;
    for (const auto& [id, rel] : g) ideal.push_back(rel);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i)
        idcg += ideal[i] / std::log2(static_cast<double>(i + 2));
    return dcg / idcg;
}

double student_t_two_sided_p(double t, double dof)
{
    if (std::isinf(t)) return 0.0;
    const boost::math::students_t dist(dof);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw InputError("paired_t_test: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw InputError("paired_t_test: need at least 2 pairs");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(n - 1);

    TTestResult r;
    r.dof = n - 1;
    r.mean_difference = mean;
    const bool all_zero = std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; });
    if (all_zero || mean == 0.0) {
        r.t = 0.0;
        r.p = 1.0;
        return r;
    }
    if (var == 0.0) {
        r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        r.degenerate = true;
        return r;
    }
    r.t = mean / std::sqrt(var / static_cast<double>(n));
    r.p = student_t_two_sided_p(r.t, static_cast<double>(r.dof));
    return r;
}

double one_sided_p_greater(const TTestResult& r)
{
    if (r.t > 0) return r.p / 2.0;
    if (r.t < 0) return 1.0 - r.p / 2.0;
    return r.p == 1.0 ? 0.5 : r.p;
}

std::string to_string(QueryInput m) { return m == QueryInput::q ? "q" : "q_plus"; }

QueryInput parse_query_input(const std::string& s)
{
    if (s == "q") return QueryInput::q;
    if (s == "q_plus" || s == "q+") return QueryInput::q_plus;
    throw InputError("unknown query input mode '" + s + "' (expected q or q_plus)");
}

std::vector<std::string> metric_names(const MetricCutoffs& c)
{
    std::vector<std::string> names{"mrr@" + std::to_string(c.mrr)};
    for (std::size_t k : c.recall) names.push_back("recall@" + std::to_string(k));
    names.push_back("ndcg@" + std::to_string(c.ndcg));
    return names;
}

EvalResult evaluate(const EncoderParams& query_params, const EncoderParams& passage_params,
                    const Corpus& corpus, QueryInput mode, const EvalOptions& options)
{
    const auto queries = corpus.queries_in(options.split);
    if (mode == QueryInput::q_plus) {
        for (const Query* q : queries) {
            if (corpus.expansion(q->id) == nullptr)
                throw IntegrityError("q_plus evaluation: no expansion for query '" + q->id + "'");
        }
    }
    const auto& c = options.cutoffs;
    std::size_t depth = std::max(c.mrr, c.ndcg);
    for (std::size_t k : c.recall) depth = std::max(depth, k);
    const DenseIndex index = build_dense_index(passage_params, corpus);
    depth = std::min(depth, index.size());

    EvalResult out;
    MetricReport& rep = out.report;
    rep.cutoffs = c;
    rep.query_input = to_string(mode);
    rep.corpus_hash = to_hex(corpus.content_hash());
    rep.model_checksum = to_hex(Fnv1a().u64(checksum(query_params)).u64(checksum(passage_params)).digest());
    const auto names = metric_names(c);
    for (const auto& name : names) rep.per_query[name];

    for (const Query* q : queries) {
        const std::vector<TokenId> tokens =
            mode == QueryInput::q ? q->tokens : corpus.expanded(q->id).tokens;
        const auto emb = encode(query_params, tokens);
        Ranking r = search(index, emb.values, depth, q->id);
        auto it = corpus.qrels().find(q->id);
        if (it == corpus.qrels().end() || it->second.empty()) {
            ++rep.excluded_queries;
            out.rankings.push_back(std::move(r));
            continue;
        }
        const auto& judged = it->second;
        rep.per_query[names[0]][q->id] = mrr_at_k(r, judged, c.mrr);
        for (std::size_t i = 0; i < c.recall.size(); ++i)
            rep.per_query[names[1 + i]][q->id] = recall_at_k(r, judged, c.recall[i]);
        rep.per_query[names.back()][q->id] = ndcg_at_k(r, judged, c.ndcg);
        ++rep.num_queries;
        out.rankings.push_back(std::move(r));
    }
    for (const auto& [name, values] : rep.per_query) {
        double s = 0.0;
        for (const auto& [qid, v] : values) s += v;
        rep.aggregates[name] = values.empty() ? 0.0 : s / static_cast<double>(values.size());
    }
    return out;
}

EvalResult evaluate(const TrainedModel& model, const Corpus& corpus, QueryInput mode,
                    const EvalOptions& options)
{
    return evaluate(model.query_params, model.passage_params, corpus, mode, options);
}

void write_trec_run(std::ostream& out, const std::vector<Ranking>& rankings,
                    const std::string& run_tag, std::size_t depth)
{
    char buf[64];
    for (const auto& r : rankings) {
        const std::size_t n = std::min(depth, r.docs.size());
        for (std::size_t i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, "%.9g", r.docs[i].score);
            out << r.query_id << " Q0 " << r.docs[i].doc_id << ' ' << (i + 1) << ' ' << buf << ' '
                << run_tag << '\n';
        }
    }
}

}  // namespace softqe
