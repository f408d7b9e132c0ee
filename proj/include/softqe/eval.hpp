#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "softqe/corpus.hpp"
#include "softqe/encoder.hpp"

namespace softqe {

struct TrainedModel;

/// Passage embeddings, one row per document in corpus order.
struct DenseIndex {
    Matrix embeddings;
    std::vector<std::string> doc_ids;
    std::size_t size() const { return doc_ids.size(); }
};

DenseIndex build_dense_index(const EncoderParams& passage_params, const Corpus& corpus);

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

/// Descending score, ties by ascending doc id.
struct Ranking {
    std::string query_id;
    std::vector<ScoredDoc> docs;
};

/// Exact top-k by inner product. Requires 1 <= k <= index size.
Ranking search(const DenseIndex& index, std::span<const double> query_emb, std::size_t k,
               const std::string& query_id = {});

double mrr_at_k(const Ranking& ranking, const std::vector<Judgment>& qrels, std::size_t k = 10);
/// Throws InputError when the query has no relevant document.
double recall_at_k(const Ranking& ranking, const std::vector<Judgment>& qrels, std::size_t k);
/// Linear-gain nDCG: DCG = sum_i rel_i / log2(i + 1) over the top k.
double ndcg_at_k(const Ranking& ranking, const std::vector<Judgment>& qrels, std::size_t k = 10);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;  // two-sided
    std::size_t dof = 0;
    double mean_difference = 0.0;
    /// Differences had zero variance but non-zero mean.
    bool degenerate = false;
};

/// Paired Student t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);
/// One-sided p-value for the alternative mean(a - b) > 0.
double one_sided_p_greater(const TTestResult& r);
/// Two-sided tail probability P(|T| >= |t|) for Student t with dof degrees of freedom.
double student_t_two_sided_p(double t, double dof);

enum class QueryInput { q, q_plus };
std::string to_string(QueryInput m);
QueryInput parse_query_input(const std::string& s);

struct MetricCutoffs {
    std::size_t mrr = 10;
    std::vector<std::size_t> recall = {50, 1000};
    std::size_t ndcg = 10;
};

/// Metric names used as keys: "mrr@10", "recall@50", "recall@1000", "ndcg@10".
std::vector<std::string> metric_names(const MetricCutoffs& cutoffs);

struct MetricReport {
    /// metric -> query id -> value
    std::map<std::string, std::map<std::string, double>> per_query;
    std::map<std::string, double> aggregates;
    MetricCutoffs cutoffs;
    std::string query_input = "q";
    std::string corpus_hash;
    std::string model_checksum;
    std::size_t num_queries = 0;
    std::size_t excluded_queries = 0;
};

struct EvalResult {
    MetricReport report;
    std::vector<Ranking> rankings;
};

struct EvalOptions {
    MetricCutoffs cutoffs;
    Split split = Split::eval;
};

EvalResult evaluate(const EncoderParams& query_params, const EncoderParams& passage_params,
                    const Corpus& corpus, QueryInput mode, const EvalOptions& options = {});
EvalResult evaluate(const TrainedModel& model, const Corpus& corpus, QueryInput mode,
                    const EvalOptions& options = {});

/// `query_id Q0 doc_id rank score run_tag`, ranks from 1, at most `depth` rows per query.
void write_trec_run(std::ostream& out, const std::vector<Ranking>& rankings,
                    const std::string& run_tag, std::size_t depth = 100);

}  // namespace softqe
