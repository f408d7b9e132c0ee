#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace softqe {

using TokenId = std::uint32_t;

enum class Split { train, eval };

std::string to_string(Split split);
Split parse_split(const std::string& s);

/// Where simulated hallucinations draw their off-topic terms from.
enum class NoiseSource { background, wrong_topic };

std::string to_string(NoiseSource source);
NoiseSource parse_noise_source(const std::string& s);

/// Parameters of the synthetic corpus generator.
///
/// The vocabulary is laid out as `num_topics` disjoint topical pools of
/// `topic_pool_size()` ids each, followed by a shared background pool that
/// fills the non-salient part of every document.
struct CorpusConfig {
    std::size_t num_topics = 20;
    std::size_t vocab_size = 800;
    std::size_t background_vocab = 200;
    std::size_t num_docs = 2000;
    std::size_t doc_len = 24;
    std::size_t salient_terms_per_doc = 8;
    std::size_t num_train_queries = 500;
    std::size_t num_eval_queries = 100;
    double query_keep_fraction = 0.5;
    /// Probability that a document is derived from an earlier same-topic
    /// document, sharing `sibling_shared_fraction` of its salient terms.
    double sibling_rate = 0.2;
    double sibling_shared_fraction = 0.625;
    double expander_recovery_rate = 0.8;
    double expander_noise_rate = 1.0;
    NoiseSource expander_noise_source = NoiseSource::background;
    std::uint64_t seed = 1;

    std::size_t topic_pool_size() const;
    /// Throws ConfigError naming the first violated bound.
    void validate() const;
};

/// How token ids map onto topics. `num_topics == 0` means no topic structure
/// is known (external corpora): every id is treated as topical.
struct VocabLayout {
    std::uint32_t vocab_size = 0;
    std::uint32_t num_topics = 0;
    std::uint32_t topic_pool_size = 0;

    std::uint32_t topical_vocab() const
    {
        return num_topics == 0 ? vocab_size : num_topics * topic_pool_size;
    }
    bool is_topical(TokenId t) const { return t < topical_vocab(); }
    /// Topic of a topical token, or -1.
    int topic_of(TokenId t) const
    {
        if (num_topics == 0 || !is_topical(t)) return -1;
        return static_cast<int>(t / topic_pool_size);
    }
    bool operator==(const VocabLayout&) const = default;
};

struct Document {
    std::string id;
    std::vector<TokenId> tokens;
    bool operator==(const Document&) const = default;
};

struct Query {
    std::string id;
    std::vector<TokenId> tokens;
    Split split = Split::train;
    bool operator==(const Query&) const = default;
};

struct Judgment {
    std::string doc_id;
    int relevance = 1;
    bool operator==(const Judgment&) const = default;
};

/// Where a pseudo-document came from and what it contains.
struct ExpansionProvenance {
    std::string source = "oracle";  // "oracle" or "external"
    std::uint64_t seed = 0;
    double recovery_rate = 0.0;
    double noise_rate = 0.0;
    std::uint32_t missing = 0;    // gold salient terms absent from the query
    std::uint32_t recovered = 0;  // of those, how many the expander emitted
    std::uint32_t noise = 0;      // off-topic terms emitted
    bool operator==(const ExpansionProvenance&) const = default;
};

struct Expansion {
    std::vector<TokenId> pseudo_doc;
    ExpansionProvenance provenance;
    bool operator==(const Expansion&) const = default;
};

/// Query tokens followed by pseudo-document tokens; `tokens[0, boundary)` is
/// the original query.
struct ExpandedQuery {
    std::string query_id;
    std::vector<TokenId> tokens;
    std::size_t boundary = 0;
    ExpansionProvenance provenance;

    std::span<const TokenId> query_part() const { return {tokens.data(), boundary}; }
    std::span<const TokenId> pseudo_doc() const
    {
        return {tokens.data() + boundary, tokens.size() - boundary};
    }
};

/// Forms q+ = q (+) d'.
ExpandedQuery concatenate(const Query& query, const Expansion& expansion);

/// Immutable retrieval corpus. Documents are kept sorted by id so that
/// "ascending doc_id" tie-breaking equals ascending position everywhere.
class Corpus {
  public:
    Corpus() = default;
    /// Validates every cross-reference; throws IntegrityError.
    Corpus(VocabLayout layout, std::vector<Document> documents, std::vector<Query> queries,
           std::map<std::string, std::vector<Judgment>> qrels,
           std::map<std::string, Expansion> expansions);

    const VocabLayout& layout() const { return m_layout; }
    const std::vector<Document>& documents() const { return m_documents; }
    const std::vector<Query>& queries() const { return m_queries; }
    const std::map<std::string, std::vector<Judgment>>& qrels() const { return m_qrels; }
    const std::map<std::string, Expansion>& expansions() const { return m_expansions; }

    std::size_t doc_position(const std::string& doc_id) const;
    const Query& query(const std::string& query_id) const;
    bool has_query(const std::string& query_id) const;
    std::vector<const Query*> queries_in(Split split) const;

    /// Relevance grade of doc for query; 0 when unjudged.
    int relevance(const std::string& query_id, std::size_t doc_pos) const;
    /// Positions of documents with relevance >= 1.
    std::vector<std::size_t> relevant_positions(const std::string& query_id) const;
    /// Highest-graded relevant document (lowest id among ties).
    std::size_t gold_position(const std::string& query_id) const;
    /// Distinct topical tokens of a document in first-occurrence order.
    std::vector<TokenId> salient_terms(std::size_t doc_pos) const;

    const Expansion* expansion(const std::string& query_id) const;
    ExpandedQuery expanded(const std::string& query_id) const;

    /// Same corpus with the expansions map emptied; models a deployment where
    /// no expander is reachable.
    Corpus without_expansions() const;
    Corpus with_expansions(std::map<std::string, Expansion> expansions) const;

    /// Hash over documents, queries and qrels (expansions excluded).
    std::uint64_t content_hash() const;
    std::uint64_t expansion_hash() const;

    bool operator==(const Corpus& other) const;

  private:
    void index_and_validate();

    VocabLayout m_layout;
    std::vector<Document> m_documents;
    std::vector<Query> m_queries;
    std::map<std::string, std::vector<Judgment>> m_qrels;
    std::map<std::string, Expansion> m_expansions;
    std::unordered_map<std::string, std::size_t> m_doc_pos;
    std::unordered_map<std::string, std::size_t> m_query_pos;
    // qrels resolved to positions, keyed by query position.
    std::vector<std::vector<std::pair<std::size_t, int>>> m_rel_by_query;
};

Corpus generate_corpus(const CorpusConfig& config);

/// Simulated LLM expansion of a query: each gold salient term missing from
/// the query is recovered with probability `recovery_rate`; for each gold
/// salient term an off-topic term is added with probability `noise_rate`.
/// Off-topic terms come from the background vocabulary or from one coherent
/// wrong topic. Without topic structure they come from any id outside the
/// gold document.
ExpandedQuery oracle_expand(const std::string& query_id, const Corpus& corpus,
                            double recovery_rate, double noise_rate, std::uint64_t seed,
                            NoiseSource source = NoiseSource::background);

/// Files making up an on-disk corpus.
struct CorpusPaths {
    std::filesystem::path documents;
    std::filesystem::path queries;
    std::filesystem::path qrels;
    std::optional<std::filesystem::path> expansions;

    /// docs.tsv, queries.tsv, qrels.txt, expansions.jsonl under one directory.
    static CorpusPaths in_directory(const std::filesystem::path& dir);
};

struct LoadOptions {
    /// Fixes the vocabulary; otherwise inferred from the largest id seen.
    std::optional<VocabLayout> layout;
    /// Non-numeric words are hashed into [0, hash_buckets).
    std::uint32_t hash_buckets = 1U << 15U;
};

/// Token rule for text inputs: decimal integers are literal ids, anything
/// else is hashed with FNV-1a into the bucket range.
TokenId token_for_word(const std::string& word, std::uint32_t hash_buckets);

Corpus load_external_corpus(const CorpusPaths& paths, const LoadOptions& options = {});

/// Writes the four files plus `corpus.json` carrying the vocabulary layout.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Reads a directory written by write_corpus.
Corpus read_corpus_directory(const std::filesystem::path& dir);

}  // namespace softqe
