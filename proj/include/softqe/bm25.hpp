#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softqe/corpus.hpp"

namespace softqe {

struct Posting {
    std::uint32_t doc = 0;  // document position in the corpus
    std::uint32_t tf = 0;
    bool operator==(const Posting&) const = default;
};

/// Okapi BM25 over a Corpus, Lucene-style idf:
///
///   score(q, d) = sum over distinct t in q of
///                 idf(t) * tf / (tf + k1 * (1 - b + b * len / avg_len))
///   idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
class InvertedIndex {
  public:
    static constexpr double kDefaultK1 = 0.9;
    static constexpr double kDefaultB = 0.4;

    InvertedIndex(const Corpus& corpus, double k1 = kDefaultK1, double b = kDefaultB);

    std::span<const Posting> postings(TokenId t) const;
    std::uint32_t doc_length(std::size_t doc) const { return m_doc_lengths.at(doc); }
    const std::vector<std::uint32_t>& doc_lengths() const { return m_doc_lengths; }
    double avg_doc_len() const { return m_avg_doc_len; }
    std::size_t num_docs() const { return m_doc_lengths.size(); }
    double k1() const { return m_k1; }
    double b() const { return m_b; }

    double idf(TokenId t) const;
    /// Throws LookupError for an unknown document position.
    double score(std::span<const TokenId> query, std::size_t doc) const;
    /// Scores of every document, accumulated term-at-a-time.
    std::vector<double> score_all(std::span<const TokenId> query) const;

    bool operator==(const InvertedIndex&) const = default;

  private:
    double term_weight(double idf, std::uint32_t tf, std::uint32_t len) const;

    std::vector<std::vector<Posting>> m_postings;  // indexed by token id
    std::vector<std::uint32_t> m_doc_lengths;
    double m_avg_doc_len = 0.0;
    double m_k1;
    double m_b;
};

InvertedIndex build_inverted_index(const Corpus& corpus, double k1 = InvertedIndex::kDefaultK1,
                                   double b = InvertedIndex::kDefaultB);

/// score by document id.
double bm25_score(const InvertedIndex& index, const Corpus& corpus,
                  std::span<const TokenId> query, const std::string& doc_id);

struct MinedNegatives {
    std::vector<std::size_t> docs;  // positions, best first
    /// How many trailing entries were random fill because fewer than n
    /// non-relevant documents scored above zero.
    std::size_t padded = 0;
};

/// Top-n BM25 documents for the query that carry no relevance judgment; ties
/// broken by ascending doc id.
MinedNegatives mine_hard_negatives(const InvertedIndex& index, const Corpus& corpus,
                                   const std::string& query_id, std::size_t n,
                                   std::uint64_t seed = 0);

}  // namespace softqe
