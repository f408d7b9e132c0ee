#include "softqe/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/rng.hpp"

namespace softqe {

namespace {

std::vector<TokenId> distinct(std::span<const TokenId> query)
{
    std::vector<TokenId> terms(query.begin(), query.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

}  // namespace

InvertedIndex::InvertedIndex(const Corpus& corpus, double k1, double b) : m_k1(k1), m_b(b)
{
    const auto& docs = corpus.documents();
    if (docs.empty()) throw ConfigError("build_inverted_index: corpus has no documents");
    if (!(k1 >= 0.0) || !(b >= 0.0 && b <= 1.0))
        throw ConfigError("build_inverted_index: need k1 >= 0 and b in [0, 1]");
    m_postings.resize(corpus.layout().vocab_size);
    m_doc_lengths.resize(docs.size());
    std::uint64_t total = 0;
    std::vector<TokenId> sorted;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        sorted = docs[d].tokens;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            m_postings[sorted[i]].push_back(
                {static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(j - i)});
            i = j;
        }
        m_doc_lengths[d] = static_cast<std::uint32_t>(sorted.size());
        total += sorted.size();
    }
    m_avg_doc_len = static_cast<double>(total) / static_cast<double>(docs.size());
}

std::span<const Posting> InvertedIndex::postings(TokenId t) const
{
    if (t >= m_postings.size()) return {};
    return m_postings[t];
}

double InvertedIndex::idf(TokenId t) const
{
    const auto df = static_cast<double>(postings(t).size());
    const auto n = static_cast<double>(num_docs());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double InvertedIndex::term_weight(double idf, std::uint32_t tf, std::uint32_t len) const
{
    const double f = tf;
    const double norm = m_avg_doc_len > 0.0 ? static_cast<double>(len) / m_avg_doc_len : 0.0;
    return idf * f / (f + m_k1 * (1.0 - m_b + m_b * norm));
}

double InvertedIndex::score(std::span<const TokenId> query, std::size_t doc) const
{
    if (doc >= num_docs()) throw LookupError("bm25: document position out of range");
    double s = 0.0;
    for (TokenId t : distinct(query)) {
        auto plist = postings(t);
        auto it = std::lower_bound(plist.begin(), plist.end(), doc,
                                   [](const Posting& p, std::size_t d) { return p.doc < d; });
        if (it != plist.end() && it->doc == doc)
            s += term_weight(idf(t), it->tf, m_doc_lengths[doc]);
    }
    return s;
}

std::vector<double> InvertedIndex::score_all(std::span<const TokenId> query) const
{
    std::vector<double> scores(num_docs(), 0.0);
    for (TokenId t : distinct(query)) {
        const double w = idf(t);
        for (const Posting& p : postings(t)) scores[p.doc] += term_weight(w, p.tf, m_doc_lengths[p.doc]);
    }
    return scores;
}

InvertedIndex build_inverted_index(const Corpus& corpus, double k1, double b)
{
    return InvertedIndex(corpus, k1, b);
}

double bm25_score(const InvertedIndex& index, const Corpus& corpus,
                  std::span<const TokenId> query, const std::string& doc_id)
{
    return index.score(query, corpus.doc_position(doc_id));
}

MinedNegatives mine_hard_negatives(const InvertedIndex& index, const Corpus& corpus,
                                   const std::string& query_id, std::size_t n, std::uint64_t seed)
{
    if (n == 0) throw InputError("mine_hard_negatives: n must be >= 1");
    const Query& q = corpus.query(query_id);
    const auto relevant_list = corpus.relevant_positions(query_id);
    const std::unordered_set<std::size_t> relevant(relevant_list.begin(), relevant_list.end());
    if (corpus.documents().size() - relevant.size() < n)
        throw InputError("mine_hard_negatives: fewer than n non-relevant documents exist");

    const auto scores = index.score_all(q.tokens);
    std::vector<std::size_t> candidates;
    for (std::size_t d = 0; d < scores.size(); ++d) {
        if (scores[d] > 0.0 && !relevant.contains(d)) candidates.push_back(d);
    }
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    const std::size_t take = std::min(n, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), better);
    candidates.resize(take);

    MinedNegatives out{std::move(candidates), 0};
    if (out.docs.size() < n) {
        std::unordered_set<std::size_t> used(out.docs.begin(), out.docs.end());
        Rng rng = Rng(seed).split(stream::kNegativePadding).split(fnv1a(query_id));
        while (out.docs.size() < n) {
            auto d = static_cast<std::size_t>(rng.below(scores.size()));
            if (relevant.contains(d) || used.contains(d)) continue;
            used.insert(d);
            out.docs.push_back(d);
            ++out.padded;
        }
    }
    return out;
}

}  // namespace softqe
