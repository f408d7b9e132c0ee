#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "softqe/bm25.hpp"
#include "softqe/error.hpp"
#include "util.hpp"

using namespace softqe;

namespace {

Corpus hand_corpus(const std::vector<std::vector<TokenId>>& docs, const std::vector<TokenId>& query,
                   const std::vector<std::string>& relevant)
{
    std::vector<Document> d;
    for (std::size_t i = 0; i < docs.size(); ++i) d.push_back({"d" + std::to_string(i), docs[i]});
    std::vector<Query> q{{"q", query, Split::train}};
    std::map<std::string, std::vector<Judgment>> qrels;
    for (const auto& r : relevant) qrels["q"].push_back({r, 1});
    return Corpus(VocabLayout{16, 0, 0}, d, q, qrels, {});
}

// From-scratch BM25 over raw token lists.
double reference_bm25(const Corpus& c, std::span<const TokenId> query, std::size_t doc, double k1, double b)
{
    const auto& docs = c.documents();
    double avg = 0.0;
    for (const auto& d : docs) avg += static_cast<double>(d.tokens.size());
    avg /= static_cast<double>(docs.size());
    std::set<TokenId> terms(query.begin(), query.end());
    double s = 0.0;
    for (TokenId t : terms) {
        double df = 0.0;
        for (const auto& d : docs) df += std::count(d.tokens.begin(), d.tokens.end(), t) > 0 ? 1.0 : 0.0;
        const double tf = static_cast<double>(std::count(docs[doc].tokens.begin(), docs[doc].tokens.end(), t));
        if (tf == 0.0) continue;
        const double n = static_cast<double>(docs.size());
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double len = static_cast<double>(docs[doc].tokens.size());
        s += idf * tf / (tf + k1 * (1.0 - b + b * len / avg));
    }
    return s;
}

}  // namespace

TEST_CASE("single document postings are direct counts")
{
    const Corpus c = hand_corpus({{0, 0, 1}}, {0}, {"d0"});
    const InvertedIndex idx(c);
    CHECK(idx.postings(0).size() == 1);
    CHECK(idx.postings(0)[0] == Posting{0, 2});
    CHECK(idx.postings(1)[0] == Posting{0, 1});
    CHECK(idx.avg_doc_len() == 3.0);
    CHECK(build_inverted_index(c) == idx);
}

TEST_CASE("hand-evaluated score on a one-document corpus")
{
    const Corpus c = hand_corpus({{5}}, {5}, {"d0"});
    const InvertedIndex idx(c);
    CHECK(idx.idf(5) == doctest::Approx(std::log(1.0 + 0.5 / 1.5)).epsilon(1e-12));
    CHECK(idx.score(std::vector<TokenId>{5}, 0) == doctest::Approx(0.15141).epsilon(1e-4));
    CHECK(idx.score(std::vector<TokenId>{6}, 0) == 0.0);
}

TEST_CASE("postings agree with a brute-force count and scores with a from-scratch recount")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    const InvertedIndex idx(corpus);
    std::map<TokenId, std::uint64_t> counts;
    for (const auto& d : corpus.documents())
        for (TokenId t : d.tokens) ++counts[t];
    for (TokenId t = 0; t < corpus.layout().vocab_size; ++t) {
        std::uint64_t sum = 0;
        std::uint32_t prev = 0;
        bool first = true;
        for (const auto& p : idx.postings(t)) {
            sum += p.tf;
            CHECK((first || p.doc > prev));
            prev = p.doc;
            first = false;
        }
        CHECK(sum == counts[t]);
    }

    std::mt19937_64 gen(5);
    std::uniform_int_distribution<std::size_t> pick_doc(0, corpus.documents().size() - 1);
    std::uniform_int_distribution<std::size_t> pick_query(0, corpus.queries().size() - 1);
    for (int i = 0; i < 100; ++i) {
        const auto& q = corpus.queries()[pick_query(gen)];
        const std::size_t d = i % 2 == 0 ? pick_doc(gen) : corpus.gold_position(q.id);
        const double want = reference_bm25(corpus, q.tokens, d, 0.9, 0.4);
        CHECK(std::fabs(idx.score(q.tokens, d) - want) <= 1e-9);
        CHECK(std::fabs(bm25_score(idx, corpus, q.tokens, corpus.documents()[d].id) - want) <= 1e-9);
    }
    const auto all = idx.score_all(corpus.queries()[0].tokens);
    for (std::size_t d = 0; d < all.size(); ++d)
        CHECK(std::fabs(all[d] - idx.score(corpus.queries()[0].tokens, d)) <= 1e-12);
}

TEST_CASE("scores are additive over term-disjoint queries")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    const InvertedIndex idx(corpus);
    const auto& doc = corpus.documents()[3].tokens;
    const std::vector<TokenId> a{doc[0]}, b{doc[1]};
    REQUIRE(doc[0] != doc[1]);
    const std::vector<TokenId> ab{doc[0], doc[1]};
    CHECK(idx.score(ab, 3) == doctest::Approx(idx.score(a, 3) + idx.score(b, 3)).epsilon(1e-12));
}

TEST_CASE("hard negatives match an exhaustive scan and exclude relevant documents")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    const InvertedIndex idx(corpus);
    for (const auto& q : corpus.queries()) {
        const auto mined = mine_hard_negatives(idx, corpus, q.id, 5, 1);
        const auto rel = corpus.relevant_positions(q.id);
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t d = 0; d < corpus.documents().size(); ++d) {
            if (std::find(rel.begin(), rel.end(), d) != rel.end()) continue;
            const double s = reference_bm25(corpus, q.tokens, d, 0.9, 0.4);
            if (s > 0.0) all.push_back({-s, d});
        }
        std::sort(all.begin(), all.end());
        const std::size_t scored = std::min<std::size_t>(5, all.size());
        REQUIRE(mined.docs.size() == 5);
        CHECK(mined.padded == 5 - scored);
        for (std::size_t i = 0; i < scored; ++i) CHECK(mined.docs[i] == all[i].second);
        for (std::size_t d : mined.docs) CHECK(std::find(rel.begin(), rel.end(), d) == rel.end());
        CHECK(std::find(mined.docs.begin(), mined.docs.end(), corpus.gold_position(q.id)) == mined.docs.end());
    }
}

TEST_CASE("a non-relevant document sharing every query term is the top negative")
{
    const Corpus c = hand_corpus({{1, 2, 3}, {1, 2, 9}, {7, 8, 9}}, {1, 2}, {"d0"});
    const InvertedIndex idx(c);
    const auto mined = mine_hard_negatives(idx, c, "q", 1);
    CHECK(mined.docs == std::vector<std::size_t>{1});
    CHECK(mined.padded == 0);
    CHECK_THROWS_AS(mine_hard_negatives(idx, c, "q", 3), InputError);
    CHECK_THROWS_AS(mine_hard_negatives(idx, c, "q", 0), InputError);
}

TEST_CASE("short candidate lists are padded deterministically")
{
    const Corpus c = hand_corpus({{1}, {4}, {5}, {6}, {7}}, {1}, {"d0"});
    const InvertedIndex idx(c);
    const auto a = mine_hard_negatives(idx, c, "q", 3, 42);
    const auto b = mine_hard_negatives(idx, c, "q", 3, 42);
    CHECK(a.docs == b.docs);
    CHECK(a.padded == 3);
    CHECK(std::set<std::size_t>(a.docs.begin(), a.docs.end()).size() == 3);
}

TEST_CASE("index parameters are validated")
{
    const Corpus c = hand_corpus({{1}}, {1}, {"d0"});
    CHECK_THROWS_AS(InvertedIndex(c, -1.0, 0.4), ConfigError);
    CHECK_THROWS_AS(InvertedIndex(c, 0.9, 1.5), ConfigError);
    const InvertedIndex idx(c);
    CHECK_THROWS_AS(idx.score(std::vector<TokenId>{1}, 5), LookupError);
}
