#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "softqe/corpus.hpp"
#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "util.hpp"

using namespace softqe;

TEST_CASE("same config and seed give an identical corpus")
{
    const auto c = testutil::tiny_corpus_config();
    CHECK(generate_corpus(c) == generate_corpus(c));
    auto other = c;
    other.seed = c.seed + 1;
    CHECK_FALSE(generate_corpus(c) == generate_corpus(other));
    CHECK(generate_corpus(c).content_hash() == generate_corpus(c).content_hash());
}

TEST_CASE("every query has a gold document and judged documents exist")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    const auto& cfg = testutil::tiny_corpus_config();
    CHECK(corpus.queries_in(Split::train).size() == cfg.num_train_queries);
    CHECK(corpus.queries_in(Split::eval).size() == cfg.num_eval_queries);
    std::set<std::size_t> golds;
    for (const auto& q : corpus.queries()) {
        REQUIRE(corpus.qrels().contains(q.id));
        CHECK_FALSE(corpus.relevant_positions(q.id).empty());
        const std::size_t gold = corpus.gold_position(q.id);
        CHECK(corpus.relevance(q.id, gold) == 2);
        golds.insert(gold);
        CHECK_FALSE(q.tokens.empty());
    }
    CHECK(golds.size() == corpus.queries().size());
}

TEST_CASE("keep fraction 1 keeps every salient term of the gold document")
{
    auto cfg = testutil::tiny_corpus_config();
    cfg.query_keep_fraction = 1.0;
    const Corpus corpus = generate_corpus(cfg);
    for (const auto& q : corpus.queries()) {
        auto salient = corpus.salient_terms(corpus.gold_position(q.id));
        std::multiset<TokenId> got(q.tokens.begin(), q.tokens.end());
        std::multiset<TokenId> want(salient.begin(), salient.end());
        CHECK(got == want);
    }
}

TEST_CASE("mean query length follows the keep-fraction sampling law")
{
    CorpusConfig cfg;
    cfg.vocab_size = 800;
    cfg.num_docs = 2000;
    cfg.num_train_queries = 500;
    for (double keep : {0.35, 0.5}) {
        cfg.query_keep_fraction = keep;
        const Corpus corpus = generate_corpus(cfg);
        double total = 0.0;
        for (const auto& q : corpus.queries()) total += static_cast<double>(q.tokens.size());
        const double mean = total / static_cast<double>(corpus.queries().size());

        // Brute-force simulation of the law: each of S terms kept with
        // probability keep, one term forced when none survive.
        std::mt19937_64 gen(99);
        std::bernoulli_distribution kept(keep);
        double sim = 0.0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            std::size_t n = 0;
            for (std::size_t t = 0; t < cfg.salient_terms_per_doc; ++t) n += kept(gen) ? 1 : 0;
            sim += static_cast<double>(std::max<std::size_t>(n, 1));
        }
        sim /= draws;
        CHECK(std::fabs(mean - sim) <= 0.1 * sim);
        CHECK(std::fabs(mean - keep * static_cast<double>(cfg.salient_terms_per_doc)) <=
              0.1 * keep * static_cast<double>(cfg.salient_terms_per_doc));
    }
}

TEST_CASE("perfect oracle recovers exactly the missing salient terms")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    for (const auto& q : corpus.queries()) {
        const ExpandedQuery e = oracle_expand(q.id, corpus, 1.0, 0.0, 7);
        std::set<TokenId> got(e.pseudo_doc().begin(), e.pseudo_doc().end());
        std::set<TokenId> want;
        std::set<TokenId> in_query(q.tokens.begin(), q.tokens.end());
        for (TokenId t : corpus.salient_terms(corpus.gold_position(q.id)))
            if (!in_query.contains(t)) want.insert(t);
        CHECK(got == want);
        CHECK(e.boundary == q.tokens.size());
        CHECK(std::equal(q.tokens.begin(), q.tokens.end(), e.query_part().begin()));
    }
}

TEST_CASE("null oracle leaves the query unchanged")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    for (const auto& q : corpus.queries()) {
        const ExpandedQuery e = oracle_expand(q.id, corpus, 0.0, 0.0, 7);
        CHECK(e.pseudo_doc().empty());
        CHECK(e.tokens == q.tokens);
    }
}

TEST_CASE("noise terms lie outside the gold document's salient terms")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    for (const auto& q : corpus.queries()) {
        const ExpandedQuery e = oracle_expand(q.id, corpus, 0.0, 1.0, 7);
        auto salient = corpus.salient_terms(corpus.gold_position(q.id));
        std::set<TokenId> gold(salient.begin(), salient.end());
        CHECK(e.provenance.noise == e.pseudo_doc().size());
        for (TokenId t : e.pseudo_doc()) CHECK_FALSE(gold.contains(t));
    }
}

TEST_CASE("noise sources draw from the background or from one wrong topic")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    const VocabLayout& layout = corpus.layout();
    for (const auto& q : corpus.queries()) {
        const int gold_topic = layout.topic_of(corpus.salient_terms(corpus.gold_position(q.id)).front());
        const auto bg = oracle_expand(q.id, corpus, 0.0, 1.0, 7, NoiseSource::background);
        for (TokenId t : bg.pseudo_doc()) CHECK_FALSE(layout.is_topical(t));
        const auto wt = oracle_expand(q.id, corpus, 0.0, 1.0, 7, NoiseSource::wrong_topic);
        std::set<int> topics;
        for (TokenId t : wt.pseudo_doc()) topics.insert(layout.topic_of(t));
        CHECK(topics.size() == 1);
        CHECK_FALSE(topics.contains(gold_topic));
        CHECK_FALSE(topics.contains(-1));
    }
    CHECK(parse_noise_source(to_string(NoiseSource::wrong_topic)) == NoiseSource::wrong_topic);
    CHECK_THROWS_AS(parse_noise_source("topic"), ConfigError);
}

TEST_CASE("recovered-term count matches the binomial expectation")
{
    CorpusConfig cfg;
    cfg.vocab_size = 800;
    cfg.num_docs = 2000;
    cfg.num_train_queries = 900;
    cfg.num_eval_queries = 100;
    const Corpus corpus = generate_corpus(cfg);
    double missing = 0.0, recovered = 0.0;
    for (const auto& q : corpus.queries()) {
        const ExpandedQuery e = oracle_expand(q.id, corpus, 0.5, 0.0, 11);
        missing += e.provenance.missing;
        recovered += e.provenance.recovered;
    }
    const double sigma = std::sqrt(missing * 0.25);
    CHECK(std::fabs(recovered - 0.5 * missing) <= 3.0 * sigma);
}

TEST_CASE("oracle_expand rejects unknown queries and bad rates")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    CHECK_THROWS_AS(oracle_expand("nope", corpus, 0.5, 0.5, 1), LookupError);
    CHECK_THROWS_AS(oracle_expand(corpus.queries()[0].id, corpus, 1.5, 0.5, 1), ConfigError);
}

TEST_CASE("config validation names the violated bound")
{
    auto cfg = testutil::tiny_corpus_config();
    cfg.num_train_queries = cfg.num_docs;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
    cfg = testutil::tiny_corpus_config();
    cfg.vocab_size = cfg.num_topics * 10 - 1;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
    cfg = testutil::tiny_corpus_config();
    cfg.query_keep_fraction = 0.0;
    CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
}

TEST_CASE("written corpus reloads into an equal corpus")
{
    const Corpus corpus = generate_corpus(testutil::tiny_corpus_config());
    const auto dir = testutil::temp_dir("corpus_roundtrip");
    write_corpus(corpus, dir);
    const Corpus back = read_corpus_directory(dir);
    CHECK(back == corpus);
    CHECK(back.content_hash() == corpus.content_hash());
    CHECK(back.expansion_hash() == corpus.expansion_hash());
}

TEST_CASE("external corpus loader reads text files and reports line numbers")
{
    const auto dir = testutil::temp_dir("external");
    {
        std::ofstream(dir / "docs.tsv") << "d1\tred apple pie\nd2\tblue sky\n";
        std::ofstream(dir / "queries.tsv") << "q1\tapple\ttrain\nq2\tsky\teval\n";
        std::ofstream(dir / "qrels.txt") << "q1 0 d1 1\nq2 0 d2 2\n";
    }
    auto paths = CorpusPaths::in_directory(dir);
    paths.expansions.reset();
    const Corpus c = load_external_corpus(paths);
    CHECK(c.documents().size() == 2);
    CHECK(c.expansions().empty());
    CHECK(c.query("q1").tokens.front() == token_for_word("apple", 1U << 15U));
    CHECK(c.relevance("q2", c.doc_position("d2")) == 2);

    std::ofstream(dir / "qrels.txt") << "q1 0 d1 1\nq2 0 d2\n";
    try {
        (void)load_external_corpus(paths);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    std::ofstream(dir / "qrels.txt") << "q1 0 d9 1\n";
    CHECK_THROWS_AS((void)load_external_corpus(paths), IntegrityError);
}

TEST_CASE("numeric words are literal token ids")
{
    CHECK(token_for_word("17", 100) == 17U);
    CHECK(token_for_word("word", 100) == fnv1a("word") % 100);
}
