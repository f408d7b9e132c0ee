#include "softqe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/rng.hpp"

namespace softqe {

std::string to_hex(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string to_string(Split split) { return split == Split::train ? "train" : "eval"; }

Split parse_split(const std::string& s)
{
    if (s == "train") return Split::train;
    if (s == "eval") return Split::eval;
    throw InputError("unknown split '" + s + "' (expected train or eval)");
}

std::string to_string(NoiseSource source)
{
    return source == NoiseSource::background ? "background" : "wrong_topic";
}

NoiseSource parse_noise_source(const std::string& s)
{
    if (s == "background") return NoiseSource::background;
    if (s == "wrong_topic") return NoiseSource::wrong_topic;
    throw ConfigError("unknown noise source '" + s + "' (expected background or wrong_topic)");
}

std::size_t CorpusConfig::topic_pool_size() const
{
    if (num_topics == 0 || vocab_size <= background_vocab) return 0;
    return (vocab_size - background_vocab) / num_topics;
}

void CorpusConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError("corpus config: " + msg); };
    if (num_topics == 0) fail("num_topics must be >= 1");
    if (vocab_size < num_topics * 10) fail("vocab_size must be >= num_topics * 10");
    if (vocab_size > (1ULL << 31U)) fail("vocab_size must be < 2^31");
    if (background_vocab >= vocab_size) fail("background_vocab must be < vocab_size");
    if (salient_terms_per_doc == 0) fail("salient_terms_per_doc must be >= 1");
    if (topic_pool_size() < salient_terms_per_doc)
        fail("topic pool size (vocab_size - background_vocab) / num_topics must be >= "
             "salient_terms_per_doc");
    if (doc_len < salient_terms_per_doc) fail("doc_len must be >= salient_terms_per_doc");
    if (doc_len > salient_terms_per_doc && background_vocab == 0)
        fail("background_vocab must be >= 1 when doc_len > salient_terms_per_doc");
    if (num_docs == 0) fail("num_docs must be >= 1");
    if (num_train_queries + num_eval_queries == 0) fail("at least one query is required");
    if (num_docs < num_train_queries + num_eval_queries)
        fail("num_docs must be >= num_train_queries + num_eval_queries");
    if (!(query_keep_fraction > 0.0 && query_keep_fraction <= 1.0))
        fail("query_keep_fraction must be in (0, 1]");
    if (!(expander_recovery_rate >= 0.0 && expander_recovery_rate <= 1.0))
        fail("expander_recovery_rate must be in [0, 1]");
    if (!(expander_noise_rate >= 0.0 && expander_noise_rate <= 1.0))
        fail("expander_noise_rate must be in [0, 1]");
    if (!(sibling_rate >= 0.0 && sibling_rate <= 1.0)) fail("sibling_rate must be in [0, 1]");
    if (!(sibling_shared_fraction > 0.0 && sibling_shared_fraction <= 1.0))
        fail("sibling_shared_fraction must be in (0, 1]");
}

ExpandedQuery concatenate(const Query& query, const Expansion& expansion)
{
    ExpandedQuery out;
    out.query_id = query.id;
    out.tokens = query.tokens;
    out.tokens.insert(out.tokens.end(), expansion.pseudo_doc.begin(), expansion.pseudo_doc.end());
    out.boundary = query.tokens.size();
    out.provenance = expansion.provenance;
    return out;
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(VocabLayout layout, std::vector<Document> documents, std::vector<Query> queries,
               std::map<std::string, std::vector<Judgment>> qrels,
               std::map<std::string, Expansion> expansions)
    : m_layout(layout),
      m_documents(std::move(documents)),
      m_queries(std::move(queries)),
      m_qrels(std::move(qrels)),
      m_expansions(std::move(expansions))
{
    index_and_validate();
}

void Corpus::index_and_validate()
{
    std::sort(m_documents.begin(), m_documents.end(),
              [](const Document& a, const Document& b) { return a.id < b.id; });
    m_doc_pos.clear();
    m_query_pos.clear();
    auto check_tokens = [&](const std::vector<TokenId>& tokens, const std::string& owner) {
        for (TokenId t : tokens) {
            if (t >= m_layout.vocab_size)
                throw IntegrityError(owner + ": token id " + std::to_string(t) +
                                     " >= vocab_size " + std::to_string(m_layout.vocab_size));
        }
    };
    for (std::size_t i = 0; i < m_documents.size(); ++i) {
        const auto& d = m_documents[i];
        if (!m_doc_pos.emplace(d.id, i).second)
            throw IntegrityError("duplicate document id '" + d.id + "'");
        check_tokens(d.tokens, "document '" + d.id + "'");
    }
    for (std::size_t i = 0; i < m_queries.size(); ++i) {
        const auto& q = m_queries[i];
        if (!m_query_pos.emplace(q.id, i).second)
            throw IntegrityError("duplicate query id '" + q.id + "'");
        check_tokens(q.tokens, "query '" + q.id + "'");
    }
    if (m_qrels.empty()) throw IntegrityError("no relevance judgments");

    m_rel_by_query.assign(m_queries.size(), {});
    for (auto& [qid, judgments] : m_qrels) {
        auto qit = m_query_pos.find(qid);
        if (qit == m_query_pos.end())
            throw IntegrityError("qrels reference unknown query '" + qid + "'");
        std::sort(judgments.begin(), judgments.end(),
                  [](const Judgment& a, const Judgment& b) { return a.doc_id < b.doc_id; });
        for (std::size_t i = 0; i < judgments.size(); ++i) {
            const auto& j = judgments[i];
            auto dit = m_doc_pos.find(j.doc_id);
            if (dit == m_doc_pos.end())
                throw IntegrityError("qrels for '" + qid + "' reference unknown document '" +
                                     j.doc_id + "'");
            if (j.relevance < 1)
                throw IntegrityError("qrels for '" + qid + "' carry relevance < 1");
            if (i > 0 && judgments[i - 1].doc_id == j.doc_id)
                throw IntegrityError("qrels for '" + qid + "' judge '" + j.doc_id + "' twice");
            m_rel_by_query[qit->second].emplace_back(dit->second, j.relevance);
        }
    }
    for (std::size_t i = 0; i < m_queries.size(); ++i) {
        if (m_rel_by_query[i].empty())
            throw IntegrityError("query '" + m_queries[i].id + "' has no relevant document");
    }
    for (const auto& [qid, e] : m_expansions) {
        if (!m_query_pos.contains(qid))
            throw IntegrityError("expansion for unknown query '" + qid + "'");
        check_tokens(e.pseudo_doc, "expansion '" + qid + "'");
    }
}

std::size_t Corpus::doc_position(const std::string& doc_id) const
{
    auto it = m_doc_pos.find(doc_id);
    if (it == m_doc_pos.end()) throw LookupError("unknown document '" + doc_id + "'");
    return it->second;
}

bool Corpus::has_query(const std::string& query_id) const
{
    return m_query_pos.contains(query_id);
}

const Query& Corpus::query(const std::string& query_id) const
{
    auto it = m_query_pos.find(query_id);
    if (it == m_query_pos.end()) throw LookupError("unknown query '" + query_id + "'");
    return m_queries[it->second];
}

std::vector<const Query*> Corpus::queries_in(Split split) const
{
    std::vector<const Query*> out;
    for (const auto& q : m_queries) {
        if (q.split == split) out.push_back(&q);
    }
    return out;
}

int Corpus::relevance(const std::string& query_id, std::size_t doc_pos) const
{
    auto it = m_query_pos.find(query_id);
    if (it == m_query_pos.end()) throw LookupError("unknown query '" + query_id + "'");
    for (const auto& [pos, rel] : m_rel_by_query[it->second]) {
        if (pos == doc_pos) return rel;
    }
    return 0;
}

std::vector<std::size_t> Corpus::relevant_positions(const std::string& query_id) const
{
    auto it = m_query_pos.find(query_id);
    if (it == m_query_pos.end()) throw LookupError("unknown query '" + query_id + "'");
    std::vector<std::size_t> out;
    for (const auto& [pos, rel] : m_rel_by_query[it->second]) out.push_back(pos);
    return out;
}

std::size_t Corpus::gold_position(const std::string& query_id) const
{
    auto it = m_query_pos.find(query_id);
    if (it == m_query_pos.end()) throw LookupError("unknown query '" + query_id + "'");
    const auto& rels = m_rel_by_query[it->second];
    // Sorted by doc position, so the first maximum has the lowest id.
    auto best = std::max_element(rels.begin(), rels.end(), [](const auto& a, const auto& b) {
        return a.second < b.second;
    });
    return best->first;
}

std::vector<TokenId> Corpus::salient_terms(std::size_t doc_pos) const
{
    std::vector<TokenId> out;
    std::unordered_set<TokenId> seen;
    for (TokenId t : m_documents.at(doc_pos).tokens) {
        if (m_layout.is_topical(t) && seen.insert(t).second) out.push_back(t);
    }
    return out;
}

const Expansion* Corpus::expansion(const std::string& query_id) const
{
    auto it = m_expansions.find(query_id);
    return it == m_expansions.end() ? nullptr : &it->second;
}

ExpandedQuery Corpus::expanded(const std::string& query_id) const
{
    const Expansion* e = expansion(query_id);
    if (e == nullptr) throw IntegrityError("no expansion for query '" + query_id + "'");
    return concatenate(query(query_id), *e);
}

Corpus Corpus::without_expansions() const { return with_expansions({}); }

Corpus Corpus::with_expansions(std::map<std::string, Expansion> expansions) const
{
    return Corpus(m_layout, m_documents, m_queries, m_qrels, std::move(expansions));
}

std::uint64_t Corpus::content_hash() const
{
    Fnv1a h;
    h.str("corpus/v1");
    h.u64(m_layout.vocab_size).u64(m_layout.num_topics).u64(m_layout.topic_pool_size);
    h.u64(m_documents.size());
    for (const auto& d : m_documents) {
        h.str(d.id).u64(d.tokens.size());
        for (TokenId t : d.tokens) h.u64(t);
    }
    h.u64(m_queries.size());
    for (const auto& q : m_queries) {
        h.str(q.id).u64(static_cast<std::uint64_t>(q.split)).u64(q.tokens.size());
        for (TokenId t : q.tokens) h.u64(t);
    }
    for (const auto& [qid, js] : m_qrels) {
        h.str(qid).u64(js.size());
        for (const auto& j : js) h.str(j.doc_id).u64(static_cast<std::uint64_t>(j.relevance));
    }
    return h.digest();
}

std::uint64_t Corpus::expansion_hash() const
{
    Fnv1a h;
    h.str("expansions/v1");
    for (const auto& [qid, e] : m_expansions) {
        h.str(qid).u64(e.pseudo_doc.size());
        for (TokenId t : e.pseudo_doc) h.u64(t);
    }
    return h.digest();
}

bool Corpus::operator==(const Corpus& other) const
{
    return m_layout == other.m_layout && m_documents == other.m_documents &&
           m_queries == other.m_queries && m_qrels == other.m_qrels &&
           m_expansions == other.m_expansions;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::string padded_id(char prefix, std::size_t i, std::size_t count)
{
    std::size_t width = 6;
    for (std::size_t c = count; c >= 1000000; c /= 10) ++width;
    std::string digits = std::to_string(i);
    return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

// Draws k distinct ids from [base, base + pool) by partial Fisher-Yates.
std::vector<TokenId> sample_distinct(Rng& rng, TokenId base, std::size_t pool, std::size_t k,
                                     const std::unordered_set<TokenId>& exclude = {})
{
    std::vector<TokenId> ids;
    ids.reserve(pool);
    for (std::size_t i = 0; i < pool; ++i) {
        auto t = static_cast<TokenId>(base + i);
        if (!exclude.contains(t)) ids.push_back(t);
    }
    k = std::min(k, ids.size());
    for (std::size_t i = 0; i < k; ++i) {
        auto j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
    return ids;
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& config)
{
    config.validate();
    const std::size_t pool = config.topic_pool_size();
    VocabLayout layout{static_cast<std::uint32_t>(config.vocab_size),
                       static_cast<std::uint32_t>(config.num_topics),
                       static_cast<std::uint32_t>(pool)};
    const TokenId background_base = layout.topical_vocab();
    const std::size_t background_size = config.vocab_size - background_base;
    const std::size_t S = config.salient_terms_per_doc;

    Rng root(config.seed);
    Rng drng = root.split(stream::kDocs);

    std::vector<std::vector<TokenId>> salient(config.num_docs);
    std::vector<std::size_t> topic(config.num_docs);
    std::vector<std::vector<std::size_t>> by_topic(config.num_topics);
    std::vector<Document> documents(config.num_docs);

    for (std::size_t i = 0; i < config.num_docs; ++i) {
        const auto t = static_cast<std::size_t>(drng.below(config.num_topics));
        const auto pool_base = static_cast<TokenId>(t * pool);
        std::vector<TokenId> terms;
        const bool sibling = !by_topic[t].empty() && drng.bernoulli(config.sibling_rate);
        if (sibling) {
            const auto& parents = by_topic[t];
            std::vector<TokenId> inherited = salient[parents[drng.below(parents.size())]];
            drng.shuffle(std::span<TokenId>(inherited));
            auto shared = static_cast<std::size_t>(
                std::lround(static_cast<double>(S) * config.sibling_shared_fraction));
            shared = std::clamp<std::size_t>(shared, 1, S);
            terms.assign(inherited.begin(), inherited.begin() + static_cast<std::ptrdiff_t>(shared));
            std::unordered_set<TokenId> exclude(inherited.begin(), inherited.end());
            auto fresh = sample_distinct(drng, pool_base, pool, S - shared, exclude);
            terms.insert(terms.end(), fresh.begin(), fresh.end());
        } else {
            terms = sample_distinct(drng, pool_base, pool, S);
        }
        std::vector<TokenId> tokens = terms;
        for (std::size_t k = S; k < config.doc_len; ++k)
            tokens.push_back(static_cast<TokenId>(background_base + drng.below(background_size)));
        drng.shuffle(std::span<TokenId>(tokens));

        documents[i] = Document{padded_id('D', i, config.num_docs), std::move(tokens)};
        salient[i] = std::move(terms);
        topic[i] = t;
        by_topic[t].push_back(i);
    }

    Rng qrng = root.split(stream::kQueries);
    std::vector<std::size_t> order(config.num_docs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    qrng.shuffle(std::span<std::size_t>(order));

    const std::size_t num_queries = config.num_train_queries + config.num_eval_queries;
    std::vector<Query> queries;
    std::map<std::string, std::vector<Judgment>> qrels;
    for (std::size_t j = 0; j < num_queries; ++j) {
        const std::size_t gold = order[j];
        const auto& terms = salient[gold];
        Query q;
        q.id = padded_id('Q', j, num_queries);
        q.split = j < config.num_train_queries ? Split::train : Split::eval;
        for (TokenId t : terms) {
            if (qrng.bernoulli(config.query_keep_fraction)) q.tokens.push_back(t);
        }
        if (q.tokens.empty()) q.tokens.push_back(terms[qrng.below(terms.size())]);

        std::unordered_set<TokenId> gold_set(terms.begin(), terms.end());
        auto& judgments = qrels[q.id];
        for (std::size_t d : by_topic[topic[gold]]) {
            if (d == gold) {
                judgments.push_back({documents[d].id, 2});
                continue;
            }
            std::size_t overlap = 0;
            for (TokenId t : salient[d]) overlap += gold_set.contains(t) ? 1 : 0;
            if (2 * overlap >= terms.size()) judgments.push_back({documents[d].id, 1});
        }
        queries.push_back(std::move(q));
    }

    Corpus base(layout, std::move(documents), std::move(queries), std::move(qrels), {});
    const std::uint64_t expansion_seed = root.split(stream::kExpansions).state();
    std::map<std::string, Expansion> expansions;
    for (const auto& q : base.queries()) {
        ExpandedQuery eq = oracle_expand(q.id, base, config.expander_recovery_rate,
                                         config.expander_noise_rate, expansion_seed,
                                         config.expander_noise_source);
        auto pd = eq.pseudo_doc();
        expansions[q.id] = Expansion{{pd.begin(), pd.end()}, eq.provenance};
    }
    return base.with_expansions(std::move(expansions));
}

ExpandedQuery oracle_expand(const std::string& query_id, const Corpus& corpus,
                            double recovery_rate, double noise_rate, std::uint64_t seed,
                            NoiseSource source)
{
    if (!(recovery_rate >= 0.0 && recovery_rate <= 1.0) || !(noise_rate >= 0.0 && noise_rate <= 1.0))
        throw ConfigError("oracle_expand: rates must lie in [0, 1]");
    const Query& q = corpus.query(query_id);
    const std::size_t gold = corpus.gold_position(query_id);
    const std::vector<TokenId> terms = corpus.salient_terms(gold);
    const std::unordered_set<TokenId> in_query(q.tokens.begin(), q.tokens.end());
    const VocabLayout& layout = corpus.layout();

    Rng rng = Rng(seed).split(fnv1a(query_id));
    Expansion e;
    e.provenance = ExpansionProvenance{"oracle", seed, recovery_rate, noise_rate, 0, 0, 0};
    for (TokenId t : terms) {
        if (in_query.contains(t)) continue;
        ++e.provenance.missing;
        if (rng.bernoulli(recovery_rate)) e.pseudo_doc.push_back(t);
    }
    e.provenance.recovered = static_cast<std::uint32_t>(e.pseudo_doc.size());

    const int gold_topic = terms.empty() ? -1 : layout.topic_of(terms.front());
    TokenId noise_base = 0;
    std::uint64_t noise_span = layout.topical_vocab();
    if (source == NoiseSource::background && layout.vocab_size > layout.topical_vocab()) {
        noise_base = layout.topical_vocab();
        noise_span = layout.vocab_size - layout.topical_vocab();
    } else if (source == NoiseSource::wrong_topic && layout.num_topics >= 2 && gold_topic >= 0) {
        auto wrong = static_cast<std::uint32_t>(rng.below(layout.num_topics - 1));
        if (wrong >= static_cast<std::uint32_t>(gold_topic)) ++wrong;
        noise_base = wrong * layout.topic_pool_size;
        noise_span = layout.topic_pool_size;
    }
    const std::unordered_set<TokenId> gold_set(terms.begin(), terms.end());
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (!rng.bernoulli(noise_rate) || noise_span == 0) continue;
        TokenId t = noise_base + static_cast<TokenId>(rng.below(noise_span));
        // Bounded retry keeps the loop finite on pathological layouts.
        for (int tries = 0; gold_set.contains(t) && tries < 16; ++tries)
            t = noise_base + static_cast<TokenId>(rng.below(noise_span));
        if (gold_set.contains(t)) continue;
        e.pseudo_doc.push_back(t);
        ++e.provenance.noise;
    }
    rng.shuffle(std::span<TokenId>(e.pseudo_doc));
    return concatenate(q, e);
}

}  // namespace softqe
