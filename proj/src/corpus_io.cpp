#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "softqe/corpus.hpp"
#include "softqe/error.hpp"
#include "softqe/hash.hpp"

namespace softqe {

namespace fs = std::filesystem;
using nlohmann::json;

CorpusPaths CorpusPaths::in_directory(const fs::path& dir)
{
    CorpusPaths p{dir / "docs.tsv", dir / "queries.tsv", dir / "qrels.txt", std::nullopt};
    if (fs::exists(dir / "expansions.jsonl")) p.expansions = dir / "expansions.jsonl";
    return p;
}

TokenId token_for_word(const std::string& word, std::uint32_t hash_buckets)
{
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
    if (ec == std::errc() && ptr == word.data() + word.size() && v < (1ULL << 32U))
        return static_cast<TokenId>(v);
    return static_cast<TokenId>(fnv1a(word) % hash_buckets);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

std::string strip_cr(std::string line)
{
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::ifstream open_input(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    return in;
}

class TokenReader {
  public:
    explicit TokenReader(const LoadOptions& options) : m_options(options) {}

    std::vector<TokenId> read(const std::string& text, const std::string& file, std::size_t line)
    {
        std::vector<TokenId> out;
        std::istringstream words(text);
        std::string w;
        while (words >> w) {
            TokenId t = token_for_word(w, m_options.hash_buckets);
            bool numeric = !w.empty() && std::all_of(w.begin(), w.end(), [](char c) {
                return c >= '0' && c <= '9';
            });
            if (!numeric) m_saw_words = true;
            if (m_options.layout && t >= m_options.layout->vocab_size)
                throw ParseError(file, line, "token '" + w + "' outside vocabulary");
            m_max = std::max<std::uint64_t>(m_max, t);
            out.push_back(t);
        }
        return out;
    }

    VocabLayout layout() const
    {
        if (m_options.layout) return *m_options.layout;
        std::uint64_t v = m_max + 1;
        if (m_saw_words) v = std::max<std::uint64_t>(v, m_options.hash_buckets);
        return VocabLayout{static_cast<std::uint32_t>(v), 0, 0};
    }

  private:
    const LoadOptions& m_options;
    std::uint64_t m_max = 0;
    bool m_saw_words = false;
};

std::string join_tokens(const std::vector<TokenId>& tokens)
{
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(tokens[i]);
    }
    return out;
}

}  // namespace

Corpus load_external_corpus(const CorpusPaths& paths, const LoadOptions& options)
{
    TokenReader reader(options);
    std::string line;

    std::vector<Document> documents;
    {
        auto in = open_input(paths.documents);
        const std::string file = paths.documents.string();
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            line = strip_cr(line);
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 2 || cols[0].empty())
                throw ParseError(file, n, "expected doc_id<TAB>tokens");
            auto tokens = reader.read(cols[1], file, n);
            if (tokens.empty()) throw ParseError(file, n, "document has no tokens");
            documents.push_back({cols[0], std::move(tokens)});
        }
    }

    std::vector<Query> queries;
    {
        auto in = open_input(paths.queries);
        const std::string file = paths.queries.string();
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            line = strip_cr(line);
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 3 || cols[0].empty())
                throw ParseError(file, n, "expected query_id<TAB>tokens<TAB>split");
            Split split;
            try {
                split = parse_split(cols[2]);
            } catch (const InputError& e) {
                throw ParseError(file, n, e.what());
            }
            auto tokens = reader.read(cols[1], file, n);
            if (tokens.empty()) throw ParseError(file, n, "query has no tokens");
            queries.push_back({cols[0], std::move(tokens), split});
        }
    }

    std::map<std::string, std::vector<Judgment>> qrels;
    {
        auto in = open_input(paths.qrels);
        const std::string file = paths.qrels.string();
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            line = strip_cr(line);
            std::istringstream cols(line);
            std::string qid, iter, did, rel_text, extra;
            if (!(cols >> qid)) continue;
            if (!(cols >> iter >> did >> rel_text) || (cols >> extra))
                throw ParseError(file, n, "expected 'query_id 0 doc_id relevance'");
            int rel = 0;
            auto [ptr, ec] = std::from_chars(rel_text.data(), rel_text.data() + rel_text.size(), rel);
            if (ec != std::errc() || ptr != rel_text.data() + rel_text.size())
                throw ParseError(file, n, "relevance is not an integer");
            // Zero-graded judgments carry no information for the metrics used here.
            if (rel >= 1) qrels[qid].push_back({did, rel});
        }
    }

    std::map<std::string, Expansion> expansions;
    if (paths.expansions) {
        auto in = open_input(*paths.expansions);
        const std::string file = paths.expansions->string();
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            line = strip_cr(line);
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            json obj;
            try {
                obj = json::parse(line);
            } catch (const json::exception& e) {
                throw ParseError(file, n, std::string("invalid JSON: ") + e.what());
            }
            if (!obj.is_object() || !obj.contains("query_id") || !obj.contains("pseudo_doc") ||
                !obj["query_id"].is_string() || !obj["pseudo_doc"].is_string())
                throw ParseError(file, n, "expected string fields query_id and pseudo_doc");
            Expansion e;
            e.pseudo_doc = reader.read(obj["pseudo_doc"].get<std::string>(), file, n);
            e.provenance.source = "external";
            if (auto p = obj.find("provenance"); p != obj.end() && p->is_object()) {
                try {
                    e.provenance.source = p->value("source", "external");
                    e.provenance.seed = p->value("seed", std::uint64_t{0});
                    e.provenance.recovery_rate = p->value("recovery_rate", 0.0);
                    e.provenance.noise_rate = p->value("noise_rate", 0.0);
                    e.provenance.missing = p->value("missing", 0U);
                    e.provenance.recovered = p->value("recovered", 0U);
                    e.provenance.noise = p->value("noise", 0U);
                } catch (const json::exception& ex) {
                    throw ParseError(file, n, std::string("bad provenance: ") + ex.what());
                }
            }
            auto qid = obj["query_id"].get<std::string>();
            if (expansions.contains(qid)) throw ParseError(file, n, "duplicate query_id " + qid);
            expansions.emplace(std::move(qid), std::move(e));
        }
    }

    return Corpus(reader.layout(), std::move(documents), std::move(queries), std::move(qrels),
                  std::move(expansions));
}

void write_corpus(const Corpus& corpus, const fs::path& dir)
{
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw SerializationError("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("docs.tsv");
        for (const auto& d : corpus.documents()) out << d.id << '\t' << join_tokens(d.tokens) << '\n';
    }
    {
        auto out = open("queries.tsv");
        for (const auto& q : corpus.queries())
            out << q.id << '\t' << join_tokens(q.tokens) << '\t' << to_string(q.split) << '\n';
    }
    {
        auto out = open("qrels.txt");
        for (const auto& [qid, js] : corpus.qrels()) {
            for (const auto& j : js) out << qid << " 0 " << j.doc_id << ' ' << j.relevance << '\n';
        }
    }
    {
        auto out = open("expansions.jsonl");
        for (const auto& [qid, e] : corpus.expansions()) {
            json obj;
            obj["query_id"] = qid;
            obj["pseudo_doc"] = join_tokens(e.pseudo_doc);
            const auto& p = e.provenance;
            obj["provenance"] = {{"source", p.source},       {"seed", p.seed},
                                 {"recovery_rate", p.recovery_rate},
                                 {"noise_rate", p.noise_rate}, {"missing", p.missing},
                                 {"recovered", p.recovered}, {"noise", p.noise}};
            out << obj.dump() << '\n';
        }
    }
    {
        auto out = open("corpus.json");
        const auto& l = corpus.layout();
        json meta = {{"vocab_size", l.vocab_size},
                     {"num_topics", l.num_topics},
                     {"topic_pool_size", l.topic_pool_size}};
        out << meta.dump(2) << '\n';
    }
}

Corpus read_corpus_directory(const fs::path& dir)
{
    LoadOptions options;
    const fs::path meta_path = dir / "corpus.json";
    if (fs::exists(meta_path)) {
        std::ifstream in(meta_path);
        try {
            json meta = json::parse(in);
            options.layout = VocabLayout{meta.at("vocab_size").get<std::uint32_t>(),
                                         meta.at("num_topics").get<std::uint32_t>(),
                                         meta.at("topic_pool_size").get<std::uint32_t>()};
        } catch (const json::exception& e) {
            throw ParseError(meta_path.string(), 1, e.what());
        }
    }
    return load_external_corpus(CorpusPaths::in_directory(dir), options);
}

}  // namespace softqe
