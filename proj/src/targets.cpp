#include <bit>
#include <fstream>
#include <iostream>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/trainer.hpp"

namespace softqe {

namespace fs = std::filesystem;

namespace {

// Cache layout (little-endian):
//   "SQT1" | u64 teacher checksum | u64 corpus hash | u64 expansion hash
//   | u32 count | u32 dim | count x (u32 id length, id bytes, dim x f64)
//   | u64 FNV-1a of everything before it
constexpr char kMagic[4] = {'S', 'Q', 'T', '1'};

class ByteWriter {
  public:
    void raw(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }

    std::vector<unsigned char> bytes;
};

class ByteReader {
  public:
    explicit ByteReader(const std::vector<unsigned char>& b) : m_b(b) {}
    void need(std::size_t n) const
    {
        if (m_pos + n > m_b.size()) throw SerializationError("target cache truncated");
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(m_b[m_pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(m_b[m_pos++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n)
    {
        need(n);
        std::string s(m_b.begin() + static_cast<std::ptrdiff_t>(m_pos),
                      m_b.begin() + static_cast<std::ptrdiff_t>(m_pos + n));
        m_pos += n;
        return s;
    }
    std::size_t pos() const { return m_pos; }

  private:
    const std::vector<unsigned char>& m_b;
    std::size_t m_pos = 0;
};

std::vector<unsigned char> encode_cache(const TargetCacheKey& key, std::uint64_t expansion_hash,
                                        const std::map<std::string, Embedding>& targets)
{
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u64(key.teacher_checksum);
    w.u64(key.corpus_hash);
    w.u64(expansion_hash);
    w.u32(static_cast<std::uint32_t>(targets.size()));
    const std::size_t dim = targets.empty() ? 0 : targets.begin()->second.values.size();
    w.u32(static_cast<std::uint32_t>(dim));
    for (const auto& [qid, e] : targets) {
        w.u32(static_cast<std::uint32_t>(qid.size()));
        w.raw(qid.data(), qid.size());
        for (double x : e.values) w.f64(x);
    }
    w.u64(Fnv1a().bytes(w.bytes).digest());
    return std::move(w.bytes);
}

struct DecodedCache {
    TargetCacheKey key;
    std::uint64_t expansion_hash = 0;
    std::map<std::string, Embedding> targets;
};

DecodedCache decode_cache(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 4 + 24 + 8 + 8 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
        throw SerializationError("not a target cache file");
    const std::vector<unsigned char> body(bytes.begin(), bytes.end() - 8);
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    if (Fnv1a().bytes(body).digest() != stored)
        throw SerializationError("target cache checksum mismatch");

    ByteReader r(body);
    r.str(4);
    DecodedCache out;
    out.key.teacher_checksum = r.u64();
    out.key.corpus_hash = r.u64();
    out.expansion_hash = r.u64();
    const std::uint32_t count = r.u32();
    const std::uint32_t dim = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = r.u32();
        std::string qid = r.str(len);
        Embedding e;
        e.source_role = Role::teacher_query;
        e.values.resize(dim);
        for (auto& x : e.values) x = r.f64();
        out.targets.emplace(std::move(qid), std::move(e));
    }
    if (r.pos() != body.size()) throw SerializationError("target cache has trailing bytes");
    return out;
}

std::map<std::string, Embedding> compute_targets(const TrainedModel& teacher, const Corpus& corpus)
{
    std::map<std::string, Embedding> out;
    for (const Query* q : corpus.queries_in(Split::train)) {
        if (corpus.expansion(q->id) == nullptr)
            throw IntegrityError("no expansion for training query '" + q->id +
                                 "' and no usable target cache");
        out.emplace(q->id, encode(teacher.query_params, corpus.expanded(q->id).tokens));
    }
    return out;
}

}  // namespace

TargetCacheKey target_cache_key(const TrainedModel& teacher, const Corpus& corpus)
{
    return {checksum(teacher.query_params), corpus.content_hash()};
}

fs::path target_cache_path(const fs::path& dir, const TargetCacheKey& key)
{
    return dir / ("targets_" + to_hex(key.teacher_checksum) + "_" + to_hex(key.corpus_hash) + ".bin");
}

TargetSet precompute_teacher_targets(const TrainedModel& teacher, const Corpus& corpus,
                                     const std::optional<fs::path>& cache_dir)
{
    if (teacher.query_params.role != Role::teacher_query)
        throw IntegrityError("precompute_teacher_targets: query encoder is not a teacher");
    TargetSet set;
    const TargetCacheKey key = target_cache_key(teacher, corpus);
    fs::path path;
    if (cache_dir) {
        path = target_cache_path(*cache_dir, key);
        if (fs::exists(path)) {
            try {
                std::ifstream in(path, std::ios::binary);
                std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                                 std::istreambuf_iterator<char>());
                auto decoded = decode_cache(bytes);
                if (decoded.key.teacher_checksum != key.teacher_checksum ||
                    decoded.key.corpus_hash != key.corpus_hash)
                    throw SerializationError("target cache key mismatch");
                // Expansions may legitimately be absent at this point; only a
                // present-but-different set invalidates the cache.
                if (!corpus.expansions().empty() &&
                    decoded.expansion_hash != corpus.expansion_hash())
                    throw SerializationError("target cache built from different expansions");
                std::size_t train_count = corpus.queries_in(Split::train).size();
                if (decoded.targets.size() != train_count)
                    throw SerializationError("target cache does not cover the training queries");
                set.targets = std::move(decoded.targets);
                set.from_cache = true;
                return set;
            } catch (const SerializationError& e) {
                set.warnings.push_back(std::string("recomputing teacher targets: ") + e.what() +
                                       " (" + path.string() + ")");
                std::cerr << "warning: " << set.warnings.back() << '\n';
            }
        }
    }
    set.targets = compute_targets(teacher, corpus);
    if (cache_dir) {
        fs::create_directories(*cache_dir);
        const auto bytes = encode_cache(key, corpus.expansion_hash(), set.targets);
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw SerializationError("cannot write " + tmp.string());
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
        fs::rename(tmp, path);
    }
    return set;
}

}  // namespace softqe
