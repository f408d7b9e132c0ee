#include "softqe/encoder.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "softqe/error.hpp"
#include "softqe/hash.hpp"
#include "softqe/rng.hpp"

namespace softqe {

std::string to_string(Role role)
{
    switch (role) {
    case Role::query: return "query";
    case Role::passage: return "passage";
    case Role::teacher_query: return "teacher_query";
    case Role::student_query: return "student_query";
    }
    return "query";
}

Role parse_role(const std::string& s)
{
    if (s == "query") return Role::query;
    if (s == "passage") return Role::passage;
    if (s == "teacher_query") return Role::teacher_query;
    if (s == "student_query") return Role::student_query;
    throw InputError("unknown role tag '" + s + "'");
}

void EncoderParams::validate() const
{
    const auto d = dims();
    if (d.vocab_size == 0 || d.d_emb == 0 || d.d_hidden == 0 || d.d_out == 0)
        throw InputError("encoder dimensions must be >= 1");
    if (token_embeddings.data.size() != d.vocab_size * d.d_emb || proj1_weights.rows != d.d_emb ||
        proj1_weights.data.size() != d.d_emb * d.d_hidden || proj1_bias.size() != d.d_hidden ||
        proj2_weights.rows != d.d_hidden || proj2_weights.data.size() != d.d_hidden * d.d_out ||
        proj2_bias.size() != d.d_out)
        throw InputError("encoder tensor shapes are inconsistent");
    auto finite = [](std::span<const double> v) {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    };
    if (!finite(token_embeddings.data) || !finite(proj1_weights.data) || !finite(proj1_bias) ||
        !finite(proj2_weights.data) || !finite(proj2_bias))
        throw InputError("encoder parameters contain non-finite values");
}

std::size_t EncoderParams::num_values() const
{
    return token_embeddings.data.size() + proj1_weights.data.size() + proj1_bias.size() +
           proj2_weights.data.size() + proj2_bias.size();
}

bool EncoderParams::same_weights(const EncoderParams& o) const
{
    return token_embeddings == o.token_embeddings && proj1_weights == o.proj1_weights &&
           proj1_bias == o.proj1_bias && proj2_weights == o.proj2_weights &&
           proj2_bias == o.proj2_bias && normalize_output == o.normalize_output;
}

GradientSet GradientSet::zeros_like(const EncoderParams& p)
{
    GradientSet g;
    g.token_embeddings = Matrix(p.token_embeddings.rows, p.token_embeddings.cols);
    g.proj1_weights = Matrix(p.proj1_weights.rows, p.proj1_weights.cols);
    g.proj1_bias.assign(p.proj1_bias.size(), 0.0);
    g.proj2_weights = Matrix(p.proj2_weights.rows, p.proj2_weights.cols);
    g.proj2_bias.assign(p.proj2_bias.size(), 0.0);
    return g;
}

namespace {

template <typename F>
void each_grad(GradientSet& g, F&& f)
{
    f(g.token_embeddings.data);
    f(g.proj1_weights.data);
    f(g.proj1_bias);
    f(g.proj2_weights.data);
    f(g.proj2_bias);
}

template <typename F>
void each_grad(const GradientSet& g, F&& f)
{
    f(g.token_embeddings.data);
    f(g.proj1_weights.data);
    f(g.proj1_bias);
    f(g.proj2_weights.data);
    f(g.proj2_bias);
}

}  // namespace

void GradientSet::set_zero()
{
    each_grad(*this, [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
}

void GradientSet::scale(double factor)
{
    each_grad(*this, [factor](std::vector<double>& v) {
        for (double& x : v) x *= factor;
    });
}

double GradientSet::squared_norm() const
{
    double s = 0.0;
    each_grad(*this, [&s](const std::vector<double>& v) {
        for (double x : v) s += x * x;
    });
    return s;
}

bool GradientSet::all_zero() const
{
    bool zero = true;
    each_grad(*this, [&zero](const std::vector<double>& v) {
        for (double x : v) zero = zero && x == 0.0;
    });
    return zero;
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw InputError("dot: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

EncoderParams init_params(std::uint64_t seed, const EncoderDims& dims, bool normalize_output,
                          Role role)
{
    if (dims.vocab_size == 0 || dims.d_emb == 0 || dims.d_hidden == 0 || dims.d_out == 0)
        throw ConfigError("init_params: all dimensions must be >= 1");
    const Rng root(seed);
    auto glorot = [&](Matrix& m, std::uint64_t stream) {
        Rng rng = root.split(stream);
        const double s = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
        for (double& x : m.data) x = rng.uniform(-s, s);
    };
    EncoderParams p;
    p.token_embeddings = Matrix(dims.vocab_size, dims.d_emb);
    p.proj1_weights = Matrix(dims.d_emb, dims.d_hidden);
    p.proj1_bias.assign(dims.d_hidden, 0.0);
    p.proj2_weights = Matrix(dims.d_hidden, dims.d_out);
    p.proj2_bias.assign(dims.d_out, 0.0);
    glorot(p.token_embeddings, 1);
    glorot(p.proj1_weights, 2);
    glorot(p.proj2_weights, 3);
    p.normalize_output = normalize_output;
    p.role = role;
    return p;
}

namespace {

struct Forward {
    std::vector<double> pooled;
    std::vector<double> hidden;  // post-tanh
    std::vector<double> raw;     // pre-normalization output
    std::vector<double> out;
    double raw_norm = 0.0;
};

void check_tokens(const EncoderParams& params, std::span<const TokenId> tokens)
{
    if (tokens.empty()) throw InputError("encode: empty token list");
    const std::size_t vocab = params.token_embeddings.rows;
    for (TokenId t : tokens) {
        if (t >= vocab)
            throw InputError("encode: token id " + std::to_string(t) + " >= vocab_size " +
                             std::to_string(vocab));
    }
}

Forward forward(const EncoderParams& p, std::span<const TokenId> tokens)
{
    check_tokens(p, tokens);
    const auto d = p.dims();
    Forward f;
    f.pooled.assign(d.d_emb, 0.0);
    for (TokenId t : tokens) {
        auto row = p.token_embeddings.row(t);
        for (std::size_t j = 0; j < d.d_emb; ++j) f.pooled[j] += row[j];
    }
    const double inv_len = 1.0 / static_cast<double>(tokens.size());
    for (double& x : f.pooled) x *= inv_len;

    f.hidden = p.proj1_bias;
    for (std::size_t i = 0; i < d.d_emb; ++i) {
        const double x = f.pooled[i];
        auto w = p.proj1_weights.row(i);
        for (std::size_t j = 0; j < d.d_hidden; ++j) f.hidden[j] += x * w[j];
    }
    for (double& h : f.hidden) h = std::tanh(h);

    f.raw = p.proj2_bias;
    for (std::size_t i = 0; i < d.d_hidden; ++i) {
        const double h = f.hidden[i];
        auto w = p.proj2_weights.row(i);
        for (std::size_t j = 0; j < d.d_out; ++j) f.raw[j] += h * w[j];
    }
    f.out = f.raw;
    if (p.normalize_output) {
        double n2 = 0.0;
        for (double x : f.raw) n2 += x * x;
        f.raw_norm = std::sqrt(n2);
        // A zero vector has no direction; leave it at zero.
        if (f.raw_norm > 0.0) {
            for (double& x : f.out) x /= f.raw_norm;
        }
    }
    return f;
}

}  // namespace

Embedding encode(const EncoderParams& params, std::span<const TokenId> tokens)
{
    return Embedding{forward(params, tokens).out, params.role};
}

void accumulate_backward(const EncoderParams& p, std::span<const TokenId> tokens,
                         std::span<const double> upstream, GradientSet& g, double scale)
{
    const Forward f = forward(p, tokens);
    const auto d = p.dims();
    if (upstream.size() != d.d_out)
        throw InputError("encode_backward: upstream gradient has dimension " +
                         std::to_string(upstream.size()) + ", expected " + std::to_string(d.d_out));

    std::vector<double> g_raw(upstream.begin(), upstream.end());
    if (p.normalize_output && f.raw_norm > 0.0) {
        // d(r/|r|) = (I - y y^T) / |r|
        double yg = 0.0;
        for (std::size_t j = 0; j < d.d_out; ++j) yg += f.out[j] * upstream[j];
        for (std::size_t j = 0; j < d.d_out; ++j)
            g_raw[j] = (upstream[j] - f.out[j] * yg) / f.raw_norm;
    }
    for (double& x : g_raw) x *= scale;

    std::vector<double> g_hidden(d.d_hidden, 0.0);
    for (std::size_t i = 0; i < d.d_hidden; ++i) {
        auto w = p.proj2_weights.row(i);
        auto gw = g.proj2_weights.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d.d_out; ++j) {
            gw[j] += f.hidden[i] * g_raw[j];
            acc += w[j] * g_raw[j];
        }
        g_hidden[i] = acc * (1.0 - f.hidden[i] * f.hidden[i]);
    }
    for (std::size_t j = 0; j < d.d_out; ++j) g.proj2_bias[j] += g_raw[j];

    std::vector<double> g_pooled(d.d_emb, 0.0);
    for (std::size_t i = 0; i < d.d_emb; ++i) {
        auto w = p.proj1_weights.row(i);
        auto gw = g.proj1_weights.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d.d_hidden; ++j) {
            gw[j] += f.pooled[i] * g_hidden[j];
            acc += w[j] * g_hidden[j];
        }
        g_pooled[i] = acc;
    }
    for (std::size_t j = 0; j < d.d_hidden; ++j) g.proj1_bias[j] += g_hidden[j];

    const double inv_len = 1.0 / static_cast<double>(tokens.size());
    for (TokenId t : tokens) {
        auto row = g.token_embeddings.row(t);
        for (std::size_t j = 0; j < d.d_emb; ++j) row[j] += g_pooled[j] * inv_len;
    }
}

GradientSet encode_backward(const EncoderParams& params, std::span<const TokenId> tokens,
                            std::span<const double> upstream)
{
    GradientSet g = GradientSet::zeros_like(params);
    accumulate_backward(params, tokens, upstream, g);
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'E', '1'};
constexpr std::uint64_t kMaxValues = 1ULL << 31U;

void put_u32(std::ostream& out, std::uint32_t v)
{
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFU);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double x)
{
    const auto v = std::bit_cast<std::uint64_t>(x);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFU);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void read_exact(std::istream& in, unsigned char* dst, std::size_t n)
{
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw SerializationError("checkpoint truncated");
}

std::uint32_t get_u32(std::istream& in)
{
    unsigned char b[4];
    read_exact(in, b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void get_f64s(std::istream& in, std::vector<double>& dst)
{
    std::vector<unsigned char> buf(dst.size() * 8);
    read_exact(in, buf.data(), buf.size());
    for (std::size_t k = 0; k < dst.size(); ++k) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[k * 8 + i]) << (8 * i);
        dst[k] = std::bit_cast<double>(v);
    }
}

}  // namespace

void write_params(std::ostream& out, const EncoderParams& p)
{
    p.validate();
    const auto d = p.dims();
    out.write(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(d.vocab_size));
    put_u32(out, static_cast<std::uint32_t>(d.d_emb));
    put_u32(out, static_cast<std::uint32_t>(d.d_hidden));
    put_u32(out, static_cast<std::uint32_t>(d.d_out));
    put_u32(out, p.normalize_output ? 1U : 0U);
    for (double x : p.token_embeddings.data) put_f64(out, x);
    for (double x : p.proj1_weights.data) put_f64(out, x);
    for (double x : p.proj1_bias) put_f64(out, x);
    for (double x : p.proj2_weights.data) put_f64(out, x);
    for (double x : p.proj2_bias) put_f64(out, x);
    const std::string role = to_string(p.role);
    put_u32(out, static_cast<std::uint32_t>(role.size()));
    out.write(role.data(), static_cast<std::streamsize>(role.size()));
}

EncoderParams read_params(std::istream& in)
{
    unsigned char magic[4];
    read_exact(in, magic, 4);
    if (magic[0] != 'S' || magic[1] != 'Q' || magic[2] != 'E')
        throw SerializationError("not an encoder checkpoint (bad magic)");
    if (magic[3] != '1')
        throw SerializationError(std::string("unsupported checkpoint version '") +
                                 static_cast<char>(magic[3]) + "'");
    EncoderDims d;
    d.vocab_size = get_u32(in);
    d.d_emb = get_u32(in);
    d.d_hidden = get_u32(in);
    d.d_out = get_u32(in);
    const std::uint32_t flags = get_u32(in);
    if (d.vocab_size == 0 || d.d_emb == 0 || d.d_hidden == 0 || d.d_out == 0)
        throw SerializationError("checkpoint has a zero dimension");
    if (flags > 1U) throw SerializationError("checkpoint has unknown flag bits");
    const std::uint64_t total = static_cast<std::uint64_t>(d.vocab_size) * d.d_emb +
                                static_cast<std::uint64_t>(d.d_emb) * d.d_hidden +
                                static_cast<std::uint64_t>(d.d_hidden) * d.d_out;
    if (total > kMaxValues) throw SerializationError("checkpoint dimensions are implausibly large");

    EncoderParams p;
    p.token_embeddings = Matrix(d.vocab_size, d.d_emb);
    p.proj1_weights = Matrix(d.d_emb, d.d_hidden);
    p.proj1_bias.assign(d.d_hidden, 0.0);
    p.proj2_weights = Matrix(d.d_hidden, d.d_out);
    p.proj2_bias.assign(d.d_out, 0.0);
    get_f64s(in, p.token_embeddings.data);
    get_f64s(in, p.proj1_weights.data);
    get_f64s(in, p.proj1_bias);
    get_f64s(in, p.proj2_weights.data);
    get_f64s(in, p.proj2_bias);
    p.normalize_output = (flags & 1U) != 0;
    const std::uint32_t role_len = get_u32(in);
    if (role_len > 64) throw SerializationError("checkpoint role tag too long");
    std::string role(role_len, '\0');
    read_exact(in, reinterpret_cast<unsigned char*>(role.data()), role_len);
    try {
        p.role = parse_role(role);
    } catch (const InputError& e) {
        throw SerializationError(e.what());
    }
    try {
        p.validate();
    } catch (const InputError& e) {
        throw SerializationError(std::string("checkpoint: ") + e.what());
    }
    return p;
}

std::vector<unsigned char> serialize_params(const EncoderParams& params)
{
    std::ostringstream out(std::ios::binary);
    write_params(out, params);
    const std::string s = out.str();
    return {s.begin(), s.end()};
}

void save_params(const EncoderParams& params, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SerializationError("cannot write " + path.string());
    write_params(out, params);
    if (!out) throw SerializationError("write failed for " + path.string());
}

EncoderParams load_params(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SerializationError("cannot open " + path.string());
    return read_params(in);
}

std::uint64_t checksum(const EncoderParams& params)
{
    const auto bytes = serialize_params(params);
    return Fnv1a().bytes(bytes).digest();
}

}  // namespace softqe
