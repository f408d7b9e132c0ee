#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "softqe/corpus.hpp"

namespace softqe {

enum class Role { query, passage, teacher_query, student_query };

std::string to_string(Role role);
Role parse_role(const std::string& s);

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    bool operator==(const Matrix&) const = default;
};

struct EncoderDims {
    std::size_t vocab_size = 0;
    std::size_t d_emb = 64;
    std::size_t d_hidden = 64;
    std::size_t d_out = 32;
    bool operator==(const EncoderDims&) const = default;
};

/// Weights of one bag-of-embeddings encoder:
///
///   pooled = mean_t E[t]
///   h      = tanh(pooled * W1 + b1)
///   out    = h * W2 + b2            (optionally L2-normalized)
struct EncoderParams {
    Matrix token_embeddings;  // vocab_size x d_emb
    Matrix proj1_weights;     // d_emb x d_hidden
    std::vector<double> proj1_bias;
    Matrix proj2_weights;  // d_hidden x d_out
    std::vector<double> proj2_bias;
    bool normalize_output = false;
    Role role = Role::query;

    EncoderDims dims() const
    {
        return {token_embeddings.rows, token_embeddings.cols, proj1_weights.cols, proj2_weights.cols};
    }
    /// Throws InputError when shapes disagree or a value is non-finite.
    void validate() const;
    std::size_t num_values() const;
    /// Weights only; the role tag is not part of equality.
    bool same_weights(const EncoderParams& other) const;
    bool operator==(const EncoderParams&) const = default;
};

struct Embedding {
    std::vector<double> values;
    Role source_role = Role::query;
};

/// Gradients shaped like EncoderParams.
struct GradientSet {
    Matrix token_embeddings;
    Matrix proj1_weights;
    std::vector<double> proj1_bias;
    Matrix proj2_weights;
    std::vector<double> proj2_bias;

    static GradientSet zeros_like(const EncoderParams& params);
    void set_zero();
    void scale(double factor);
    double squared_norm() const;
    bool all_zero() const;
};

/// Visits matching (parameter, gradient) tensors as flat spans, in checkpoint
/// declaration order. Used by optimizers and gradient checks.
template <typename F>
void for_each_tensor(EncoderParams& p, GradientSet& g, F&& f)
{
    f(std::span<double>(p.token_embeddings.data), std::span<double>(g.token_embeddings.data));
    f(std::span<double>(p.proj1_weights.data), std::span<double>(g.proj1_weights.data));
    f(std::span<double>(p.proj1_bias), std::span<double>(g.proj1_bias));
    f(std::span<double>(p.proj2_weights.data), std::span<double>(g.proj2_weights.data));
    f(std::span<double>(p.proj2_bias), std::span<double>(g.proj2_bias));
}

/// Glorot-uniform weights, zero biases. Each tensor draws from its own
/// sub-stream of `seed`.
EncoderParams init_params(std::uint64_t seed, const EncoderDims& dims, bool normalize_output,
                          Role role);

Embedding encode(const EncoderParams& params, std::span<const TokenId> tokens);

/// Reverse-mode gradient of `upstream . encode(params, tokens)`.
GradientSet encode_backward(const EncoderParams& params, std::span<const TokenId> tokens,
                            std::span<const double> upstream);

/// As encode_backward, but adds `scale * gradient` into `grads`. Only the
/// embedding rows of tokens present in the input are touched.
void accumulate_backward(const EncoderParams& params, std::span<const TokenId> tokens,
                         std::span<const double> upstream, GradientSet& grads, double scale = 1.0);

double dot(std::span<const double> a, std::span<const double> b);

// Checkpoint format (little-endian):
//   "SQE1" | u32 vocab_size, d_emb, d_hidden, d_out, flags(bit0 = normalize)
//   | f64 token_embeddings | proj1_weights | proj1_bias | proj2_weights | proj2_bias
//   | u32 role length | role UTF-8
void write_params(std::ostream& out, const EncoderParams& params);
EncoderParams read_params(std::istream& in);
std::vector<unsigned char> serialize_params(const EncoderParams& params);
void save_params(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);
/// FNV-1a over the serialized checkpoint bytes.
std::uint64_t checksum(const EncoderParams& params);

}  // namespace softqe
