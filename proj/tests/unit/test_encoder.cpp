#include <chrono>
#include <random>
#include <sstream>

#include "doctest.h"
#include "softqe/encoder.hpp"
#include "softqe/error.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace softqe;

namespace {

const EncoderDims kDims{30, 7, 6, 5};

}  // namespace

TEST_CASE("encoder backward matches central differences on 50 instances")
{
    const auto start = std::chrono::steady_clock::now();
    CHECK(oracles::encoder_gradient_error(2024) < 1e-6);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(30));
}

TEST_CASE("accumulate_backward adds a scaled gradient and touches only present rows")
{
    EncoderParams p = init_params(5, kDims, false, Role::query);
    const std::vector<TokenId> tokens{3, 3, 9};
    const std::vector<double> up{1, -2, 0.5, 0, 3};
    GradientSet once = encode_backward(p, tokens, up);
    GradientSet acc = GradientSet::zeros_like(p);
    accumulate_backward(p, tokens, up, acc, 2.0);
    for (std::size_t r = 0; r < kDims.vocab_size; ++r) {
        for (std::size_t c = 0; c < kDims.d_emb; ++c) {
            CHECK(acc.token_embeddings(r, c) == doctest::Approx(2.0 * once.token_embeddings(r, c)));
            if (r != 3 && r != 9) CHECK(acc.token_embeddings(r, c) == 0.0);
        }
    }
}

TEST_CASE("normalized output has unit norm")
{
    EncoderParams p = init_params(6, kDims, true, Role::passage);
    const std::vector<TokenId> tokens{1, 2, 3};
    const auto e = encode(p, tokens);
    CHECK(std::sqrt(dot(e.values, e.values)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.source_role == Role::passage);
}

TEST_CASE("encoding is mean pooling over tokens")
{
    EncoderParams p = init_params(7, kDims, false, Role::query);
    const std::vector<TokenId> a{4, 8};
    const std::vector<TokenId> doubled{4, 8, 4, 8};
    CHECK(encode(p, a).values == encode(p, doubled).values);
}

TEST_CASE("encode rejects empty and out-of-vocabulary input")
{
    EncoderParams p = init_params(8, kDims, false, Role::query);
    CHECK_THROWS_AS(encode(p, std::vector<TokenId>{}), InputError);
    CHECK_THROWS_AS(encode(p, std::vector<TokenId>{static_cast<TokenId>(kDims.vocab_size)}), InputError);
    CHECK_THROWS_AS(encode_backward(p, std::vector<TokenId>{1}, std::vector<double>(2, 0.0)), InputError);
}

TEST_CASE("initial weight variance matches the Glorot-uniform law")
{
    const EncoderDims dims{2000, 64, 64, 32};
    EncoderParams p = init_params(9, dims, false, Role::query);
    auto check = [](const Matrix& m) {
        const double s = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
        double sum = 0.0, sq = 0.0;
        for (double x : m.data) {
            CHECK(std::fabs(x) <= s);
            sum += x;
            sq += x * x;
        }
        const double n = static_cast<double>(m.data.size());
        const double var = sq / n - (sum / n) * (sum / n);
        CHECK(std::fabs(var - s * s / 3.0) <= 0.1 * s * s / 3.0);
    };
    check(p.token_embeddings);
    check(p.proj1_weights);
    check(p.proj2_weights);
    for (double b : p.proj1_bias) CHECK(b == 0.0);
    CHECK(init_params(9, dims, false, Role::query) == p);
}

TEST_CASE("checkpoints round-trip byte for byte")
{
    EncoderParams p = init_params(10, kDims, true, Role::student_query);
    const auto bytes = serialize_params(p);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    const EncoderParams back = read_params(in);
    CHECK(back == p);
    CHECK(serialize_params(back) == bytes);
    CHECK(checksum(back) == checksum(p));

    const auto dir = testutil::temp_dir("ckpt");
    save_params(p, dir / "q.ckpt");
    CHECK(load_params(dir / "q.ckpt") == p);
}

TEST_CASE("corrupt checkpoints are rejected")
{
    EncoderParams p = init_params(11, kDims, false, Role::query);
    auto bytes = serialize_params(p);
    std::string truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
    std::istringstream in(truncated);
    CHECK_THROWS_AS(read_params(in), SerializationError);
    std::string bad_magic(bytes.begin(), bytes.end());
    bad_magic[0] = 'X';
    std::istringstream in2(bad_magic);
    CHECK_THROWS_AS(read_params(in2), SerializationError);
}

TEST_CASE("role tags round-trip through strings")
{
    for (Role r : {Role::query, Role::passage, Role::teacher_query, Role::student_query})
        CHECK(parse_role(to_string(r)) == r);
    CHECK_THROWS_AS(parse_role("nope"), InputError);
}
