#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "softqe/corpus.hpp"
#include "softqe/trainer.hpp"

namespace testutil {

/// A corpus small enough for training in well under a second.
inline softqe::CorpusConfig tiny_corpus_config(std::uint64_t seed = 3)
{
    softqe::CorpusConfig c;
    c.num_topics = 8;
    c.vocab_size = 260;
    c.background_vocab = 60;
    c.num_docs = 160;
    c.doc_len = 16;
    c.salient_terms_per_doc = 6;
    c.num_train_queries = 48;
    c.num_eval_queries = 16;
    c.query_keep_fraction = 0.5;
    c.seed = seed;
    return c;
}

inline softqe::TrainConfig tiny_train_config(std::uint64_t seed = 1)
{
    softqe::TrainConfig t;
    t.epochs = 2;
    t.schedule = softqe::default_schedule(2);
    t.batch_size = 8;
    t.dims.d_emb = 12;
    t.dims.d_hidden = 10;
    t.dims.d_out = 8;
    t.negatives_per_query = 2;
    t.random_negatives_per_query = 3;
    t.seed = seed;
    return t;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("softqe_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_bytes(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n, double scale = 1.0)
{
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b)
{
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

constexpr double kFdStep = 1e-4;

/// Central differences of f over every coordinate of x.
template <class F>
std::vector<double> central_differences(std::vector<double> x, F&& f)
{
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + kFdStep;
        const double up = f(x);
        x[i] = orig - kFdStep;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * kFdStep);
    }
    return g;
}

}  // namespace testutil
