#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace softqe {

/// SplitMix64 finalizer. Used both as the generator's output function and to
/// derive independent sub-streams from (seed, stream) pairs.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z = (z ^ (z >> 30U)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27U)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31U);
}

/// SplitMix64 (Steele, Lea & Flood). The exact sequence is part of the data
/// contract: generated corpora and initial weights are reproducible from the
/// seed alone, in any language that implements these few lines.
///
///   state += 0x9E3779B97F4A7C15
///   out    = mix64(state)
///
/// uniform()  = (out >> 11) * 2^-53
/// below(n)   = high 64 bits of out * n
/// normal()   = Box-Muller over two uniforms, cosine branch only
/// split(s)   = Rng(mix64(state ^ mix64(s + 0x9E3779B97F4A7C15)))
class Rng {
  public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit constexpr Rng(std::uint64_t seed) : m_state(seed) {}

    constexpr std::uint64_t next()
    {
        m_state += kGolden;
        return mix64(m_state);
    }

    double uniform() { return static_cast<double>(next() >> 11U) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) { return mulhi(next(), n); }

    bool bernoulli(double p) { return uniform() < p; }

    double normal()
    {
        double u1 = uniform();
        double u2 = uniform();
        // uniform() can return 0; map it into (0, 1].
        u1 = 1.0 - u1;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    template <typename T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    constexpr Rng split(std::uint64_t stream) const
    {
        return Rng(mix64(m_state ^ mix64(stream + kGolden)));
    }

    constexpr std::uint64_t state() const { return m_state; }

  private:
    static constexpr std::uint64_t mulhi(std::uint64_t a, std::uint64_t b)
    {
        const std::uint64_t a_lo = a & 0xFFFFFFFFULL, a_hi = a >> 32U;
        const std::uint64_t b_lo = b & 0xFFFFFFFFULL, b_hi = b >> 32U;
        const std::uint64_t lo_lo = a_lo * b_lo;
        const std::uint64_t hi_lo = a_hi * b_lo;
        const std::uint64_t lo_hi = a_lo * b_hi;
        const std::uint64_t mid = (lo_lo >> 32U) + (hi_lo & 0xFFFFFFFFULL) + lo_hi;
        return a_hi * b_hi + (hi_lo >> 32U) + (mid >> 32U);
    }

    std::uint64_t m_state;
};

/// Named sub-stream identifiers, so call sites read `rng.split(stream::kDocs)`.
namespace stream {
inline constexpr std::uint64_t kDocs = 1;
inline constexpr std::uint64_t kQueries = 2;
inline constexpr std::uint64_t kExpansions = 3;
inline constexpr std::uint64_t kQueryEncoder = 11;
inline constexpr std::uint64_t kPassageEncoder = 12;
inline constexpr std::uint64_t kShuffle = 13;
inline constexpr std::uint64_t kNegativePadding = 14;
inline constexpr std::uint64_t kRandomNegatives = 16;
inline constexpr std::uint64_t kCrossEncoder = 15;
}  // namespace stream

}  // namespace softqe
