#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace softqe {

/// 64-bit FNV-1a; used for corpus hashes, checkpoint checksums and the
/// word -> token-id hashing of text corpora.
class Fnv1a {
  public:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

    Fnv1a& bytes(std::span<const unsigned char> data)
    {
        for (unsigned char c : data) {
            m_h ^= c;
            m_h *= kPrime;
        }
        return *this;
    }

    Fnv1a& str(std::string_view s)
    {
        bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
        return u64(s.size());
    }

    Fnv1a& u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            m_h ^= (v >> (8 * i)) & 0xFFU;
            m_h *= kPrime;
        }
        return *this;
    }

    Fnv1a& f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

    std::uint64_t digest() const { return m_h; }

  private:
    std::uint64_t m_h = kOffset;
};

inline std::uint64_t fnv1a(std::string_view s)
{
    Fnv1a h;
    h.bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
    return h.digest();
}

/// Fixed-width lowercase hex, the form hashes take in files and reports.
std::string to_hex(std::uint64_t v);

}  // namespace softqe
