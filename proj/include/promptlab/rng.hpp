#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace promptlab {

// All randomness in the project flows from explicit seeds. Sub-seeds for
// independent stages (split / train / shot / eval ...) are derived from a
// base seed plus a stage tag, so changing one stage's draws never perturbs
// another's.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    return splitmix64(base ^ fnv1a(tag));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
    return splitmix64(derive_seed(base, tag) ^ splitmix64(index));
}

using Rng = std::mt19937_64;

// Unbiased uniform draw in [0, n); avoids std::uniform_int_distribution so
// results are identical across standard library implementations.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t v;
    do {
        v = rng();
    } while (v > limit);
    return v % n;
}

inline double uniform_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_below(rng, i)]);
    }
}

}  // namespace promptlab
