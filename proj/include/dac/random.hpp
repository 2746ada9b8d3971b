#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace dac {

// SplitMix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t stream_tag(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    return h;
}

// Named, counter-indexed substream: a pure function of (seed, name, counter),
// so draws never depend on evaluation order.
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name, std::uint64_t counter = 0) {
    return std::mt19937_64(mix64(mix64(seed ^ stream_tag(name)) + counter));
}

// Uniform integer in [0, n) without relying on implementation-defined
// distribution algorithms.
inline std::uint64_t uniform_index(std::mt19937_64& gen, std::uint64_t n) {
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t v;
    do { v = gen(); } while (v >= limit);
    return v % n;
}

// Uniform double in [0,1) from the top 53 bits.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double normal01(std::mt19937_64& gen) {
    // Box-Muller, one value per call.
    double u1 = uniform01(gen);
    double u2 = uniform01(gen);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <class It>
void shuffle_range(It first, It last, std::mt19937_64& gen) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        auto j = uniform_index(gen, i);
        std::iter_swap(first + (i - 1), first + j);
    }
}

}  // namespace dac
