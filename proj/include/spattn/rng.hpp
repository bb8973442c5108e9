// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace spattn {

// std::mt19937_64 output is pinned by the standard, but the std::*_distribution
// mappings are not. Everything that has to reproduce bit-identically across
// toolchains maps engine words to values with the fixed formulas below.

inline double uniform01(std::mt19937_64& gen) {
    // strictly inside (0, 1)
    return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
    return lo + (hi - lo) * uniform01(gen);
}

// Modulo bias is irrelevant for our n << 2^64.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n) {
    return gen() % n;
}

inline int uniform_int(std::mt19937_64& gen, int lo, int hi) {
    return lo + static_cast<int>(uniform_below(gen, static_cast<std::uint64_t>(hi - lo + 1)));
}

// Box-Muller, cosine branch only.
inline double normal(std::mt19937_64& gen) {
    const double u1 = uniform01(gen);
    const double u2 = uniform01(gen);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void fill_normal(std::span<T> out, std::mt19937_64& gen, double mean = 0.0, double stddev = 1.0) {
    for (auto& x : out) {
        x = static_cast<T>(mean + stddev * normal(gen));
    }
}

template <typename T>
void fill_uniform(std::span<T> out, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
    for (auto& x : out) {
        x = static_cast<T>(uniform(gen, lo, hi));
    }
}

// Per-step stream so training can resume from (seed, step) alone.
inline std::mt19937_64 stream_for_step(std::uint64_t seed, std::uint64_t step) {
    std::mt19937_64 g(seed ^ (0x9e3779b97f4a7c15ull * (step + 1)));
    g.discard(4);
    return g;
}

// FNV-1a, used for output digests and parameter hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace spattn
