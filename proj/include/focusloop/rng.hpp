#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace focusloop {

/// Engine keyed by a tuple of integers, e.g. (seed, iteration, task, rollout).
/// std::seed_seq and mt19937_64 are fully specified, so streams are identical
/// across platforms; the conversions below avoid the unspecified std
/// distributions for the same reason.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> key) {
    std::vector<std::uint32_t> words;
    words.reserve(key.size() * 2);
    for (std::uint64_t k : key) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform in [0, n); n must be positive.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

}  // namespace focusloop
