#pragma once

#include <cstdint>

namespace pasam {

/// splitmix64 finalizer over (seed, a, b): independent streams per sample,
/// step or polarity without sharing a generator.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a * 2 + b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace pasam
