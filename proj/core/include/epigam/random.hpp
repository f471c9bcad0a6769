#pragma once

#include <cstdint>
#include <random>

namespace epigam {

// The standard distributions are implementation-defined, so every draw that
// feeds a persisted output goes through these helpers instead.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Index in [0, n). Modulo bias is below 2^-40 for any n used here.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n));
}

/// Independent, reproducible substream for (seed, stream).
inline Rng substream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
}

} // namespace epigam
