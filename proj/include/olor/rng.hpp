#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace olor::rng {

// Every random draw in the library goes through the helpers below, driven by
// std::mt19937_64 (whose output stream is pinned by the standard).  The
// std::*_distribution adaptors are implementation-defined and must not be
// used anywhere results are expected to reproduce bit-for-bit.

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
    return lo + (hi - lo) * uniform01(gen);
}

/// Standard normal draw (Box-Muller, cosine branch; two uniforms per call).
inline double normal(std::mt19937_64& gen) {
    double u1 = uniform01(gen);
    const double u2 = uniform01(gen);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

/// Uniform integer in [0, n); n must be positive.
inline std::uint64_t below(std::mt19937_64& gen, std::uint64_t n) {
    return gen() % n;
}

/// In-place Fisher-Yates shuffle consuming one draw per swap.
template <typename T>
void shuffle(std::vector<T>& items, std::mt19937_64& gen) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[below(gen, i)]);
    }
}

}  // namespace olor::rng
