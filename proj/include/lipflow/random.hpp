#pragma once

// Portable draws on top of mt19937_64. The std distributions are avoided so
// that a saved engine state fully determines every later draw (no hidden
// cached normals) and results match across standard libraries.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace lipflow {

using Rng = std::mt19937_64;

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Index in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return static_cast<std::uint64_t>(uniform01(rng) * n); }

/// Standard normal via Box-Muller, one value per call.
inline double standard_normal(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
}

}  // namespace lipflow
