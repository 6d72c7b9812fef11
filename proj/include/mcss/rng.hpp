#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mcss {

// All randomness in the project flows through these helpers. The engine is
// std::mt19937_64 but the value transforms are pinned here instead of using
// std::*_distribution, whose output sequences differ between standard
// libraries. Reproducibility of a run is part of the output contract.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent deterministic sub-stream: same (seed, tag) -> same stream.
inline Rng make_rng(std::uint64_t seed, std::uint64_t tag = 0) {
    return Rng(splitmix64(seed ^ splitmix64(tag)));
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

// Unbiased integer in [0, n), n >= 1. Rejection keeps it exact.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

// Box-Muller, consuming two draws per call. No cached second value so the
// stream position is a pure function of call count.
inline double gaussian(Rng& rng, double mean = 0.0, double sigma = 1.0) {
    double u1 = uniform_unit(rng);
    while (u1 <= 0.0) u1 = uniform_unit(rng);
    const double u2 = uniform_unit(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

inline std::string rng_state_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng rng_state_from_string(const std::string& s) {
    Rng rng;
    std::istringstream is(s);
    is >> rng;
    return rng;
}

}  // namespace mcss
