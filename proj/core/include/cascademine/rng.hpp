#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace cascademine::rng {

/// splitmix64 output function; advances the state.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent substream seed from (seed, stream). Used to give
/// every image its own generator so parallel generation cannot change
/// output.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t state = seed ^ (0x9E3779B97F4A7C15ULL + (stream << 1));
    const std::uint64_t a = splitmix64_next(state);
    state ^= stream;
    return a ^ splitmix64_next(state);
}

/// Named substream: FNV-1a over the name, mixed with the seed.
inline std::uint64_t stream_for(std::uint64_t seed, std::string_view name) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        hash ^= static_cast<std::uint64_t>(c);
        hash *= 0x100000001b3ULL;
    }
    return mix(seed, hash);
}

/// Uniform double in [0, 1) using the top 53 bits of one generator step.
inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Standard normal via the Box-Muller cosine branch. Consumes exactly two
/// generator steps, which keeps replay oracles branch-free.
inline double normal(std::mt19937_64& g) {
    const double u1 = 1.0 - uniform01(g);  // (0, 1]
    const double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Knuth's product method; one uniform per trial. Suitable for small means.
inline int poisson(std::mt19937_64& g, double mean) {
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= uniform01(g);
    } while (p > limit);
    return k - 1;
}

/// Inverse-CDF draw over unnormalized weights; consumes one uniform.
inline std::size_t categorical(std::mt19937_64& g, std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double u = uniform01(g) * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        cum += weights[i];
        if (u < cum) return i;
    }
    return weights.size() - 1;  // floating-point residue
}

/// Snaps to the 1/64-pixel grid so box arithmetic stays exact in doubles
/// across JSON round trips.
inline double quantize64(double v) { return std::nearbyint(v * 64.0) / 64.0; }

}  // namespace cascademine::rng
