#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace primseg {

using Rng = std::mt19937_64;

/// Seed of a named sub-stream ("embed-init", "sampling", "kmeans", "synth", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);
Rng make_rng(std::uint64_t seed, std::string_view stream);

/// Uniform in [0, 1) from the top 53 bits; platform-independent.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
/// Uniform integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);
/// Standard normal via Box-Muller.
double normal01(Rng& rng);

}  // namespace primseg
