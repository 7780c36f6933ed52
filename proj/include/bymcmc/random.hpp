#pragma once

#include <cstdint>
#include <random>

namespace bymcmc {

/// Random engine used for every stream in the library.
using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of sub-stream `stream` of the stream seeded with `seed`.
///
/// Streams derived from distinct (seed, stream) pairs are treated as independent;
/// batches of proposals each get their own derived stream so results do not depend
/// on how batches are spread across workers.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream) { return Engine(derive_seed(seed, stream)); }

/// Uniform draw on the open interval (0, 1).
inline double open_uniform(Engine& rng) {
    for (;;) {
        const double u = std::generate_canonical<double, 64>(rng);
        if (u > 0.0 && u < 1.0) return u;
    }
}

} // namespace bymcmc
