#pragma once

// Counter-based Gaussian streams. A draw is addressed by (seed, stream, counter) and never
// depends on which other draws were made before it, so removing sampling steps does not
// shift the noise used by later steps.

#include <cstdint>
#include <random>
#include <span>

namespace diffscope {

enum class NoiseStream : std::uint64_t { Initial = 1, Step = 2 };

std::uint64_t mix_key(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

/// Fills `out` with unit normals determined entirely by the key.
void fill_normal(std::span<float> out, std::uint64_t seed, NoiseStream stream, std::uint64_t counter);

/// Sequential engine for training draws, seeded from a mixed key.
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937_64(mix_key(seed, stream, 0));
}

}  // namespace diffscope
