#pragma once

#include <cstdint>
#include <random>

namespace fedht {

using Rng = std::mt19937_64;

/// Well-known stream ids reserved for non-client randomness.
inline constexpr std::uint64_t kSharedModelStream = 0xFFFF'FFFF'0000'0001ULL;
inline constexpr std::uint64_t kPartitionStream = 0xFFFF'FFFF'0000'0002ULL;
inline constexpr std::uint64_t kProbeStream = 0xFFFF'FFFF'0000'0003ULL;

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Independent generator for (seed, stream). Client streams use the client id.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t state = seed ^ (stream * 0xD1B54A32D192ED03ULL);
    std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(state)),
                      static_cast<std::uint32_t>(splitmix64(state)),
                      static_cast<std::uint32_t>(splitmix64(state)),
                      static_cast<std::uint32_t>(splitmix64(state))};
    return Rng(seq);
}

}  // namespace fedht
