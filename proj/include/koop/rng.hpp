#pragma once

#include <cstdint>
#include <random>

namespace koop::rng {

/// splitmix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) { return mix(a ^ mix(b)); }

/// Named substreams. Every random draw in a run is made from an engine seeded
/// by (base seed, stream, step), so any step can be reproduced in isolation
/// and checkpoint resume needs no engine state.
enum class Stream : std::uint64_t {
    Trajectory = 1,
    CellSample = 2,
    AgentSelect = 3,
    ReplaySample = 4,
    PpoShuffle = 5,
    NetInit = 6,
    WindowInit = 7,
    Regret = 8,
    Generic = 9,
};

inline std::uint64_t substream(std::uint64_t base, Stream s, std::uint64_t step = 0) {
    return combine(combine(base, static_cast<std::uint64_t>(s)), step);
}

inline std::mt19937_64 engine(std::uint64_t seed) { return std::mt19937_64(seed); }

inline std::mt19937_64 engine(std::uint64_t base, Stream s, std::uint64_t step = 0) {
    return std::mt19937_64(substream(base, s, step));
}

}  // namespace koop::rng
