#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace d3ssl {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Inclusive on both ends.
inline int uniform_int(Rng& rng, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Independent stream for a (root seed, coordinates...) tuple, e.g.
// (seed, step, image index). Streams do not depend on evaluation order,
// so work can be split across workers without changing results.
inline Rng derive_rng(std::uint64_t root, std::initializer_list<std::uint64_t> coords)
{
    std::uint64_t h = root ^ 0x9e3779b97f4a7c15ULL;
    auto mix = [](std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    h = mix(h);
    for (auto c : coords)
        h = mix(h + 0x9e3779b97f4a7c15ULL + c);
    return Rng(h);
}

} // namespace d3ssl
