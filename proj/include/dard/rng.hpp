#ifndef DARD_RNG_HPP
#define DARD_RNG_HPP

#include <cstdint>
#include <random>

namespace dard {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from (master, tags...). Order matters.
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t master, Tags... tags) {
    std::uint64_t s = splitmix64(master);
    ((s = splitmix64(s ^ static_cast<std::uint64_t>(tags))), ...);
    return s;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace dard

#endif  // DARD_RNG_HPP
