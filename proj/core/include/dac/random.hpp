#pragma once

#include <cstdint>
#include <random>

namespace dac {

// splitmix64 step; used to derive independent per-unit seeds from a root
// seed so work can be farmed out without sharing engine state.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    return splitmix64(root ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t stream) {
    return std::mt19937_64(derive_seed(root, stream));
}

}  // namespace dac
