#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace partseg {

// Exit-code conventions shared by the CLI and thrown from library code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64, used to derive independent per-purpose seeds from one root seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t salt) {
    return std::mt19937_64(mix_seed(seed, salt));
}

}  // namespace partseg
