#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace eppo {

/// Single RNG type used across the project so that streams can be
/// serialized into checkpoints and reproduced bit-for-bit.
using Rng = std::mt19937_64;

/// Invalid argument or configuration value.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Operation called in a state where its precondition does not hold.
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed or inconsistent data (files, annotations, empty inputs).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Problem instance exceeds a configured size guard.
class SizeError : public std::length_error {
public:
    using std::length_error::length_error;
};

/// Non-finite value produced where a finite one is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Derives an independent stream from a base seed and a worker/stream id
/// (splitmix64 finalizer over the pair).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Inclusive on both ends.
inline int uniform_int(Rng& rng, int lo, int hi) {
    if (hi < lo) {
        throw ParameterError("uniform_int: empty range");
    }
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace eppo
