#pragma once

#include <cstdint>
#include <random>

#include "cws/tensor.hpp"

namespace cws {

// All randomness in the library flows through explicitly seeded mt19937_64
// engines so identical seeds give identical artifacts. Streams are derived
// with splitmix64 so per-sample/per-fold engines do not overlap trivially.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(stream + 0x517cc1b727220a95ULL)));
}

inline Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

inline Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace cws
