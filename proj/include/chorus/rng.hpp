#pragma once

#include <cstdint>
#include <cmath>

namespace chorus::rng {

// Purpose-separated streams: subsystems draw from disjoint streams so adding a
// draw in one place never perturbs another (reproducibility of ablations).
enum Stream : uint64_t {
    kInit = 1,       // parameter initialization
    kSample = 2,     // posterior reparameterization noise
    kData = 3,       // synthetic dataset generation
    kDropout = 4,    // dropout masks
    kShuffle = 5,    // epoch shuffles and train/val splits
    kSubset = 6,     // labeled-budget subsampling
    kTrace = 7,      // stream trace assembly
    kProbe = 8,      // probe train/test split
    kMedian = 9,     // median-heuristic subsampling
};

// SplitMix64 finisher; full 64-bit avalanche.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Counter-based generator: the output is a pure function of (seed, stream, index).
inline uint64_t at(uint64_t seed, uint64_t stream, uint64_t index) {
    return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

inline double uniform01(uint64_t seed, uint64_t stream, uint64_t index) {
    // top 53 bits -> [0, 1)
    return static_cast<double>(at(seed, stream, index) >> 11) * 0x1.0p-53;
}

inline double uniform(uint64_t seed, uint64_t stream, uint64_t index, double lo, double hi) {
    return lo + (hi - lo) * uniform01(seed, stream, index);
}

// Box-Muller (cosine branch); consumes sub-draws 2*index and 2*index + 1.
inline double normal(uint64_t seed, uint64_t stream, uint64_t index) {
    const double u1 = 1.0 - uniform01(seed, stream, 2 * index);  // (0, 1]
    const double u2 = uniform01(seed, stream, 2 * index + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586 * u2);
}

// Stateful cursor over one (seed, stream) pair; counter advances per draw.
struct RngState {
    uint64_t seed{0};
    uint64_t stream{0};
    uint64_t counter{0};

    RngState() = default;
    RngState(uint64_t s, uint64_t st, uint64_t c = 0) : seed(s), stream(st), counter(c) {}

    uint64_t next_u64() { return rng::at(seed, stream, counter++); }
    double next_uniform01() { return rng::uniform01(seed, stream, counter++); }
    double next_uniform(double lo, double hi) { return rng::uniform(seed, stream, counter++, lo, hi); }
    double next_normal() { return rng::normal(seed, stream, counter++); }

    // Fisher-Yates over [0, n) index vectors.
    template <class Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }
};

// Derives an independent per-item stream (e.g. one stream per generated sample).
inline RngState substream(uint64_t seed, uint64_t stream, uint64_t item) {
    return RngState(seed, mix64(stream ^ mix64(item)), 0);
}

}  // namespace chorus::rng
