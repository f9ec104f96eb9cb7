#pragma once

#include <cmath>
#include <cstdint>

#include "feat/tensor.hpp"

namespace feat {

// Counter-based random stream. The value at (seed, counter) is the splitmix64
// finalizer applied to seed + counter * 0x9E3779B97F4A7C15; this identity is
// fixed so that identical (seed, counter) pairs reproduce identical sequences
// across runs. Gaussians are Box-Muller (cosine branch), consuming two counter
// ticks per draw, so the stream state is exactly (seed, counter).
struct RngStream {
    uint64_t seed = 0;
    uint64_t counter = 0;

    RngStream() = default;
    explicit RngStream(uint64_t s) : seed(s) {}
    RngStream(uint64_t s, uint64_t c) : seed(s), counter(c) {}

    // Independent substream for a named purpose (init, data, noise, ...).
    static RngStream derive(uint64_t seed, uint64_t purpose) {
        uint64_t z = seed ^ (0xD1B54A32D192ED03ULL * (purpose + 1));
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return RngStream(z ^ (z >> 31));
    }

    uint64_t next_u64() {
        uint64_t z = seed + (++counter) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1]; never 0 so it is safe under log().
    double next_uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double next_gaussian() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    double next_range(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    template <class T>
    void fill_gaussian(Tensor<T>& t, double stddev = 1.0, double mean = 0.0) {
        for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<T>(mean + stddev * next_gaussian());
    }

    template <class T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(next_range(lo, hi));
    }
};

}  // namespace feat
