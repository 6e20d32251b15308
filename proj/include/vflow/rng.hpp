#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "vflow/tensor.hpp"

namespace vflow {

// Seeded random stream. The gaussian transform is pinned here (Box-Muller,
// no spare caching) instead of std::normal_distribution so that draws are
// identical across standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) : engine_(mix(seed, stream)) {}

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        // rejection sampling keeps the distribution exact
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    double normal() {
        // u1 in (0,1] so the log is finite
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    template <typename S = float>
    TensorT<S> normal_tensor(std::vector<int> shape, double std = 1.0, double mean = 0.0) {
        TensorT<S> t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(mean + std * normal());
        return t;
    }

    uint64_t raw() { return engine_(); }

  private:
    // splitmix64 finalizer; decorrelates (seed, stream) pairs.
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace vflow
