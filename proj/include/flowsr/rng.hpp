// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "flowsr/common.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Combine a base seed with a stream tag so per-item rng streams are
// order-independent (seed, index) derivations.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Deterministic RNG. Draws are explicit methods on top of mt19937_64 raw
// output so sequences do not depend on libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t seed() const { return seed_; }
    Rng derive(uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive [lo, hi], unbiased via rejection.
    int uniform_int(int lo, int hi) {
        FLOWSR_REQUIRE(lo <= hi, "uniform_int: empty range");
        const uint64_t range = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<int>(x % range);
    }

    // Box-Muller; consumes two uniforms per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void fill_normal(Tensor<T>& t, double stddev = 1.0) {
        for (auto& x : t.v) x = static_cast<T>(stddev * normal());
    }

    template <typename T>
    Tensor<T> normal_tensor(int n, int c, int h, int w, double stddev = 1.0) {
        Tensor<T> t(n, c, h, w);
        fill_normal(t, stddev);
        return t;
    }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace flowsr
