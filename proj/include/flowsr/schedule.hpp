// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Flow-matching noise schedule and the straight-path noising/stepping ops.
// Convention: sigma(0) = 0 (clean data), sigma(T) = 1 (pure noise), the
// noising path is z_t = (1 - sigma_t) z0 + sigma_t eps and the velocity
// regression target is eps - z0, so Euler steps with decreasing sigma move
// toward data.

#pragma once

#include <vector>

#include "flowsr/common.hpp"
#include "flowsr/rng.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

enum class ScheduleKind { Linear, Shifted };

template <typename T>
struct TimestepSchedule {
    int steps = 0;           // T
    std::vector<T> sigmas;   // indexed 0..T
    ScheduleKind kind = ScheduleKind::Linear;
    T shift = T(3);

    T sigma(int t) const {
        FLOWSR_REQUIRE(t >= 0 && t <= steps, "timestep out of range");
        return sigmas[t];
    }
    T alpha(int t) const { return T(1) - sigma(t); }
};

template <typename T>
TimestepSchedule<T> make_schedule(int steps, ScheduleKind kind, T shift = T(3)) {
    FLOWSR_REQUIRE(steps >= 2, "make_schedule: T must be >= 2");
    FLOWSR_REQUIRE(kind != ScheduleKind::Shifted || shift > T(0),
                   "make_schedule: shift must be positive");
    TimestepSchedule<T> s;
    s.steps = steps;
    s.kind = kind;
    s.shift = shift;
    s.sigmas.resize(steps + 1);
    for (int t = 0; t <= steps; ++t) {
        const T u = static_cast<T>(t) / static_cast<T>(steps);
        s.sigmas[t] = (kind == ScheduleKind::Linear)
                          ? u
                          : shift * u / (T(1) + (shift - T(1)) * u);
    }
    return s;
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& eps, int t,
                    const TimestepSchedule<T>& sched) {
    require_same_shape(z0, eps, "add_noise");
    const T s = sched.sigma(t);
    Tensor<T> out(z0.n, z0.c, z0.h, z0.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = (T(1) - s) * z0.v[i] + s * eps.v[i];
    return out;
}

// Batched variant with one timestep per batch element.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& eps, const std::vector<int>& t,
                    const TimestepSchedule<T>& sched) {
    require_same_shape(z0, eps, "add_noise");
    FLOWSR_REQUIRE(static_cast<int>(t.size()) == z0.n, "add_noise: one timestep per element");
    Tensor<T> out(z0.n, z0.c, z0.h, z0.w);
    const size_t stride = out.v.size() / z0.n;
    for (int in = 0; in < z0.n; ++in) {
        const T s = sched.sigma(t[in]);
        for (size_t i = in * stride; i < (in + 1) * stride; ++i)
            out.v[i] = (T(1) - s) * z0.v[i] + s * eps.v[i];
    }
    return out;
}

template <typename T>
Tensor<T> euler_step(const Tensor<T>& z_t, const Tensor<T>& v, int t, int t_prev,
                     const TimestepSchedule<T>& sched) {
    require_same_shape(z_t, v, "euler_step");
    FLOWSR_REQUIRE(t_prev < t, "euler_step: t_prev must be < t");
    const T ds = sched.sigma(t_prev) - sched.sigma(t);
    Tensor<T> out = z_t;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += ds * v.v[i];
    return out;
}

template <typename T>
Tensor<T> velocity_target(const Tensor<T>& z0, const Tensor<T>& eps) {
    require_same_shape(z0, eps, "velocity_target");
    return eps - z0;
}

template <typename T>
int sample_timestep(Rng& rng, int lo, int hi, const TimestepSchedule<T>& sched) {
    FLOWSR_REQUIRE(0 <= lo && lo <= hi && hi <= sched.steps, "sample_timestep: invalid range");
    return rng.uniform_int(lo, hi);
}

// One (eps, t) draw together with its regression target.
template <typename T>
struct NoisePairing {
    Tensor<T> eps;
    int t = 0;
    Tensor<T> target_velocity;  // eps - z0
};

template <typename T>
NoisePairing<T> make_noise_pairing(const Tensor<T>& z0, int t, Rng& rng) {
    NoisePairing<T> p;
    p.eps = Tensor<T>(z0.n, z0.c, z0.h, z0.w);
    rng.fill_normal(p.eps);
    p.t = t;
    p.target_velocity = velocity_target(z0, p.eps);
    return p;
}

}  // namespace flowsr
