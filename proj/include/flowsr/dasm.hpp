// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Distribution-aware sampling: roll the noisy pair backward along the
// model's own Euler trajectory and accumulate the score gradient at every
// node in one iteration. The rollout itself is never differentiated; each
// node residual reaches the student only through the base latent.

#pragma once

#include <vector>

#include "flowsr/losses.hpp"

namespace flowsr {

enum class NodeWeightKind { Uniform, Decay };

struct DasmConfig {
    int nodes = 4;        // N
    int stride = 50;      // s
    NodeWeightKind weight_kind = NodeWeightKind::Uniform;
    int t_floor = 50;     // nodes below this timestep are skipped
};

template <typename T>
struct TrajectorySample {
    Tensor<T> z_hat_t;  // student branch, stepped by the adapted replica
    Tensor<T> z_t;      // HQ branch, stepped by the teacher
    int t = 0;
    T weight = T(1);
};

// Euler rollout from the base pair at timestep t down in strides of s.
// The loop stops at the first node below t_floor (later nodes would be lower
// still). Single-sample only: trajectory timesteps are data-dependent.
template <typename T>
std::vector<TrajectorySample<T>> rollout(const Tensor<T>& zhat_t, const Tensor<T>& z_t, int t,
                                         const DasmConfig& cfg, VelocityNet<T>& lora,
                                         VelocityNet<T>& teacher, int cond,
                                         const TimestepSchedule<T>& sched,
                                         const LossWeights<T>& weights) {
    FLOWSR_REQUIRE(cfg.stride >= 1, "dasm: stride must be >= 1");
    FLOWSR_REQUIRE(cfg.nodes >= 0 && cfg.t_floor >= 0, "dasm: invalid config");
    require_same_shape(zhat_t, z_t, "rollout");
    FLOWSR_REQUIRE(zhat_t.n == 1, "rollout: one sample at a time");

    std::vector<TrajectorySample<T>> traj;
    Tensor<T> cur_hat = zhat_t;
    Tensor<T> cur_ref = z_t;
    int pre = t;
    const std::vector<int> cond_v{cond};
    for (int i = 1; i <= cfg.nodes; ++i) {
        const int cur = t - i * cfg.stride;
        if (cur < cfg.t_floor) break;
        const std::vector<int> pre_v{pre};
        Tensor<T> v_hat = cfg_predict(lora, cur_hat, pre_v, cond_v, 0, weights.w_cfg);
        Tensor<T> v_ref = cfg_predict(teacher, cur_ref, pre_v, cond_v, 0, weights.w_cfg);
        cur_hat = euler_step(cur_hat, v_hat, pre, cur, sched);
        cur_ref = euler_step(cur_ref, v_ref, pre, cur, sched);
        TrajectorySample<T> node;
        node.z_hat_t = cur_hat;
        node.z_t = cur_ref;
        node.t = cur;
        node.weight = (cfg.weight_kind == NodeWeightKind::Uniform)
                          ? T(1) / static_cast<T>(cfg.nodes)
                          : static_cast<T>(std::pow(0.5, i));
        traj.push_back(std::move(node));
        pre = cur;
    }
    return traj;
}

// Total regularization gradient: the TSD gradient at the base pair plus the
// weighted TSD gradients at every trajectory node.
template <typename T>
Tensor<T> accumulate_tsd(const TrajectorySample<T>& base,
                         const std::vector<TrajectorySample<T>>& trajectory,
                         VelocityNet<T>& teacher, VelocityNet<T>& lora, int cond,
                         const LossWeights<T>& weights, const TimestepSchedule<T>& sched) {
    const std::vector<int> cond_v{cond};
    Tensor<T> total = tsd_gradient_at(base.z_hat_t, base.z_t, teacher, lora,
                                      std::vector<int>{base.t}, cond_v, weights, sched);
    for (const auto& node : trajectory) {
        FLOWSR_REQUIRE(node.z_hat_t.same_shape(base.z_hat_t) && node.t < base.t,
                       "accumulate_tsd: trajectory/base mismatch");
        Tensor<T> g = tsd_gradient_at(node.z_hat_t, node.z_t, teacher, lora,
                                      std::vector<int>{node.t}, cond_v, weights, sched);
        add_scaled(total, g, node.weight);
    }
    return total;
}

}  // namespace flowsr
