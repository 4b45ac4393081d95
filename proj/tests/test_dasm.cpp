// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "flowsr/dasm.hpp"

using namespace flowsr;

namespace {

struct Fixture {
    TimestepSchedule<double> sched = make_schedule<double>(1000, ScheduleKind::Linear);
    VelocityNet<double> teacher, lora;
    Tensor<double> zhat_t, z_t;
    LossWeights<double> weights;
    int cond = 1;

    explicit Fixture(uint64_t seed) {
        VelocityNetConfig<double> c;
        c.latent_channels = 2;
        c.width = 4;
        c.blocks = 1;
        c.emb_dim = 8;
        c.num_classes = 2;
        Rng trng(seed);
        teacher.init(c, trng);
        teacher.set_base_trainable(false);
        lora = lora_wrap(teacher, 2, 1.0, mix_seed(seed, 1));
        std::vector<Param<double>*> lp;
        lora.collect_lora(lp);
        Rng prng(mix_seed(seed, 2));
        for (auto* p : lp)
            for (auto& w : p->w.v) w += 0.1 * prng.normal();
        Rng drng(mix_seed(seed, 3));
        zhat_t = drng.normal_tensor<double>(1, 2, 4, 4);
        z_t = drng.normal_tensor<double>(1, 2, 4, 4);
        weights.lambda = 0.4;
        weights.w_cfg = 1.5;
    }
};

DasmConfig dasm_cfg(int n, int s, int floor = 50) {
    DasmConfig c;
    c.nodes = n;
    c.stride = s;
    c.t_floor = floor;
    return c;
}

}  // namespace

TEST_CASE("rollout: node count zero gives an empty trajectory") {
    Fixture f(1);
    const auto traj = rollout(f.zhat_t, f.z_t, 500, dasm_cfg(0, 50), f.lora, f.teacher, f.cond,
                              f.sched, f.weights);
    CHECK(traj.empty());
}

TEST_CASE("rollout: node timesteps follow t - i*s") {
    Fixture f(2);
    const auto traj = rollout(f.zhat_t, f.z_t, 500, dasm_cfg(4, 50), f.lora, f.teacher, f.cond,
                              f.sched, f.weights);
    REQUIRE(traj.size() == 4);
    CHECK(traj[0].t == 450);
    CHECK(traj[1].t == 400);
    CHECK(traj[2].t == 350);
    CHECK(traj[3].t == 300);
    for (const auto& node : traj) CHECK(node.weight == doctest::Approx(0.25));
}

TEST_CASE("rollout: floor skip stops the trajectory") {
    Fixture f(3);
    const auto traj = rollout(f.zhat_t, f.z_t, 120, dasm_cfg(4, 50), f.lora, f.teacher, f.cond,
                              f.sched, f.weights);
    REQUIRE(traj.size() == 1);
    CHECK(traj[0].t == 70);  // next would be 20 < 50
}

TEST_CASE("rollout: nodes satisfy the euler recurrence under their networks") {
    Fixture f(4);
    const auto traj = rollout(f.zhat_t, f.z_t, 300, dasm_cfg(2, 50), f.lora, f.teacher, f.cond,
                              f.sched, f.weights);
    REQUIRE(traj.size() == 2);
    const std::vector<int> cond{f.cond};
    // first node from the base pair
    const std::vector<int> t300{300};
    auto v_hat = cfg_predict(f.lora, f.zhat_t, t300, cond, 0, f.weights.w_cfg);
    auto v_ref = cfg_predict(f.teacher, f.z_t, t300, cond, 0, f.weights.w_cfg);
    CHECK(max_abs_diff(traj[0].z_hat_t, euler_step(f.zhat_t, v_hat, 300, 250, f.sched)) ==
          0.0);
    CHECK(max_abs_diff(traj[0].z_t, euler_step(f.z_t, v_ref, 300, 250, f.sched)) == 0.0);
    // second node from the first
    const std::vector<int> t250{250};
    v_hat = cfg_predict(f.lora, traj[0].z_hat_t, t250, cond, 0, f.weights.w_cfg);
    v_ref = cfg_predict(f.teacher, traj[0].z_t, t250, cond, 0, f.weights.w_cfg);
    CHECK(max_abs_diff(traj[1].z_hat_t, euler_step(traj[0].z_hat_t, v_hat, 250, 200,
                                                   f.sched)) == 0.0);
    CHECK(max_abs_diff(traj[1].z_t, euler_step(traj[0].z_t, v_ref, 250, 200, f.sched)) == 0.0);
}

TEST_CASE("rollout is deterministic and concentrates below the base timestep") {
    Fixture f(5);
    const auto a = rollout(f.zhat_t, f.z_t, 400, dasm_cfg(4, 50), f.lora, f.teacher, f.cond,
                           f.sched, f.weights);
    const auto b = rollout(f.zhat_t, f.z_t, 400, dasm_cfg(4, 50), f.lora, f.teacher, f.cond,
                           f.sched, f.weights);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(max_abs_diff(a[i].z_hat_t, b[i].z_hat_t) == 0.0);
        CHECK(max_abs_diff(a[i].z_t, b[i].z_t) == 0.0);
        CHECK(a[i].t < 400);
    }
}

TEST_CASE("rollout rejects invalid configs") {
    Fixture f(6);
    CHECK_THROWS_AS(rollout(f.zhat_t, f.z_t, 400, dasm_cfg(2, 0), f.lora, f.teacher, f.cond,
                            f.sched, f.weights),
                    std::invalid_argument);
}

TEST_CASE("accumulate_tsd: empty trajectory equals the base gradient") {
    Fixture f(7);
    TrajectorySample<double> base{f.zhat_t, f.z_t, 500, 1.0};
    const auto total = accumulate_tsd(base, {}, f.teacher, f.lora, f.cond, f.weights, f.sched);
    const auto expected = tsd_gradient_at(f.zhat_t, f.z_t, f.teacher, f.lora,
                                          std::vector<int>{500}, std::vector<int>{f.cond},
                                          f.weights, f.sched);
    CHECK(max_abs_diff(total, expected) == 0.0);
}

TEST_CASE("accumulate_tsd equals brute-force per-node evaluation") {
    for (int n : {1, 2, 4}) {
        Fixture f(10 + n);
        TrajectorySample<double> base{f.zhat_t, f.z_t, 500, 1.0};
        const auto traj = rollout(f.zhat_t, f.z_t, 500, dasm_cfg(n, 50), f.lora, f.teacher,
                                  f.cond, f.sched, f.weights);
        const auto total =
            accumulate_tsd(base, traj, f.teacher, f.lora, f.cond, f.weights, f.sched);
        auto brute = tsd_gradient_at(f.zhat_t, f.z_t, f.teacher, f.lora,
                                     std::vector<int>{500}, std::vector<int>{f.cond},
                                     f.weights, f.sched);
        for (const auto& node : traj) {
            const auto g = tsd_gradient_at(node.z_hat_t, node.z_t, f.teacher, f.lora,
                                           std::vector<int>{node.t}, std::vector<int>{f.cond},
                                           f.weights, f.sched);
            add_scaled(brute, g, node.weight);
        }
        CHECK(max_abs_diff(total, brute) < 1e-6);
    }
}

TEST_CASE("accumulate_tsd linearity over trajectory splits") {
    Fixture f(20);
    TrajectorySample<double> base{f.zhat_t, f.z_t, 500, 1.0};
    const auto traj = rollout(f.zhat_t, f.z_t, 500, dasm_cfg(4, 50), f.lora, f.teacher, f.cond,
                              f.sched, f.weights);
    REQUIRE(traj.size() == 4);
    const std::vector<TrajectorySample<double>> head(traj.begin(), traj.begin() + 2);
    const std::vector<TrajectorySample<double>> tail(traj.begin() + 2, traj.end());
    const auto whole = accumulate_tsd(base, traj, f.teacher, f.lora, f.cond, f.weights,
                                      f.sched);
    auto parts = accumulate_tsd(base, head, f.teacher, f.lora, f.cond, f.weights, f.sched);
    for (const auto& node : tail) {
        const auto g = tsd_gradient_at(node.z_hat_t, node.z_t, f.teacher, f.lora,
                                       std::vector<int>{node.t}, std::vector<int>{f.cond},
                                       f.weights, f.sched);
        add_scaled(parts, g, node.weight);
    }
    CHECK(max_abs_diff(whole, parts) < 1e-12);
}

TEST_CASE("accumulate_tsd rejects mismatched trajectories") {
    Fixture f(21);
    TrajectorySample<double> base{f.zhat_t, f.z_t, 100, 1.0};
    auto traj = rollout(f.zhat_t, f.z_t, 500, dasm_cfg(1, 50), f.lora, f.teacher, f.cond,
                        f.sched, f.weights);
    // node timestep 450 is not below the base t=100
    CHECK_THROWS_AS(accumulate_tsd(base, traj, f.teacher, f.lora, f.cond, f.weights, f.sched),
                    std::invalid_argument);
}

TEST_CASE("decay node weights halve per step") {
    Fixture f(22);
    auto cfg = dasm_cfg(3, 50);
    cfg.weight_kind = NodeWeightKind::Decay;
    const auto traj = rollout(f.zhat_t, f.z_t, 500, cfg, f.lora, f.teacher, f.cond, f.sched,
                              f.weights);
    REQUIRE(traj.size() == 3);
    CHECK(traj[0].weight == doctest::Approx(0.5));
    CHECK(traj[1].weight == doctest::Approx(0.25));
    CHECK(traj[2].weight == doctest::Approx(0.125));
}
