// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "flowsr/losses.hpp"
#include "flowsr/nets.hpp"

using namespace flowsr;

namespace {

VelocityNetConfig<double> micro_cfg() {
    VelocityNetConfig<double> c;
    c.latent_channels = 2;
    c.width = 4;
    c.blocks = 1;
    c.emb_dim = 8;
    c.num_classes = 2;
    return c;
}

AutoEncoder<double> micro_ae(uint64_t seed) {
    AutoEncoder<double> ae;
    Rng rng(seed);
    ae.init(4, 2, rng);
    return ae;
}

}  // namespace

TEST_CASE("encoder/decoder shape contracts") {
    auto ae = micro_ae(1);
    Rng rng(2);
    const auto img = rng.normal_tensor<double>(2, 3, 16, 16);
    const auto z = ae.encode(img);
    CHECK(z.c == 2);
    CHECK(z.h == 4);
    CHECK(z.w == 4);
    const auto rec = ae.decode(z);
    CHECK(rec.c == 3);
    CHECK(rec.h == 16);
    CHECK(rec.w == 16);
    for (const auto& v : rec.v) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK_THROWS_AS(ae.encode(rng.normal_tensor<double>(1, 3, 9, 9)), std::invalid_argument);
}

TEST_CASE("encode is pure") {
    auto ae = micro_ae(3);
    Tensor<double> img(1, 3, 8, 8);
    img.fill(0.5);
    const auto a = ae.encode(img);
    const auto b = ae.encode(img);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("velocity net output shape matches input and counts evals") {
    VelocityNet<double> net;
    Rng rng(4);
    net.init(micro_cfg(), rng);
    const auto z = rng.normal_tensor<double>(3, 2, 4, 4);
    const std::vector<int> t{10, 20, 30}, cond{0, 1, 2};
    CHECK(net.eval_count() == 0);
    const auto v = net.forward(z, t, cond, false);
    CHECK(v.same_shape(z));
    CHECK(net.eval_count() == 3);
}

TEST_CASE("cfg_predict degenerate weights are exact") {
    VelocityNet<double> net;
    Rng rng(5);
    net.init(micro_cfg(), rng);
    const auto z = rng.normal_tensor<double>(1, 2, 4, 4);
    const std::vector<int> t{25}, cond{2}, nulls{0};
    const auto c = net.forward(z, t, cond, false);
    const auto u = net.forward(z, t, nulls, false);
    CHECK(max_abs_diff(cfg_predict(net, z, t, cond, 0, 1.0), c) == 0.0);
    CHECK(max_abs_diff(cfg_predict(net, z, t, cond, 0, 0.0), u) == 0.0);
    // w = 7.5 extrapolates past the conditional prediction
    const auto g = cfg_predict(net, z, t, cond, 0, 7.5);
    for (size_t i = 0; i < g.size(); ++i)
        CHECK(g.v[i] == doctest::Approx(u.v[i] + 7.5 * (c.v[i] - u.v[i])).epsilon(1e-12));
}

TEST_CASE("lora_wrap is a no-op at init and diverges after a step") {
    VelocityNet<double> base;
    Rng rng(6);
    base.init(micro_cfg(), rng);
    base.set_base_trainable(false);
    auto wrapped = lora_wrap(base, 2, 1.0, 99);

    const auto sched = make_schedule<double>(50, ScheduleKind::Linear);
    Rng drng(7);
    for (int i = 0; i < 100; ++i) {
        const auto z = drng.normal_tensor<double>(1, 2, 4, 4);
        const std::vector<int> t{drng.uniform_int(1, 49)}, cond{drng.uniform_int(0, 2)};
        CHECK(max_abs_diff(base.forward(z, t, cond, false),
                           wrapped.forward(z, t, cond, false)) == 0.0);
    }

    // one diffusion-loss gradient step moves the adapters off zero
    const auto zhat = drng.normal_tensor<double>(1, 2, 4, 4);
    const auto eps = drng.normal_tensor<double>(1, 2, 4, 4);
    const std::vector<int> t{25}, cond{1};
    std::vector<Param<double>*> adapters;
    wrapped.collect_lora(adapters);
    for (auto* p : adapters) p->zero_grad();
    (void)lora_diffusion_loss(wrapped, zhat, t, eps, cond, sched, true);
    for (auto* p : adapters)
        for (size_t k = 0; k < p->w.size(); ++k) p->w.v[k] -= 0.05 * p->g.v[k];
    const auto z = drng.normal_tensor<double>(1, 2, 4, 4);
    CHECK(max_abs_diff(base.forward(z, t, cond, false), wrapped.forward(z, t, cond, false)) >
          0.0);
}

TEST_CASE("lora rank exceeding fan-in is rejected") {
    VelocityNet<double> base;
    Rng rng(8);
    base.init(micro_cfg(), rng);
    // conv_in fan-in is 2*9 = 18
    CHECK_THROWS_AS(lora_wrap(base, 19, 1.0, 1), std::invalid_argument);
}

TEST_CASE("student is the identity pipeline at init") {
    auto ae = micro_ae(9);
    ae.freeze_decoder();
    StudentModel<double> student;
    student.init(ae, micro_cfg(), 1, 1.0, 4, 50, 11);
    Rng rng(10);
    Tensor<double> lq(1, 3, 4, 4);
    for (auto& v : lq.v) v = rng.uniform();
    const auto out = student.forward(lq, false);
    CHECK(out.xhat.h == 16);  // 4x upsample
    CHECK(out.xhat.w == 16);

    const auto up = kernels::bilinear_resize(lq, 16, 16);
    const auto ref = ae.decode(ae.encode(up));
    CHECK(max_abs_diff(out.xhat, ref) < 1e-12);
}

TEST_CASE("student denoiser evaluates exactly once per image") {
    auto ae = micro_ae(12);
    StudentModel<double> student;
    student.init(ae, micro_cfg(), 1, 1.0, 4, 50, 13);
    Rng rng(14);
    const auto lq = rng.normal_tensor<double>(5, 3, 4, 4);
    const auto before = student.denoiser_evals();
    (void)student.forward(lq, false);
    CHECK(student.denoiser_evals() - before == 5);
}

TEST_CASE("frozen decoder accumulates no gradients") {
    auto ae = micro_ae(15);
    ae.freeze_decoder();
    StudentModel<double> student;
    student.init(ae, micro_cfg(), 1, 1.0, 4, 50, 16);
    Rng rng(17);
    const auto lq = rng.normal_tensor<double>(1, 3, 4, 4);
    auto out = student.forward(lq, true);
    Tensor<double> dxhat(1, 3, 16, 16);
    rng.fill_normal(dxhat);
    student.backward(dxhat, Tensor<double>());
    std::vector<Param<double>*> dec_params;
    student.decoder.collect_base(dec_params);
    for (const auto* p : dec_params) CHECK(norm2(p->g) == 0.0);
    // but student trainables did receive gradient
    double total = 0;
    for (const auto* p : student.trainable_params()) total += norm2(p->g);
    CHECK(total > 0.0);
}

TEST_CASE("student backward matches finite differences end to end") {
    auto ae = micro_ae(18);
    ae.freeze_decoder();
    StudentModel<double> student;
    student.init(ae, micro_cfg(), 1, 1.0, 4, 50, 19);
    Rng rng(20);
    // perturb trainables so the denoiser is not at the zero point
    auto params = student.trainable_params();
    for (auto* p : params)
        for (auto& w : p->w.v) w += 0.05 * rng.normal();

    const auto lq = rng.normal_tensor<double>(1, 3, 4, 4);
    Tensor<double> dxhat = rng.normal_tensor<double>(1, 3, 16, 16);
    Tensor<double> dzhat = rng.normal_tensor<double>(1, 2, 4, 4);

    for (auto* p : params) p->zero_grad();
    (void)student.forward(lq, true);
    student.backward(dxhat, dzhat);

    auto loss = [&]() {
        auto out = student.forward(lq, false);
        return dot(out.xhat, dxhat) + dot(out.zhat, dzhat);
    };
    int checked = 0;
    for (auto* p : params) {
        for (size_t k = 0; k < p->w.size(); k += std::max<size_t>(1, p->w.size() / 5)) {
            const double orig = p->w.v[k];
            p->w.v[k] = orig + 1e-6;
            const double lp = loss();
            p->w.v[k] = orig - 1e-6;
            const double lm = loss();
            p->w.v[k] = orig;
            const double fd = (lp - lm) / 2e-6;
            CHECK(p->g.v[k] == doctest::Approx(fd).epsilon(5e-5));
            ++checked;
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("velocity net backward matches finite differences") {
    VelocityNet<double> net;
    Rng rng(21);
    net.init(micro_cfg(), rng);
    const auto z = rng.normal_tensor<double>(2, 2, 4, 4);
    const std::vector<int> t{10, 40}, cond{1, 2};
    const auto dy = rng.normal_tensor<double>(2, 2, 4, 4);

    std::vector<Param<double>*> params;
    net.collect_base(params);
    for (auto* p : params) p->zero_grad();
    (void)net.forward(z, t, cond, true);
    (void)net.backward(dy);

    auto loss = [&]() { return dot(net.forward(z, t, cond, false), dy); };
    for (auto* p : params) {
        for (size_t k = 0; k < p->w.size(); k += std::max<size_t>(1, p->w.size() / 4)) {
            const double orig = p->w.v[k];
            p->w.v[k] = orig + 1e-6;
            const double lp = loss();
            p->w.v[k] = orig - 1e-6;
            const double lm = loss();
            p->w.v[k] = orig;
            CHECK(p->g.v[k] == doctest::Approx((lp - lm) / 2e-6).epsilon(5e-5));
        }
    }
}
