// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <filesystem>

#include "flowsr/checkpoint.hpp"
#include "flowsr/degradation.hpp"

using namespace flowsr;

namespace {

const std::string kDir = "/tmp/flowsr_test_ckpt";

VelocityNetConfig<double> micro_cfg() {
    VelocityNetConfig<double> c;
    c.latent_channels = 2;
    c.width = 4;
    c.blocks = 1;
    c.emb_dim = 8;
    c.num_classes = kNumShapeClasses;
    return c;
}

}  // namespace

TEST_CASE("autoencoder checkpoint round trip is float32-exact") {
    std::filesystem::remove_all(kDir);
    AutoEncoder<double> ae;
    Rng rng(1);
    ae.init(4, 2, rng);
    save_autoencoder(kDir, ae, Json{{"val_psnr", 30.0}});
    auto back = load_autoencoder(kDir);

    std::vector<Param<double>*> pa, pb;
    ae.enc.collect_base(pa);
    ae.dec.collect_base(pa);
    back.enc.collect_base(pb);
    back.dec.collect_base(pb);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        // storage is float32: the reload equals the rounded original
        for (size_t k = 0; k < pa[i]->w.size(); ++k)
            CHECK(pb[i]->w.v[k] == static_cast<double>(static_cast<float>(pa[i]->w.v[k])));
    }

    // save -> load -> save -> load is exact
    const std::string dir2 = kDir + "_2";
    std::filesystem::remove_all(dir2);
    save_autoencoder(dir2, back, Json{});
    auto back2 = load_autoencoder(dir2);
    std::vector<Param<double>*> pc;
    back2.enc.collect_base(pc);
    back2.dec.collect_base(pc);
    CHECK(params_checksum(pb) == params_checksum(pc));
    std::filesystem::remove_all(kDir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("velocity net checkpoint keeps adapters separate from the base") {
    std::filesystem::remove_all(kDir);
    VelocityNet<double> base;
    Rng rng(2);
    base.init(micro_cfg(), rng);
    base.set_base_trainable(false);
    auto wrapped = lora_wrap(base, 2, 1.0, 3);
    std::vector<Param<double>*> adapters;
    wrapped.collect_lora(adapters);
    Rng prng(4);
    for (auto* p : adapters)
        for (auto& w : p->w.v) w += 0.1 * prng.normal();

    save_velocity_net(kDir, wrapped, Json{});
    CHECK(std::filesystem::exists(kDir + "/base.bin"));
    CHECK(std::filesystem::exists(kDir + "/lora.bin"));

    auto back = load_velocity_net(kDir);
    Rng drng(5);
    const auto z = drng.normal_tensor<double>(1, 2, 4, 4);
    const std::vector<int> t{25}, cond{1};
    const auto expect = wrapped.forward(z, t, cond, false);
    const auto got = back.forward(z, t, cond, false);
    // float32 storage: close but not exact
    CHECK(max_abs_diff(expect, got) < 1e-5);
    std::filesystem::remove_all(kDir);
}

TEST_CASE("student checkpoint reload reproduces outputs within float32 rounding") {
    std::filesystem::remove_all(kDir);
    AutoEncoder<double> ae;
    Rng rng(6);
    ae.init(4, 2, rng);
    ae.freeze_decoder();
    StudentModel<double> student;
    student.init(ae, micro_cfg(), 1, 1.0, 4, 50, 7);
    Rng prng(8);
    for (auto* p : student.trainable_params())
        for (auto& w : p->w.v) w += 0.05 * prng.normal();

    save_student(kDir, student, Json{{"step", 123}});
    auto back = load_student(kDir);

    Rng drng(9);
    Tensor<double> lq(1, 3, 4, 4);
    for (auto& v : lq.v) v = drng.uniform();
    const auto a = student.forward(lq, false);
    const auto b = back.forward(lq, false);
    CHECK(max_abs_diff(a.xhat, b.xhat) < 1e-5);

    // decoder stays frozen through the round trip
    std::vector<Param<double>*> dec;
    back.decoder.collect_base(dec);
    for (const auto* p : dec) CHECK_FALSE(p->trainable);
    // adapters and denoiser stay trainable
    CHECK(!back.trainable_params().empty());
    for (auto* p : back.trainable_params()) CHECK(p->trainable);
    std::filesystem::remove_all(kDir);
}

TEST_CASE("checksum is order-sensitive and content-sensitive") {
    AutoEncoder<double> ae;
    Rng rng(10);
    ae.init(4, 2, rng);
    std::vector<Param<double>*> ps;
    ae.enc.collect_base(ps);
    const uint64_t before = params_checksum(ps);
    ps[0]->w.v[0] += 1e-12;
    CHECK(params_checksum(ps) != before);
}

TEST_CASE("loading a wrong-kind checkpoint fails cleanly") {
    std::filesystem::remove_all(kDir);
    AutoEncoder<double> ae;
    Rng rng(11);
    ae.init(4, 2, rng);
    save_autoencoder(kDir, ae, Json{});
    CHECK_THROWS(load_velocity_net(kDir));
    CHECK_THROWS(load_student(kDir));
    std::filesystem::remove_all(kDir);
}
