// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <filesystem>

#include "flowsr/trainer.hpp"

using namespace flowsr;

namespace {

// Micro configuration: 16x16 images, 4x4 latents, a few dozen steps.
TrainConfig micro_config() {
    TrainConfig cfg;
    cfg.seed = 21;
    cfg.image_size = 16;
    cfg.recipe.compression_block = 4;  // lq images are 4x4
    cfg.ae_width = 4;
    cfg.latent_channels = 2;
    cfg.vnet_width = 4;
    cfg.vnet_blocks = 1;
    cfg.vnet_emb_dim = 8;
    cfg.lora_rank = 2;
    cfg.timesteps = 50;
    cfg.t_lo = 10;
    cfg.t_hi = 45;
    cfg.student_t_cond = 50;
    cfg.ae_steps = 40;
    cfg.teacher_steps = 40;
    cfg.distill_steps = 8;
    cfg.batch = 2;
    cfg.dasm.nodes = 2;
    cfg.dasm.stride = 4;
    cfg.dasm.t_floor = 4;
    cfg.phase_boundary_frac = 0.5;
    return cfg;
}

Dataset micro_dataset(uint64_t seed, int n = 12) {
    DegradationRecipe recipe;
    recipe.compression_block = 4;
    return make_dataset(n, 16, seed, recipe);
}

struct MicroStack {
    TrainConfig cfg = micro_config();
    Dataset ds = micro_dataset(3);
    std::vector<ImagePair> train, val;
    AeTrainResult ae;
    TeacherTrainResult teacher;

    MicroStack() {
        train.assign(ds.pairs.begin(), ds.pairs.begin() + 8);
        val.assign(ds.pairs.begin() + 8, ds.pairs.end());
        ae = train_autoencoder(cfg, train, val);
        teacher = train_teacher(cfg, train, val, ae.ae);
    }
};

MicroStack& stack() {
    static MicroStack s;
    return s;
}

}  // namespace

TEST_CASE("config validation rejects bad bounds") {
    TrainConfig cfg = micro_config();
    cfg.t_lo = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = micro_config();
    cfg.t_hi = cfg.timesteps;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = micro_config();
    cfg.weights.lambda = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = micro_config();
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("config json round trip") {
    TrainConfig cfg = micro_config();
    cfg.weights.lambda = 0.37;
    cfg.weights.w_of_t = WeightKind::SigmaSq;
    cfg.dasm.weight_kind = NodeWeightKind::Decay;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("ramp_gamma1 endpoints and midpoint") {
    CHECK(ramp_gamma1(0, 100) == 1.0);
    CHECK(ramp_gamma1(50, 100) == 1.5);
    CHECK(ramp_gamma1(100, 100) == 2.0);
    CHECK(ramp_gamma1(250, 100) == 2.0);
    CHECK_THROWS_AS(ramp_gamma1(5, 0), std::invalid_argument);
}

TEST_CASE("adamw minimizes a quadratic and clip rescales") {
    Param<double> p;
    p.init_shape("x", 1, 4, 1, 1);
    for (int i = 0; i < 4; ++i) p.w.v[i] = 2.0 + i;
    AdamW opt({&p}, 0.05, 0.9, 0.999, 1e-8, 0.0);
    for (int step = 0; step < 400; ++step) {
        opt.zero_grad();
        for (int i = 0; i < 4; ++i) p.g.v[i] = 2.0 * p.w.v[i];
        opt.step();
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(p.w.v[i]) < 1e-2);

    p.g.fill(10.0);
    const double norm = clip_grad_norm({&p}, 1.0);
    CHECK(norm == doctest::Approx(20.0));
    CHECK(norm2(p.g) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("autoencoder training improves reconstruction and freezes the decoder") {
    auto& s = stack();
    // untrained baseline for the same data
    AutoEncoder<double> fresh;
    Rng rng(99);
    fresh.init(4, 2, rng);
    double fresh_psnr = 0, trained_psnr = 0;
    for (const auto& p : s.val) {
        fresh_psnr += psnr_y(fresh.decode(fresh.encode(p.hq)), p.hq);
        trained_psnr += psnr_y(s.ae.ae.decode(s.ae.ae.encode(p.hq)), p.hq);
    }
    CHECK(trained_psnr > fresh_psnr);
    CHECK(s.ae.val_psnr == doctest::Approx(trained_psnr / s.val.size()).epsilon(1e-12));
    CHECK(s.ae.ae.decoder_frozen);
    std::vector<Param<double>*> dec;
    s.ae.ae.dec.collect_base(dec);
    CHECK(params_checksum(dec) == s.ae.decoder_checksum);
}

TEST_CASE("autoencoder training is deterministic") {
    auto& s = stack();
    auto again = train_autoencoder(s.cfg, s.train, s.val);
    CHECK(again.val_psnr == s.ae.val_psnr);
    std::vector<Param<double>*> a, b;
    again.ae.enc.collect_base(a);
    s.ae.ae.enc.collect_base(b);
    CHECK(params_checksum(a) == params_checksum(b));
}

TEST_CASE("teacher training reduces the velocity loss") {
    auto& s = stack();
    // loss of an untrained teacher on the same validation protocol
    VelocityNetConfig<double> vcfg;
    vcfg.latent_channels = 2;
    vcfg.width = 4;
    vcfg.blocks = 1;
    vcfg.emb_dim = 8;
    vcfg.num_classes = kNumShapeClasses;
    VelocityNet<double> fresh;
    Rng rng(123);
    fresh.init(vcfg, rng);
    const auto sched = make_schedule<double>(s.cfg.timesteps, ScheduleKind::Linear);
    Rng vrng(mix_seed(s.cfg.seed, 0x7eaeff));
    double fresh_loss = 0;
    int count = 0;
    for (const auto& pair : s.val) {
        const auto z0 = s.ae.ae.encode(pair.hq);
        for (int rep = 0; rep < 4; ++rep) {
            const int t = vrng.uniform_int(1, s.cfg.timesteps - 1);
            const auto pairing = make_noise_pairing(z0, t, vrng);
            const auto z_t = add_noise(z0, pairing.eps, t, sched);
            fresh_loss += mean_squared_diff(
                fresh.forward(z_t, {t}, {pair.class_id}, false), pairing.target_velocity);
            ++count;
        }
    }
    CHECK(s.teacher.val_velocity_loss < fresh_loss / count);
    CHECK(std::isnan(s.teacher.sample_ffd));  // val set below dim+1 features
}

TEST_CASE("distill: gamma2 zero reduces to pure reconstruction training") {
    auto& s = stack();
    TrainConfig cfg = s.cfg;
    cfg.weights.gamma2 = 0.0;
    DistillRun run(cfg, s.ae.ae, s.teacher.net);
    for (int i = 0; i < 2; ++i) {
        const auto b = run.step_auto(s.train);
        CHECK(b.grad_norm_tsd == 0.0);
        CHECK(b.tsd == 0.0);
        CHECK(b.tsm_component == 0.0);
        CHECK(b.vsd_component == 0.0);
        CHECK(b.recon_perceptual >= 0.0);
    }
}

TEST_CASE("distill: gamma1 ramps from 1 toward 2") {
    auto& s = stack();
    TrainConfig cfg = s.cfg;
    cfg.distill_steps = 4;
    cfg.gamma1_horizon = 4;
    DistillRun run(cfg, s.ae.ae, s.teacher.net);
    const auto b0 = run.step_auto(s.train);
    CHECK(b0.gamma1 == 1.0);
    (void)run.step_auto(s.train);
    (void)run.step_auto(s.train);
    (void)run.step_auto(s.train);
    CHECK(run.current_gamma1() == 2.0);
}

TEST_CASE("distill: phase switch drops the latent mse and enables the trajectory nodes") {
    auto& s = stack();
    DistillRun run(s.cfg, s.ae.ae, s.teacher.net);  // boundary at step 4 of 8
    int late_nodes = 0;
    for (int i = 0; i < 8; ++i) {
        const bool early = run.phase() == Phase::Early;
        const auto b = run.step_auto(s.train);
        if (early) {
            CHECK(b.recon_latent_mse > 0.0);
            CHECK(b.dasm_nodes == 0);
        } else {
            CHECK(b.recon_latent_mse == 0.0);
            late_nodes += b.dasm_nodes;
        }
    }
    CHECK(late_nodes > 0);
}

TEST_CASE("distill: teacher unchanged, both updates fire, no diffusion-loss leak") {
    auto& s = stack();
    TrainConfig cfg = s.cfg;
    cfg.distill_steps = 2;

    std::vector<Param<double>*> teacher_params;
    DistillRun run(cfg, s.ae.ae, s.teacher.net);
    run.teacher().collect_base(teacher_params);
    const uint64_t teacher_before = params_checksum(teacher_params);

    std::vector<Param<double>*> student_params = run.student().trainable_params();
    std::vector<Param<double>*> lora_params;
    run.lora().collect_lora(lora_params);
    const uint64_t student_0 = params_checksum(student_params);
    const uint64_t lora_0 = params_checksum(lora_params);
    (void)run.step_auto(s.train);
    const uint64_t student_1 = params_checksum(student_params);
    const uint64_t lora_1 = params_checksum(lora_params);
    CHECK(student_1 != student_0);
    CHECK(lora_1 != lora_0);
    CHECK(params_checksum(teacher_params) == teacher_before);

    // suppressing the replica update must not change the student's first step
    TrainConfig frozen = cfg;
    frozen.lora_lr = 0.0;
    DistillRun run_frozen(frozen, s.ae.ae, s.teacher.net);
    (void)run_frozen.step_auto(s.train);
    CHECK(params_checksum(run_frozen.student().trainable_params()) == student_1);
    std::vector<Param<double>*> lora_frozen;
    run_frozen.lora().collect_lora(lora_frozen);
    CHECK(params_checksum(lora_frozen) == lora_0);
}

TEST_CASE("distill: identical seeds give identical loss logs") {
    auto& s = stack();
    TrainConfig cfg = s.cfg;
    cfg.distill_steps = 5;
    DistillRun a(cfg, s.ae.ae, s.teacher.net);
    DistillRun b(cfg, s.ae.ae, s.teacher.net);
    for (int i = 0; i < 5; ++i)
        CHECK(a.step_auto(s.train).csv_row() == b.step_auto(s.train).csv_row());
}

TEST_CASE("distill: nan in parameters aborts the step with a snapshot") {
    auto& s = stack();
    DistillRun run(s.cfg, s.ae.ae, s.teacher.net);
    run.student().trainable_params()[0]->w.v[0] = std::nan("");
    CHECK_THROWS_WITH_AS(run.step_auto(s.train),
                         doctest::Contains("snapshot"), std::runtime_error);
}

TEST_CASE("distill end to end: artifacts, checksums, reload consistency") {
    auto& s = stack();
    const std::string dir = "/tmp/flowsr_test_distill";
    std::filesystem::remove_all(dir);
    TrainConfig cfg = s.cfg;
    cfg.distill_steps = 4;
    const auto result = distill(cfg, s.train, s.val, s.teacher.net, s.ae.ae, dir);

    CHECK(result.teacher_checksum_before == result.teacher_checksum_after);
    CHECK(result.decoder_checksum_before == result.decoder_checksum_after);
    CHECK(static_cast<int>(result.log_rows.size()) == cfg.distill_steps + 1);  // header
    CHECK(std::filesystem::exists(dir + "/train_log.csv"));
    CHECK(std::filesystem::exists(dir + "/val_report.csv"));
    CHECK(std::filesystem::exists(dir + "/student/manifest.json"));

    // recorded metrics are the persisted checkpoint's metrics, exactly
    auto persisted = load_student(dir + "/student");
    AutoEncoder<double> ae = s.ae.ae;
    const auto report = evaluate(persisted, s.val, ae);
    CHECK(report.mean_perceptual == result.val_perceptual);
    CHECK(report.mean_psnr == result.val_psnr);
    std::filesystem::remove_all(dir);
}
