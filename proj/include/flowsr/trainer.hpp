// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training phases: autoencoder pretraining, teacher flow-matching
// pretraining, and the alternating student/replica distillation loop.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flowsr/checkpoint.hpp"
#include "flowsr/dasm.hpp"
#include "flowsr/degradation.hpp"
#include "flowsr/losses.hpp"
#include "flowsr/metrics.hpp"

namespace flowsr {

struct TrainConfig {
    uint64_t seed = 1;

    // data
    int train_images = 128;
    int val_images = 40;
    int image_size = 64;
    DegradationRecipe recipe;

    // schedule
    int timesteps = 1000;  // T
    ScheduleKind sched_kind = ScheduleKind::Linear;
    double shift = 3.0;
    int t_lo = 50, t_hi = 950;

    // nets
    int ae_width = 16;
    int latent_channels = 4;
    int vnet_width = 24;
    int vnet_blocks = 2;
    int vnet_emb_dim = 32;
    int lora_rank = 4;
    double lora_scale = 1.0;
    int student_t_cond = 1000;

    // autoencoder phase
    int ae_steps = 6400;
    double ae_lr = 2e-3;

    // teacher phase
    int teacher_steps = 2400;
    double teacher_lr = 1e-3;
    double cond_dropout = 0.1;

    // distillation phase
    int distill_steps = 800;
    int batch = 4;
    double student_lr = 1e-4;
    double lora_lr = 2e-5;
    double phase_boundary_frac = 0.6;  // early->late switch
    int gamma1_horizon = 0;            // 0 = distill_steps
    LossWeights<double> weights;
    DasmConfig dasm;

    // optimizer
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;

    int checkpoint_every = 0;  // 0 = final only
    int log_every = 1;

    void validate() const;
    Json to_json() const;
    static TrainConfig from_json(const Json& j);
};

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    AdamW(std::vector<Param<double>*> params, double lr, double beta1, double beta2, double eps,
          double weight_decay);
    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    const std::vector<Param<double>*>& params() const { return params_; }

private:
    std::vector<Param<double>*> params_;
    std::vector<Tensor<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_, wd_;
    long t_ = 0;
};

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_grad_norm(const std::vector<Param<double>*>& params, double max_norm);

// Linear 1 -> 2 ramp, clamped at 2 beyond the horizon.
double ramp_gamma1(long step, long horizon);

struct AeTrainResult {
    AutoEncoder<double> ae;
    double val_psnr = 0;          // round-trip floor recorded at train time
    uint64_t decoder_checksum = 0;
    bool converged = true;
};

AeTrainResult train_autoencoder(const TrainConfig& cfg, const std::vector<ImagePair>& train,
                                const std::vector<ImagePair>& val);

struct TeacherTrainResult {
    VelocityNet<double> net;
    double val_velocity_loss = 0;
    double sample_ffd = 0;  // 20-step Euler samples vs dataset features
    bool converged = true;
};

TeacherTrainResult train_teacher(const TrainConfig& cfg, const std::vector<ImagePair>& train,
                                 const std::vector<ImagePair>& val, AutoEncoder<double>& ae);

// Euler sampling from pure noise with CFG; used for teacher validation.
Tensor<double> sample_latents(VelocityNet<double>& net, const TimestepSchedule<double>& sched,
                              int n, int h, int w, int steps, const std::vector<int>& cond,
                              double w_cfg, Rng& rng);

// One distillation run: owns the student, the adapted replica, both
// optimizers and the rng stream; step() performs exactly one student update
// followed by one replica update. Not movable: the optimizers hold pointers
// into the owned networks.
class DistillRun {
public:
    DistillRun(const TrainConfig& cfg, const AutoEncoder<double>& ae,
               const VelocityNet<double>& teacher);
    DistillRun(const DistillRun&) = delete;
    DistillRun& operator=(const DistillRun&) = delete;

    LossBreakdown step(const std::vector<const ImagePair*>& batch);

    // Draws the step's batch from the training set deterministically.
    LossBreakdown step_auto(const std::vector<ImagePair>& train);

    StudentModel<double>& student() { return student_; }
    VelocityNet<double>& lora() { return lora_; }
    VelocityNet<double>& teacher() { return teacher_; }
    AutoEncoder<double>& ae() { return ae_; }
    long step_count() const { return step_; }
    Phase phase() const;
    bool dasm_active() const;
    double current_gamma1() const;

private:
    std::string snapshot(const LossBreakdown& b) const;

    TrainConfig cfg_;
    TimestepSchedule<double> sched_;
    AutoEncoder<double> ae_;
    VelocityNet<double> teacher_;
    VelocityNet<double> lora_;
    StudentModel<double> student_;
    std::unique_ptr<AdamW> student_opt_, lora_opt_;
    long step_ = 0;
};

struct DistillResult {
    std::vector<std::string> log_rows;  // csv rows incl. header
    double val_perceptual = 0;
    double val_psnr = 0;
    uint64_t teacher_checksum_before = 0, teacher_checksum_after = 0;
    uint64_t decoder_checksum_before = 0, decoder_checksum_after = 0;
};

// Runs the full loop; when out_dir is non-empty, emits checkpoints, the CSV
// log and a manifest there. When run_out is given it receives the live run
// (student, replica, optimizers) for further inspection.
DistillResult distill(const TrainConfig& cfg, const std::vector<ImagePair>& train,
                      const std::vector<ImagePair>& val, const VelocityNet<double>& teacher,
                      const AutoEncoder<double>& ae, const std::string& out_dir,
                      std::unique_ptr<DistillRun>* run_out = nullptr);

}  // namespace flowsr
