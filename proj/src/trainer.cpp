// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "flowsr/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace flowsr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config.
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    recipe.validate();
    FLOWSR_REQUIRE(timesteps >= 2, "config: T must be >= 2");
    FLOWSR_REQUIRE(t_lo >= 1 && t_hi <= timesteps - 1 && t_lo <= t_hi,
                   "config: timestep bounds must satisfy 1 <= lo <= hi <= T-1");
    FLOWSR_REQUIRE(batch >= 1, "config: batch must be >= 1");
    FLOWSR_REQUIRE(weights.lambda >= 0.0 && weights.lambda <= 1.0,
                   "config: lambda must be in [0,1]");
    FLOWSR_REQUIRE(weights.gamma1 > 0.0 && weights.gamma2 >= 0.0, "config: invalid gammas");
    FLOWSR_REQUIRE(image_size % (recipe.downscale_factor * 4) == 0,
                   "config: image size must be divisible by downscale and reduction");
    FLOWSR_REQUIRE(phase_boundary_frac >= 0.0 && phase_boundary_frac <= 1.0,
                   "config: phase boundary fraction out of range");
    FLOWSR_REQUIRE(dasm.stride >= 1 && dasm.nodes >= 0 && dasm.t_floor >= 0,
                   "config: invalid dasm settings");
}

Json TrainConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["train_images"] = train_images;
    j["val_images"] = val_images;
    j["image_size"] = image_size;
    j["recipe"] = Json{{"blur_sigma_lo", recipe.blur_sigma_lo},
                       {"blur_sigma_hi", recipe.blur_sigma_hi},
                       {"downscale_factor", recipe.downscale_factor},
                       {"noise_sigma_lo", recipe.noise_sigma_lo},
                       {"noise_sigma_hi", recipe.noise_sigma_hi},
                       {"compression_block", recipe.compression_block},
                       {"compression_keep", recipe.compression_keep},
                       {"order_seed", recipe.order_seed}};
    j["timesteps"] = timesteps;
    j["sched_kind"] = sched_kind == ScheduleKind::Linear ? "linear" : "shifted";
    j["shift"] = shift;
    j["t_lo"] = t_lo;
    j["t_hi"] = t_hi;
    j["ae_width"] = ae_width;
    j["latent_channels"] = latent_channels;
    j["vnet_width"] = vnet_width;
    j["vnet_blocks"] = vnet_blocks;
    j["vnet_emb_dim"] = vnet_emb_dim;
    j["lora_rank"] = lora_rank;
    j["lora_scale"] = lora_scale;
    j["student_t_cond"] = student_t_cond;
    j["ae_steps"] = ae_steps;
    j["ae_lr"] = ae_lr;
    j["teacher_steps"] = teacher_steps;
    j["teacher_lr"] = teacher_lr;
    j["cond_dropout"] = cond_dropout;
    j["distill_steps"] = distill_steps;
    j["batch"] = batch;
    j["student_lr"] = student_lr;
    j["lora_lr"] = lora_lr;
    j["phase_boundary_frac"] = phase_boundary_frac;
    j["gamma1_horizon"] = gamma1_horizon;
    j["lambda"] = weights.lambda;
    j["gamma2"] = weights.gamma2;
    j["w_of_t"] = weights.w_of_t == WeightKind::Constant
                      ? "constant"
                      : (weights.w_of_t == WeightKind::SigmaSq ? "sigma_sq" : "snr");
    j["w_scale"] = weights.w_scale;
    j["cfg_weight"] = weights.w_cfg;
    j["dasm_nodes"] = dasm.nodes;
    j["dasm_stride"] = dasm.stride;
    j["dasm_weight_kind"] = dasm.weight_kind == NodeWeightKind::Uniform ? "uniform" : "decay";
    j["dasm_t_floor"] = dasm.t_floor;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["weight_decay"] = weight_decay;
    j["clip_norm"] = clip_norm;
    j["checkpoint_every"] = checkpoint_every;
    j["log_every"] = log_every;
    return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key);
    };
    get("seed", c.seed);
    get("train_images", c.train_images);
    get("val_images", c.val_images);
    get("image_size", c.image_size);
    if (j.contains("recipe")) {
        const Json& r = j.at("recipe");
        auto getr = [&](const char* key, auto& field) {
            if (r.contains(key)) field = r.at(key);
        };
        getr("blur_sigma_lo", c.recipe.blur_sigma_lo);
        getr("blur_sigma_hi", c.recipe.blur_sigma_hi);
        getr("downscale_factor", c.recipe.downscale_factor);
        getr("noise_sigma_lo", c.recipe.noise_sigma_lo);
        getr("noise_sigma_hi", c.recipe.noise_sigma_hi);
        getr("compression_block", c.recipe.compression_block);
        getr("compression_keep", c.recipe.compression_keep);
        getr("order_seed", c.recipe.order_seed);
    }
    get("timesteps", c.timesteps);
    if (j.contains("sched_kind"))
        c.sched_kind = j.at("sched_kind") == "shifted" ? ScheduleKind::Shifted
                                                       : ScheduleKind::Linear;
    get("shift", c.shift);
    get("t_lo", c.t_lo);
    get("t_hi", c.t_hi);
    get("ae_width", c.ae_width);
    get("latent_channels", c.latent_channels);
    get("vnet_width", c.vnet_width);
    get("vnet_blocks", c.vnet_blocks);
    get("vnet_emb_dim", c.vnet_emb_dim);
    get("lora_rank", c.lora_rank);
    get("lora_scale", c.lora_scale);
    get("student_t_cond", c.student_t_cond);
    get("ae_steps", c.ae_steps);
    get("ae_lr", c.ae_lr);
    get("teacher_steps", c.teacher_steps);
    get("teacher_lr", c.teacher_lr);
    get("cond_dropout", c.cond_dropout);
    get("distill_steps", c.distill_steps);
    get("batch", c.batch);
    get("student_lr", c.student_lr);
    get("lora_lr", c.lora_lr);
    get("phase_boundary_frac", c.phase_boundary_frac);
    get("gamma1_horizon", c.gamma1_horizon);
    get("lambda", c.weights.lambda);
    get("gamma2", c.weights.gamma2);
    if (j.contains("w_of_t")) {
        const std::string k = j.at("w_of_t");
        c.weights.w_of_t = k == "sigma_sq" ? WeightKind::SigmaSq
                                           : (k == "snr" ? WeightKind::Snr : WeightKind::Constant);
    }
    get("w_scale", c.weights.w_scale);
    get("cfg_weight", c.weights.w_cfg);
    get("dasm_nodes", c.dasm.nodes);
    get("dasm_stride", c.dasm.stride);
    if (j.contains("dasm_weight_kind"))
        c.dasm.weight_kind = j.at("dasm_weight_kind") == "decay" ? NodeWeightKind::Decay
                                                                 : NodeWeightKind::Uniform;
    get("dasm_t_floor", c.dasm.t_floor);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("weight_decay", c.weight_decay);
    get("clip_norm", c.clip_norm);
    get("checkpoint_every", c.checkpoint_every);
    get("log_every", c.log_every);
    return c;
}

// ---------------------------------------------------------------------------
// Optimizer.
// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Param<double>*> params, double lr, double beta1, double beta2,
             double eps, double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      wd_(weight_decay) {
    for (const auto* p : params_) {
        m_.emplace_back(p->w.n, p->w.c, p->w.h, p->w.w);
        v_.emplace_back(p->w.n, p->w.c, p->w.h, p->w.w);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
        auto* p = params_[i];
        if (!p->trainable) continue;
        for (size_t k = 0; k < p->w.v.size(); ++k) {
            const double g = p->g.v[k];
            m_[i].v[k] = beta1_ * m_[i].v[k] + (1.0 - beta1_) * g;
            v_[i].v[k] = beta2_ * v_[i].v[k] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i].v[k] / bc1;
            const double vhat = v_[i].v[k] / bc2;
            p->w.v[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->w.v[k]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

double clip_grad_norm(const std::vector<Param<double>*>& params, double max_norm) {
    double sq = 0;
    for (const auto* p : params) sq += sum_squares(p->g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto* p : params)
            for (auto& g : p->g.v) g *= scale;
    }
    return norm;
}

double ramp_gamma1(long step, long horizon) {
    FLOWSR_REQUIRE(horizon > 0, "ramp_gamma1: horizon must be positive");
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
    return 1.0 + frac;
}

// ---------------------------------------------------------------------------
// Autoencoder pretraining.
// ---------------------------------------------------------------------------

namespace {

Tensor<double> batch_hq(const std::vector<ImagePair>& pairs, const std::vector<int>& idx) {
    const auto& first = pairs[idx[0]].hq;
    Tensor<double> out(static_cast<int>(idx.size()), first.c, first.h, first.w);
    for (size_t i = 0; i < idx.size(); ++i) out.set_slice(static_cast<int>(i), pairs[idx[i]].hq);
    return out;
}

Tensor<double> batch_lq(const std::vector<ImagePair>& pairs, const std::vector<int>& idx) {
    const auto& first = pairs[idx[0]].lq;
    Tensor<double> out(static_cast<int>(idx.size()), first.c, first.h, first.w);
    for (size_t i = 0; i < idx.size(); ++i) out.set_slice(static_cast<int>(i), pairs[idx[i]].lq);
    return out;
}

std::vector<int> draw_indices(Rng& rng, int count, int n) {
    std::vector<int> idx(count);
    for (auto& i : idx) i = rng.uniform_int(0, n - 1);
    return idx;
}

// half-cosine decay to 5% of the base rate
double cosine_lr(double base, int step, int total) {
    const double t = static_cast<double>(step) / std::max(1, total);
    return base * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * t)));
}

}  // namespace

AeTrainResult train_autoencoder(const TrainConfig& cfg, const std::vector<ImagePair>& train,
                                const std::vector<ImagePair>& val) {
    cfg.validate();
    FLOWSR_REQUIRE(!train.empty() && !val.empty(), "train_autoencoder: empty dataset");
    AeTrainResult result;
    Rng init_rng(mix_seed(cfg.seed, 0xae));
    result.ae.init(cfg.ae_width, cfg.latent_channels, init_rng);

    std::vector<Param<double>*> params;
    result.ae.enc.collect_base(params);
    result.ae.dec.collect_base(params);
    AdamW opt(params, cfg.ae_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
              cfg.weight_decay);

    for (int step = 0; step < cfg.ae_steps; ++step) {
        Rng rng(mix_seed(cfg.seed, 0xae000 + step));
        const auto idx = draw_indices(rng, cfg.batch, static_cast<int>(train.size()));
        const Tensor<double> x = batch_hq(train, idx);
        opt.set_lr(cosine_lr(cfg.ae_lr, step, cfg.ae_steps));
        opt.zero_grad();
        Tensor<double> z = result.ae.enc.forward(x, true);
        Tensor<double> xhat = result.ae.dec.forward(z, true);
        Tensor<double> dxhat(xhat.n, xhat.c, xhat.h, xhat.w);
        const double numel = static_cast<double>(xhat.size());
        for (size_t i = 0; i < xhat.v.size(); ++i)
            dxhat.v[i] = 2.0 / numel * (xhat.v[i] - x.v[i]);
        result.ae.enc.backward(result.ae.dec.backward(dxhat));
        clip_grad_norm(params, cfg.clip_norm);
        opt.step();
    }

    double mean_psnr = 0;
    for (const auto& pair : val) {
        const ImageBuffer rec = result.ae.decode(result.ae.encode(pair.hq));
        mean_psnr += psnr_y(rec, pair.hq);
    }
    result.val_psnr = mean_psnr / static_cast<double>(val.size());
    result.ae.freeze_decoder();
    std::vector<Param<double>*> dec_params;
    result.ae.dec.collect_base(dec_params);
    result.decoder_checksum = params_checksum(dec_params);
    result.converged = result.val_psnr >= 24.0;
    return result;
}

// ---------------------------------------------------------------------------
// Teacher pretraining (flow matching with conditioning dropout).
// ---------------------------------------------------------------------------

Tensor<double> sample_latents(VelocityNet<double>& net, const TimestepSchedule<double>& sched,
                              int n, int h, int w, int steps, const std::vector<int>& cond,
                              double w_cfg, Rng& rng) {
    Tensor<double> z = rng.normal_tensor<double>(n, net.cfg.latent_channels, h, w);
    const int T = sched.steps;
    for (int k = 0; k < steps; ++k) {
        const int t_cur = T - (T * k) / steps;
        const int t_next = T - (T * (k + 1)) / steps;
        const std::vector<int> tv(static_cast<size_t>(n), t_cur);
        Tensor<double> v = cfg_predict(net, z, tv, cond, 0, w_cfg);
        z = euler_step(z, v, t_cur, t_next, sched);
    }
    return z;
}

TeacherTrainResult train_teacher(const TrainConfig& cfg, const std::vector<ImagePair>& train,
                                 const std::vector<ImagePair>& val, AutoEncoder<double>& ae) {
    cfg.validate();
    TeacherTrainResult result;
    VelocityNetConfig<double> vcfg;
    vcfg.latent_channels = cfg.latent_channels;
    vcfg.width = cfg.vnet_width;
    vcfg.blocks = cfg.vnet_blocks;
    vcfg.emb_dim = cfg.vnet_emb_dim;
    vcfg.num_classes = kNumShapeClasses;
    Rng init_rng(mix_seed(cfg.seed, 0x7ea));
    result.net.init(vcfg, init_rng);

    const auto sched = make_schedule<double>(cfg.timesteps, cfg.sched_kind, cfg.shift);

    // latents precomputed once; the autoencoder is frozen from here on
    std::vector<Tensor<double>> latents(train.size());
    for (size_t i = 0; i < train.size(); ++i) latents[i] = ae.encode(train[i].hq);

    std::vector<Param<double>*> params;
    result.net.collect_base(params);
    AdamW opt(params, cfg.teacher_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
              cfg.weight_decay);

    for (int step = 0; step < cfg.teacher_steps; ++step) {
        Rng rng(mix_seed(cfg.seed, 0x7ea000 + step));
        const auto idx = draw_indices(rng, cfg.batch, static_cast<int>(train.size()));
        Tensor<double> z0(cfg.batch, cfg.latent_channels, latents[0].h, latents[0].w);
        std::vector<int> cond(cfg.batch);
        for (int i = 0; i < cfg.batch; ++i) {
            z0.set_slice(i, latents[idx[i]]);
            cond[i] = rng.uniform() < cfg.cond_dropout ? 0 : train[idx[i]].class_id;
        }
        std::vector<int> t(cfg.batch);
        for (auto& ti : t) ti = rng.uniform_int(1, cfg.timesteps - 1);
        Tensor<double> eps = rng.normal_tensor<double>(cfg.batch, z0.c, z0.h, z0.w);
        const Tensor<double> z_t = add_noise(z0, eps, t, sched);
        const Tensor<double> target = velocity_target(z0, eps);

        opt.set_lr(cosine_lr(cfg.teacher_lr, step, cfg.teacher_steps));
        opt.zero_grad();
        Tensor<double> pred = result.net.forward(z_t, t, cond, true);
        Tensor<double> dpred(pred.n, pred.c, pred.h, pred.w);
        const double numel = static_cast<double>(pred.size());
        for (size_t i = 0; i < pred.v.size(); ++i)
            dpred.v[i] = 2.0 / numel * (pred.v[i] - target.v[i]);
        result.net.backward(dpred);
        clip_grad_norm(params, cfg.clip_norm);
        opt.step();
    }

    // validation: velocity regression loss over a fixed draw per val image
    Rng vrng(mix_seed(cfg.seed, 0x7eaeff));
    double vloss = 0;
    int vcount = 0;
    for (const auto& pair : val) {
        const Tensor<double> z0 = ae.encode(pair.hq);
        for (int rep = 0; rep < 4; ++rep) {
            const int t = vrng.uniform_int(1, cfg.timesteps - 1);
            const auto pairing = make_noise_pairing(z0, t, vrng);
            const Tensor<double> z_t = add_noise(z0, pairing.eps, t, sched);
            const std::vector<int> tv{t};
            const std::vector<int> cv{pair.class_id};
            Tensor<double> pred = result.net.forward(z_t, tv, cv, false);
            vloss += mean_squared_diff(pred, pairing.target_velocity);
            ++vcount;
        }
    }
    result.val_velocity_loss = vloss / vcount;

    // validation: 20-step Euler samples vs the val set in feature space
    const int lat_h = val[0].hq.h / 4, lat_w = val[0].hq.w / 4;
    std::vector<int> sample_cond(val.size());
    for (size_t i = 0; i < val.size(); ++i) sample_cond[i] = val[i].class_id;
    Rng srng(mix_seed(cfg.seed, 0x5a3));
    Tensor<double> sampled = sample_latents(result.net, sched, static_cast<int>(val.size()),
                                            lat_h, lat_w, 20, sample_cond, 2.0, srng);
    std::vector<std::vector<double>> gen_feats, data_feats;
    for (size_t i = 0; i < val.size(); ++i) {
        const ImageBuffer img = ae.decode(sampled.slice(static_cast<int>(i)));
        gen_feats.push_back(pooled_features(img, ae.enc));
        data_feats.push_back(pooled_features(val[i].hq, ae.enc));
    }
    result.sample_ffd = static_cast<int>(val.size()) >= pooled_feature_dim(ae.enc) + 1
                            ? frechet_from_features(gen_feats, data_feats)
                            : std::nan("");
    result.net.set_base_trainable(false);
    return result;
}

// ---------------------------------------------------------------------------
// Distillation.
// ---------------------------------------------------------------------------

DistillRun::DistillRun(const TrainConfig& cfg, const AutoEncoder<double>& ae,
                       const VelocityNet<double>& teacher)
    : cfg_(cfg), ae_(ae), teacher_(teacher) {
    cfg_.validate();
    sched_ = make_schedule<double>(cfg.timesteps, cfg.sched_kind, cfg.shift);
    ae_.freeze_decoder();
    teacher_.set_base_trainable(false);
    lora_ = lora_wrap(teacher_, cfg.lora_rank, cfg.lora_scale, mix_seed(cfg.seed, 0x10a));
    VelocityNetConfig<double> den_cfg;
    den_cfg.latent_channels = cfg.latent_channels;
    den_cfg.width = cfg.vnet_width;
    den_cfg.blocks = cfg.vnet_blocks;
    den_cfg.emb_dim = cfg.vnet_emb_dim;
    den_cfg.num_classes = kNumShapeClasses;
    student_.init(ae_, den_cfg, cfg.lora_rank, cfg.lora_scale, cfg.recipe.downscale_factor,
                  cfg.student_t_cond, mix_seed(cfg.seed, 0x57d));
    student_opt_ = std::make_unique<AdamW>(student_.trainable_params(), cfg.student_lr,
                                           cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                                           cfg.weight_decay);
    std::vector<Param<double>*> lora_params;
    lora_.collect_lora(lora_params);
    lora_opt_ = std::make_unique<AdamW>(lora_params, cfg.lora_lr, cfg.adam_beta1,
                                        cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
}

Phase DistillRun::phase() const {
    const long boundary = static_cast<long>(cfg_.phase_boundary_frac * cfg_.distill_steps);
    return step_ < boundary ? Phase::Early : Phase::Late;
}

bool DistillRun::dasm_active() const { return phase() == Phase::Late && cfg_.dasm.nodes > 0; }

double DistillRun::current_gamma1() const {
    const long horizon = cfg_.gamma1_horizon > 0 ? cfg_.gamma1_horizon : cfg_.distill_steps;
    return ramp_gamma1(step_, horizon);
}

LossBreakdown DistillRun::step(const std::vector<const ImagePair*>& batch) {
    FLOWSR_REQUIRE(!batch.empty(), "distill_step: empty batch");
    const int n = static_cast<int>(batch.size());
    Rng rng(mix_seed(cfg_.seed, 0xd15000 + static_cast<uint64_t>(step_)));

    Tensor<double> x_lq(n, 3, batch[0]->lq.h, batch[0]->lq.w);
    Tensor<double> x_hq(n, 3, batch[0]->hq.h, batch[0]->hq.w);
    std::vector<int> cond(n);
    for (int i = 0; i < n; ++i) {
        x_lq.set_slice(i, batch[i]->lq);
        x_hq.set_slice(i, batch[i]->hq);
        cond[i] = batch[i]->class_id;
    }

    LossBreakdown out;
    out.step = step_;
    LossWeights<double> weights = cfg_.weights;
    weights.gamma1 = current_gamma1();
    out.gamma1 = weights.gamma1;
    const Phase ph = phase();

    // (1) one-step student forward
    student_opt_->zero_grad();
    auto student_out = student_.forward(x_lq, true);
    const Tensor<double> z = ae_.encode(x_hq);

    // (3) shared noise draw for both branches
    std::vector<int> t(n);
    for (auto& ti : t) ti = sample_timestep(rng, cfg_.t_lo, cfg_.t_hi, sched_);
    Tensor<double> eps = rng.normal_tensor<double>(n, z.c, z.h, z.w);
    const Tensor<double> zhat_t = add_noise(student_out.zhat, eps, t, sched_);
    const Tensor<double> z_t = add_noise(z, eps, t, sched_);

    // (2) reconstruction loss per phase
    auto recon = reconstruction_eval(student_out.xhat, x_hq, zhat_t, z_t, t, weights, ph,
                                     ae_.enc, sched_, true);
    out.recon_perceptual = recon.perceptual;
    out.recon_latent_mse = recon.latent_mse;
    out.grad_norm_recon = std::sqrt(sum_squares(recon.grad_xhat) +
                                    (recon.grad_zhat.empty() ? 0.0
                                                             : sum_squares(recon.grad_zhat)));

    // (4) base TSD gradient plus trajectory accumulation
    Tensor<double> grad_zhat = recon.grad_zhat;
    if (grad_zhat.empty()) grad_zhat = Tensor<double>(z.n, z.c, z.h, z.w);
    if (weights.gamma2 > 0.0 && weights.w_scale != 0.0) {
        auto parts = tsd_gradient_parts_at(zhat_t, z_t, teacher_, lora_, t, cond, weights,
                                           sched_);
        out.tsm_component = parts.tsm_msq;
        out.vsd_component = parts.vsd_msq;
        Tensor<double> reg = std::move(parts.grad);
        double tsd_log = parts.tsd_msq;
        if (dasm_active()) {
            for (int i = 0; i < n; ++i) {
                const Tensor<double> zh_i = zhat_t.slice(i);
                const Tensor<double> zr_i = z_t.slice(i);
                auto traj = rollout(zh_i, zr_i, t[i], cfg_.dasm, lora_, teacher_, cond[i],
                                    sched_, weights);
                Tensor<double> node_sum(1, z.c, z.h, z.w);
                for (const auto& node : traj) {
                    Tensor<double> g =
                        tsd_gradient_at(node.z_hat_t, node.z_t, teacher_, lora_,
                                        std::vector<int>{node.t}, std::vector<int>{cond[i]},
                                        weights, sched_);
                    add_scaled(node_sum, g, node.weight);
                    tsd_log += node.weight * sum_squares(g) / static_cast<double>(g.size());
                    ++out.dasm_nodes;
                }
                const size_t stride = reg.size() / n;
                for (size_t k = 0; k < stride; ++k) reg.v[i * stride + k] += node_sum.v[k];
            }
        }
        out.tsd = tsd_log;
        // mean-loss convention: the injected score gradient is averaged over
        // batch and latent elements, like every other loss gradient here
        const double scale = weights.gamma2 / static_cast<double>(reg.size());
        out.grad_norm_tsd = scale * norm2(reg);
        add_scaled(grad_zhat, reg, scale);
    }

    if (!std::isfinite(out.recon_perceptual) || !std::isfinite(out.recon_latent_mse) ||
        !std::isfinite(out.tsd) || !std::isfinite(out.grad_norm_recon) ||
        !std::isfinite(out.grad_norm_tsd)) {
        throw_runtime("distill_step: non-finite loss; snapshot: " + snapshot(out));
    }

    // (5) student update on L_Rec + gamma2 * L_Reg
    student_.backward(recon.grad_xhat, grad_zhat);
    clip_grad_norm(student_opt_->params(), cfg_.clip_norm);
    student_opt_->step();

    // (6) replica update on the detached latent with a fresh draw
    lora_opt_->zero_grad();
    std::vector<int> t2(n);
    for (auto& ti : t2) ti = sample_timestep(rng, cfg_.t_lo, cfg_.t_hi, sched_);
    Tensor<double> eps2 = rng.normal_tensor<double>(n, z.c, z.h, z.w);
    out.lora_diffusion =
        lora_diffusion_loss(lora_, student_out.zhat, t2, eps2, cond, sched_, true);
    out.grad_norm_lora = clip_grad_norm(lora_opt_->params(), cfg_.clip_norm);
    if (!std::isfinite(out.lora_diffusion))
        throw_runtime("distill_step: non-finite diffusion loss; snapshot: " + snapshot(out));
    lora_opt_->step();

    ++step_;
    return out;
}

LossBreakdown DistillRun::step_auto(const std::vector<ImagePair>& train) {
    Rng rng(mix_seed(cfg_.seed, 0xba7c000 + static_cast<uint64_t>(step_)));
    const auto idx = draw_indices(rng, cfg_.batch, static_cast<int>(train.size()));
    std::vector<const ImagePair*> batch;
    batch.reserve(idx.size());
    for (int i : idx) batch.push_back(&train[i]);
    return step(batch);
}

std::string DistillRun::snapshot(const LossBreakdown& b) const {
    Json j{{"step", b.step},
           {"recon_perceptual", b.recon_perceptual},
           {"recon_latent_mse", b.recon_latent_mse},
           {"tsd", b.tsd},
           {"lora_diffusion", b.lora_diffusion},
           {"grad_norm_recon", b.grad_norm_recon},
           {"grad_norm_tsd", b.grad_norm_tsd},
           {"grad_norm_lora", b.grad_norm_lora}};
    return j.dump();
}

DistillResult distill(const TrainConfig& cfg, const std::vector<ImagePair>& train,
                      const std::vector<ImagePair>& val, const VelocityNet<double>& teacher,
                      const AutoEncoder<double>& ae, const std::string& out_dir,
                      std::unique_ptr<DistillRun>* run_out) {
    FLOWSR_REQUIRE(!train.empty() && !val.empty(), "distill: empty dataset");
    DistillResult result;
    auto run_ptr = std::make_unique<DistillRun>(cfg, ae, teacher);
    DistillRun& run = *run_ptr;

    std::vector<Param<double>*> teacher_params, decoder_params;
    run.teacher().collect_base(teacher_params);
    run.student().decoder.collect_base(decoder_params);
    result.teacher_checksum_before = params_checksum(teacher_params);
    result.decoder_checksum_before = params_checksum(decoder_params);

    result.log_rows.push_back(LossBreakdown::csv_header());
    for (int s = 0; s < cfg.distill_steps; ++s) {
        const LossBreakdown b = run.step_auto(train);
        if (cfg.log_every > 0 && b.step % cfg.log_every == 0)
            result.log_rows.push_back(b.csv_row());
        if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
            (s + 1) % cfg.checkpoint_every == 0) {
            save_student(out_dir + "/student_step" + std::to_string(s + 1), run.student(),
                         Json{{"step", s + 1}});
        }
    }

    result.teacher_checksum_after = params_checksum(teacher_params);
    result.decoder_checksum_after = params_checksum(decoder_params);

    // Validation metrics are reported for the persisted artifact: when a
    // checkpoint is written, evaluate its reload rather than the transient
    // in-memory weights.
    MetricsReport report;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        save_student(out_dir + "/student", run.student(), Json{{"step", cfg.distill_steps}});
        auto persisted = load_student(out_dir + "/student");
        report = evaluate(persisted, val, run.ae());
    } else {
        report = evaluate(run.student(), val, run.ae());
    }
    result.val_perceptual = report.mean_perceptual;
    result.val_psnr = report.mean_psnr;

    if (!out_dir.empty()) {
        std::ofstream log(out_dir + "/train_log.csv");
        for (const auto& row : result.log_rows) log << row << "\n";
        {
            Json m = read_manifest(out_dir + "/student");
            m["val_perceptual"] = result.val_perceptual;
            m["val_psnr"] = result.val_psnr;
            write_manifest(out_dir + "/student", m);
        }
        write_report_csv(out_dir + "/val_report.csv", report);
        Json manifest;
        manifest["config"] = cfg.to_json();
        manifest["teacher_checksum"] = result.teacher_checksum_after;
        manifest["decoder_checksum"] = result.decoder_checksum_after;
        manifest["val_perceptual"] = result.val_perceptual;
        manifest["val_psnr"] = result.val_psnr;
        write_manifest(out_dir, manifest);
    }
    if (run_out) *run_out = std::move(run_ptr);
    return result;
}

}  // namespace flowsr
