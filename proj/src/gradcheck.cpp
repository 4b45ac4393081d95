// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "flowsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "flowsr/dasm.hpp"
#include "flowsr/losses.hpp"
#include "flowsr/trainer.hpp"

namespace flowsr {

namespace {

// ---------------------------------------------------------------------------
// Micro fixtures: every network in the stack at a few hundred parameters so
// central differences over all of them stay fast.
// ---------------------------------------------------------------------------

template <typename T>
struct MicroRig {
    TimestepSchedule<T> sched;
    AutoEncoder<T> ae;
    VelocityNet<T> teacher;
    VelocityNet<T> lora;
    StudentModel<T> student;
    Tensor<T> x_lq, x_hq;
    Tensor<T> z;  // encoded HQ latent
    std::vector<int> t;
    Tensor<T> eps;
    std::vector<int> cond;
    LossWeights<T> weights;
};

template <typename T>
void perturb(std::vector<Param<T>*> params, Rng& rng, double scale) {
    for (auto* p : params)
        for (auto& w : p->w.v) w += static_cast<T>(scale * rng.normal());
}

template <typename T>
MicroRig<T> make_rig(uint64_t seed) {
    MicroRig<T> rig;
    rig.sched = make_schedule<T>(50, ScheduleKind::Linear);
    Rng rng(seed);
    rig.ae.init(/*width=*/4, /*lat_c=*/2, rng);
    rig.ae.freeze_decoder();

    VelocityNetConfig<T> vcfg;
    vcfg.latent_channels = 2;
    vcfg.width = 4;
    vcfg.blocks = 1;
    vcfg.emb_dim = 8;
    vcfg.num_classes = 2;
    Rng trng(mix_seed(seed, 1));
    rig.teacher.init(vcfg, trng);
    rig.teacher.set_base_trainable(false);
    rig.lora = lora_wrap(rig.teacher, /*rank=*/2, T(1), mix_seed(seed, 2));
    {
        // move the adapters off the zero point so the replica differs
        std::vector<Param<T>*> lp;
        rig.lora.collect_lora(lp);
        Rng prng(mix_seed(seed, 3));
        perturb(lp, prng, 0.1);
    }

    rig.student.init(rig.ae, vcfg, /*lora_rank=*/1, T(1), /*upscale=*/4,
                     /*t_cond=*/rig.sched.steps, mix_seed(seed, 4));
    {
        Rng prng(mix_seed(seed, 5));
        perturb(rig.student.trainable_params(), prng, 0.05);
    }

    Rng drng(mix_seed(seed, 6));
    rig.x_lq = Tensor<T>(1, 3, 2, 2);
    rig.x_hq = Tensor<T>(1, 3, 8, 8);
    for (auto& v : rig.x_lq.v) v = static_cast<T>(drng.uniform());
    for (auto& v : rig.x_hq.v) v = static_cast<T>(drng.uniform());
    rig.z = rig.ae.encode(rig.x_hq);
    rig.t = {drng.uniform_int(5, 45)};
    rig.eps = drng.normal_tensor<T>(1, 2, 2, 2);
    rig.cond = {drng.uniform_int(1, 2)};
    rig.weights.lambda = T(0.3);
    rig.weights.w_cfg = T(1.5);
    return rig;
}

// relative error of an analytic gradient against a reference, normalized by
// the largest reference component
double rel_err(const std::vector<double>& analytic, const std::vector<double>& reference) {
    double max_ref = 0, max_diff = 0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        max_ref = std::max(max_ref, std::abs(reference[i]));
        max_diff = std::max(max_diff, std::abs(analytic[i] - reference[i]));
    }
    return max_diff / std::max(max_ref, 1e-12);
}

template <typename T>
std::vector<double> flatten_grads(const std::vector<Param<T>*>& params) {
    std::vector<double> out;
    for (const auto* p : params)
        for (const auto& g : p->g.v) out.push_back(static_cast<double>(g));
    return out;
}

template <typename T>
std::vector<double> central_differences(const std::vector<Param<T>*>& params,
                                        const std::function<double()>& loss, double h) {
    std::vector<double> out;
    for (auto* p : params)
        for (auto& w : p->w.v) {
            const T orig = w;
            w = orig + static_cast<T>(h);
            const double lp = loss();
            w = orig - static_cast<T>(h);
            const double lm = loss();
            w = orig;
            out.push_back((lp - lm) / (2.0 * h));
        }
    return out;
}

template <typename T>
void zero_grads(const std::vector<Param<T>*>& params) {
    for (auto* p : params) p->zero_grad();
}

struct Tols {
    double h;
    double fd;
    double identity;
    double exactness;  // scheduler/dasm accumulation comparisons
};

Tols tolerances(bool f32) {
    if (f32) return {1e-2, 1e-2, 1e-3, 1e-3};
    return {1e-4, 1e-4, 1e-6, 1e-6};
}

// ---------------------------------------------------------------------------
// Oracles.
// ---------------------------------------------------------------------------

template <typename T>
OracleResult oracle_tsd_identity(bool f32) {
    OracleResult res{"tsd-identity", 0, tolerances(f32).identity, false,
                     "tsd = (1-lambda) tsm + lambda vsd over 20 fixtures"};
    const double lambdas[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int fixture = 0; fixture < 20; ++fixture) {
        MicroRig<T> rig = make_rig<T>(1000 + fixture);
        Rng zr(mix_seed(77, fixture));
        Tensor<T> zhat = zr.normal_tensor<T>(1, 2, 2, 2);
        for (double lam : lambdas) {
            LossWeights<T> w = rig.weights;
            w.lambda = static_cast<T>(lam);
            Tensor<T> tsd = tsd_gradient(zhat, rig.z, rig.teacher, rig.lora, rig.t, rig.eps,
                                         rig.cond, w, rig.sched);
            Tensor<T> tsm = tsm_gradient(zhat, rig.z, rig.teacher, rig.t, rig.eps, rig.cond, w,
                                         rig.sched);
            Tensor<T> vsd = vsd_gradient(zhat, rig.teacher, rig.lora, rig.t, rig.eps, rig.cond,
                                         w, rig.sched);
            double max_ref = 0, max_diff = 0;
            for (size_t i = 0; i < tsd.v.size(); ++i) {
                const double blend = (1.0 - lam) * static_cast<double>(tsm.v[i]) +
                                     lam * static_cast<double>(vsd.v[i]);
                max_ref = std::max(max_ref, std::abs(blend));
                max_diff = std::max(max_diff, std::abs(static_cast<double>(tsd.v[i]) - blend));
            }
            res.max_rel_err = std::max(res.max_rel_err, max_diff / std::max(max_ref, 1e-12));
        }
    }
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

enum class ScoreKind { Vsd, Tsm, Tsd };

template <typename T>
OracleResult oracle_fd_score(ScoreKind kind, bool f32) {
    const char* name = kind == ScoreKind::Vsd ? "fd-vsd"
                                              : (kind == ScoreKind::Tsm ? "fd-tsm" : "fd-tsd");
    const Tols tol = tolerances(f32);
    OracleResult res{name, 0, tol.fd, false,
                     "surrogate <stopgrad(residual), zhat> vs central differences"};
    for (int fixture = 0; fixture < 3; ++fixture) {
        MicroRig<T> rig = make_rig<T>(2000 + fixture);
        auto params = rig.student.trainable_params();

        auto zhat0 = rig.student.forward(rig.x_lq, false).zhat;
        Tensor<T> resid;
        if (kind == ScoreKind::Vsd)
            resid = vsd_gradient(zhat0, rig.teacher, rig.lora, rig.t, rig.eps, rig.cond,
                                 rig.weights, rig.sched);
        else if (kind == ScoreKind::Tsm)
            resid = tsm_gradient(zhat0, rig.z, rig.teacher, rig.t, rig.eps, rig.cond,
                                 rig.weights, rig.sched);
        else
            resid = tsd_gradient(zhat0, rig.z, rig.teacher, rig.lora, rig.t, rig.eps, rig.cond,
                                 rig.weights, rig.sched);

        zero_grads(params);
        (void)rig.student.forward(rig.x_lq, true);
        rig.student.backward(Tensor<T>(), resid);
        const auto analytic = flatten_grads(params);

        auto loss = [&]() {
            return dot(resid, rig.student.forward(rig.x_lq, false).zhat);
        };
        const auto fd = central_differences(params, loss, tol.h);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, fd));
    }
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

template <typename T>
OracleResult oracle_fd_recon(bool f32) {
    const Tols tol = tolerances(f32);
    OracleResult res{"fd-recon", 0, tol.fd, false,
                     "reconstruction loss gradient vs central differences"};
    for (int fixture = 0; fixture < 2; ++fixture) {
        MicroRig<T> rig = make_rig<T>(3000 + fixture);
        auto params = rig.student.trainable_params();
        const Tensor<T> z_t = add_noise(rig.z, rig.eps, rig.t, rig.sched);

        auto loss = [&]() {
            auto out = rig.student.forward(rig.x_lq, false);
            const Tensor<T> zhat_t = add_noise(out.zhat, rig.eps, rig.t, rig.sched);
            return reconstruction_loss(out.xhat, rig.x_hq, zhat_t, z_t, rig.t, rig.weights,
                                       Phase::Early, rig.ae.enc, rig.sched);
        };

        zero_grads(params);
        auto out = rig.student.forward(rig.x_lq, true);
        const Tensor<T> zhat_t = add_noise(out.zhat, rig.eps, rig.t, rig.sched);
        auto recon = reconstruction_eval(out.xhat, rig.x_hq, zhat_t, z_t, rig.t, rig.weights,
                                         Phase::Early, rig.ae.enc, rig.sched, true);
        rig.student.backward(recon.grad_xhat, recon.grad_zhat);
        const auto analytic = flatten_grads(params);
        const auto fd = central_differences(params, loss, tol.h);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, fd));
    }
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

template <typename T>
OracleResult oracle_fd_lora(bool f32) {
    const Tols tol = tolerances(f32);
    OracleResult res{"fd-lora", 0, tol.fd, false,
                     "replica diffusion loss gradient vs central differences"};
    for (int fixture = 0; fixture < 2; ++fixture) {
        MicroRig<T> rig = make_rig<T>(4000 + fixture);
        const Tensor<T> zhat = rig.student.forward(rig.x_lq, false).zhat;
        std::vector<Param<T>*> params;
        rig.lora.collect_lora(params);

        zero_grads(params);
        (void)lora_diffusion_loss(rig.lora, zhat, rig.t, rig.eps, rig.cond, rig.sched, true);
        const auto analytic = flatten_grads(params);

        auto loss = [&]() {
            return lora_diffusion_loss(rig.lora, zhat, rig.t, rig.eps, rig.cond, rig.sched,
                                       false);
        };
        const auto fd = central_differences(params, loss, tol.h);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, fd));
    }
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

template <typename T>
OracleResult oracle_zero_sentinels(bool) {
    OracleResult res{"zero-sentinels", 0, 0.0, false,
                     "tsm at zhat=z, vsd with fresh adapters, w(t)=0: all exactly zero"};
    MicroRig<T> rig = make_rig<T>(5000);

    Tensor<T> tsm = tsm_gradient(rig.z, rig.z, rig.teacher, rig.t, rig.eps, rig.cond,
                                 rig.weights, rig.sched);
    for (const auto& v : tsm.v)
        res.max_rel_err = std::max(res.max_rel_err, std::abs(static_cast<double>(v)));

    VelocityNet<T> fresh = lora_wrap(rig.teacher, 2, T(1), 99);
    Tensor<T> zhat = rig.student.forward(rig.x_lq, false).zhat;
    Tensor<T> vsd = vsd_gradient(zhat, rig.teacher, fresh, rig.t, rig.eps, rig.cond,
                                 rig.weights, rig.sched);
    for (const auto& v : vsd.v)
        res.max_rel_err = std::max(res.max_rel_err, std::abs(static_cast<double>(v)));

    LossWeights<T> wz = rig.weights;
    wz.w_scale = T(0);
    Tensor<T> g1 = vsd_gradient(zhat, rig.teacher, rig.lora, rig.t, rig.eps, rig.cond, wz,
                                rig.sched);
    Tensor<T> g2 = tsm_gradient(zhat, rig.z, rig.teacher, rig.t, rig.eps, rig.cond, wz,
                                rig.sched);
    Tensor<T> g3 = tsd_gradient(zhat, rig.z, rig.teacher, rig.lora, rig.t, rig.eps, rig.cond,
                                wz, rig.sched);
    for (const auto* g : {&g1, &g2, &g3})
        for (const auto& v : g->v)
            res.max_rel_err = std::max(res.max_rel_err, std::abs(static_cast<double>(v)));

    res.pass = res.max_rel_err == 0.0;
    return res;
}

template <typename T>
OracleResult oracle_sched_recon(bool f32) {
    const Tols tol = tolerances(f32);
    OracleResult res{"sched-recon", 0, tol.exactness, false,
                     "euler stepping with the exact velocity recovers z0; boundaries exact"};
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Shifted}) {
        const auto sched = make_schedule<T>(1000, kind, T(3));
        if (sched.sigma(0) != T(0) || sched.sigma(1000) != T(1)) {
            res.note = "boundary sigma not exact";
            res.max_rel_err = 1.0;
            res.pass = false;
            return res;
        }
        Rng rng(kind == ScheduleKind::Linear ? 11 : 12);
        const Tensor<T> z0 = rng.normal_tensor<T>(1, 2, 3, 3);
        const Tensor<T> eps = rng.normal_tensor<T>(1, 2, 3, 3);
        const Tensor<T> v = velocity_target(z0, eps);

        Tensor<T> z = add_noise(z0, eps, 1000, sched);
        z = euler_step(z, v, 1000, 0, sched);  // single jump
        double scale = 0;
        for (const auto& x : z0.v) scale = std::max(scale, std::abs(static_cast<double>(x)));
        res.max_rel_err = std::max(res.max_rel_err, max_abs_diff(z, z0) / scale);

        z = add_noise(z0, eps, 1000, sched);  // stride-7 composition
        int t = 1000;
        while (t > 0) {
            const int t_prev = std::max(0, t - 7);
            z = euler_step(z, v, t, t_prev, sched);
            t = t_prev;
        }
        res.max_rel_err = std::max(res.max_rel_err, max_abs_diff(z, z0) / scale);
    }
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

template <typename T>
OracleResult oracle_dasm_sum(bool f32) {
    const Tols tol = tolerances(f32);
    OracleResult res{"dasm-sum", 0, tol.exactness, false,
                     "accumulate_tsd equals base + weighted per-node gradients, incl. floor"};
    MicroRig<T> rig = make_rig<T>(6000);
    const auto sched = make_schedule<T>(1000, ScheduleKind::Linear);
    Rng rng(13);
    struct Case {
        int n, t;
    };
    const Case cases[] = {{1, 500}, {2, 500}, {4, 500}, {4, 120}};  // last hits the floor
    for (const auto& c : cases) {
        DasmConfig dc;
        dc.nodes = c.n;
        dc.stride = 50;
        dc.t_floor = 50;
        TrajectorySample<T> base;
        base.z_hat_t = rng.normal_tensor<T>(1, 2, 2, 2);
        base.z_t = rng.normal_tensor<T>(1, 2, 2, 2);
        base.t = c.t;
        const auto traj = rollout(base.z_hat_t, base.z_t, base.t, dc, rig.lora, rig.teacher,
                                  rig.cond[0], sched, rig.weights);
        if (c.t == 120 && (traj.size() != 1 || traj[0].t != 70)) {
            res.note = "floor-skip trajectory wrong";
            res.max_rel_err = 1.0;
            res.pass = false;
            return res;
        }
        Tensor<T> total = accumulate_tsd(base, traj, rig.teacher, rig.lora, rig.cond[0],
                                         rig.weights, sched);
        // brute force: independent per-node evaluations
        Tensor<T> brute =
            tsd_gradient_at(base.z_hat_t, base.z_t, rig.teacher, rig.lora,
                            std::vector<int>{base.t}, rig.cond, rig.weights, sched);
        for (const auto& node : traj) {
            Tensor<T> g = tsd_gradient_at(node.z_hat_t, node.z_t, rig.teacher, rig.lora,
                                          std::vector<int>{node.t}, rig.cond, rig.weights,
                                          sched);
            add_scaled(brute, g, node.weight);
        }
        double max_ref = 0;
        for (const auto& x : brute.v)
            max_ref = std::max(max_ref, std::abs(static_cast<double>(x)));
        res.max_rel_err =
            std::max(res.max_rel_err, max_abs_diff(total, brute) / std::max(max_ref, 1e-12));
    }
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

template <typename T>
OracleResult oracle_tsm_pred_space(bool f32) {
    const Tols tol = tolerances(f32);
    OracleResult res{"tsm-pred-space", 0, tol.fd, false,
                     "tsm equals the prediction-space gradient of the mse form (Jacobian "
                     "omitted), fd in prediction space"};
    MicroRig<T> rig = make_rig<T>(7000);
    Rng rng(14);
    const Tensor<T> zhat = rng.normal_tensor<T>(1, 2, 2, 2);
    const Tensor<T> zhat_t = add_noise(zhat, rig.eps, rig.t[0], rig.sched);
    const Tensor<T> z_t = add_noise(rig.z, rig.eps, rig.t[0], rig.sched);
    Tensor<T> analytic = tsm_gradient_at(zhat_t, z_t, rig.teacher, rig.t, rig.cond,
                                         rig.weights, rig.sched);
    const Tensor<T> e_ref = cfg_predict(rig.teacher, z_t, rig.t, rig.cond, 0,
                                        rig.weights.w_cfg);
    Tensor<T> v = cfg_predict(rig.teacher, zhat_t, rig.t, rig.cond, 0, rig.weights.w_cfg);
    const double wt =
        static_cast<double>(weight_of_t(rig.weights, rig.t[0], rig.sched));
    // F(v) = 0.5 w(t) ||v - e_ref||^2, differentiated only through v
    auto f = [&]() {
        double acc = 0;
        for (size_t i = 0; i < v.v.size(); ++i) {
            const double d = static_cast<double>(v.v[i]) - static_cast<double>(e_ref.v[i]);
            acc += d * d;
        }
        return 0.5 * wt * acc;
    };
    std::vector<double> fd, ana;
    for (size_t i = 0; i < v.v.size(); ++i) {
        const T orig = v.v[i];
        v.v[i] = orig + static_cast<T>(tol.h);
        const double lp = f();
        v.v[i] = orig - static_cast<T>(tol.h);
        const double lm = f();
        v.v[i] = orig;
        fd.push_back((lp - lm) / (2.0 * tol.h));
        ana.push_back(static_cast<double>(analytic.v[i]));
    }
    res.max_rel_err = rel_err(ana, fd);
    res.pass = res.max_rel_err <= res.tolerance;
    return res;
}

template <typename T>
OracleResult oracle_kernels_parity(bool) {
    OracleResult res{"kernels-parity", 0, 0.0, false,
                     "OpenMP kernels bit-identical to the serial reference"};
    using kernels::Exec;
    Rng rng(15);
    const Tensor<T> x = rng.normal_tensor<T>(2, 3, 13, 11);
    const Tensor<T> w = rng.normal_tensor<T>(5, 3, 3, 3);
    std::vector<T> b(5);
    for (auto& v : b) v = static_cast<T>(rng.normal());
    const Tensor<T> dy = rng.normal_tensor<T>(2, 5, 7, 6);

    auto compare = [&res](const Tensor<T>& a, const Tensor<T>& b2) {
        res.max_rel_err = std::max(res.max_rel_err, max_abs_diff(a, b2));
    };

    const auto prev = kernels::exec_mode();
    kernels::exec_mode() = Exec::Serial;
    const auto y_s = kernels::conv2d_forward(x, w, b, 2, 1);
    const auto dx_s = kernels::conv2d_backward_input(dy, w, 2, 1, 13, 11);
    Tensor<T> dw_s(5, 3, 3, 3);
    std::vector<T> db_s(5, T(0));
    kernels::conv2d_backward_weights(dy, x, 2, 1, dw_s, db_s);
    const auto bl_s = kernels::bilinear_resize(x, 26, 22);
    const auto blb_s = kernels::bilinear_resize_backward(bl_s, 13, 11);
    const auto gb_s = kernels::gaussian_blur(x, 1.3);
    const auto bc_s = kernels::resample_bicubic(x, 6, 5);
    const auto si_s = kernels::silu(x);

    kernels::exec_mode() = Exec::Parallel;
    compare(y_s, kernels::conv2d_forward(x, w, b, 2, 1));
    compare(dx_s, kernels::conv2d_backward_input(dy, w, 2, 1, 13, 11));
    Tensor<T> dw_p(5, 3, 3, 3);
    std::vector<T> db_p(5, T(0));
    kernels::conv2d_backward_weights(dy, x, 2, 1, dw_p, db_p);
    compare(dw_s, dw_p);
    for (size_t i = 0; i < db_s.size(); ++i)
        res.max_rel_err = std::max(res.max_rel_err,
                                   std::abs(static_cast<double>(db_s[i] - db_p[i])));
    compare(bl_s, kernels::bilinear_resize(x, 26, 22));
    compare(blb_s, kernels::bilinear_resize_backward(bl_s, 13, 11));
    compare(gb_s, kernels::gaussian_blur(x, 1.3));
    compare(bc_s, kernels::resample_bicubic(x, 6, 5));
    compare(si_s, kernels::silu(x));
    kernels::exec_mode() = prev;

    res.pass = res.max_rel_err == 0.0;
    return res;
}

template <typename T>
std::vector<OracleResult> run_all(const std::vector<std::string>& only, bool f32) {
    using Runner = std::function<OracleResult()>;
    const std::vector<std::pair<std::string, Runner>> oracles = {
        {"tsd-identity", [&] { return oracle_tsd_identity<T>(f32); }},
        {"fd-vsd", [&] { return oracle_fd_score<T>(ScoreKind::Vsd, f32); }},
        {"fd-tsm", [&] { return oracle_fd_score<T>(ScoreKind::Tsm, f32); }},
        {"fd-tsd", [&] { return oracle_fd_score<T>(ScoreKind::Tsd, f32); }},
        {"fd-recon", [&] { return oracle_fd_recon<T>(f32); }},
        {"fd-lora", [&] { return oracle_fd_lora<T>(f32); }},
        {"zero-sentinels", [&] { return oracle_zero_sentinels<T>(f32); }},
        {"sched-recon", [&] { return oracle_sched_recon<T>(f32); }},
        {"dasm-sum", [&] { return oracle_dasm_sum<T>(f32); }},
        {"tsm-pred-space", [&] { return oracle_tsm_pred_space<T>(f32); }},
        {"kernels-parity", [&] { return oracle_kernels_parity<T>(f32); }},
    };
    std::vector<OracleResult> results;
    for (const auto& [name, runner] : oracles) {
        if (!only.empty() &&
            std::find(only.begin(), only.end(), name) == only.end())
            continue;
        results.push_back(runner());
    }
    return results;
}

}  // namespace

std::vector<std::string> gradcheck_oracle_names() {
    return {"tsd-identity", "fd-vsd",         "fd-tsm",      "fd-tsd",
            "fd-recon",     "fd-lora",        "zero-sentinels", "sched-recon",
            "dasm-sum",     "tsm-pred-space", "kernels-parity"};
}

std::vector<OracleResult> run_gradcheck(const std::vector<std::string>& only,
                                        bool float32_mode) {
    return float32_mode ? run_all<float>(only, true) : run_all<double>(only, false);
}

}  // namespace flowsr
