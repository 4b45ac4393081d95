// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation losses. The score losses (VSD / TSM / TSD) are realized as
// gradients with respect to the student latent: the prediction residual,
// scaled by w(t), is the upstream gradient injected on zhat, and the caller
// completes the chain to the student parameters by backpropagation. No
// gradient ever flows through the teacher or the adapted replica.

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "flowsr/nets.hpp"
#include "flowsr/schedule.hpp"

namespace flowsr {

enum class WeightKind { Constant, SigmaSq, Snr };

template <typename T>
struct LossWeights {
    T lambda = T(0.5);               // TSM/VSD blend
    T gamma1 = T(1);                 // perceptual weight (ramped 1 -> 2)
    T gamma2 = T(1);                 // regularization weight
    WeightKind w_of_t = WeightKind::Constant;
    T w_scale = T(1);                // multiplies w(t); 0 disables score losses
    T w_cfg = T(7.5);                // classifier-free guidance weight
};

template <typename T>
T weight_of_t(const LossWeights<T>& w, int t, const TimestepSchedule<T>& sched) {
    T base = T(1);
    if (w.w_of_t == WeightKind::SigmaSq) {
        base = sched.sigma(t) * sched.sigma(t);
    } else if (w.w_of_t == WeightKind::Snr) {
        const T s = sched.sigma(t);
        base = (T(1) - s) * (T(1) - s) / (s * s);
    }
    return w.w_scale * base;
}

namespace detail {

template <typename T>
void scale_rows_by_weight(Tensor<T>& g, const std::vector<int>& t, const LossWeights<T>& w,
                          const TimestepSchedule<T>& sched) {
    const size_t stride = g.size() / g.n;
    for (int in = 0; in < g.n; ++in) {
        const T wt = weight_of_t(w, t[in], sched);
        for (size_t i = in * stride; i < (in + 1) * stride; ++i) g.v[i] *= wt;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Score gradients evaluated at an already-noised pair. DASM trajectory nodes
// call these directly; the clean-latent entry points below noise first.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> vsd_gradient_at(const Tensor<T>& zhat_t, VelocityNet<T>& teacher,
                          VelocityNet<T>& lora, const std::vector<int>& t,
                          const std::vector<int>& cond, const LossWeights<T>& weights,
                          const TimestepSchedule<T>& sched) {
    Tensor<T> g = cfg_predict(teacher, zhat_t, t, cond, 0, weights.w_cfg) -
                  cfg_predict(lora, zhat_t, t, cond, 0, weights.w_cfg);
    detail::scale_rows_by_weight(g, t, weights, sched);
    return g;
}

template <typename T>
Tensor<T> tsm_gradient_at(const Tensor<T>& zhat_t, const Tensor<T>& z_t,
                          VelocityNet<T>& teacher, const std::vector<int>& t,
                          const std::vector<int>& cond, const LossWeights<T>& weights,
                          const TimestepSchedule<T>& sched) {
    require_same_shape(zhat_t, z_t, "tsm_gradient");
    Tensor<T> g = cfg_predict(teacher, zhat_t, t, cond, 0, weights.w_cfg) -
                  cfg_predict(teacher, z_t, t, cond, 0, weights.w_cfg);
    detail::scale_rows_by_weight(g, t, weights, sched);
    return g;
}

template <typename T>
Tensor<T> tsd_gradient_at(const Tensor<T>& zhat_t, const Tensor<T>& z_t,
                          VelocityNet<T>& teacher, VelocityNet<T>& lora,
                          const std::vector<int>& t, const std::vector<int>& cond,
                          const LossWeights<T>& weights, const TimestepSchedule<T>& sched) {
    require_same_shape(zhat_t, z_t, "tsd_gradient");
    const T lam = weights.lambda;
    // Degenerate blends collapse to the pure losses, bit-exactly.
    if (lam == T(0)) return tsm_gradient_at(zhat_t, z_t, teacher, t, cond, weights, sched);
    if (lam == T(1)) return vsd_gradient_at(zhat_t, teacher, lora, t, cond, weights, sched);
    Tensor<T> e_hat = cfg_predict(teacher, zhat_t, t, cond, 0, weights.w_cfg);
    Tensor<T> e_ref = cfg_predict(teacher, z_t, t, cond, 0, weights.w_cfg);
    Tensor<T> e_lora = cfg_predict(lora, zhat_t, t, cond, 0, weights.w_cfg);
    Tensor<T> g(zhat_t.n, zhat_t.c, zhat_t.h, zhat_t.w);
    for (size_t i = 0; i < g.v.size(); ++i)
        g.v[i] = e_hat.v[i] - e_ref.v[i] + lam * (e_ref.v[i] - e_lora.v[i]);
    detail::scale_rows_by_weight(g, t, weights, sched);
    return g;
}

// Residual components for logging: mean-squared magnitudes of the TSM / VSD /
// blended residuals at a noisy pair.
template <typename T>
struct TsdParts {
    Tensor<T> grad;
    double tsm_msq = 0, vsd_msq = 0, tsd_msq = 0;
};

template <typename T>
TsdParts<T> tsd_gradient_parts_at(const Tensor<T>& zhat_t, const Tensor<T>& z_t,
                                  VelocityNet<T>& teacher, VelocityNet<T>& lora,
                                  const std::vector<int>& t, const std::vector<int>& cond,
                                  const LossWeights<T>& weights,
                                  const TimestepSchedule<T>& sched) {
    require_same_shape(zhat_t, z_t, "tsd_gradient");
    Tensor<T> e_hat = cfg_predict(teacher, zhat_t, t, cond, 0, weights.w_cfg);
    Tensor<T> e_ref = cfg_predict(teacher, z_t, t, cond, 0, weights.w_cfg);
    Tensor<T> e_lora = cfg_predict(lora, zhat_t, t, cond, 0, weights.w_cfg);
    TsdParts<T> out;
    out.grad = Tensor<T>(zhat_t.n, zhat_t.c, zhat_t.h, zhat_t.w);
    const T lam = weights.lambda;
    for (size_t i = 0; i < out.grad.v.size(); ++i) {
        const double tsm = static_cast<double>(e_hat.v[i]) - static_cast<double>(e_ref.v[i]);
        const double vsd = static_cast<double>(e_hat.v[i]) - static_cast<double>(e_lora.v[i]);
        const double tsd = tsm + static_cast<double>(lam) * (static_cast<double>(e_ref.v[i]) -
                                                             static_cast<double>(e_lora.v[i]));
        out.grad.v[i] = static_cast<T>(tsd);
        out.tsm_msq += tsm * tsm;
        out.vsd_msq += vsd * vsd;
        out.tsd_msq += tsd * tsd;
    }
    const double numel = static_cast<double>(out.grad.v.size());
    out.tsm_msq /= numel;
    out.vsd_msq /= numel;
    out.tsd_msq /= numel;
    detail::scale_rows_by_weight(out.grad, t, weights, sched);
    return out;
}

// ---------------------------------------------------------------------------
// Clean-latent entry points; same eps and t noise both branches (shared-noise
// contract), so coincident latents give an exactly zero TSM residual.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> vsd_gradient(const Tensor<T>& zhat, VelocityNet<T>& teacher, VelocityNet<T>& lora,
                       const std::vector<int>& t, const Tensor<T>& eps,
                       const std::vector<int>& cond, const LossWeights<T>& weights,
                       const TimestepSchedule<T>& sched) {
    return vsd_gradient_at(add_noise(zhat, eps, t, sched), teacher, lora, t, cond, weights,
                           sched);
}

template <typename T>
Tensor<T> tsm_gradient(const Tensor<T>& zhat, const Tensor<T>& z, VelocityNet<T>& teacher,
                       const std::vector<int>& t, const Tensor<T>& eps,
                       const std::vector<int>& cond, const LossWeights<T>& weights,
                       const TimestepSchedule<T>& sched) {
    return tsm_gradient_at(add_noise(zhat, eps, t, sched), add_noise(z, eps, t, sched), teacher,
                           t, cond, weights, sched);
}

template <typename T>
Tensor<T> tsd_gradient(const Tensor<T>& zhat, const Tensor<T>& z, VelocityNet<T>& teacher,
                       VelocityNet<T>& lora, const std::vector<int>& t, const Tensor<T>& eps,
                       const std::vector<int>& cond, const LossWeights<T>& weights,
                       const TimestepSchedule<T>& sched) {
    return tsd_gradient_at(add_noise(zhat, eps, t, sched), add_noise(z, eps, t, sched), teacher,
                           lora, t, cond, weights, sched);
}

// ---------------------------------------------------------------------------
// Perceptual distance: mean squared difference of channel-normalized frozen
// encoder activations, averaged over taps. Symmetric, zero iff the
// activations agree.
// ---------------------------------------------------------------------------

template <typename T>
class PerceptualLoss {
public:
    explicit PerceptualLoss(Encoder<T>& featnet) : featnet_(&featnet) {}

    // When track is true the featnet caches activations of `a` so backward()
    // can return d(distance)/da.
    double forward(const Tensor<T>& a, const Tensor<T>& b, bool track) {
        require_same_shape(a, b, "perceptual_distance");
        const auto taps_b = featnet_->forward_taps(b, false);
        const auto taps_a = featnet_->forward_taps(a, track);
        norm_a_.clear();
        diff_.clear();
        raw_a_.clear();
        double total = 0;
        for (size_t l = 0; l < taps_a.taps.size(); ++l) {
            Tensor<T> na = normalize_channels(taps_a.taps[l]);
            Tensor<T> nb = normalize_channels(taps_b.taps[l]);
            total += mean_squared_diff(na, nb);
            if (track) {
                diff_.push_back(na - nb);
                norm_a_.push_back(std::move(na));
                raw_a_.push_back(taps_a.taps[l]);
            }
        }
        ntaps_ = taps_a.taps.size();
        return total / static_cast<double>(ntaps_);
    }

    // Gradient of scale * distance w.r.t. `a`.
    Tensor<T> backward(double scale) {
        std::vector<Tensor<T>> dtaps(ntaps_);
        for (size_t l = 0; l < ntaps_; ++l) {
            const double coef = 2.0 * scale / (static_cast<double>(ntaps_) * diff_[l].size());
            Tensor<T> dnorm = scaled(diff_[l], static_cast<T>(coef));
            dtaps[l] = normalize_channels_backward(raw_a_[l], dnorm);
        }
        return featnet_->backward(Tensor<T>(), dtaps);
    }

    static Tensor<T> normalize_channels(const Tensor<T>& x) {
        Tensor<T> out(x.n, x.c, x.h, x.w);
        for (int in = 0; in < x.n; ++in)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix) {
                    T s = T(0);
                    for (int ic = 0; ic < x.c; ++ic) {
                        const T v = x.at(in, ic, iy, ix);
                        s += v * v;
                    }
                    const T inv = T(1) / std::sqrt(s + eps_norm());
                    for (int ic = 0; ic < x.c; ++ic)
                        out.at(in, ic, iy, ix) = x.at(in, ic, iy, ix) * inv;
                }
        return out;
    }

    static Tensor<T> normalize_channels_backward(const Tensor<T>& x, const Tensor<T>& dy) {
        Tensor<T> dx(x.n, x.c, x.h, x.w);
        for (int in = 0; in < x.n; ++in)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix) {
                    T s = T(0), xd = T(0);
                    for (int ic = 0; ic < x.c; ++ic) {
                        const T v = x.at(in, ic, iy, ix);
                        s += v * v;
                        xd += v * dy.at(in, ic, iy, ix);
                    }
                    const T inv = T(1) / std::sqrt(s + eps_norm());
                    const T inv3 = inv * inv * inv;
                    for (int ic = 0; ic < x.c; ++ic)
                        dx.at(in, ic, iy, ix) =
                            dy.at(in, ic, iy, ix) * inv - x.at(in, ic, iy, ix) * inv3 * xd;
                }
        return dx;
    }

    static constexpr T eps_norm() { return T(1e-10); }

private:
    Encoder<T>* featnet_;
    std::vector<Tensor<T>> norm_a_, diff_, raw_a_;
    size_t ntaps_ = 0;
};

template <typename T>
double perceptual_distance(const Tensor<T>& a, const Tensor<T>& b, Encoder<T>& featnet) {
    PerceptualLoss<T> loss(featnet);
    return loss.forward(a, b, false);
}

// ---------------------------------------------------------------------------
// Reconstruction loss: gamma1 * perceptual in pixel space plus, in the early
// phase, the latent MSE on the shared-noise pair (which equals
// (1-sigma_t)^2 times the clean-latent MSE).
// ---------------------------------------------------------------------------

enum class Phase { Early, Late };

template <typename T>
struct ReconEval {
    double perceptual = 0;
    double latent_mse = 0;
    double total = 0;
    Tensor<T> grad_xhat;  // includes the gamma1 factor
    Tensor<T> grad_zhat;  // empty in the late phase
};

template <typename T>
ReconEval<T> reconstruction_eval(const Tensor<T>& xhat, const Tensor<T>& x_hq,
                                 const Tensor<T>& zhat_t, const Tensor<T>& z_t,
                                 const std::vector<int>& t, const LossWeights<T>& weights,
                                 Phase phase, Encoder<T>& featnet,
                                 const TimestepSchedule<T>& sched, bool with_grad) {
    require_same_shape(xhat, x_hq, "reconstruction_loss");
    require_same_shape(zhat_t, z_t, "reconstruction_loss latents");
    ReconEval<T> out;
    PerceptualLoss<T> perc(featnet);
    out.perceptual = perc.forward(xhat, x_hq, with_grad);
    if (with_grad) out.grad_xhat = perc.backward(static_cast<double>(weights.gamma1));
    if (phase == Phase::Early) {
        out.latent_mse = mean_squared_diff(zhat_t, z_t);
        if (with_grad) {
            // d mean((zhat_t - z_t)^2) / d zhat, with zhat_t = (1-s) zhat + s eps
            out.grad_zhat = Tensor<T>(zhat_t.n, zhat_t.c, zhat_t.h, zhat_t.w);
            const size_t stride = zhat_t.size() / zhat_t.n;
            const double numel = static_cast<double>(zhat_t.size());
            for (int in = 0; in < zhat_t.n; ++in) {
                const T a = T(1) - sched.sigma(t[in]);
                for (size_t i = in * stride; i < (in + 1) * stride; ++i)
                    out.grad_zhat.v[i] =
                        static_cast<T>(2.0 / numel) * (zhat_t.v[i] - z_t.v[i]) * a;
            }
        }
    }
    out.total = static_cast<double>(weights.gamma1) * out.perceptual + out.latent_mse;
    return out;
}

template <typename T>
double reconstruction_loss(const Tensor<T>& xhat, const Tensor<T>& x_hq,
                           const Tensor<T>& zhat_t, const Tensor<T>& z_t,
                           const std::vector<int>& t, const LossWeights<T>& weights,
                           Phase phase, Encoder<T>& featnet, const TimestepSchedule<T>& sched) {
    return reconstruction_eval(xhat, x_hq, zhat_t, z_t, t, weights, phase, featnet, sched,
                               false)
        .total;
}

// ---------------------------------------------------------------------------
// Diffusion loss for the adapted replica, Eq.-9 style: conditional-only
// prediction against the velocity target of the detached student latent.
// Structurally detached: only the replica's adapter gradients are touched.
// ---------------------------------------------------------------------------

template <typename T>
double lora_diffusion_loss(VelocityNet<T>& lora, const Tensor<T>& zhat_detached,
                           const std::vector<int>& t, const Tensor<T>& eps,
                           const std::vector<int>& cond, const TimestepSchedule<T>& sched,
                           bool with_grad = false) {
    require_same_shape(zhat_detached, eps, "lora_diffusion_loss");
    const Tensor<T> zhat_t = add_noise(zhat_detached, eps, t, sched);
    Tensor<T> pred = lora.forward(zhat_t, t, cond, with_grad);
    const Tensor<T> target = velocity_target(zhat_detached, eps);
    const double loss = mean_squared_diff(pred, target);
    if (with_grad) {
        Tensor<T> dpred(pred.n, pred.c, pred.h, pred.w);
        const double numel = static_cast<double>(pred.size());
        for (size_t i = 0; i < pred.v.size(); ++i)
            dpred.v[i] = static_cast<T>(2.0 / numel) * (pred.v[i] - target.v[i]);
        lora.backward(dpred);  // input gradient intentionally discarded
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Per-step loss telemetry.
// ---------------------------------------------------------------------------

struct LossBreakdown {
    long step = 0;
    double gamma1 = 1;
    double recon_perceptual = 0;
    double recon_latent_mse = 0;
    double tsd = 0;
    double tsm_component = 0;
    double vsd_component = 0;
    double lora_diffusion = 0;
    double grad_norm_recon = 0;
    double grad_norm_tsd = 0;
    double grad_norm_lora = 0;
    int dasm_nodes = 0;

    static std::string csv_header() {
        return "step,gamma1,recon_perceptual,recon_latent_mse,tsd,tsm_component,"
               "vsd_component,lora_diffusion,grad_norm_recon,grad_norm_tsd,grad_norm_lora,"
               "dasm_nodes";
    }
    std::string csv_row() const {
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d",
                      step, gamma1, recon_perceptual, recon_latent_mse, tsd, tsm_component,
                      vsd_component, lora_diffusion, grad_norm_recon, grad_norm_tsd,
                      grad_norm_lora, dasm_nodes);
        return buf;
    }
};

}  // namespace flowsr
