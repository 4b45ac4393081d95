// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Model definitions: the latent autoencoder, the velocity-prediction net
// (teacher, its low-rank-adapted replica, the student denoiser), and the
// one-step student pipeline upsample -> encode -> denoise -> decode.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flowsr/layers.hpp"
#include "flowsr/schedule.hpp"

namespace flowsr {

// ---------------------------------------------------------------------------
// Encoder: 3 -> latent channels, spatial reduction 4 (two stride-2 convs).
// Intermediate activations double as the perceptual/eval feature taps.
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderTaps {
    std::vector<Tensor<T>> taps;  // post-activation stages, shallow to deep
    Tensor<T> latent;
};

template <typename T>
class Encoder {
public:
    Conv2d<T> c1, c2, c3, c4;
    int reduction = 4;
    int latent_channels = 4;
    int base_width = 16;

    void init(int width, int lat_c, Rng rng) {
        base_width = width;
        latent_channels = lat_c;
        c1.init("encoder.c1", 3, width, 3, 2, 1, rng);
        c2.init("encoder.c2", width, 2 * width, 3, 2, 1, rng);
        c3.init("encoder.c3", 2 * width, 2 * width, 3, 1, 1, rng);
        c4.init("encoder.c4", 2 * width, lat_c, 3, 1, 1, rng);
    }

    EncoderTaps<T> forward_taps(const Tensor<T>& x, bool track) {
        FLOWSR_REQUIRE(x.c == 3, "encoder: expected 3-channel input");
        FLOWSR_REQUIRE(x.h % reduction == 0 && x.w % reduction == 0,
                       "encoder: image dims must be divisible by the spatial reduction");
        EncoderTaps<T> out;
        pre1_ = c1.forward(x, track);
        out.taps.push_back(kernels::silu(pre1_));
        pre2_ = c2.forward(out.taps.back(), track);
        out.taps.push_back(kernels::silu(pre2_));
        pre3_ = c3.forward(out.taps.back(), track);
        out.taps.push_back(kernels::silu(pre3_));
        out.latent = c4.forward(out.taps.back(), track);
        if (!track) {
            pre1_ = Tensor<T>();
            pre2_ = Tensor<T>();
            pre3_ = Tensor<T>();
        }
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool track) { return forward_taps(x, track).latent; }

    // dlat and per-tap gradients may be empty tensors when absent.
    Tensor<T> backward(const Tensor<T>& dlat, const std::vector<Tensor<T>>& dtaps = {}) {
        auto add_tap = [&](Tensor<T>& d, size_t i) {
            if (dtaps.size() > i && !dtaps[i].empty()) {
                if (d.empty())
                    d = dtaps[i];
                else
                    add_scaled(d, dtaps[i], T(1));
            }
        };
        Tensor<T> d3 = dlat.empty() ? Tensor<T>() : c4.backward(dlat);
        add_tap(d3, 2);
        Tensor<T> d2 = c3.backward(kernels::silu_backward(pre3_, d3));
        add_tap(d2, 1);
        Tensor<T> d1 = c2.backward(kernels::silu_backward(pre2_, d2));
        add_tap(d1, 0);
        return c1.backward(kernels::silu_backward(pre1_, d1));
    }

    void attach_lora_all(int rank, T scale, Rng rng) {
        c1.attach_lora(rank, scale, rng.derive(1));
        c2.attach_lora(rank, scale, rng.derive(2));
        c3.attach_lora(rank, scale, rng.derive(3));
        c4.attach_lora(rank, scale, rng.derive(4));
    }

    void collect_base(std::vector<Param<T>*>& out) {
        c1.collect_base(out);
        c2.collect_base(out);
        c3.collect_base(out);
        c4.collect_base(out);
    }
    void collect_lora(std::vector<Param<T>*>& out) {
        c1.collect_lora(out);
        c2.collect_lora(out);
        c3.collect_lora(out);
        c4.collect_lora(out);
    }

private:
    Tensor<T> pre1_, pre2_, pre3_;
};

// ---------------------------------------------------------------------------
// Decoder: latent -> 3-channel image in (0,1) via a sigmoid output, which
// keeps the pixel-range invariant while staying smooth for gradient checks.
// Upsampling is subpixel (conv to 4x channels, then pixel shuffle), so the
// synthesis work happens at low resolution.
// ---------------------------------------------------------------------------

template <typename T>
class Decoder {
public:
    Conv2d<T> d1, d2, d3, d4, d5;

    void init(int width, int lat_c, Rng rng) {
        FLOWSR_REQUIRE(width >= 4 && width % 2 == 0, "decoder: width must be even and >= 4");
        d1.init("decoder.d1", lat_c, 2 * width, 3, 1, 1, rng);
        d2.init("decoder.d2", 2 * width, 2 * width, 3, 1, 1, rng);
        d3.init("decoder.d3", 2 * width, 4 * width, 3, 1, 1, rng);  // shuffle -> width
        d4.init("decoder.d4", width, 2 * width, 3, 1, 1, rng);      // shuffle -> width/2
        d5.init("decoder.d5", width / 2, 3, 3, 1, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& z, bool track) {
        pre1_ = d1.forward(z, track);
        Tensor<T> h = kernels::silu(pre1_);
        pre2_ = d2.forward(h, track);
        h = kernels::silu(pre2_);
        pre3_ = kernels::pixel_shuffle2x(d3.forward(h, track));
        h = kernels::silu(pre3_);
        pre4_ = kernels::pixel_shuffle2x(d4.forward(h, track));
        h = kernels::silu(pre4_);
        out_ = kernels::sigmoid(d5.forward(h, track));
        Tensor<T> img = out_;
        if (!track) {
            pre1_ = Tensor<T>();
            pre2_ = Tensor<T>();
            pre3_ = Tensor<T>();
            pre4_ = Tensor<T>();
            out_ = Tensor<T>();
        }
        return img;
    }

    Tensor<T> backward(const Tensor<T>& dimg) {
        Tensor<T> d = d5.backward(kernels::sigmoid_backward(out_, dimg));
        d = kernels::pixel_shuffle2x_backward(kernels::silu_backward(pre4_, d));
        d = d4.backward(d);
        d = kernels::pixel_shuffle2x_backward(kernels::silu_backward(pre3_, d));
        d = d3.backward(d);
        d = d2.backward(kernels::silu_backward(pre2_, d));
        return d1.backward(kernels::silu_backward(pre1_, d));
    }

    void freeze() {
        std::vector<Param<T>*> ps;
        collect_base(ps);
        for (auto* p : ps) p->trainable = false;
    }

    void collect_base(std::vector<Param<T>*>& out) {
        d1.collect_base(out);
        d2.collect_base(out);
        d3.collect_base(out);
        d4.collect_base(out);
        d5.collect_base(out);
    }

private:
    Tensor<T> pre1_, pre2_, pre3_, pre4_, out_;
};

template <typename T>
struct AutoEncoder {
    Encoder<T> enc;
    Decoder<T> dec;
    bool decoder_frozen = false;

    void init(int width, int lat_c, Rng rng) {
        enc.init(width, lat_c, rng);
        dec.init(width, lat_c, rng);
    }

    Tensor<T> encode(const Tensor<T>& x, bool track = false) { return enc.forward(x, track); }
    Tensor<T> decode(const Tensor<T>& z, bool track = false) {
        FLOWSR_REQUIRE(z.c == enc.latent_channels, "decode: latent channel mismatch");
        return dec.forward(z, track);
    }

    void freeze_decoder() {
        dec.freeze();
        decoder_frozen = true;
    }
};

// ---------------------------------------------------------------------------
// Velocity-prediction network: conv residual blocks conditioned on a
// sinusoidal timestep embedding plus a class embedding (row 0 = null).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& t, int dim) {
    const int half = dim / 2;
    Tensor<T> out(static_cast<int>(t.size()), dim, 1, 1);
    for (size_t i = 0; i < t.size(); ++i)
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            out.at(static_cast<int>(i), 2 * k, 0, 0) = static_cast<T>(std::sin(t[i] * freq));
            out.at(static_cast<int>(i), 2 * k + 1, 0, 0) = static_cast<T>(std::cos(t[i] * freq));
        }
    return out;
}

template <typename T>
struct VelocityNetConfig {
    int latent_channels = 4;
    int width = 24;
    int blocks = 2;
    int emb_dim = 32;
    int num_classes = 4;   // embedding rows = num_classes + 1 (null row 0)
    bool zero_init_out = false;
};

template <typename T>
class VelocityNet {
public:
    VelocityNetConfig<T> cfg;
    Conv2d<T> conv_in, conv_out;
    Linear<T> emb1, emb2;
    Embedding<T> cond_table;

    struct Block {
        Conv2d<T> conv1, conv2;
        Linear<T> proj;
        Tensor<T> pre;    // conv1 out + emb bias, pre-activation
        Tensor<T> act;    // silu(pre)
    };
    std::vector<Block> blocks;

    void init(const VelocityNetConfig<T>& c, Rng rng) {
        cfg = c;
        conv_in.init("vnet.conv_in", c.latent_channels, c.width, 3, 1, 1, rng.derive(10));
        conv_out.init("vnet.conv_out", c.width, c.latent_channels, 3, 1, 1, rng.derive(11),
                      c.zero_init_out);
        emb1.init("vnet.emb1", c.emb_dim, c.emb_dim, rng.derive(12));
        emb2.init("vnet.emb2", c.emb_dim, c.emb_dim, rng.derive(13));
        cond_table.init("vnet.cond", c.num_classes + 1, c.emb_dim, rng.derive(14));
        blocks.resize(c.blocks);
        for (int i = 0; i < c.blocks; ++i) {
            const std::string p = "vnet.block" + std::to_string(i);
            blocks[i].conv1.init(p + ".conv1", c.width, c.width, 3, 1, 1, rng.derive(20 + 3 * i));
            blocks[i].conv2.init(p + ".conv2", c.width, c.width, 3, 1, 1, rng.derive(21 + 3 * i));
            blocks[i].proj.init(p + ".proj", c.emb_dim, c.width, rng.derive(22 + 3 * i));
        }
    }

    int64_t eval_count() const { return evals_; }
    void reset_eval_count() { evals_ = 0; }

    Tensor<T> forward(const Tensor<T>& z, const std::vector<int>& t,
                      const std::vector<int>& cond, bool track) {
        FLOWSR_REQUIRE(z.c == cfg.latent_channels, "vnet: latent channel mismatch");
        FLOWSR_REQUIRE(static_cast<int>(t.size()) == z.n && t.size() == cond.size(),
                       "vnet: per-sample t and cond required");
        evals_ += z.n;
        const Tensor<T> sin_emb = sinusoidal_embedding<T>(t, cfg.emb_dim);
        emb_pre_ = emb1.forward(sin_emb, track);
        Tensor<T> e = emb2.forward(kernels::silu(emb_pre_), track);
        add_scaled(e, cond_table.forward(cond, track), T(1));

        Tensor<T> h = conv_in.forward(z, track);
        for (auto& blk : blocks) {
            Tensor<T> pre = blk.conv1.forward(h, track);
            Tensor<T> eb = blk.proj.forward(e, track);
            // broadcast per-sample per-channel bias
            for (int in = 0; in < pre.n; ++in)
                for (int ch = 0; ch < pre.c; ++ch) {
                    const T b = eb.at(in, ch, 0, 0);
                    for (int iy = 0; iy < pre.h; ++iy)
                        for (int ix = 0; ix < pre.w; ++ix) pre.at(in, ch, iy, ix) += b;
                }
            Tensor<T> act = kernels::silu(pre);
            Tensor<T> delta = blk.conv2.forward(act, track);
            add_scaled(delta, h, T(1));
            if (track) {
                blk.pre = std::move(pre);
                blk.act = std::move(act);
            }
            h = std::move(delta);
        }
        if (track) h_final_ = h;
        Tensor<T> hs = kernels::silu(h);
        return conv_out.forward(hs, track);
    }

    // Returns gradient w.r.t. the latent input; accumulates param grads.
    Tensor<T> backward(const Tensor<T>& dv) {
        Tensor<T> dh = kernels::silu_backward(h_final_, conv_out.backward(dv));
        Tensor<T> de(dh.n, cfg.emb_dim, 1, 1);
        for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
            auto& blk = blocks[i];
            Tensor<T> da = blk.conv2.backward(dh);
            Tensor<T> dpre = kernels::silu_backward(blk.pre, da);
            // bias broadcast adjoint: per-sample per-channel spatial sum
            Tensor<T> deb(dpre.n, dpre.c, 1, 1);
            for (int in = 0; in < dpre.n; ++in)
                for (int ch = 0; ch < dpre.c; ++ch) {
                    T acc = T(0);
                    for (int iy = 0; iy < dpre.h; ++iy)
                        for (int ix = 0; ix < dpre.w; ++ix) acc += dpre.at(in, ch, iy, ix);
                    deb.at(in, ch, 0, 0) = acc;
                }
            add_scaled(de, blk.proj.backward(deb), T(1));
            Tensor<T> dh_in = blk.conv1.backward(dpre);
            add_scaled(dh_in, dh, T(1));  // residual skip
            dh = std::move(dh_in);
        }
        cond_table.backward(de);
        emb1.backward(kernels::silu_backward(emb_pre_, emb2.backward(de)));
        return conv_in.backward(dh);
    }

    void attach_lora_all(int rank, T scale, Rng rng) {
        conv_in.attach_lora(rank, scale, rng.derive(100));
        conv_out.attach_lora(rank, scale, rng.derive(101));
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].conv1.attach_lora(rank, scale, rng.derive(110 + 2 * i));
            blocks[i].conv2.attach_lora(rank, scale, rng.derive(111 + 2 * i));
        }
    }

    void collect_base(std::vector<Param<T>*>& out) {
        conv_in.collect_base(out);
        for (auto& blk : blocks) {
            blk.conv1.collect_base(out);
            blk.conv2.collect_base(out);
            blk.proj.collect_base(out);
        }
        conv_out.collect_base(out);
        emb1.collect_base(out);
        emb2.collect_base(out);
        cond_table.collect_base(out);
    }
    void collect_lora(std::vector<Param<T>*>& out) {
        conv_in.collect_lora(out);
        for (auto& blk : blocks) {
            blk.conv1.collect_lora(out);
            blk.conv2.collect_lora(out);
        }
        conv_out.collect_lora(out);
    }

    void set_base_trainable(bool trainable) {
        std::vector<Param<T>*> ps;
        collect_base(ps);
        for (auto* p : ps) p->trainable = trainable;
    }

private:
    Tensor<T> emb_pre_, h_final_;
    int64_t evals_ = 0;
};

// Classifier-free guidance: uncond + w * (cond - uncond). The w = 1 and
// w = 0 cases collapse to a single forward so they are exact.
template <typename T>
Tensor<T> cfg_predict(VelocityNet<T>& net, const Tensor<T>& z_t, const std::vector<int>& t,
                      const std::vector<int>& cond, int null_cond, T w_cfg) {
    if (w_cfg == T(1)) return net.forward(z_t, t, cond, false);
    const std::vector<int> nulls(t.size(), null_cond);
    Tensor<T> u = net.forward(z_t, t, nulls, false);
    if (w_cfg == T(0)) return u;
    Tensor<T> c = net.forward(z_t, t, cond, false);
    Tensor<T> out = u;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += w_cfg * (c.v[i] - u.v[i]);
    return out;
}

// Deep-copied base with fresh adapters attached; the copy's base weights are
// frozen, only A/B train.
template <typename T>
VelocityNet<T> lora_wrap(const VelocityNet<T>& base, int rank, T scale, uint64_t seed) {
    VelocityNet<T> wrapped = base;
    wrapped.reset_eval_count();
    wrapped.set_base_trainable(false);
    Rng rng(seed);
    wrapped.attach_lora_all(rank, scale, rng);
    return wrapped;
}

// ---------------------------------------------------------------------------
// One-step student: bilinear upsample -> encoder (base frozen, adapters
// trainable) -> one denoiser call in residual form -> frozen decoder.
// ---------------------------------------------------------------------------

template <typename T>
struct StudentOutput {
    Tensor<T> zhat;
    Tensor<T> xhat;
};

template <typename T>
class StudentModel {
public:
    Encoder<T> encoder;      // AE encoder copy with adapters
    VelocityNet<T> denoiser; // fresh net, zero-init output, fully trainable
    Decoder<T> decoder;      // frozen AE decoder copy
    int upscale = 4;
    int t_cond = 1000;       // conceptual timestep of the single call

    void init(const AutoEncoder<T>& ae, const VelocityNetConfig<T>& den_cfg, int lora_rank,
              T lora_scale, int upscale_, int t_cond_, uint64_t seed) {
        encoder = ae.enc;
        Rng rng(seed);
        encoder.attach_lora_all(lora_rank, lora_scale, rng.derive(1));
        std::vector<Param<T>*> enc_base;
        encoder.collect_base(enc_base);
        for (auto* p : enc_base) p->trainable = false;
        VelocityNetConfig<T> c = den_cfg;
        c.zero_init_out = true;
        Rng drng(mix_seed(seed, 2));
        denoiser.init(c, drng);
        decoder = ae.dec;
        decoder.freeze();
        upscale = upscale_;
        t_cond = t_cond_;
    }

    StudentOutput<T> forward(const Tensor<T>& x_lq, bool track) {
        Tensor<T> up = kernels::bilinear_resize(x_lq, x_lq.h * upscale, x_lq.w * upscale);
        if (track) {
            lq_h_ = x_lq.h;
            lq_w_ = x_lq.w;
        }
        Tensor<T> z_in = encoder.forward(up, track);
        const std::vector<int> t(static_cast<size_t>(z_in.n), t_cond);
        const std::vector<int> nulls(static_cast<size_t>(z_in.n), 0);
        StudentOutput<T> out;
        out.zhat = z_in + denoiser.forward(z_in, t, nulls, track);
        out.xhat = decoder.forward(out.zhat, track);
        return out;
    }

    // dxhat: gradient on the decoded image; dzhat_extra: gradient injected
    // directly on the latent (score residuals, latent losses). Either may be
    // empty.
    void backward(const Tensor<T>& dxhat, const Tensor<T>& dzhat_extra) {
        Tensor<T> dzhat;
        if (!dxhat.empty()) dzhat = decoder.backward(dxhat);
        if (!dzhat_extra.empty()) {
            if (dzhat.empty())
                dzhat = dzhat_extra;
            else
                add_scaled(dzhat, dzhat_extra, T(1));
        }
        FLOWSR_REQUIRE(!dzhat.empty(), "student backward: no upstream gradient");
        Tensor<T> dz_in = denoiser.backward(dzhat);
        add_scaled(dz_in, dzhat, T(1));  // residual connection
        encoder.backward(dz_in);
    }

    std::vector<Param<T>*> trainable_params() {
        std::vector<Param<T>*> out;
        encoder.collect_lora(out);
        denoiser.collect_base(out);
        return out;
    }

    int64_t denoiser_evals() const { return denoiser.eval_count(); }

private:
    int lq_h_ = 0, lq_w_ = 0;
};

}  // namespace flowsr
