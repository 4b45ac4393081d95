// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal explicit-backward layers. forward(x, track) caches what backward
// needs when track is true; backward accumulates parameter gradients and
// returns the input gradient. Training is single-writer; concurrent use is
// only safe for untracked forwards on frozen parameters.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flowsr/kernels.hpp"
#include "flowsr/rng.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> w;
    Tensor<T> g;
    bool trainable = true;

    void init_shape(const std::string& n, int d0, int d1, int d2, int d3) {
        name = n;
        w = Tensor<T>(d0, d1, d2, d3);
        g = Tensor<T>(d0, d1, d2, d3);
    }
    void zero_grad() { g.zero(); }
    size_t count() const { return w.size(); }
};

// Low-rank adapter on a weight matrix: effective W = W + scale * B A, with
// A (rank x fan_in) and B (fan_out x rank). B starts at zero so the adapted
// layer matches its base exactly at init.
template <typename T>
struct LoraAdapter {
    Param<T> a;
    Param<T> b;
    int rank = 0;
    T scale = T(1);

    void init(const std::string& name, int fan_out, int fan_in, int r, T s, Rng rng) {
        FLOWSR_REQUIRE(r >= 1 && r <= fan_in, "lora rank exceeds layer fan-in");
        rank = r;
        scale = s;
        a.init_shape(name + ".lora_a", r, fan_in, 1, 1);
        b.init_shape(name + ".lora_b", fan_out, r, 1, 1);
        rng.fill_normal(a.w, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        // b stays zero
    }
};

template <typename T>
class Conv2d {
public:
    Param<T> weight;  // (oc, ic, k, k)
    Param<T> bias;    // (oc, 1, 1, 1)
    int stride = 1, pad = 1;
    bool has_lora = false;
    LoraAdapter<T> lora;

    void init(const std::string& name, int in_c, int out_c, int k, int stride_, int pad_,
              Rng rng, bool zero_init = false) {
        weight.init_shape(name + ".weight", out_c, in_c, k, k);
        bias.init_shape(name + ".bias", out_c, 1, 1, 1);
        stride = stride_;
        pad = pad_;
        if (!zero_init) rng.fill_normal(weight.w, std::sqrt(2.0 / (in_c * k * k)));
    }

    int fan_in() const { return weight.w.c * weight.w.h * weight.w.w; }
    int out_channels() const { return weight.w.n; }

    void attach_lora(int rank, T scale, Rng rng) {
        lora.init(weight.name, out_channels(), fan_in(), rank, scale, rng);
        has_lora = true;
        weight.trainable = false;
        bias.trainable = false;
    }

    Tensor<T> effective_weight() const {
        if (!has_lora) return weight.w;
        Tensor<T> weff = weight.w;
        const int fi = fan_in();
        for (int oc = 0; oc < weff.n; ++oc)
            for (int f = 0; f < fi; ++f) {
                T acc = T(0);
                for (int r = 0; r < lora.rank; ++r)
                    acc += lora.b.w.at(oc, r, 0, 0) * lora.a.w.at(r, f, 0, 0);
                weff.v[static_cast<size_t>(oc) * fi + f] += lora.scale * acc;
            }
        return weff;
    }

    Tensor<T> forward(const Tensor<T>& x, bool track) {
        weff_ = effective_weight();
        if (track) cached_x_ = x;
        return kernels::conv2d_forward(x, weff_, bias.w.v, stride, pad);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dweff(weight.w.n, weight.w.c, weight.w.h, weight.w.w);
        std::vector<T> db(bias.w.size(), T(0));
        kernels::conv2d_backward_weights(dy, cached_x_, stride, pad, dweff, db);
        if (weight.trainable) {
            add_scaled(weight.g, dweff, T(1));
            for (size_t i = 0; i < db.size(); ++i) bias.g.v[i] += db[i];
        }
        if (has_lora) {
            const int fi = fan_in();
            // dB = scale * dWeff A^T, dA = scale * B^T dWeff
            for (int oc = 0; oc < weight.w.n; ++oc)
                for (int r = 0; r < lora.rank; ++r) {
                    T acc = T(0);
                    for (int f = 0; f < fi; ++f)
                        acc += dweff.v[static_cast<size_t>(oc) * fi + f] * lora.a.w.at(r, f, 0, 0);
                    lora.b.g.at(oc, r, 0, 0) += lora.scale * acc;
                }
            for (int r = 0; r < lora.rank; ++r)
                for (int f = 0; f < fi; ++f) {
                    T acc = T(0);
                    for (int oc = 0; oc < weight.w.n; ++oc)
                        acc += lora.b.w.at(oc, r, 0, 0) * dweff.v[static_cast<size_t>(oc) * fi + f];
                    lora.a.g.at(r, f, 0, 0) += lora.scale * acc;
                }
        }
        return kernels::conv2d_backward_input(dy, weff_, stride, pad, cached_x_.h, cached_x_.w);
    }

    void collect_base(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
    void collect_lora(std::vector<Param<T>*>& out) {
        if (has_lora) {
            out.push_back(&lora.a);
            out.push_back(&lora.b);
        }
    }

private:
    Tensor<T> cached_x_;
    Tensor<T> weff_;
};

template <typename T>
class Linear {
public:
    Param<T> weight;  // (out, in, 1, 1)
    Param<T> bias;    // (out, 1, 1, 1)

    void init(const std::string& name, int in_dim, int out_dim, Rng rng,
              bool zero_init = false) {
        weight.init_shape(name + ".weight", out_dim, in_dim, 1, 1);
        bias.init_shape(name + ".bias", out_dim, 1, 1, 1);
        if (!zero_init) rng.fill_normal(weight.w, std::sqrt(2.0 / in_dim));
    }

    Tensor<T> forward(const Tensor<T>& x, bool track) {
        if (track) cached_x_ = x;
        return kernels::linear_forward(x, weight.w, bias.w.v);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (weight.trainable) kernels::linear_backward_weights(dy, cached_x_, weight.g, bias.g.v);
        return kernels::linear_backward_input(dy, weight.w);
    }

    void collect_base(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

private:
    Tensor<T> cached_x_;
};

// Row-lookup embedding; row 0 is reserved for the null entry.
template <typename T>
class Embedding {
public:
    Param<T> table;  // (rows, dim, 1, 1)

    void init(const std::string& name, int rows, int dim, Rng rng) {
        table.init_shape(name + ".table", rows, dim, 1, 1);
        rng.fill_normal(table.w, 0.02);
    }

    int rows() const { return table.w.n; }
    int dim() const { return table.w.c; }

    Tensor<T> forward(const std::vector<int>& ids, bool track) {
        if (track) cached_ids_ = ids;
        Tensor<T> out(static_cast<int>(ids.size()), dim(), 1, 1);
        for (size_t i = 0; i < ids.size(); ++i) {
            FLOWSR_REQUIRE(ids[i] >= 0 && ids[i] < rows(), "embedding id out of range");
            for (int d = 0; d < dim(); ++d)
                out.at(static_cast<int>(i), d, 0, 0) = table.w.at(ids[i], d, 0, 0);
        }
        return out;
    }

    void backward(const Tensor<T>& dy) {
        if (!table.trainable) return;
        for (size_t i = 0; i < cached_ids_.size(); ++i)
            for (int d = 0; d < dim(); ++d)
                table.g.at(cached_ids_[i], d, 0, 0) += dy.at(static_cast<int>(i), d, 0, 0);
    }

    void collect_base(std::vector<Param<T>*>& out) { out.push_back(&table); }

private:
    std::vector<int> cached_ids_;
};

}  // namespace flowsr
