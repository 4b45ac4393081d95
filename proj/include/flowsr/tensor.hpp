// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "flowsr/common.hpp"

namespace flowsr {

// Dense NCHW tensor. n is the batch axis; single images/latents use n = 1.
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    size_t idx(int in, int ic, int iy, int ix) const {
        return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    T& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }
    const T& at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(T(0)); }

    // Batch element as an n=1 view copy.
    Tensor slice(int in) const {
        Tensor out(1, c, h, w);
        const size_t stride = static_cast<size_t>(c) * h * w;
        std::copy(v.begin() + in * stride, v.begin() + (in + 1) * stride, out.v.begin());
        return out;
    }
    void set_slice(int in, const Tensor& s) {
        FLOWSR_REQUIRE(s.n == 1 && s.c == c && s.h == h && s.w == w, "set_slice: shape mismatch");
        const size_t stride = static_cast<size_t>(c) * h * w;
        std::copy(s.v.begin(), s.v.end(), v.begin() + in * stride);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(n, c, h, w);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    FLOWSR_REQUIRE(a.same_shape(b), std::string(what) + ": shape mismatch");
}

// y += s * x
template <typename T>
void add_scaled(Tensor<T>& y, const Tensor<T>& x, T s) {
    require_same_shape(y, x, "add_scaled");
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += s * x.v[i];
}

template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "tensor subtraction");
    Tensor<T> out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
    return out;
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "tensor addition");
    Tensor<T> out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T s) {
    Tensor<T> out = a;
    for (auto& x : out.v) x *= s;
    return out;
}

// Reductions are kept serial so results never depend on thread count.
template <typename T>
double sum(const Tensor<T>& a) {
    double s = 0;
    for (const auto& x : a.v) s += static_cast<double>(x);
    return s;
}

template <typename T>
double sum_squares(const Tensor<T>& a) {
    double s = 0;
    for (const auto& x : a.v) s += static_cast<double>(x) * static_cast<double>(x);
    return s;
}

template <typename T>
double mean_squared_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mean_squared_diff");
    double s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.v.size());
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "dot");
    double s = 0;
    for (size_t i = 0; i < a.v.size(); ++i)
        s += static_cast<double>(a.v[i]) * static_cast<double>(b.v[i]);
    return s;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
    return m;
}

template <typename T>
double norm2(const Tensor<T>& a) {
    return std::sqrt(sum_squares(a));
}

}  // namespace flowsr
