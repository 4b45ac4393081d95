// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels. Every hot kernel comes in two variants: a plain
// serial loop (namespace serial) and an OpenMP one (namespace omp). Both
// call the same per-element helpers, so results are bit-identical and the
// serial build stays usable as the reference in tests and benchmarks.
// Parallel loops assign each output element to exactly one thread and all
// per-element summations run in a fixed order, so results do not depend on
// thread count or schedule.

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "flowsr/common.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr::kernels {

enum class Exec { Serial, Parallel };

inline Exec& exec_mode() {
    static Exec mode = Exec::Parallel;
    return mode;
}

namespace detail {

// Accumulation helpers carry this attribute so the serial and OpenMP loops
// share one compiled instance; otherwise differing inline contexts can fuse
// multiply-adds differently and break bitwise parity.
#if defined(__GNUC__)
#define FLOWSR_NOINLINE __attribute__((noinline, noclone))
#else
#define FLOWSR_NOINLINE
#endif

// Convolutions run through an im2col patch matrix: one contiguous row of
// length ic*k*k per output position, matching the flat weight layout, so
// every output element is a single long dot product.

// Patch row for output position (oy, ox); out-of-image taps are zero.
template <typename T>
FLOWSR_NOINLINE inline void im2col_patch(const Tensor<T>& x, int k, int stride, int pad,
                                         int in, int oy, int ox, T* col) {
    int f = 0;
    for (int ic = 0; ic < x.c; ++ic)
        for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) {
                for (int kx = 0; kx < k; ++kx) col[f++] = T(0);
                continue;
            }
            const T* xrow = &x.v[x.idx(in, ic, iy, 0)];
            for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride - pad + kx;
                col[f++] = (ix < 0 || ix >= x.w) ? T(0) : xrow[ix];
            }
        }
}

// y[oc] for one patch via rank-1 updates against the transposed weights,
// so the inner loop is an independent-accumulator axpy that vectorizes.
constexpr int kMaxChannels = 256;

template <typename T>
FLOWSR_NOINLINE inline void conv_patch_axpy(const T* col, const T* wt, const T* b, T* y_np,
                                            long p_stride, int oc_count, int f_len) {
    T acc[kMaxChannels];
    for (int oc = 0; oc < oc_count; ++oc) acc[oc] = b ? b[oc] : T(0);
    for (int f = 0; f < f_len; ++f) {
        const T c = col[f];
        const T* wrow = wt + static_cast<size_t>(f) * oc_count;
        for (int oc = 0; oc < oc_count; ++oc) acc[oc] += c * wrow[oc];
    }
    for (int oc = 0; oc < oc_count; ++oc) y_np[static_cast<size_t>(oc) * p_stride] = acc[oc];
}

template <typename T>
inline std::vector<T> transpose_weights(const Tensor<T>& w) {
    const int f_len = w.c * w.h * w.w;
    std::vector<T> wt(static_cast<size_t>(f_len) * w.n);
    for (int oc = 0; oc < w.n; ++oc)
        for (int f = 0; f < f_len; ++f)
            wt[static_cast<size_t>(f) * w.n + oc] = w.v[static_cast<size_t>(oc) * f_len + f];
    return wt;
}

// dcol[f] = sum_oc dy[oc] * w[oc][f] for one patch.
template <typename T>
FLOWSR_NOINLINE inline void conv_patch_dcol(const T* dy_np, long p_stride, const T* w,
                                            T* dcol, int oc_count, int f_len) {
    for (int f = 0; f < f_len; ++f) dcol[f] = T(0);
    for (int oc = 0; oc < oc_count; ++oc) {
        const T g = dy_np[static_cast<size_t>(oc) * p_stride];
        const T* wrow = w + static_cast<size_t>(oc) * f_len;
        for (int f = 0; f < f_len; ++f) dcol[f] += g * wrow[f];
    }
}

// Adjoint of im2col for one input row: gather every patch entry that read
// this pixel.
template <typename T>
FLOWSR_NOINLINE inline void col2im_row(const T* dcols, int k, int stride, int pad, int oh,
                                       int ow, int f_len, int ic, int iy, T* dx_row, int iw) {
    for (int ix = 0; ix < iw; ++ix) dx_row[ix] = T(0);
    for (int ky = 0; ky < k; ++ky) {
        const int num_y = iy + pad - ky;
        if (num_y < 0 || num_y % stride != 0) continue;
        const int oy = num_y / stride;
        if (oy >= oh) continue;
        for (int kx = 0; kx < k; ++kx) {
            const int f = (ic * k + ky) * k + kx;
            for (int ix = 0; ix < iw; ++ix) {
                const int num_x = ix + pad - kx;
                if (num_x < 0 || num_x % stride != 0) continue;
                const int ox = num_x / stride;
                if (ox >= ow) continue;
                dx_row[ix] += dcols[(static_cast<size_t>(oy) * ow + ox) * f_len + f];
            }
        }
    }
}

// dw row for one output channel: sum over batch and patches of dy * col.
template <typename T>
FLOWSR_NOINLINE inline void conv_dw_row(const T* dy, const T* cols, int n, int oc_count,
                                        long patches, int f_len, int oc, T* dw_row, T* db) {
    T bias_acc = T(0);
    for (int in = 0; in < n; ++in) {
        const T* dy_n = dy + (static_cast<size_t>(in) * oc_count + oc) * patches;
        const T* cols_n = cols + static_cast<size_t>(in) * patches * f_len;
        for (long p = 0; p < patches; ++p) {
            const T g = dy_n[p];
            bias_acc += g;
            const T* col = cols_n + static_cast<size_t>(p) * f_len;
            for (int f = 0; f < f_len; ++f) dw_row[f] += g * col[f];
        }
    }
    *db += bias_acc;
}

template <typename T>
inline T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Sampling positions for a bilinear axis, half-pixel convention.
template <typename T>
struct BilinearAxis {
    std::vector<int> i0, i1;
    std::vector<T> f;  // weight of i1
};

template <typename T>
inline BilinearAxis<T> bilinear_axis(int in_size, int out_size) {
    BilinearAxis<T> ax;
    ax.i0.resize(out_size);
    ax.i1.resize(out_size);
    ax.f.resize(out_size);
    const double scale = static_cast<double>(in_size) / out_size;
    for (int o = 0; o < out_size; ++o) {
        const double s = (o + 0.5) * scale - 0.5;
        const int base = static_cast<int>(std::floor(s));
        ax.i0[o] = std::clamp(base, 0, in_size - 1);
        ax.i1[o] = std::clamp(base + 1, 0, in_size - 1);
        ax.f[o] = static_cast<T>(s - base);
    }
    return ax;
}

// Transposed lists for the bilinear adjoint: per input index, the output
// indices hitting it and their weights.
template <typename T>
inline std::vector<std::vector<std::pair<int, T>>> bilinear_axis_adjoint(int in_size,
                                                                         int out_size) {
    const BilinearAxis<T> ax = bilinear_axis<T>(in_size, out_size);
    std::vector<std::vector<std::pair<int, T>>> lists(in_size);
    for (int o = 0; o < out_size; ++o) {
        lists[ax.i0[o]].emplace_back(o, T(1) - ax.f[o]);
        lists[ax.i1[o]].emplace_back(o, ax.f[o]);
    }
    return lists;
}

// Catmull-Rom cubic (a = -0.5).
inline double cubic_weight(double u) {
    const double a = -0.5;
    u = std::abs(u);
    if (u < 1.0) return ((a + 2.0) * u - (a + 3.0)) * u * u + 1.0;
    if (u < 2.0) return (((u - 5.0) * u + 8.0) * u - 4.0) * a;
    return 0.0;
}

template <typename T>
struct ResampleAxis {
    std::vector<int> lo;
    std::vector<int> count;
    std::vector<T> weights;  // concatenated, `count[o]` entries per output
    std::vector<int> offset;
};

// Bicubic sampling positions; for downscale the kernel is widened so the
// resample is antialiased (PIL-style).
template <typename T>
inline ResampleAxis<T> bicubic_axis(int in_size, int out_size) {
    ResampleAxis<T> ax;
    ax.lo.resize(out_size);
    ax.count.resize(out_size);
    ax.offset.resize(out_size);
    const double scale = static_cast<double>(in_size) / out_size;
    const double filter_scale = std::max(1.0, scale);
    const double support = 2.0 * filter_scale;
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::ceil(center - support));
        const int hi = static_cast<int>(std::floor(center + support));
        ax.lo[o] = lo;
        ax.count[o] = hi - lo + 1;
        ax.offset[o] = static_cast<int>(ax.weights.size());
        double total = 0.0;
        std::vector<double> ws(ax.count[o]);
        for (int i = 0; i < ax.count[o]; ++i) {
            ws[i] = cubic_weight((lo + i - center) / filter_scale);
            total += ws[i];
        }
        for (int i = 0; i < ax.count[o]; ++i)
            ax.weights.push_back(static_cast<T>(ws[i] / total));
    }
    return ax;
}

template <typename T>
inline std::vector<T> gaussian_taps(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<T> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double g = std::exp(-0.5 * (i / sigma) * (i / sigma));
        taps[i + radius] = static_cast<T>(g);
        total += g;
    }
    for (auto& t : taps) t = static_cast<T>(t / total);
    return taps;
}

template <typename T>
FLOWSR_NOINLINE inline T blur_pass_element(const Tensor<T>& x, const std::vector<T>& taps, bool horizontal,
                           int in, int ic, int iy, int ix) {
    const int radius = (static_cast<int>(taps.size()) - 1) / 2;
    T acc = T(0);
    for (int i = -radius; i <= radius; ++i) {
        int sy = iy, sx = ix;
        if (horizontal)
            sx = std::clamp(ix + i, 0, x.w - 1);
        else
            sy = std::clamp(iy + i, 0, x.h - 1);
        acc += taps[i + radius] * x.at(in, ic, sy, sx);
    }
    return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace serial {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b,
                         int stride, int pad) {
    const int oh = (x.h + 2 * pad - w.h) / stride + 1;
    const int ow = (x.w + 2 * pad - w.w) / stride + 1;
    const long patches = static_cast<long>(oh) * ow;
    const int f_len = x.c * w.h * w.w;
    Tensor<T> y(x.n, w.n, oh, ow);
    FLOWSR_REQUIRE(w.n <= detail::kMaxChannels, "conv2d: too many output channels");
    std::vector<T> cols(static_cast<size_t>(x.n) * patches * f_len);
    for (int in = 0; in < x.n; ++in)
        for (long p = 0; p < patches; ++p)
            detail::im2col_patch(x, w.h, stride, pad, in, static_cast<int>(p / ow),
                                 static_cast<int>(p % ow),
                                 &cols[(static_cast<size_t>(in) * patches + p) * f_len]);
    const std::vector<T> wt = detail::transpose_weights(w);
    for (int in = 0; in < x.n; ++in)
        for (long p = 0; p < patches; ++p)
            detail::conv_patch_axpy(&cols[(static_cast<size_t>(in) * patches + p) * f_len],
                                    wt.data(), b.empty() ? nullptr : b.data(),
                                    &y.v[static_cast<size_t>(in) * w.n * patches + p], patches,
                                    w.n, f_len);
    return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& w, int stride, int pad,
                                int in_h, int in_w) {
    const long patches = static_cast<long>(dy.h) * dy.w;
    const int f_len = w.c * w.h * w.w;
    std::vector<T> dcols(static_cast<size_t>(dy.n) * patches * f_len);
    for (int in = 0; in < dy.n; ++in)
        for (long p = 0; p < patches; ++p)
            detail::conv_patch_dcol(&dy.v[static_cast<size_t>(in) * dy.c * patches + p],
                                    patches, w.v.data(),
                                    &dcols[(static_cast<size_t>(in) * patches + p) * f_len],
                                    dy.c, f_len);
    Tensor<T> dx(dy.n, w.c, in_h, in_w);
    for (int in = 0; in < dy.n; ++in)
        for (int ic = 0; ic < w.c; ++ic)
            for (int iy = 0; iy < in_h; ++iy)
                detail::col2im_row(&dcols[static_cast<size_t>(in) * patches * f_len], w.h,
                                   stride, pad, dy.h, dy.w, f_len, ic, iy,
                                   &dx.v[dx.idx(in, ic, iy, 0)], in_w);
    return dx;
}

template <typename T>
void conv2d_backward_weights(const Tensor<T>& dy, const Tensor<T>& x, int stride, int pad,
                             Tensor<T>& dw, std::vector<T>& db) {
    const long patches = static_cast<long>(dy.h) * dy.w;
    const int f_len = dw.c * dw.h * dw.w;
    std::vector<T> cols(static_cast<size_t>(x.n) * patches * f_len);
    for (int in = 0; in < x.n; ++in)
        for (long p = 0; p < patches; ++p)
            detail::im2col_patch(x, dw.h, stride, pad, in, static_cast<int>(p / dy.w),
                                 static_cast<int>(p % dy.w),
                                 &cols[(static_cast<size_t>(in) * patches + p) * f_len]);
    for (int oc = 0; oc < dw.n; ++oc)
        detail::conv_dw_row(dy.v.data(), cols.data(), dy.n, dw.n, patches, f_len, oc,
                            &dw.v[static_cast<size_t>(oc) * f_len], &db[oc]);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i)
        y.v[i] = x.v[i] * detail::sigmoid_scalar(x.v[i]);
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) {
        const T s = detail::sigmoid_scalar(x.v[i]);
        dx.v[i] = dy.v[i] * s * (T(1) + x.v[i] * (T(1) - s));
    }
    return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = detail::sigmoid_scalar(x.v[i]);
    return y;
}

// dx from cached output y = sigmoid(x).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    Tensor<T> dx(y.n, y.c, y.h, y.w);
    for (size_t i = 0; i < y.v.size(); ++i)
        dx.v[i] = dy.v[i] * y.v[i] * (T(1) - y.v[i]);
    return dx;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
    const auto ay = detail::bilinear_axis<T>(x.h, oh);
    const auto axx = detail::bilinear_axis<T>(x.w, ow);
    Tensor<T> y(x.n, x.c, oh, ow);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const T fy = ay.f[oy], fx = axx.f[ox];
                    y.at(in, ic, oy, ox) =
                        (T(1) - fy) * ((T(1) - fx) * x.at(in, ic, ay.i0[oy], axx.i0[ox]) +
                                       fx * x.at(in, ic, ay.i0[oy], axx.i1[ox])) +
                        fy * ((T(1) - fx) * x.at(in, ic, ay.i1[oy], axx.i0[ox]) +
                              fx * x.at(in, ic, ay.i1[oy], axx.i1[ox]));
                }
    return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& dy, int ih, int iw) {
    const auto ly = detail::bilinear_axis_adjoint<T>(ih, dy.h);
    const auto lx = detail::bilinear_axis_adjoint<T>(iw, dy.w);
    Tensor<T> dx(dy.n, dy.c, ih, iw);
    for (int in = 0; in < dy.n; ++in)
        for (int ic = 0; ic < dy.c; ++ic)
            for (int iy = 0; iy < ih; ++iy)
                for (int ix = 0; ix < iw; ++ix) {
                    T acc = T(0);
                    for (const auto& [oy, wy] : ly[iy])
                        for (const auto& [ox, wx] : lx[ix])
                            acc += wy * wx * dy.at(in, ic, oy, ox);
                    dx.at(in, ic, iy, ix) = acc;
                }
    return dx;
}

template <typename T>
Tensor<T> upsample2x_nearest(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h * 2, x.w * 2);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox)
                    y.at(in, ic, oy, ox) = x.at(in, ic, oy / 2, ox / 2);
    return y;
}

template <typename T>
Tensor<T> upsample2x_nearest_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
    for (int in = 0; in < dy.n; ++in)
        for (int ic = 0; ic < dy.c; ++ic)
            for (int iy = 0; iy < dx.h; ++iy)
                for (int ix = 0; ix < dx.w; ++ix)
                    dx.at(in, ic, iy, ix) =
                        dy.at(in, ic, 2 * iy, 2 * ix) + dy.at(in, ic, 2 * iy, 2 * ix + 1) +
                        dy.at(in, ic, 2 * iy + 1, 2 * ix) +
                        dy.at(in, ic, 2 * iy + 1, 2 * ix + 1);
    return dx;
}

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
    if (sigma <= 0.0) return x;
    const auto taps = detail::gaussian_taps<T>(sigma);
    Tensor<T> tmp(x.n, x.c, x.h, x.w);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix)
                    tmp.at(in, ic, iy, ix) =
                        detail::blur_pass_element(x, taps, true, in, ic, iy, ix);
    Tensor<T> y(x.n, x.c, x.h, x.w);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix)
                    y.at(in, ic, iy, ix) =
                        detail::blur_pass_element(tmp, taps, false, in, ic, iy, ix);
    return y;
}

template <typename T>
Tensor<T> resample_bicubic(const Tensor<T>& x, int oh, int ow) {
    const auto ay = detail::bicubic_axis<T>(x.h, oh);
    const auto ax = detail::bicubic_axis<T>(x.w, ow);
    Tensor<T> tmp(x.n, x.c, oh, x.w);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int oy = 0; oy < oh; ++oy)
                for (int ix = 0; ix < x.w; ++ix) {
                    T acc = T(0);
                    for (int i = 0; i < ay.count[oy]; ++i) {
                        const int sy = std::clamp(ay.lo[oy] + i, 0, x.h - 1);
                        acc += ay.weights[ay.offset[oy] + i] * x.at(in, ic, sy, ix);
                    }
                    tmp.at(in, ic, oy, ix) = acc;
                }
    Tensor<T> y(x.n, x.c, oh, ow);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = T(0);
                    for (int i = 0; i < ax.count[ox]; ++i) {
                        const int sx = std::clamp(ax.lo[ox] + i, 0, x.w - 1);
                        acc += ax.weights[ax.offset[ox] + i] * tmp.at(in, ic, oy, sx);
                    }
                    y.at(in, ic, oy, ox) = acc;
                }
    return y;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP variants. Same element helpers, loops flattened for parallelism.
// ---------------------------------------------------------------------------

namespace omp {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b,
                         int stride, int pad) {
    const int oh = (x.h + 2 * pad - w.h) / stride + 1;
    const int ow = (x.w + 2 * pad - w.w) / stride + 1;
    const long patches = static_cast<long>(oh) * ow;
    const int f_len = x.c * w.h * w.w;
    FLOWSR_REQUIRE(w.n <= detail::kMaxChannels, "conv2d: too many output channels");
    Tensor<T> y(x.n, w.n, oh, ow);
    std::vector<T> cols(static_cast<size_t>(x.n) * patches * f_len);
    const long units = static_cast<long>(x.n) * patches;
#pragma omp parallel for schedule(static)
    for (long u = 0; u < units; ++u) {
        const int in = static_cast<int>(u / patches);
        const long p = u % patches;
        detail::im2col_patch(x, w.h, stride, pad, in, static_cast<int>(p / ow),
                             static_cast<int>(p % ow), &cols[static_cast<size_t>(u) * f_len]);
    }
    const std::vector<T> wt = detail::transpose_weights(w);
#pragma omp parallel for schedule(static)
    for (long u = 0; u < units; ++u) {
        const int in = static_cast<int>(u / patches);
        const long p = u % patches;
        detail::conv_patch_axpy(&cols[static_cast<size_t>(u) * f_len], wt.data(),
                                b.empty() ? nullptr : b.data(),
                                &y.v[static_cast<size_t>(in) * w.n * patches + p], patches,
                                w.n, f_len);
    }
    return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& w, int stride, int pad,
                                int in_h, int in_w) {
    const long patches = static_cast<long>(dy.h) * dy.w;
    const int f_len = w.c * w.h * w.w;
    std::vector<T> dcols(static_cast<size_t>(dy.n) * patches * f_len);
    const long units = static_cast<long>(dy.n) * patches;
#pragma omp parallel for schedule(static)
    for (long u = 0; u < units; ++u) {
        const int in = static_cast<int>(u / patches);
        const long p = u % patches;
        detail::conv_patch_dcol(&dy.v[static_cast<size_t>(in) * dy.c * patches + p], patches,
                                w.v.data(), &dcols[static_cast<size_t>(u) * f_len], dy.c,
                                f_len);
    }
    Tensor<T> dx(dy.n, w.c, in_h, in_w);
    const long rows = static_cast<long>(dy.n) * w.c * in_h;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int iy = static_cast<int>(r % in_h);
        const int ic = static_cast<int>((r / in_h) % w.c);
        const int in = static_cast<int>(r / in_h / w.c);
        detail::col2im_row(&dcols[static_cast<size_t>(in) * patches * f_len], w.h, stride, pad,
                           dy.h, dy.w, f_len, ic, iy, &dx.v[dx.idx(in, ic, iy, 0)], in_w);
    }
    return dx;
}

template <typename T>
void conv2d_backward_weights(const Tensor<T>& dy, const Tensor<T>& x, int stride, int pad,
                             Tensor<T>& dw, std::vector<T>& db) {
    const long patches = static_cast<long>(dy.h) * dy.w;
    const int f_len = dw.c * dw.h * dw.w;
    std::vector<T> cols(static_cast<size_t>(x.n) * patches * f_len);
    const long units = static_cast<long>(x.n) * patches;
#pragma omp parallel for schedule(static)
    for (long u = 0; u < units; ++u) {
        const int in = static_cast<int>(u / patches);
        const long p = u % patches;
        detail::im2col_patch(x, dw.h, stride, pad, in, static_cast<int>(p / dy.w),
                             static_cast<int>(p % dy.w), &cols[static_cast<size_t>(u) * f_len]);
    }
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < dw.n; ++oc)
        detail::conv_dw_row(dy.v.data(), cols.data(), dy.n, dw.n, patches, f_len, oc,
                            &dw.v[static_cast<size_t>(oc) * f_len], &db[oc]);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const long count = static_cast<long>(x.v.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < count; ++i) y.v[i] = x.v[i] * detail::sigmoid_scalar(x.v[i]);
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    const long count = static_cast<long>(x.v.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < count; ++i) {
        const T s = detail::sigmoid_scalar(x.v[i]);
        dx.v[i] = dy.v[i] * s * (T(1) + x.v[i] * (T(1) - s));
    }
    return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const long count = static_cast<long>(x.v.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < count; ++i) y.v[i] = detail::sigmoid_scalar(x.v[i]);
    return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    Tensor<T> dx(y.n, y.c, y.h, y.w);
    const long count = static_cast<long>(y.v.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < count; ++i) dx.v[i] = dy.v[i] * y.v[i] * (T(1) - y.v[i]);
    return dx;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
    const auto ay = detail::bilinear_axis<T>(x.h, oh);
    const auto axx = detail::bilinear_axis<T>(x.w, ow);
    Tensor<T> y(x.n, x.c, oh, ow);
    const long rows = static_cast<long>(x.n) * x.c * oh;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int oy = static_cast<int>(r % oh);
        const int ic = static_cast<int>((r / oh) % x.c);
        const int in = static_cast<int>(r / oh / x.c);
        for (int ox = 0; ox < ow; ++ox) {
            const T fy = ay.f[oy], fx = axx.f[ox];
            y.at(in, ic, oy, ox) =
                (T(1) - fy) * ((T(1) - fx) * x.at(in, ic, ay.i0[oy], axx.i0[ox]) +
                               fx * x.at(in, ic, ay.i0[oy], axx.i1[ox])) +
                fy * ((T(1) - fx) * x.at(in, ic, ay.i1[oy], axx.i0[ox]) +
                      fx * x.at(in, ic, ay.i1[oy], axx.i1[ox]));
        }
    }
    return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& dy, int ih, int iw) {
    const auto ly = detail::bilinear_axis_adjoint<T>(ih, dy.h);
    const auto lx = detail::bilinear_axis_adjoint<T>(iw, dy.w);
    Tensor<T> dx(dy.n, dy.c, ih, iw);
    const long rows = static_cast<long>(dy.n) * dy.c * ih;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int iy = static_cast<int>(r % ih);
        const int ic = static_cast<int>((r / ih) % dy.c);
        const int in = static_cast<int>(r / ih / dy.c);
        for (int ix = 0; ix < iw; ++ix) {
            T acc = T(0);
            for (const auto& [oy, wy] : ly[iy])
                for (const auto& [ox, wx] : lx[ix]) acc += wy * wx * dy.at(in, ic, oy, ox);
            dx.at(in, ic, iy, ix) = acc;
        }
    }
    return dx;
}

template <typename T>
Tensor<T> upsample2x_nearest(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h * 2, x.w * 2);
    const long rows = static_cast<long>(x.n) * x.c * y.h;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int oy = static_cast<int>(r % y.h);
        const int ic = static_cast<int>((r / y.h) % x.c);
        const int in = static_cast<int>(r / y.h / x.c);
        for (int ox = 0; ox < y.w; ++ox) y.at(in, ic, oy, ox) = x.at(in, ic, oy / 2, ox / 2);
    }
    return y;
}

template <typename T>
Tensor<T> upsample2x_nearest_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
    const long rows = static_cast<long>(dx.n) * dx.c * dx.h;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int iy = static_cast<int>(r % dx.h);
        const int ic = static_cast<int>((r / dx.h) % dx.c);
        const int in = static_cast<int>(r / dx.h / dx.c);
        for (int ix = 0; ix < dx.w; ++ix)
            dx.at(in, ic, iy, ix) =
                dy.at(in, ic, 2 * iy, 2 * ix) + dy.at(in, ic, 2 * iy, 2 * ix + 1) +
                dy.at(in, ic, 2 * iy + 1, 2 * ix) + dy.at(in, ic, 2 * iy + 1, 2 * ix + 1);
    }
    return dx;
}

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
    if (sigma <= 0.0) return x;
    const auto taps = detail::gaussian_taps<T>(sigma);
    Tensor<T> tmp(x.n, x.c, x.h, x.w);
    const long rows = static_cast<long>(x.n) * x.c * x.h;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int iy = static_cast<int>(r % x.h);
        const int ic = static_cast<int>((r / x.h) % x.c);
        const int in = static_cast<int>(r / x.h / x.c);
        for (int ix = 0; ix < x.w; ++ix)
            tmp.at(in, ic, iy, ix) = detail::blur_pass_element(x, taps, true, in, ic, iy, ix);
    }
    Tensor<T> y(x.n, x.c, x.h, x.w);
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const int iy = static_cast<int>(r % x.h);
        const int ic = static_cast<int>((r / x.h) % x.c);
        const int in = static_cast<int>(r / x.h / x.c);
        for (int ix = 0; ix < x.w; ++ix)
            y.at(in, ic, iy, ix) = detail::blur_pass_element(tmp, taps, false, in, ic, iy, ix);
    }
    return y;
}

template <typename T>
Tensor<T> resample_bicubic(const Tensor<T>& x, int oh, int ow) {
    const auto ay = detail::bicubic_axis<T>(x.h, oh);
    const auto ax = detail::bicubic_axis<T>(x.w, ow);
    Tensor<T> tmp(x.n, x.c, oh, x.w);
    const long rows_v = static_cast<long>(x.n) * x.c * oh;
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows_v; ++r) {
        const int oy = static_cast<int>(r % oh);
        const int ic = static_cast<int>((r / oh) % x.c);
        const int in = static_cast<int>(r / oh / x.c);
        for (int ix = 0; ix < x.w; ++ix) {
            T acc = T(0);
            for (int i = 0; i < ay.count[oy]; ++i) {
                const int sy = std::clamp(ay.lo[oy] + i, 0, x.h - 1);
                acc += ay.weights[ay.offset[oy] + i] * x.at(in, ic, sy, ix);
            }
            tmp.at(in, ic, oy, ix) = acc;
        }
    }
    Tensor<T> y(x.n, x.c, oh, ow);
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows_v; ++r) {
        const int oy = static_cast<int>(r % oh);
        const int ic = static_cast<int>((r / oh) % x.c);
        const int in = static_cast<int>(r / oh / x.c);
        for (int ox = 0; ox < ow; ++ox) {
            T acc = T(0);
            for (int i = 0; i < ax.count[ox]; ++i) {
                const int sx = std::clamp(ax.lo[ox] + i, 0, x.w - 1);
                acc += ax.weights[ax.offset[ox] + i] * tmp.at(in, ic, oy, sx);
            }
            y.at(in, ic, oy, ox) = acc;
        }
    }
    return y;
}

}  // namespace omp

// ---------------------------------------------------------------------------
// Dispatch by execution mode.
// ---------------------------------------------------------------------------

#define FLOWSR_DISPATCH(fn, ...)                    \
    (exec_mode() == Exec::Serial ? serial::fn(__VA_ARGS__) : omp::fn(__VA_ARGS__))

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b,
                         int stride, int pad) {
    return FLOWSR_DISPATCH(conv2d_forward, x, w, b, stride, pad);
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& w, int stride, int pad,
                                int in_h, int in_w) {
    return FLOWSR_DISPATCH(conv2d_backward_input, dy, w, stride, pad, in_h, in_w);
}

template <typename T>
void conv2d_backward_weights(const Tensor<T>& dy, const Tensor<T>& x, int stride, int pad,
                             Tensor<T>& dw, std::vector<T>& db) {
    if (exec_mode() == Exec::Serial)
        serial::conv2d_backward_weights(dy, x, stride, pad, dw, db);
    else
        omp::conv2d_backward_weights(dy, x, stride, pad, dw, db);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return FLOWSR_DISPATCH(silu, x);
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    return FLOWSR_DISPATCH(silu_backward, x, dy);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return FLOWSR_DISPATCH(sigmoid, x);
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    return FLOWSR_DISPATCH(sigmoid_backward, y, dy);
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
    return FLOWSR_DISPATCH(bilinear_resize, x, oh, ow);
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& dy, int ih, int iw) {
    return FLOWSR_DISPATCH(bilinear_resize_backward, dy, ih, iw);
}

template <typename T>
Tensor<T> upsample2x_nearest(const Tensor<T>& x) {
    return FLOWSR_DISPATCH(upsample2x_nearest, x);
}

template <typename T>
Tensor<T> upsample2x_nearest_backward(const Tensor<T>& dy) {
    return FLOWSR_DISPATCH(upsample2x_nearest_backward, dy);
}

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
    return FLOWSR_DISPATCH(gaussian_blur, x, sigma);
}

template <typename T>
Tensor<T> resample_bicubic(const Tensor<T>& x, int oh, int ow) {
    return FLOWSR_DISPATCH(resample_bicubic, x, oh, ow);
}

#undef FLOWSR_DISPATCH

// Pure permutations and small dense layers; serial on purpose (data movement
// or tiny activation vectors).

// (n, 4c, h, w) -> (n, c, 2h, 2w); channel 4*ch + 2*dy + dx lands at (dy, dx).
template <typename T>
Tensor<T> pixel_shuffle2x(const Tensor<T>& x) {
    FLOWSR_REQUIRE(x.c % 4 == 0, "pixel_shuffle2x: channels must be divisible by 4");
    Tensor<T> y(x.n, x.c / 4, x.h * 2, x.w * 2);
    for (int in = 0; in < x.n; ++in)
        for (int oc = 0; oc < y.c; ++oc)
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox)
                    y.at(in, oc, oy, ox) =
                        x.at(in, 4 * oc + 2 * (oy % 2) + (ox % 2), oy / 2, ox / 2);
    return y;
}

template <typename T>
Tensor<T> pixel_shuffle2x_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c * 4, dy.h / 2, dy.w / 2);
    for (int in = 0; in < dy.n; ++in)
        for (int oc = 0; oc < dy.c; ++oc)
            for (int oy = 0; oy < dy.h; ++oy)
                for (int ox = 0; ox < dy.w; ++ox)
                    dx.at(in, 4 * oc + 2 * (oy % 2) + (ox % 2), oy / 2, ox / 2) =
                        dy.at(in, oc, oy, ox);
    return dx;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b) {
    Tensor<T> y(x.n, w.n, 1, 1);
    for (int in = 0; in < x.n; ++in)
        for (int o = 0; o < w.n; ++o) {
            T acc = b.empty() ? T(0) : b[o];
            for (int i = 0; i < x.c; ++i) acc += x.at(in, i, 0, 0) * w.at(o, i, 0, 0);
            y.at(in, o, 0, 0) = acc;
        }
    return y;
}

template <typename T>
Tensor<T> linear_backward_input(const Tensor<T>& dy, const Tensor<T>& w) {
    Tensor<T> dx(dy.n, w.c, 1, 1);
    for (int in = 0; in < dy.n; ++in)
        for (int i = 0; i < w.c; ++i) {
            T acc = T(0);
            for (int o = 0; o < w.n; ++o) acc += dy.at(in, o, 0, 0) * w.at(o, i, 0, 0);
            dx.at(in, i, 0, 0) = acc;
        }
    return dx;
}

template <typename T>
void linear_backward_weights(const Tensor<T>& dy, const Tensor<T>& x, Tensor<T>& dw,
                             std::vector<T>& db) {
    for (int o = 0; o < dw.n; ++o)
        for (int i = 0; i < dw.c; ++i) {
            T acc = T(0);
            for (int in = 0; in < dy.n; ++in) acc += dy.at(in, o, 0, 0) * x.at(in, i, 0, 0);
            dw.at(o, i, 0, 0) += acc;
        }
    for (int o = 0; o < dw.n; ++o) {
        T acc = T(0);
        for (int in = 0; in < dy.n; ++in) acc += dy.at(in, o, 0, 0);
        db[o] += acc;
    }
}

}  // namespace flowsr::kernels
