// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Times the serial reference kernels against the OpenMP variants on the
// shapes this project actually runs, and verifies both give identical bits.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <omp.h>

#include "flowsr/kernels.hpp"
#include "flowsr/rng.hpp"

using namespace flowsr;
using kernels::Exec;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

struct Case {
    std::string name;
    std::function<Tensor<double>()> run;
    int reps;
};

}  // namespace

int main() {
    Rng rng(42);
    // batch-4 shapes from the training loop
    const auto img = rng.normal_tensor<double>(4, 3, 64, 64);
    const auto feat32 = rng.normal_tensor<double>(4, 32, 16, 16);
    const auto w_img = rng.normal_tensor<double>(16, 3, 3, 3);
    const auto w_feat = rng.normal_tensor<double>(32, 32, 3, 3);
    std::vector<double> b16(16, 0.0), b32(32, 0.0);
    const auto dy_feat = rng.normal_tensor<double>(4, 32, 16, 16);
    const auto lq = rng.normal_tensor<double>(4, 3, 16, 16);

    std::vector<Case> cases = {
        {"conv2d_fwd 3->16 s2 64x64",
         [&] { return kernels::conv2d_forward(img, w_img, b16, 2, 1); }, 20},
        {"conv2d_fwd 32->32 16x16",
         [&] { return kernels::conv2d_forward(feat32, w_feat, b32, 1, 1); }, 20},
        {"conv2d_bwd_input 32->32",
         [&] { return kernels::conv2d_backward_input(dy_feat, w_feat, 1, 1, 16, 16); }, 20},
        {"bilinear 16->64", [&] { return kernels::bilinear_resize(lq, 64, 64); }, 50},
        {"gaussian_blur s=1.2 64x64", [&] { return kernels::gaussian_blur(img, 1.2); }, 20},
        {"bicubic 64->16", [&] { return kernels::resample_bicubic(img, 16, 16); }, 50},
        {"silu 4x32x16x16", [&] { return kernels::silu(feat32); }, 200},
    };

    std::printf("threads available: %d\n", omp_get_max_threads());
    std::printf("%-28s %10s %10s %8s %s\n", "kernel", "serial ms", "omp ms", "speedup",
                "bitwise");
    for (auto& c : cases) {
        kernels::exec_mode() = Exec::Serial;
        const auto ref = c.run();
        const double ts = time_ms([&] { kernels::exec_mode() = Exec::Serial; (void)c.run(); },
                                  c.reps);
        kernels::exec_mode() = Exec::Parallel;
        const auto par = c.run();
        const double tp = time_ms([&] { kernels::exec_mode() = Exec::Parallel; (void)c.run(); },
                                  c.reps);
        const bool same = max_abs_diff(ref, par) == 0.0;
        std::printf("%-28s %10.3f %10.3f %7.2fx %s\n", c.name.c_str(), ts, tp, ts / tp,
                    same ? "identical" : "DIFFER");
    }
    kernels::exec_mode() = Exec::Parallel;
    return 0;
}
