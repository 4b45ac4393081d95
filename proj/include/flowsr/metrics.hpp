// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Full-reference evaluation: PSNR and SSIM on the BT.601 luminance channel,
// the frozen-encoder perceptual proxy, a Frechet feature distance over
// pooled encoder features, and the one-evaluation-per-image counter.

#pragma once

#include <string>
#include <vector>

#include "flowsr/degradation.hpp"
#include "flowsr/nets.hpp"

namespace flowsr {

// Y = 0.299 R + 0.587 G + 0.114 B (full-range BT.601), returned as (n,1,h,w).
Tensor<double> rgb_to_y(const ImageBuffer& img);

// 10 log10(1 / MSE_Y), peak 1.0, capped at 100 dB for identical inputs.
double psnr_y(const ImageBuffer& a, const ImageBuffer& b);

// Mean local SSIM on Y, 11x11 Gaussian window sigma 1.5, C1=0.01^2,
// C2=0.03^2, valid windows only. Requires min dimension >= 11.
double ssim_y(const ImageBuffer& a, const ImageBuffer& b);

// Pooled frozen-encoder feature vector (deep tap + latent, global average).
std::vector<double> pooled_features(const ImageBuffer& img, Encoder<double>& featnet);
int pooled_feature_dim(const Encoder<double>& featnet);

// ||muA - muB||^2 + tr(SA + SB - 2 (SA SB)^(1/2)) between Gaussian fits of
// pooled features. Requires |set| >= feature dim + 1.
double frechet_feature_distance(const std::vector<ImageBuffer>& set_a,
                                const std::vector<ImageBuffer>& set_b,
                                Encoder<double>& featnet);

// Same distance from precomputed feature rows (one vector per sample).
double frechet_from_features(const std::vector<std::vector<double>>& feats_a,
                             const std::vector<std::vector<double>>& feats_b);

struct MetricsRow {
    std::string id;
    double psnr_y = 0;
    double ssim_y = 0;
    double perceptual = 0;
    long denoiser_evals = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    double mean_psnr = 0, std_psnr = 0;
    double mean_ssim = 0, std_ssim = 0;
    double mean_perceptual = 0, std_perceptual = 0;
    double ffd = 0;
};

MetricsReport evaluate(StudentModel<double>& student, const std::vector<ImagePair>& test_pairs,
                       AutoEncoder<double>& ae);

std::string report_to_csv(const MetricsReport& report);
void write_report_csv(const std::string& path, const MetricsReport& report);

}  // namespace flowsr
