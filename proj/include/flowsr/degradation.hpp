// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Paired training data: procedural HQ images (gradients + shapes +
// band-limited texture, one shape class per image for conditioning) and a
// single-round blur -> downsample -> noise -> block-transform degradation.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsr/image.hpp"
#include "flowsr/rng.hpp"

namespace flowsr {

struct DegradationRecipe {
    double blur_sigma_lo = 0.4;
    double blur_sigma_hi = 1.6;
    int downscale_factor = 4;
    double noise_sigma_lo = 0.02;
    double noise_sigma_hi = 0.09;
    int compression_block = 8;
    double compression_keep = 0.5;  // fraction of retained low-frequency coeffs
    uint64_t order_seed = 0;

    void validate() const;
};

constexpr int kNumShapeClasses = 4;  // disc, box, triangle, stripes

struct HqImage {
    ImageBuffer img;
    int class_id = 1;  // 1..kNumShapeClasses; 0 is the null conditioning id
};

struct ImagePair {
    ImageBuffer lq;  // (size/f) x (size/f)
    ImageBuffer hq;  // size x size
    int class_id = 1;
};

// Deterministic given seed; per-image streams derive from (seed, index).
std::vector<HqImage> synth_hq(int n, int size, uint64_t seed);

ImageBuffer degrade(const ImageBuffer& hq, const DegradationRecipe& recipe, Rng& rng);

std::vector<ImagePair> make_pairs(const std::vector<HqImage>& hq_set,
                                  const DegradationRecipe& recipe, uint64_t seed);

// Ratio of mean spectral energy above Nyquist/4 between the set and a pure
// gradient image of the same size; recorded in the dataset manifest.
double spectral_detail_score(const std::vector<HqImage>& set);

struct Dataset {
    std::vector<ImagePair> pairs;
    DegradationRecipe recipe;
    uint64_t seed = 0;
    double detail_score = 0;
};

void write_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

// In-memory generation (pairs quantized through 8-bit like the on-disk path,
// so both routes produce identical data).
Dataset make_dataset(int n, int size, uint64_t seed, const DegradationRecipe& recipe);

}  // namespace flowsr
