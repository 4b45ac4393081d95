// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "flowsr/tensor.hpp"

namespace flowsr {

// Images are n=1, c=3 tensors with values in [0,1].
using ImageBuffer = Tensor<double>;

void clamp01(ImageBuffer& img);

// 8-bit RGB PNG round trip.
void write_png(const std::string& path, const ImageBuffer& img);
ImageBuffer read_png(const std::string& path);

// Horizontal/vertical concatenation for comparison grids.
ImageBuffer hstack(const std::vector<ImageBuffer>& imgs);
ImageBuffer vstack(const std::vector<ImageBuffer>& imgs);

}  // namespace flowsr
