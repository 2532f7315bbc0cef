// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "genassets/tensor.hpp"

namespace ga {

struct ImageU8 {
  int width = 0, height = 0, channels = 0;  // channels: 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;         // row-major, interleaved
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// [H,W,3] float in [0,1] <-> 8-bit RGB with round-to-nearest quantization.
ImageU8 tensor_to_rgb8(const Tensorf& t);
Tensorf rgb8_to_tensor(const ImageU8& img);

ImageU8 gray8(int width, int height, const std::vector<std::uint8_t>& values);

}  // namespace ga
