/*
 * Copyright 2026 The OLN Proposals Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oln/tensor.hpp"

namespace oln {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }
};

/// Throws IoError.
void write_png(const std::string& path, const RgbImage& image);
/// Grey, grey+alpha, RGB and RGBA inputs are converted to RGB. Throws IoError.
RgbImage read_png(const std::string& path);

/// 3 x H x W float tensor, (v / 255 - 0.5) / 0.25 per channel.
Tensor to_network_input(const RgbImage& image);

/// Writes a little-endian float32 .npy array with the given shape.
void write_npy(const std::string& path, const std::vector<float>& values, const std::vector<int>& shape);
/// Reads a float32 .npy written by write_npy. Throws IoError / ParseError.
std::vector<float> read_npy(const std::string& path, std::vector<int>* shape = nullptr);

}  // namespace oln
