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

// Compute kernels behind the network layers and the geometry hot loops.
//
// Every kernel exists twice: `serial::` is the straightforward reference
// used by the tests, `parallel::` is the OpenMP version used by the layers.
// Parallel kernels partition work so that each output element is written by
// exactly one thread, which keeps results bitwise identical to a single
// threaded run.

#include <cstddef>
#include <span>
#include <vector>

#include "oln/geometry.hpp"

namespace oln::kernels {

struct ConvShape {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return in_channels * kernel * kernel; }
};

/// Region description for RoIAlign, in input-image coordinates.
struct RoiAlignShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int pooled = 7;
  int sampling_ratio = 2;
  double spatial_scale = 1.0;
};

namespace serial {

/// c = op(a) * op(b) (+ c when accumulate). op(a) is m x k, op(b) is k x n,
/// all row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const float> a,
          std::span<const float> b, std::span<float> c, bool accumulate);

/// Direct convolution, no im2col. Reference for the parallel path.
void conv2d(const ConvShape& s, std::span<const float> input, std::span<const float> weight,
            std::span<const float> bias, std::span<float> output);

void im2col(const ConvShape& s, std::span<const float> input, std::span<float> columns);
void col2im(const ConvShape& s, std::span<const float> columns, std::span<float> input_grad);

void roi_align(const RoiAlignShape& s, std::span<const float> features, std::span<const Box> rois,
               std::span<float> output);
void roi_align_backward(const RoiAlignShape& s, std::span<const float> output_grad,
                        std::span<const Box> rois, std::span<float> feature_grad);

/// rows x cols IoU matrix.
std::vector<double> iou_matrix(std::span<const Box> rows, std::span<const Box> cols);

}  // namespace serial

namespace parallel {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const float> a,
          std::span<const float> b, std::span<float> c, bool accumulate);

void im2col(const ConvShape& s, std::span<const float> input, std::span<float> columns);
void col2im(const ConvShape& s, std::span<const float> columns, std::span<float> input_grad);

/// im2col + gemm.
void conv2d(const ConvShape& s, std::span<const float> input, std::span<const float> weight,
            std::span<const float> bias, std::span<float> output);

void roi_align(const RoiAlignShape& s, std::span<const float> features, std::span<const Box> rois,
               std::span<float> output);
void roi_align_backward(const RoiAlignShape& s, std::span<const float> output_grad,
                        std::span<const Box> rois, std::span<float> feature_grad);

std::vector<double> iou_matrix(std::span<const Box> rows, std::span<const Box> cols);

}  // namespace parallel

int max_threads();

}  // namespace oln::kernels
