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

#include "oln/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace oln::kernels {
namespace {

// Row i of c = op(a) * op(b). Shared by the serial and parallel gemm so both
// perform the same floating-point operations in the same order.
inline void gemm_row(bool trans_a, bool trans_b, int i, int m, int n, int k, const float* a,
                     const float* b, float* c, bool accumulate) {
  float* crow = c + static_cast<std::ptrdiff_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0f);
  if (!trans_b) {
    for (int p = 0; p < k; ++p) {
      const float av = trans_a ? a[static_cast<std::ptrdiff_t>(p) * m + i]
                               : a[static_cast<std::ptrdiff_t>(i) * k + p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<std::ptrdiff_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (int j = 0; j < n; ++j) {
      const float* bcol = b + static_cast<std::ptrdiff_t>(j) * k;
      float sum = 0.0f;
      if (!trans_a) {
        const float* arow = a + static_cast<std::ptrdiff_t>(i) * k;
        for (int p = 0; p < k; ++p) sum += arow[p] * bcol[p];
      } else {
        for (int p = 0; p < k; ++p) sum += a[static_cast<std::ptrdiff_t>(p) * m + i] * bcol[p];
      }
      crow[j] += sum;
    }
  }
}

inline void im2col_channel(const ConvShape& s, int c, const float* input, float* columns) {
  const int oh = s.out_height();
  const int ow = s.out_width();
  for (int ky = 0; ky < s.kernel; ++ky) {
    for (int kx = 0; kx < s.kernel; ++kx) {
      float* out = columns + static_cast<std::ptrdiff_t>((c * s.kernel + ky) * s.kernel + kx) * oh * ow;
      const float* plane = input + static_cast<std::ptrdiff_t>(c) * s.in_height * s.in_width;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * s.stride - s.pad + ky;
        for (int x = 0; x < ow; ++x) {
          const int ix = x * s.stride - s.pad + kx;
          const bool inside = iy >= 0 && iy < s.in_height && ix >= 0 && ix < s.in_width;
          out[y * ow + x] = inside ? plane[iy * s.in_width + ix] : 0.0f;
        }
      }
    }
  }
}

inline void col2im_channel(const ConvShape& s, int c, const float* columns, float* grad) {
  const int oh = s.out_height();
  const int ow = s.out_width();
  float* plane = grad + static_cast<std::ptrdiff_t>(c) * s.in_height * s.in_width;
  for (int ky = 0; ky < s.kernel; ++ky) {
    for (int kx = 0; kx < s.kernel; ++kx) {
      const float* col =
          columns + static_cast<std::ptrdiff_t>((c * s.kernel + ky) * s.kernel + kx) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * s.stride - s.pad + ky;
        if (iy < 0 || iy >= s.in_height) continue;
        for (int x = 0; x < ow; ++x) {
          const int ix = x * s.stride - s.pad + kx;
          if (ix < 0 || ix >= s.in_width) continue;
          plane[iy * s.in_width + ix] += col[y * ow + x];
        }
      }
    }
  }
}

struct BilinearTap {
  std::array<int, 4> index{};
  std::array<float, 4> weight{};
  bool valid = false;
};

// Bilinear taps with the border handling of the common RoIAlign
// implementations: samples more than one pixel outside are zero, samples
// just outside are clamped to the border.
inline BilinearTap bilinear_tap(double y, double x, int height, int width) {
  BilinearTap tap;
  if (y < -1.0 || y > height || x < -1.0 || x > width) return tap;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y);
  int x0 = static_cast<int>(x);
  int y1 = 0;
  int x1 = 0;
  if (y0 >= height - 1) {
    y0 = y1 = height - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= width - 1) {
    x0 = x1 = width - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0;
  const double lx = x - x0;
  const double hy = 1.0 - ly;
  const double hx = 1.0 - lx;
  tap.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  tap.weight = {static_cast<float>(hy * hx), static_cast<float>(hy * lx),
                static_cast<float>(ly * hx), static_cast<float>(ly * lx)};
  tap.valid = true;
  return tap;
}

// All taps of one output bin; the weights already include the 1/count
// averaging factor.
std::vector<BilinearTap> bin_taps(const RoiAlignShape& s, const Box& roi, int py, int px) {
  const double start_x = roi.x1 * s.spatial_scale - 0.5;
  const double start_y = roi.y1 * s.spatial_scale - 0.5;
  const double roi_w = (roi.x2 - roi.x1) * s.spatial_scale;
  const double roi_h = (roi.y2 - roi.y1) * s.spatial_scale;
  const double bin_w = roi_w / s.pooled;
  const double bin_h = roi_h / s.pooled;
  const int n = s.sampling_ratio;
  std::vector<BilinearTap> taps;
  taps.reserve(static_cast<std::size_t>(n * n));
  const float inv = 1.0f / static_cast<float>(n * n);
  for (int iy = 0; iy < n; ++iy) {
    const double y = start_y + py * bin_h + (iy + 0.5) * bin_h / n;
    for (int ix = 0; ix < n; ++ix) {
      const double x = start_x + px * bin_w + (ix + 0.5) * bin_w / n;
      BilinearTap tap = bilinear_tap(y, x, s.height, s.width);
      for (float& w : tap.weight) w *= inv;
      taps.push_back(tap);
    }
  }
  return taps;
}

inline void roi_align_one(const RoiAlignShape& s, const float* features, int c,
                          const std::vector<std::vector<BilinearTap>>& taps, float* out) {
  const float* plane = features + static_cast<std::ptrdiff_t>(c) * s.height * s.width;
  for (int bin = 0; bin < s.pooled * s.pooled; ++bin) {
    float sum = 0.0f;
    for (const BilinearTap& tap : taps[bin]) {
      if (!tap.valid) continue;
      for (int q = 0; q < 4; ++q) sum += tap.weight[q] * plane[tap.index[q]];
    }
    out[bin] = sum;
  }
}

std::vector<std::vector<BilinearTap>> roi_taps(const RoiAlignShape& s, const Box& roi) {
  std::vector<std::vector<BilinearTap>> taps(static_cast<std::size_t>(s.pooled * s.pooled));
  for (int py = 0; py < s.pooled; ++py) {
    for (int px = 0; px < s.pooled; ++px) taps[py * s.pooled + px] = bin_taps(s, roi, py, px);
  }
  return taps;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const float> a,
          std::span<const float> b, std::span<float> c, bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_row(trans_a, trans_b, i, m, n, k, a.data(), b.data(), c.data(), accumulate);
}

void conv2d(const ConvShape& s, std::span<const float> input, std::span<const float> weight,
            std::span<const float> bias, std::span<float> output) {
  const int oh = s.out_height();
  const int ow = s.out_width();
  for (int oc = 0; oc < s.out_channels; ++oc) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < s.in_channels; ++ic) {
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = y * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_height) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = x * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.in_width) continue;
              acc += static_cast<double>(
                         weight[((oc * s.in_channels + ic) * s.kernel + ky) * s.kernel + kx]) *
                     input[(ic * s.in_height + iy) * s.in_width + ix];
            }
          }
        }
        output[(oc * oh + y) * ow + x] = static_cast<float>(acc);
      }
    }
  }
}

void im2col(const ConvShape& s, std::span<const float> input, std::span<float> columns) {
  for (int c = 0; c < s.in_channels; ++c) im2col_channel(s, c, input.data(), columns.data());
}

void col2im(const ConvShape& s, std::span<const float> columns, std::span<float> input_grad) {
  for (int c = 0; c < s.in_channels; ++c) col2im_channel(s, c, columns.data(), input_grad.data());
}

void roi_align(const RoiAlignShape& s, std::span<const float> features, std::span<const Box> rois,
               std::span<float> output) {
  const std::size_t bins = static_cast<std::size_t>(s.pooled * s.pooled);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto taps = roi_taps(s, rois[r]);
    for (int c = 0; c < s.channels; ++c) {
      roi_align_one(s, features.data(), c, taps,
                    output.data() + (r * s.channels + c) * bins);
    }
  }
}

void roi_align_backward(const RoiAlignShape& s, std::span<const float> output_grad,
                        std::span<const Box> rois, std::span<float> feature_grad) {
  const std::size_t bins = static_cast<std::size_t>(s.pooled * s.pooled);
  const std::size_t plane = static_cast<std::size_t>(s.height * s.width);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto taps = roi_taps(s, rois[r]);
    for (int c = 0; c < s.channels; ++c) {
      const float* g = output_grad.data() + (r * s.channels + c) * bins;
      float* fg = feature_grad.data() + c * plane;
      for (std::size_t bin = 0; bin < bins; ++bin) {
        for (const BilinearTap& tap : taps[bin]) {
          if (!tap.valid) continue;
          for (int q = 0; q < 4; ++q) fg[tap.index[q]] += tap.weight[q] * g[bin];
        }
      }
    }
  }
}

std::vector<double> iou_matrix(std::span<const Box> rows, std::span<const Box> cols) {
  std::vector<double> out(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out[i * cols.size() + j] = iou(rows[i], cols[j]);
  }
  return out;
}

}  // namespace serial

namespace parallel {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const float> a,
          std::span<const float> b, std::span<float> c, bool accumulate) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 32768)
  for (int i = 0; i < m; ++i) gemm_row(trans_a, trans_b, i, m, n, k, a.data(), b.data(), c.data(), accumulate);
}

void im2col(const ConvShape& s, std::span<const float> input, std::span<float> columns) {
#pragma omp parallel for schedule(static) if (s.in_channels > 1)
  for (int c = 0; c < s.in_channels; ++c) im2col_channel(s, c, input.data(), columns.data());
}

void col2im(const ConvShape& s, std::span<const float> columns, std::span<float> input_grad) {
#pragma omp parallel for schedule(static) if (s.in_channels > 1)
  for (int c = 0; c < s.in_channels; ++c) col2im_channel(s, c, columns.data(), input_grad.data());
}

void conv2d(const ConvShape& s, std::span<const float> input, std::span<const float> weight,
            std::span<const float> bias, std::span<float> output) {
  const int spatial = s.out_height() * s.out_width();
  std::vector<float> columns(static_cast<std::size_t>(s.patch_size()) * spatial);
  im2col(s, input, columns);
  gemm(false, false, s.out_channels, spatial, s.patch_size(), weight, columns, output, false);
  if (!bias.empty()) {
#pragma omp parallel for schedule(static) if (s.out_channels > 1)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      float* row = output.data() + static_cast<std::ptrdiff_t>(oc) * spatial;
      for (int j = 0; j < spatial; ++j) row[j] += bias[oc];
    }
  }
}

void roi_align(const RoiAlignShape& s, std::span<const float> features, std::span<const Box> rois,
               std::span<float> output) {
  const std::size_t bins = static_cast<std::size_t>(s.pooled * s.pooled);
  const long n = static_cast<long>(rois.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (long r = 0; r < n; ++r) {
    const auto taps = roi_taps(s, rois[r]);
    for (int c = 0; c < s.channels; ++c) {
      roi_align_one(s, features.data(), c, taps,
                    output.data() + (static_cast<std::size_t>(r) * s.channels + c) * bins);
    }
  }
}

void roi_align_backward(const RoiAlignShape& s, std::span<const float> output_grad,
                        std::span<const Box> rois, std::span<float> feature_grad) {
  const std::size_t bins = static_cast<std::size_t>(s.pooled * s.pooled);
  const std::size_t plane = static_cast<std::size_t>(s.height * s.width);
  std::vector<std::vector<std::vector<BilinearTap>>> taps(rois.size());
  for (std::size_t r = 0; r < rois.size(); ++r) taps[r] = roi_taps(s, rois[r]);
  // Channels are disjoint slices of the gradient; RoIs are visited in the
  // same order as the serial kernel.
#pragma omp parallel for schedule(static) if (s.channels > 1)
  for (int c = 0; c < s.channels; ++c) {
    float* fg = feature_grad.data() + c * plane;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const float* g = output_grad.data() + (r * s.channels + c) * bins;
      for (std::size_t bin = 0; bin < bins; ++bin) {
        for (const BilinearTap& tap : taps[r][bin]) {
          if (!tap.valid) continue;
          for (int q = 0; q < 4; ++q) fg[tap.index[q]] += tap.weight[q] * g[bin];
        }
      }
    }
  }
}

std::vector<double> iou_matrix(std::span<const Box> rows, std::span<const Box> cols) {
  std::vector<double> out(rows.size() * cols.size());
  const long n = static_cast<long>(rows.size());
#pragma omp parallel for schedule(static) if (n * static_cast<long>(cols.size()) > 4096)
  for (long i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out[i * cols.size() + j] = iou(rows[i], cols[j]);
  }
  return out;
}

}  // namespace parallel
}  // namespace oln::kernels
