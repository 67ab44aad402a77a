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

#include "oln/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oln/error.hpp"

namespace oln::nn {

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::kBackbone: return "backbone";
    case ParamRole::kHead: return "head";
    case ParamRole::kRegression: return "regression";
    case ParamRole::kQuality: return "quality";
    case ParamRole::kClassifier: return "classifier";
    case ParamRole::kMask: return "mask";
    case ParamRole::kMaskIou: return "mask_iou";
  }
  return "unknown";
}

Parameter& ParameterStore::add(std::string name, ParamRole role, std::vector<int> shape) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->role = role;
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  p->velocity = Tensor(std::move(shape));
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0f);
}

void init_kaiming(Parameter& weight, int fan_in, std::mt19937_64& rng) {
  init_normal(weight, std::sqrt(2.0 / std::max(fan_in, 1)), rng);
}

void init_normal(Parameter& weight, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : weight.value.values()) v = static_cast<float>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(ParameterStore& store, const std::string& name, ParamRole role, int in_channels,
               int out_channels, int kernel, int stride)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0) {
    throw ConfigError("conv " + name + ": non-positive dimension");
  }
  weight_ = &store.add(name + ".weight", role, {out_channels, in_channels, kernel, kernel});
  bias_ = &store.add(name + ".bias", role, {out_channels});
}

kernels::ConvShape Conv2d::shape_for(const Tensor& x) const {
  const std::size_t r = x.rank();
  if ((r != 3 && r != 4) || x.dim(r - 3) != in_channels_) {
    throw InputError("conv " + weight_->name + ": expected " + std::to_string(in_channels_) +
                     " input channels, got " + x.shape_string());
  }
  kernels::ConvShape s;
  s.in_channels = in_channels_;
  s.in_height = x.dim(r - 2);
  s.in_width = x.dim(r - 1);
  s.out_channels = out_channels_;
  s.kernel = kernel_;
  s.stride = stride_;
  s.pad = kernel_ / 2;
  return s;
}

Tensor Conv2d::forward(const Tensor& x) const {
  const kernels::ConvShape s = shape_for(x);
  const int batch = x.rank() == 4 ? x.dim(0) : 1;
  std::vector<int> out_shape = {out_channels_, s.out_height(), s.out_width()};
  if (x.rank() == 4) out_shape.insert(out_shape.begin(), batch);
  Tensor y(out_shape);
  const std::size_t in_size = static_cast<std::size_t>(s.in_channels) * s.in_height * s.in_width;
  const std::size_t out_size = static_cast<std::size_t>(out_channels_) * s.out_height() * s.out_width();
  for (int n = 0; n < batch; ++n) {
    kernels::parallel::conv2d(s, x.span().subspan(n * in_size, in_size), weight_->value.span(),
                              bias_->value.span(), y.span().subspan(n * out_size, out_size));
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool need_input_grad) const {
  const kernels::ConvShape s = shape_for(x);
  const int batch = x.rank() == 4 ? x.dim(0) : 1;
  const int spatial = s.out_height() * s.out_width();
  const std::size_t in_size = static_cast<std::size_t>(s.in_channels) * s.in_height * s.in_width;
  const std::size_t out_size = static_cast<std::size_t>(out_channels_) * spatial;
  if (dy.numel() != out_size * batch) {
    throw InputError("conv " + weight_->name + ": gradient shape " + dy.shape_string());
  }
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  std::vector<float> columns(static_cast<std::size_t>(s.patch_size()) * spatial);
  std::vector<float> dcolumns;
  if (need_input_grad) dcolumns.resize(columns.size());
  auto& bias_grad = bias_->grad.values();
  for (int n = 0; n < batch; ++n) {
    auto in = x.span().subspan(n * in_size, in_size);
    auto g = dy.span().subspan(n * out_size, out_size);
    kernels::parallel::im2col(s, in, columns);
    kernels::parallel::gemm(false, true, out_channels_, s.patch_size(), spatial, g, columns,
                            weight_->grad.span(), true);
    for (int oc = 0; oc < out_channels_; ++oc) {
      float sum = 0.0f;
      for (int j = 0; j < spatial; ++j) sum += g[static_cast<std::size_t>(oc) * spatial + j];
      bias_grad[oc] += sum;
    }
    if (need_input_grad) {
      kernels::parallel::gemm(true, false, s.patch_size(), spatial, out_channels_,
                              weight_->value.span(), g, dcolumns, false);
      kernels::parallel::col2im(s, dcolumns, dx.span().subspan(n * in_size, in_size));
    }
  }
  return dx;
}

// ------------------------------------------------------------- Deconv2x2

Deconv2x2::Deconv2x2(ParameterStore& store, const std::string& name, ParamRole role,
                     int in_channels, int out_channels)
    : in_channels_(in_channels), out_channels_(out_channels) {
  weight_ = &store.add(name + ".weight", role, {in_channels, out_channels, 2, 2});
  bias_ = &store.add(name + ".bias", role, {out_channels});
}

// y[n, oc, 2i+ky, 2j+kx] = b[oc] + sum_ic x[n, ic, i, j] * w[ic, oc, ky, kx]
Tensor Deconv2x2::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels_) {
    throw InputError("deconv " + weight_->name + ": bad input " + x.shape_string());
  }
  const int batch = x.dim(0);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const int hw = h * w;
  const int taps = out_channels_ * 4;
  Tensor y({batch, out_channels_, 2 * h, 2 * w});
  std::vector<float> columns(static_cast<std::size_t>(taps) * hw);
  for (int n = 0; n < batch; ++n) {
    auto in = x.span().subspan(static_cast<std::size_t>(n) * in_channels_ * hw,
                               static_cast<std::size_t>(in_channels_) * hw);
    kernels::parallel::gemm(true, false, taps, hw, in_channels_, weight_->value.span(), in,
                            columns, false);
    float* out = y.span().data() + static_cast<std::size_t>(n) * out_channels_ * 4 * hw;
    for (int oc = 0; oc < out_channels_; ++oc) {
      for (int k = 0; k < 4; ++k) {
        const int ky = k / 2;
        const int kx = k % 2;
        const float* col = columns.data() + static_cast<std::size_t>(oc * 4 + k) * hw;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            out[(static_cast<std::size_t>(oc) * 2 * h + 2 * i + ky) * 2 * w + 2 * j + kx] =
                col[i * w + j] + bias_->value[oc];
          }
        }
      }
    }
  }
  return y;
}

Tensor Deconv2x2::backward(const Tensor& x, const Tensor& dy, bool need_input_grad) const {
  const int batch = x.dim(0);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const int hw = h * w;
  const int taps = out_channels_ * 4;
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  std::vector<float> dcolumns(static_cast<std::size_t>(taps) * hw);
  for (int n = 0; n < batch; ++n) {
    const float* g = dy.span().data() + static_cast<std::size_t>(n) * out_channels_ * 4 * hw;
    for (int oc = 0; oc < out_channels_; ++oc) {
      float bsum = 0.0f;
      for (int k = 0; k < 4; ++k) {
        const int ky = k / 2;
        const int kx = k % 2;
        float* col = dcolumns.data() + static_cast<std::size_t>(oc * 4 + k) * hw;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const float v = g[(static_cast<std::size_t>(oc) * 2 * h + 2 * i + ky) * 2 * w + 2 * j + kx];
            col[i * w + j] = v;
            bsum += v;
          }
        }
      }
      bias_->grad[oc] += bsum;
    }
    auto in = x.span().subspan(static_cast<std::size_t>(n) * in_channels_ * hw,
                               static_cast<std::size_t>(in_channels_) * hw);
    kernels::parallel::gemm(false, true, in_channels_, taps, hw, in, dcolumns,
                            weight_->grad.span(), true);
    if (need_input_grad) {
      kernels::parallel::gemm(false, false, in_channels_, hw, taps, weight_->value.span(),
                              dcolumns,
                              dx.span().subspan(static_cast<std::size_t>(n) * in_channels_ * hw,
                                                static_cast<std::size_t>(in_channels_) * hw),
                              false);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(ParameterStore& store, const std::string& name, ParamRole role, int in_features,
               int out_features)
    : in_features_(in_features), out_features_(out_features) {
  if (in_features <= 0 || out_features <= 0) throw ConfigError("linear " + name + ": bad size");
  weight_ = &store.add(name + ".weight", role, {out_features, in_features});
  bias_ = &store.add(name + ".bias", role, {out_features});
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.numel() % in_features_ != 0) {
    throw InputError("linear " + weight_->name + ": input " + x.shape_string());
  }
  const int n = static_cast<int>(x.numel() / in_features_);
  Tensor y({n, out_features_});
  kernels::parallel::gemm(false, true, n, out_features_, in_features_, x.span(),
                          weight_->value.span(), y.span(), false);
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_features_; ++o) {
      y[static_cast<std::size_t>(i) * out_features_ + o] += bias_->value[o];
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy, bool need_input_grad) const {
  const int n = static_cast<int>(x.numel() / in_features_);
  kernels::parallel::gemm(true, false, out_features_, in_features_, n, dy.span(), x.span(),
                          weight_->grad.span(), true);
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_features_; ++o) {
      bias_->grad[o] += dy[static_cast<std::size_t>(i) * out_features_ + o];
    }
  }
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor(x.shape());
    kernels::parallel::gemm(false, false, n, in_features_, out_features_, dy.span(),
                            weight_->value.span(), dx.span(), false);
  }
  return dx;
}

// ------------------------------------------------------------ elementwise

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.numel(); ++i) {
    if (!(y[i] > 0.0f)) dx[i] = 0.0f;
  }
  return dx;
}

MaxPoolResult max_pool2x2(const Tensor& x) {
  const std::size_t r = x.rank();
  const int h = x.dim(r - 2);
  const int w = x.dim(r - 1);
  const int planes = static_cast<int>(x.numel() / (static_cast<std::size_t>(h) * w));
  std::vector<int> shape = x.shape();
  shape[r - 2] = h / 2;
  shape[r - 1] = w / 2;
  MaxPoolResult out{Tensor(shape), std::vector<std::int32_t>()};
  out.argmax.resize(out.output.numel());
  const int oh = h / 2;
  const int ow = w / 2;
  for (int p = 0; p < planes; ++p) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t arg = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::int32_t idx = (p * h + 2 * i + dy) * w + 2 * j + dx;
            if (x[idx] > best) {
              best = x[idx];
              arg = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + i) * ow + j;
        out.output[o] = best;
        out.argmax[o] = arg;
      }
    }
  }
  return out;
}

Tensor max_pool2x2_backward(const Tensor& x, const MaxPoolResult& pooled, const Tensor& dy) {
  Tensor dx(x.shape());
  for (std::size_t o = 0; o < pooled.argmax.size(); ++o) dx[pooled.argmax[o]] += dy[o];
  return dx;
}

Tensor upsample2x(const Tensor& x, int out_h, int out_w) {
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  Tensor y({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < out_h; ++i) {
      const int si = std::min(i / 2, h - 1);
      for (int j = 0; j < out_w; ++j) {
        const int sj = std::min(j / 2, w - 1);
        y[(static_cast<std::size_t>(ch) * out_h + i) * out_w + j] =
            x[(static_cast<std::size_t>(ch) * h + si) * w + sj];
      }
    }
  }
  return y;
}

Tensor upsample2x_backward(const Tensor& dy, int in_h, int in_w) {
  const int c = dy.dim(0);
  const int out_h = dy.dim(1);
  const int out_w = dy.dim(2);
  Tensor dx({c, in_h, in_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < out_h; ++i) {
      const int si = std::min(i / 2, in_h - 1);
      for (int j = 0; j < out_w; ++j) {
        const int sj = std::min(j / 2, in_w - 1);
        dx[(static_cast<std::size_t>(ch) * in_h + si) * in_w + sj] +=
            dy[(static_cast<std::size_t>(ch) * out_h + i) * out_w + j];
      }
    }
  }
  return dx;
}

void add_inplace(Tensor& acc, const Tensor& x) {
  if (acc.empty()) {
    acc = x;
    return;
  }
  if (acc.numel() != x.numel()) {
    throw InputError("add: " + acc.shape_string() + " vs " + x.shape_string());
  }
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += x[i];
}

}  // namespace oln::nn
