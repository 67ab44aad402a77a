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

// Minimal layer library with explicit backward passes.
//
// Layers are stateless with respect to activations: `forward` is const and
// callers keep whatever inputs/outputs the matching `backward` needs. This
// lets one layer (e.g. the shared RPN conv) run on several pyramid levels in
// the same step. `backward` accumulates into the parameter gradients.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "oln/kernels.hpp"
#include "oln/tensor.hpp"

namespace oln::nn {

/// What a parameter is used for. Classifier parameters are the ones a
/// localization-only model must not have.
enum class ParamRole { kBackbone, kHead, kRegression, kQuality, kClassifier, kMask, kMaskIou };

const char* to_string(ParamRole role);

struct Parameter {
  std::string name;
  ParamRole role = ParamRole::kHead;
  Tensor value;
  Tensor grad;
  Tensor velocity;
};

/// Owns every parameter of a model; addresses are stable for the store's
/// lifetime.
class ParameterStore {
 public:
  Parameter& add(std::string name, ParamRole role, std::vector<int> shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Kaiming-normal weights (fan-in, ReLU gain), zero bias.
void init_kaiming(Parameter& weight, int fan_in, std::mt19937_64& rng);
void init_normal(Parameter& weight, double stddev, std::mt19937_64& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, ParamRole role, int in_channels,
         int out_channels, int kernel, int stride);

  /// x is CxHxW or NxCxHxW.
  Tensor forward(const Tensor& x) const;
  /// Returns dL/dx (empty when need_input_grad is false).
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_input_grad = true) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }

 private:
  kernels::ConvShape shape_for(const Tensor& x) const;

  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 3;
  int stride_ = 1;
};

/// 2x2, stride-2 transposed convolution (mask-head upsampling).
class Deconv2x2 {
 public:
  Deconv2x2() = default;
  Deconv2x2(ParameterStore& store, const std::string& name, ParamRole role, int in_channels,
            int out_channels);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_input_grad = true) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int in_channels_ = 0;
  int out_channels_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, ParamRole role, int in_features,
         int out_features);

  /// x is N x in_features (any tensor whose trailing dims multiply to it).
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_input_grad = true) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }
  int in_features() const { return in_features_; }
  int out_features() const { return out_features_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int in_features_ = 0;
  int out_features_ = 0;
};

Tensor relu(const Tensor& x);
/// Gradient of relu given its *output*.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

struct MaxPoolResult {
  Tensor output;
  std::vector<std::int32_t> argmax;
};

/// 2x2 stride-2 max pooling on CxHxW or NxCxHxW (H, W even).
MaxPoolResult max_pool2x2(const Tensor& x);
Tensor max_pool2x2_backward(const Tensor& x, const MaxPoolResult& pooled, const Tensor& dy);

/// Nearest-neighbour 2x upsampling of CxHxW, cropped to out_h x out_w.
Tensor upsample2x(const Tensor& x, int out_h, int out_w);
Tensor upsample2x_backward(const Tensor& dy, int in_h, int in_w);

void add_inplace(Tensor& acc, const Tensor& x);

}  // namespace oln::nn
