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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oln/model.hpp"

namespace oln {
namespace {

TrainingSample toy_sample(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  TrainingSample s;
  s.image = Tensor({3, size, size});
  for (float& v : s.image.values()) v = u(rng);
  s.boxes = {Box{8, 10, 40, 44}, Box{50, 30, 86, 60}};
  for (const Box& b : s.boxes) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
    for (int y = static_cast<int>(b.y1); y < static_cast<int>(b.y2); ++y) {
      for (int x = static_cast<int>(b.x1); x < static_cast<int>(b.x2); ++x) {
        if ((x + y) % 3 != 0) m[static_cast<std::size_t>(y) * size + x] = 1;
      }
    }
    s.masks.push_back(std::move(m));
  }
  return s;
}

// Directional derivative check: the loss difference along a random
// parameter direction must match the analytic gradient projected on it.
void directional_check(const HeadConfig& head, nn::ParamRole role) {
  OlnModel model(head, ModelConfig{}, 11);
  TrainSettings settings;
  settings.train_proposals = 0;  // RoIs are the ground truth only: no proposal drift
  const TrainingSample sample = toy_sample(96, 3);

  model.parameters().zero_grad();
  model.accumulate_gradients(sample, settings, 5);

  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  double analytic = 0.0;
  for (nn::Parameter* p : model.parameters().all()) {
    std::vector<double> d(p->value.numel(), 0.0);
    if (p->role == role) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = n(rng);
        analytic += d[i] * p->grad[i];
      }
    }
    dirs.push_back(std::move(d));
  }
  auto shifted = [&](double eps) {
    auto params = model.parameters().all();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < dirs[k].size(); ++i) {
        params[k]->value[i] += static_cast<float>(eps * dirs[k][i]);
      }
    }
    model.parameters().zero_grad();
    const double loss = model.accumulate_gradients(sample, settings, 5).total();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < dirs[k].size(); ++i) {
        params[k]->value[i] -= static_cast<float>(eps * dirs[k][i]);
      }
    }
    return loss;
  };
  const double eps = 1e-5;  // small enough to stay clear of L1 and ReLU kinks
  const double numeric = (shifted(eps) - shifted(-eps)) / (2 * eps);
  EXPECT_NEAR(numeric, analytic, 0.03 * std::max(1e-3, std::abs(analytic)))
      << "role " << nn::to_string(role);
}

HeadConfig mask_without_iou() {
  HeadConfig h = head_presets::oln_mask();
  h.mask_iou = false;
  return h;
}

// The mask-IoU target binarizes the mask logits, so it is piecewise
// constant in every parameter upstream of them; those checks drop the IoU
// branch.
TEST(ModelGradient, BackboneRpnOnly) { directional_check(head_presets::oln_rpn(), nn::ParamRole::kBackbone); }
TEST(ModelGradient, BackboneOlnBox) { directional_check(head_presets::oln_box(), nn::ParamRole::kBackbone); }
TEST(ModelGradient, BackboneMask) { directional_check(mask_without_iou(), nn::ParamRole::kBackbone); }
TEST(ModelGradient, HeadOlnBox) { directional_check(head_presets::oln_box(), nn::ParamRole::kHead); }
TEST(ModelGradient, HeadMask) { directional_check(mask_without_iou(), nn::ParamRole::kHead); }
TEST(ModelGradient, RegressionOlnBox) { directional_check(head_presets::oln_box(), nn::ParamRole::kRegression); }
TEST(ModelGradient, QualityOlnBox) { directional_check(head_presets::oln_box(), nn::ParamRole::kQuality); }
TEST(ModelGradient, ClassifierFasterRcnn) {
  directional_check(head_presets::faster_rcnn(), nn::ParamRole::kClassifier);
}
TEST(ModelGradient, HeadFasterRcnn) { directional_check(head_presets::faster_rcnn(), nn::ParamRole::kHead); }
TEST(ModelGradient, BackboneFasterRcnn) {
  directional_check(head_presets::faster_rcnn(), nn::ParamRole::kBackbone);
}
TEST(ModelGradient, MaskLogits) { directional_check(mask_without_iou(), nn::ParamRole::kMask); }
TEST(ModelGradient, MaskIou) { directional_check(head_presets::oln_mask(), nn::ParamRole::kMaskIou); }

}  // namespace
}  // namespace oln
