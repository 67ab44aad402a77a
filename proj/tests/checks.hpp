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

// Checks shared by the unit tests and the acceptance runner: loss
// gradients on toy heads, the classifier-parameter audit and the sampling
// contract on synthetic scenes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oln/losses.hpp"
#include "oln/model.hpp"
#include "oln/synthetic.hpp"
#include "oln/targets.hpp"

namespace checks {

// ---------------------------------------------------------------------------
// Toy-head gradients

struct GradientResult {
  std::string name;
  double max_relative_error = 0.0;
  int checked = 0;
};

// A dense head: out[n][o] = b[o] + sum_f w[o][f] x[n][f], optionally passed
// through a sigmoid. The loss sees the head outputs; parameters are w then b.
struct ToyHead {
  int samples = 12;
  int features = 6;
  int outputs = 1;
  bool sigmoid = false;
  std::vector<double> x;

  std::vector<double> forward(const std::vector<double>& params) const {
    std::vector<double> out(static_cast<std::size_t>(samples) * outputs);
    const std::size_t nw = static_cast<std::size_t>(outputs) * features;
    for (int n = 0; n < samples; ++n) {
      for (int o = 0; o < outputs; ++o) {
        double v = params[nw + o];
        for (int f = 0; f < features; ++f) v += params[o * features + f] * x[n * features + f];
        out[n * outputs + o] = sigmoid ? 1.0 / (1.0 + std::exp(-v)) : v;
      }
    }
    return out;
  }

  // Chain rule from d loss / d out to d loss / d params.
  std::vector<double> backward(const std::vector<double>& params, const std::vector<double>& out,
                               const std::vector<double>& dout) const {
    const std::size_t nw = static_cast<std::size_t>(outputs) * features;
    std::vector<double> g(params.size(), 0.0);
    for (int n = 0; n < samples; ++n) {
      for (int o = 0; o < outputs; ++o) {
        const double y = out[n * outputs + o];
        const double d = dout[n * outputs + o] * (sigmoid ? y * (1.0 - y) : 1.0);
        g[nw + o] += d;
        for (int f = 0; f < features; ++f) g[o * features + f] += d * x[n * features + f];
      }
    }
    return g;
  }
};

using LossFn = std::function<oln::loss::LossResult<double>(const std::vector<double>&)>;

// Central differences on every parameter. The loss is piecewise smooth in
// the head outputs with kinks at target + offset; parameters whose +-eps
// perturbation moves an output across a kink are skipped.
inline GradientResult check_head(const std::string& name, const ToyHead& head, std::vector<double> params,
                                 const LossFn& loss, const std::vector<double>& target = {},
                                 const std::vector<double>& kink_offsets = {}) {
  GradientResult r{name};
  const auto out = head.forward(params);
  const auto analytic = head.backward(params, out, loss(out).grad);
  const double eps = 1e-4;
  auto shifted = [&](std::size_t i, double delta) {
    const double keep = params[i];
    params[i] = keep + delta;
    auto o = head.forward(params);
    params[i] = keep;
    return o;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto up = shifted(i, eps), down = shifted(i, -eps);
    bool crosses = false;
    for (std::size_t k = 0; k < target.size() && !crosses; ++k) {
      for (double off : kink_offsets) {
        if ((up[k] - target[k] - off) * (down[k] - target[k] - off) <= 0.0) crosses = true;
      }
    }
    if (crosses) continue;
    const double numeric = (loss(up).value - loss(down).value) / (2 * eps);
    // The floor keeps exact-zero gradients (balanced L1 signs) from turning
    // difference roundoff into a unit relative error.
    const double rel = std::abs(numeric - analytic[i]) / std::max(1e-6, std::abs(numeric) + std::abs(analytic[i]));
    r.max_relative_error = std::max(r.max_relative_error, rel);
    ++r.checked;
  }
  return r;
}

inline ToyHead make_head(std::mt19937_64& rng, int outputs, bool sigmoid) {
  ToyHead h;
  h.outputs = outputs;
  h.sigmoid = sigmoid;
  std::normal_distribution<double> n(0.0, 1.0);
  h.x.resize(static_cast<std::size_t>(h.samples) * h.features);
  for (double& v : h.x) v = n(rng);
  return h;
}

inline std::vector<double> init_params(const ToyHead& h, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  std::vector<double> p(static_cast<std::size_t>(h.outputs) * (h.features + 1));
  for (double& v : p) v = n(rng);
  return p;
}

// Losses of the objectness and classifier branches, each on a toy head
// with the output shape the model uses.
inline std::vector<GradientResult> loss_gradients(std::uint64_t seed, int repeats = 20) {
  using oln::loss::bce_with_logits;
  using oln::loss::l1;
  using oln::loss::smooth_l1;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<GradientResult> results = {{"l1_centerness"}, {"l1_iou"}, {"smooth_l1_mask_iou"}, {"bce_classifier"},
                                         {"l1_lrtb_regression"}};
  auto merge = [](GradientResult& into, const GradientResult& r) {
    into.max_relative_error = std::max(into.max_relative_error, r.max_relative_error);
    into.checked += r.checked;
  };
  for (int rep = 0; rep < repeats; ++rep) {
    {
      // Centerness targets in [0, 1] with a few invalid samples.
      const ToyHead h = make_head(rng, 1, false);
      std::vector<double> t(h.samples);
      std::vector<std::uint8_t> valid(h.samples);
      for (int i = 0; i < h.samples; ++i) {
        t[i] = u(rng);
        valid[i] = i % 5 != 0;
      }
      merge(results[0], check_head("", h, init_params(h, rng), [&](const std::vector<double>& p) {
              return l1<double>(p, t, valid);
            }, t, {0.0}));
    }
    {
      const ToyHead h = make_head(rng, 1, false);
      std::vector<double> t(h.samples);
      for (double& v : t) v = 0.3 + 0.7 * u(rng);
      merge(results[1], check_head("", h, init_params(h, rng), [&](const std::vector<double>& p) {
              return l1<double>(p, t);
            }, t, {0.0}));
    }
    {
      const ToyHead h = make_head(rng, 1, false);
      std::vector<double> t(h.samples);
      for (double& v : t) v = u(rng);
      merge(results[2], check_head("", h, init_params(h, rng), [&](const std::vector<double>& p) {
              return smooth_l1<double>(p, t, 0.1);
            }, t, {-0.1, 0.1}));
    }
    {
      const ToyHead h = make_head(rng, 1, false);
      std::vector<double> t(h.samples);
      for (double& v : t) v = coin(rng) ? 1.0 : 0.0;
      merge(results[3], check_head("", h, init_params(h, rng), [&](const std::vector<double>& p) {
              return bce_with_logits<double>(p, t);
            }));
    }
    {
      // Four regression outputs per sample, validity per sample.
      const ToyHead h = make_head(rng, 4, false);
      std::vector<double> t(static_cast<std::size_t>(h.samples) * 4);
      for (double& v : t) v = 2.0 * u(rng) - 1.0;
      std::vector<std::uint8_t> valid(h.samples);
      for (int i = 0; i < h.samples; ++i) valid[i] = i % 3 != 1;
      merge(results[4], check_head("", h, init_params(h, rng), [&](const std::vector<double>& p) {
              return l1<double>(p, t, valid, 4);
            }, t, {0.0}));
    }
  }
  return results;
}

// ---------------------------------------------------------------------------
// Classifier-parameter audit

struct AuditResult {
  std::string row;
  std::size_t parameters = 0;
  std::size_t classifier_by_role = 0;
  std::size_t classifier_by_name = 0;
};

inline AuditResult audit_head(const std::string& row) {
  const oln::OlnModel model(oln::head_presets::by_name(row), oln::ModelConfig{}, 1);
  AuditResult r{row};
  for (const oln::nn::Parameter* p : model.parameters().all()) {
    ++r.parameters;
    if (p->role == oln::nn::ParamRole::kClassifier) ++r.classifier_by_role;
    if (p->name.find("cls") != std::string::npos || p->name.find("class") != std::string::npos) {
      ++r.classifier_by_name;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sampling contract

struct SamplingResult {
  int scenes = 0;
  std::size_t oln_samples = 0;
  std::size_t oln_violations = 0;  // sampled with matched IoU <= 0.3
  std::size_t roi_samples = 0;
  std::size_t roi_violations = 0;
  int frcnn_background_min = 1 << 30;
  int frcnn_background_max = -1;
  int frcnn_total_min = 1 << 30;
};

inline oln::Box jitter_box(const oln::Box& b, std::mt19937_64& rng, double amount) {
  std::normal_distribution<double> n(0.0, amount);
  const double w = b.width(), h = b.height();
  oln::Box o{b.x1 + n(rng) * w, b.y1 + n(rng) * h, b.x2 + n(rng) * w, b.y2 + n(rng) * h};
  if (o.x2 <= o.x1) std::swap(o.x1, o.x2);
  if (o.y2 <= o.y1) std::swap(o.y1, o.y2);
  o.x2 = std::max(o.x2, o.x1 + 1.0);
  o.y2 = std::max(o.y2, o.y1 + 1.0);
  return o;
}

// Scenes of `size` x `size` with the seen objects as training ground
// truth; anchors from the model's pyramid and RoIs jittered around the
// ground truth.
inline SamplingResult sampling_contract(int scenes, std::uint64_t seed, int size = 256) {
  oln::SceneSpec spec;
  spec.width = spec.height = size;
  spec.min_objects = 3;
  spec.max_objects = 10;
  spec.seed = seed;
  const oln::OlnModel model(oln::head_presets::oln_box(), oln::ModelConfig{}, 0);
  const oln::AnchorGrid grid = model.anchors(size, size);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  SamplingResult r;
  for (int s = 0; s < scenes; ++s) {
    const oln::Scene scene = oln::generate_scene(spec, static_cast<std::uint64_t>(s));
    std::vector<oln::Box> gts;
    for (const auto& o : scene.objects) {
      if (o.seen) gts.push_back(o.box);
    }
    ++r.scenes;
    const oln::MatchResult m = oln::match_anchors(grid.boxes, gts);
    const auto oln_t = oln::sample_rpn_training(m, oln::sampler_presets::oln_rpn(), s, grid.boxes, gts);
    for (int idx : oln_t.indices) {
      ++r.oln_samples;
      if (!(m.matched_gt[idx] >= 0 && m.max_iou[idx] > 0.3)) ++r.oln_violations;
    }
    const auto fr = oln::sample_rpn_training(m, oln::sampler_presets::faster_rcnn_rpn(), s, grid.boxes, gts);
    const int bg = static_cast<int>(fr.negative_count());
    r.frcnn_background_min = std::min(r.frcnn_background_min, bg);
    r.frcnn_background_max = std::max(r.frcnn_background_max, bg);
    r.frcnn_total_min = std::min(r.frcnn_total_min, static_cast<int>(fr.size()));

    std::vector<oln::Box> rois = gts;
    for (const auto& g : gts) {
      for (int k = 0; k < 20; ++k) rois.push_back(jitter_box(g, rng, 0.25));
    }
    const oln::MatchResult rm = oln::match_anchors(rois, gts);
    const auto roi_t = oln::sample_training(rm, oln::sampler_presets::oln_roi(), s);
    for (int idx : roi_t.indices) {
      ++r.roi_samples;
      if (!(rm.matched_gt[idx] >= 0 && rm.max_iou[idx] > 0.3)) ++r.roi_violations;
    }
  }
  return r;
}

}  // namespace checks
