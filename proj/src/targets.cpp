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

#include "oln/targets.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "oln/error.hpp"
#include "oln/kernels.hpp"

namespace oln {

void SamplerConfig::validate() const {
  if (num_samples <= 0) throw ConfigError("sampler: num_samples must be positive");
  if (!(background_fraction >= 0.0 && background_fraction <= 1.0)) {
    throw ConfigError("sampler: background_fraction must be in [0, 1]");
  }
  if (!(positive_floor >= 0.0 && positive_floor <= 1.0) ||
      !(negative_ceiling >= 0.0 && negative_ceiling <= 1.0)) {
    throw ConfigError("sampler: IoU thresholds must be in [0, 1]");
  }
  if (negative_ceiling > positive_floor) {
    throw ConfigError("sampler: negative_ceiling must not exceed positive_floor");
  }
}

namespace sampler_presets {

SamplerConfig oln_rpn() { return {256, 0.0, 0.3, 0.1, false}; }
SamplerConfig oln_rpn_bg1() { return {256, 1.0 / 256.0, 0.3, 0.1, false}; }
SamplerConfig oln_roi() { return {64, 0.0, 0.3, 0.3, false}; }
SamplerConfig faster_rcnn_rpn() { return {256, 0.5, 0.7, 0.3, true}; }
SamplerConfig faster_rcnn_rpn_low() { return {256, 0.5, 0.3, 0.1, true}; }
SamplerConfig faster_rcnn_rpn_bg1() { return {256, 1.0 / 256.0, 0.7, 0.3, true}; }
SamplerConfig faster_rcnn_rpn_bg1_low() { return {256, 1.0 / 256.0, 0.3, 0.1, true}; }
SamplerConfig faster_rcnn_roi() { return {64, 0.75, 0.5, 0.5, false}; }
SamplerConfig faster_rcnn_roi_low() { return {64, 0.75, 0.3, 0.3, false}; }

std::vector<std::string> names() {
  return {"oln_rpn",           "oln_rpn_bg1",         "oln_roi",
          "faster_rcnn_rpn",   "faster_rcnn_rpn_low", "faster_rcnn_rpn_bg1",
          "faster_rcnn_rpn_bg1_low", "faster_rcnn_roi", "faster_rcnn_roi_low"};
}

SamplerConfig by_name(const std::string& name) {
  if (name == "oln_rpn") return oln_rpn();
  if (name == "oln_rpn_bg1") return oln_rpn_bg1();
  if (name == "oln_roi") return oln_roi();
  if (name == "faster_rcnn_rpn") return faster_rcnn_rpn();
  if (name == "faster_rcnn_rpn_low") return faster_rcnn_rpn_low();
  if (name == "faster_rcnn_rpn_bg1") return faster_rcnn_rpn_bg1();
  if (name == "faster_rcnn_rpn_bg1_low") return faster_rcnn_rpn_bg1_low();
  if (name == "faster_rcnn_roi") return faster_rcnn_roi();
  if (name == "faster_rcnn_roi_low") return faster_rcnn_roi_low();
  throw ConfigError("unknown sampler preset '" + name + "'");
}

}  // namespace sampler_presets

std::size_t TrainingTargets::positive_count() const {
  return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), std::uint8_t{1}));
}

MatchResult match_anchors(std::span<const Box> anchors, std::span<const Box> gts, double min_iou) {
  MatchResult m;
  m.matched_gt.assign(anchors.size(), -1);
  m.max_iou.assign(anchors.size(), 0.0);
  if (gts.empty()) return m;
  const std::vector<double> ious = kernels::parallel::iou_matrix(anchors, gts);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = ious[a * gts.size() + g];
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    m.max_iou[a] = best;
    if (arg >= 0 && best > min_iou) m.matched_gt[a] = arg;
  }
  return m;
}

namespace {

std::vector<int> pick(std::vector<int> pool, std::size_t count, std::mt19937_64& rng) {
  if (pool.size() <= count) return pool;
  // Partial Fisher-Yates: the first `count` entries become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, pool.size() - 1);
    std::swap(pool[i], pool[dist(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

TrainingTargets sample_training(const MatchResult& match, const SamplerConfig& cfg,
                                std::uint64_t seed, std::span<const Box> anchors,
                                std::span<const Box> gts, std::span<const std::uint8_t> negative_blocked) {
  cfg.validate();
  const std::size_t n = match.size();
  if (!negative_blocked.empty() && negative_blocked.size() != n) {
    throw InputError("sampler: negative_blocked does not match the match result");
  }
  std::vector<std::uint8_t> is_pos(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (match.matched_gt[i] >= 0 && match.max_iou[i] > cfg.positive_floor) is_pos[i] = 1;
  }
  if (cfg.low_quality_matches && !anchors.empty() && !gts.empty()) {
    if (anchors.size() != n) throw InputError("sampler: anchors do not match the match result");
    for (const Box& g : gts) {
      double best = 0.0;
      std::size_t arg = n;
      for (std::size_t a = 0; a < n; ++a) {
        const double v = iou(anchors[a], g);
        if (v > best) {
          best = v;
          arg = a;
        }
      }
      if (arg < n && best > cfg.negative_ceiling && match.matched_gt[arg] >= 0) is_pos[arg] = 1;
    }
  }

  std::vector<int> pos_pool;
  std::vector<int> neg_pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_pos[i]) {
      pos_pool.push_back(static_cast<int>(i));
    } else if (match.max_iou[i] < cfg.negative_ceiling && (negative_blocked.empty() || !negative_blocked[i])) {
      neg_pool.push_back(static_cast<int>(i));
    }
  }

  const auto neg_wanted =
      static_cast<std::size_t>(std::llround(cfg.background_fraction * cfg.num_samples));
  const std::size_t pos_wanted = static_cast<std::size_t>(cfg.num_samples) - neg_wanted;

  std::mt19937_64 rng(seed);
  std::vector<int> pos = pick(std::move(pos_pool), pos_wanted, rng);
  std::vector<int> neg = pick(std::move(neg_pool), neg_wanted, rng);

  TrainingTargets t;
  std::vector<std::pair<int, std::uint8_t>> all;
  for (int i : pos) all.emplace_back(i, 1);
  for (int i : neg) all.emplace_back(i, 0);
  std::sort(all.begin(), all.end());
  for (const auto& [idx, p] : all) {
    t.indices.push_back(idx);
    t.positive.push_back(p);
    t.label.push_back(p ? 1.0f : 0.0f);
    t.quality.push_back(0.0f);
    t.regression.push_back({0.0f, 0.0f, 0.0f, 0.0f});
    t.regression_valid.push_back(0);
  }
  return t;
}

TrainingTargets sample_rpn_training(const MatchResult& match, const SamplerConfig& cfg,
                                    std::uint64_t seed, std::span<const Box> anchors,
                                    std::span<const Box> gts, std::span<const std::uint8_t> negative_blocked) {
  return sample_training(match, cfg, seed, anchors, gts, negative_blocked);
}

std::vector<std::uint8_t> overlaps_any(std::span<const Box> boxes, std::span<const Box> ignore) {
  std::vector<std::uint8_t> out(boxes.size(), 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (const Box& g : ignore) {
      if (intersection_area(boxes[i], g) > 0.0) {
        out[i] = 1;
        break;
      }
    }
  }
  return out;
}

std::vector<float> centerness_targets(std::span<const int> sampled, std::span<const Point> centers,
                                      const MatchResult& match, std::span<const Box> gts) {
  std::vector<float> out;
  out.reserve(sampled.size());
  for (int idx : sampled) {
    const int g = match.matched_gt.at(idx);
    out.push_back(g < 0 ? 0.0f : static_cast<float>(centerness(centers[idx], gts[g])));
  }
  return out;
}

std::vector<float> roi_iou_targets(std::span<const Box> proposals, std::span<const Box> gts) {
  std::vector<float> out(proposals.size(), 0.0f);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    for (const Box& g : gts) best = std::max(best, iou(proposals[i], g));
    out[i] = static_cast<float>(best);
  }
  return out;
}

std::vector<float> roi_dice_targets(std::span<const Box> proposals, std::span<const Box> gts) {
  std::vector<float> out(proposals.size(), 0.0f);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    for (const Box& g : gts) best = std::max(best, dice(proposals[i], g));
    out[i] = static_cast<float>(best);
  }
  return out;
}

double mask_iou_targets(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gt) {
  if (predicted.size() != gt.size()) throw InputError("mask IoU: masks differ in size");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool g = gt[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void fill_lrtb_targets(TrainingTargets& t, std::span<const Point> centers,
                       std::span<const double> anchor_sizes, const MatchResult& match,
                       std::span<const Box> gts) {
  for (std::size_t s = 0; s < t.size(); ++s) {
    t.regression_valid[s] = 0;
    if (!t.positive[s]) continue;
    const int idx = t.indices[s];
    const int g = match.matched_gt[idx];
    if (g < 0) continue;
    const auto d = encode_lrtb(centers[idx], gts[g]);
    if (!d) continue;
    const double norm = anchor_sizes[idx];
    t.regression[s] = {static_cast<float>(d->l / norm), static_cast<float>(d->r / norm),
                       static_cast<float>(d->t / norm), static_cast<float>(d->b / norm)};
    t.regression_valid[s] = 1;
  }
}

void fill_delta_targets(TrainingTargets& t, std::span<const Box> rois, const MatchResult& match,
                        std::span<const Box> gts) {
  for (std::size_t s = 0; s < t.size(); ++s) {
    t.regression_valid[s] = 0;
    if (!t.positive[s]) continue;
    const int idx = t.indices[s];
    const int g = match.matched_gt[idx];
    if (g < 0) continue;
    const BoxDelta d = encode_delta(rois[idx], gts[g]);
    t.regression[s] = {static_cast<float>(d.dx), static_cast<float>(d.dy),
                       static_cast<float>(d.dw), static_cast<float>(d.dh)};
    t.regression_valid[s] = 1;
  }
}

}  // namespace oln
