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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oln/geometry.hpp"

namespace oln {

/// Per-anchor (or per-RoI) assignment to ground truth.
struct MatchResult {
  /// Index of the argmax-IoU ground truth, -1 when unmatched.
  std::vector<int> matched_gt;
  std::vector<double> max_iou;

  std::size_t size() const { return matched_gt.size(); }
};

/// Training-example sampler. A localization-quality head uses
/// background_fraction 0: only anchors whose best IoU exceeds the positive
/// floor are ever sampled.
struct SamplerConfig {
  int num_samples = 256;
  double background_fraction = 0.0;
  /// Positives have max-IoU strictly above this.
  double positive_floor = 0.3;
  /// Negatives have max-IoU strictly below this.
  double negative_ceiling = 0.1;
  /// Also take each ground truth's best anchor as positive when its IoU
  /// exceeds negative_ceiling (standard RPN assignment).
  bool low_quality_matches = false;

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

/// Named presets mirroring the sampling-ratio ablation.
namespace sampler_presets {
SamplerConfig oln_rpn();             // 0/256, >0.3
SamplerConfig oln_rpn_bg1();         // 1/256, >0.3 / <0.1
SamplerConfig oln_roi();             // RoI head, >0.3
SamplerConfig faster_rcnn_rpn();     // 128/256, 0.7 / 0.3
SamplerConfig faster_rcnn_rpn_low(); // 128/256, 0.3 / 0.1
SamplerConfig faster_rcnn_rpn_bg1(); // 1/256, 0.7 / 0.3
SamplerConfig faster_rcnn_rpn_bg1_low();
SamplerConfig faster_rcnn_roi();     // 25% positive, 0.5 / 0.5
SamplerConfig faster_rcnn_roi_low(); // 25% positive, 0.3 / 0.3
/// Throws ConfigError for unknown names.
SamplerConfig by_name(const std::string& name);
std::vector<std::string> names();
}  // namespace sampler_presets

/// Sampled indices plus per-sample targets. Negatives carry quality 0 and
/// class label 0; regression targets are valid only for positives whose
/// encoding succeeded.
struct TrainingTargets {
  std::vector<int> indices;
  std::vector<std::uint8_t> positive;
  std::vector<float> quality;
  std::vector<float> label;
  std::vector<std::array<float, 4>> regression;
  std::vector<std::uint8_t> regression_valid;

  std::size_t size() const { return indices.size(); }
  std::size_t positive_count() const;
  std::size_t negative_count() const { return size() - positive_count(); }
};

/// Argmax-IoU assignment of every box in `anchors` to `gts`. Ties go to
/// the lowest ground-truth index; boxes whose best IoU is not above
/// `min_iou` stay unmatched.
MatchResult match_anchors(std::span<const Box> anchors, std::span<const Box> gts,
                          double min_iou = 0.0);

/// Uniform sampling without replacement. Fewer eligible candidates than
/// requested means all of them are taken. Returned indices are sorted.
/// Entries flagged in `negative_blocked` are never drawn as negatives.
TrainingTargets sample_training(const MatchResult& match, const SamplerConfig& cfg,
                                std::uint64_t seed, std::span<const Box> anchors = {},
                                std::span<const Box> gts = {},
                                std::span<const std::uint8_t> negative_blocked = {});

/// First-stage sampler; `anchors`/`gts` are only needed for low-quality
/// matches.
TrainingTargets sample_rpn_training(const MatchResult& match, const SamplerConfig& cfg,
                                    std::uint64_t seed, std::span<const Box> anchors = {},
                                    std::span<const Box> gts = {},
                                    std::span<const std::uint8_t> negative_blocked = {});

/// Flags boxes that overlap any of `ignore` at all (IoU > 0).
std::vector<std::uint8_t> overlaps_any(std::span<const Box> boxes, std::span<const Box> ignore);

/// Centerness of each sampled anchor's center w.r.t. its matched ground
/// truth; 0 for unmatched samples.
std::vector<float> centerness_targets(std::span<const int> sampled, std::span<const Point> centers,
                                      const MatchResult& match, std::span<const Box> gts);

/// Max IoU of each proposal over all ground truths; all zero without
/// ground truth.
std::vector<float> roi_iou_targets(std::span<const Box> proposals, std::span<const Box> gts);
std::vector<float> roi_dice_targets(std::span<const Box> proposals, std::span<const Box> gts);

/// Pixel IoU of two equally sized binary grids; 0 when both are empty.
double mask_iou_targets(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gt);

/// lrtb targets normalized by the anchor size. Entries are flagged invalid
/// when the anchor center lies outside its matched box.
void fill_lrtb_targets(TrainingTargets& t, std::span<const Point> centers,
                       std::span<const double> anchor_sizes, const MatchResult& match,
                       std::span<const Box> gts);

/// Center/size delta targets for RoIs.
void fill_delta_targets(TrainingTargets& t, std::span<const Box> rois, const MatchResult& match,
                        std::span<const Box> gts);

}  // namespace oln
