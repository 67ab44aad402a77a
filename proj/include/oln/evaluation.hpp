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

// Cross-category recall with seen-class budget exemption, and class-agnostic
// COCO-style AP. Recall is micro-averaged over unseen ground truth.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oln/annotations.hpp"
#include "oln/geometry.hpp"
#include "oln/inference.hpp"

namespace oln {

/// For each proposal (in the given order) the index of the ground truth it
/// claims, or -1. A proposal claims the highest-IoU still-unclaimed ground
/// truth with IoU >= threshold; ties go to the lowest index.
std::vector<int> match_greedy(std::span<const Box> proposals, std::span<const Box> gts, double iou_threshold);

/// Per-GT hit flags from match_greedy.
std::vector<std::uint8_t> gt_hits(std::span<const Box> proposals, std::span<const Box> gts, double iou_threshold);

/// One image for the recall protocol. Proposals sorted by score descending.
struct RecallInstance {
  std::vector<Box> proposals;
  std::vector<Box> gts;
  std::vector<std::uint8_t> seen;  // per GT
};

struct RecallCount {
  std::size_t matched = 0;  // unseen GTs recalled
  std::size_t total = 0;    // unseen GTs
  /// matched / total; nullopt when there is no unseen GT.
  std::optional<double> recall() const;
};

/// Seen-class detection test: the proposal's best-IoU ground truth (lowest
/// index on ties) is seen and that IoU is at least 0.5.
bool is_seen_detection(const Box& proposal, std::span<const Box> gts, std::span<const std::uint8_t> seen);

/// Walks proposals in order; seen-class detections are skipped without
/// using budget, every other proposal uses one unit and may claim an
/// unseen ground truth.
RecallCount ar_at_k_excluding_seen(const RecallInstance& inst, int k, double iou_threshold = 0.5);
/// Same walk, but seen-class detections also use budget.
RecallCount ar_at_k_naive(const RecallInstance& inst, int k, double iou_threshold = 0.5);

/// Dataset-level recall (micro-average); nullopt without unseen GT.
std::optional<double> dataset_recall(std::span<const RecallInstance> images, int k, bool exclude_seen,
                                     std::span<const double> iou_thresholds);

/// Normalized trapezoidal area of recall over log10(k). Throws InputError
/// with fewer than two points or non-positive k.
double auc(const std::map<int, double>& curve);

/// One image for the AP protocol.
struct DetectionInstance {
  std::vector<ScoredBox> detections;  // any order; sorted internally
  std::vector<Box> gts;
  std::vector<std::uint8_t> crowd;  // per GT, may be empty
};

struct AreaRange {
  std::string name;
  double min_side = 0.0;  // inclusive
  double max_side = 0.0;  // exclusive
};

/// All / small (< 32) / medium / large (>= 96) by box long side.
std::vector<AreaRange> default_area_ranges();

/// 101-point interpolated AP at one IoU threshold and area range; nullopt
/// when the range has no ground truth.
std::optional<double> average_precision_at(std::span<const DetectionInstance> images, double iou_threshold,
                                           const AreaRange& range, int max_detections = 100);

struct ApSummary {
  std::optional<double> ap, ap50, ap75, ap_small, ap_medium, ap_large;
};

/// AP averaged over IoU 0.50:0.05:0.95 plus the fixed-threshold and size
/// splits.
ApSummary average_precision(std::span<const DetectionInstance> images, int max_detections = 100);

std::vector<double> coco_iou_thresholds();

struct EvalOptions {
  std::vector<int> ks = {10, 20, 30, 50, 100, 300, 1000};
  /// Points used for the AUC. Empty means the standard points
  /// {10, 30, 100, 300, 1000} that appear in ks.
  std::vector<int> auc_ks;
  double iou_threshold = 0.5;
  /// Average recall over IoU 0.50:0.05:0.95 instead of a single threshold.
  bool coco_style_recall = false;
  bool compute_ap = true;
  int ap_max_detections = 100;

  void validate() const;
};

nlohmann::json to_json(const EvalOptions& o);
EvalOptions eval_options_from_json(const nlohmann::json& j, const std::string& path);

struct ImageDiagnostics {
  int image_id = 0;
  std::size_t unseen_gts = 0;
  std::size_t seen_gts = 0;
  std::size_t proposals = 0;
  std::size_t seen_detections = 0;
  std::size_t unseen_matched_at_max_k = 0;
};

struct EvalReport {
  std::map<int, std::optional<double>> ar;        // excluding seen detections from the budget
  std::map<int, std::optional<double>> ar_naive;  // seen detections count against the budget
  std::optional<double> auc;
  ApSummary ap;
  std::size_t images = 0;
  std::size_t unseen_gts = 0;
  std::vector<ImageDiagnostics> diagnostics;

  /// Metrics as fractions in [0, 1]; null for undefined values.
  nlohmann::json to_json() const;
  /// k, ar, ar_naive rows.
  std::string ar_csv() const;
};

/// Images in `gt` without proposals count as empty proposal lists;
/// proposals for unknown image ids raise InputError.
EvalReport evaluate(const GroundTruthSet& gt, const std::vector<std::pair<int, std::vector<ScoredBox>>>& proposals,
                    const EvalOptions& options);

}  // namespace oln
