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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oln/annotations.hpp"
#include "oln/geometry.hpp"
#include "oln/model.hpp"

namespace oln {

/// A scored box. Stage scores are the clamped localization-quality outputs
/// (or classifier probabilities for classifier cues); `score` is the fused
/// value used for ranking.
struct Proposal {
  Box box;
  double stage1_score = 0.0;
  std::optional<double> stage2_score;
  std::optional<double> mask_score;
  /// Probabilities of extra classifier branches, fused alongside the cues.
  std::vector<double> class_scores;
  double score = 0.0;
  std::optional<Rle> mask;
};

/// Geometric mean of the given factors. Throws InputError on an empty list
/// or any negative / non-finite factor.
double fuse_scores(std::span<const double> factors);
double fuse_scores(double stage1, std::optional<double> stage2 = std::nullopt,
                   std::optional<double> mask = std::nullopt);

enum class InferenceMode { kProposal, kDetection };

struct InferenceConfig {
  InferenceMode mode = InferenceMode::kProposal;
  /// Stage-1 candidates kept after NMS and fed to the second stage.
  int stage1_top_n = 150;
  double stage1_nms = 0.7;
  /// Final NMS threshold and output cap.
  double final_nms = 0.7;
  int max_outputs = 1000;
  /// Decoded boxes with a side below this are dropped.
  double min_box_side = 1.0;

  static InferenceConfig proposal_mode();
  /// NMS 0.5 and the top 100 boxes.
  static InferenceConfig detection_mode();
  void validate() const;
};

nlohmann::json to_json(const InferenceConfig& c);
InferenceConfig inference_config_from_json(const nlohmann::json& j, const std::string& path);

/// Decode every location, clip, drop degenerate boxes, NMS, keep the top-N
/// by stage-1 score. Output is sorted by score, ties by location index.
std::vector<Proposal> generate_proposals(const OlnModel& model, const StageOutputs& stage1,
                                         const AnchorGrid& grid, int image_width, int image_height,
                                         double nms_threshold, int top_n, double min_box_side = 1.0);

/// Full pass: stage 1, stage 2 refinement and scoring, mask branch, fused
/// scores, final NMS and cap. Throws InputError for images smaller than
/// the coarsest stride.
std::vector<Proposal> detect(const OlnModel& model, const Tensor& image, const InferenceConfig& cfg);

/// Per-pixel stage-1 objectness, the maximum over pyramid levels, H x W.
std::vector<float> stage1_heatmap(const OlnModel& model, const StageOutputs& stage1, const AnchorGrid& grid,
                                  int image_width, int image_height);

/// Writes the heatmap as a colour-mapped PNG and its raw values as a
/// float32 .npy (H x W). Scores are mapped on a fixed [0, 1] scale.
void export_heatmap(const std::vector<float>& heatmap, int width, int height, const std::string& png_path,
                    const std::string& npy_path);

/// COCO-results style entries: image_id, bbox [x, y, w, h], score, and an
/// RLE segmentation when present.
nlohmann::json proposals_to_json(int image_id, const std::vector<Proposal>& proposals);

struct ScoredBox {
  Box box;
  double score = 0.0;
};

/// Groups a COCO-results array by image id; each list sorted by score
/// descending (stable). Throws ParseError.
std::vector<std::pair<int, std::vector<ScoredBox>>> proposals_from_json(const nlohmann::json& j);

}  // namespace oln
