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

#include "oln/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "oln/error.hpp"
#include "oln/image_io.hpp"
#include "oln/json_util.hpp"
#include "oln/losses.hpp"

namespace oln {

using nlohmann::json;
namespace ju = json_util;

double fuse_scores(std::span<const double> factors) {
  if (factors.empty()) throw InputError("fuse_scores: no scores to fuse");
  double log_sum = 0.0;
  bool zero = false;
  for (double f : factors) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw InputError("fuse_scores: scores must be finite and non-negative, got " + std::to_string(f));
    }
    if (f == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(f);
    }
  }
  if (zero) return 0.0;
  if (factors.size() == 1) return factors[0];
  return std::exp(log_sum / static_cast<double>(factors.size()));
}

double fuse_scores(double stage1, std::optional<double> stage2, std::optional<double> mask) {
  std::vector<double> f{stage1};
  if (stage2) f.push_back(*stage2);
  if (mask) f.push_back(*mask);
  return fuse_scores(f);
}

InferenceConfig InferenceConfig::proposal_mode() { return InferenceConfig{}; }

InferenceConfig InferenceConfig::detection_mode() {
  InferenceConfig c;
  c.mode = InferenceMode::kDetection;
  c.final_nms = 0.5;
  c.max_outputs = 100;
  return c;
}

void InferenceConfig::validate() const {
  if (stage1_top_n <= 0 || max_outputs <= 0) throw ConfigError("inference: proposal counts must be positive");
  if (!(stage1_nms > 0.0 && stage1_nms <= 1.0) || !(final_nms > 0.0 && final_nms <= 1.0)) {
    throw ConfigError("inference: NMS thresholds must be in (0, 1]");
  }
  if (!(min_box_side >= 0.0)) throw ConfigError("inference: min_box_side must be non-negative");
}

json to_json(const InferenceConfig& c) {
  return {{"mode", c.mode == InferenceMode::kProposal ? "proposal" : "detection"},
          {"stage1_top_n", c.stage1_top_n},
          {"stage1_nms", c.stage1_nms},
          {"final_nms", c.final_nms},
          {"max_outputs", c.max_outputs},
          {"min_box_side", c.min_box_side}};
}

InferenceConfig inference_config_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j, {"mode", "stage1_top_n", "stage1_nms", "final_nms", "max_outputs", "min_box_side"}, path);
  InferenceConfig c;
  if (j.contains("mode")) {
    const auto m = ju::as<std::string>(j["mode"], ju::child(path, "mode"));
    if (m == "proposal") {
      c = InferenceConfig::proposal_mode();
    } else if (m == "detection") {
      c = InferenceConfig::detection_mode();
    } else {
      throw ParseError(ju::child(path, "mode"), "expected 'proposal' or 'detection'");
    }
  }
  ju::get_optional(j, "stage1_top_n", path, c.stage1_top_n);
  ju::get_optional(j, "stage1_nms", path, c.stage1_nms);
  ju::get_optional(j, "final_nms", path, c.final_nms);
  ju::get_optional(j, "max_outputs", path, c.max_outputs);
  ju::get_optional(j, "min_box_side", path, c.min_box_side);
  return c;
}

namespace {

double clamp01(float v) { return std::clamp(static_cast<double>(v), 0.0, 1.0); }
double prob(float logit) { return loss::sigmoid(static_cast<double>(logit)); }

// Stage scores for one location / RoI: the cue score and any extra
// classifier probability.
void stage_scores(const StageOutputs& out, std::size_t i, Cue cue, double& cue_score, std::vector<double>& extra) {
  if (cue == Cue::kClass) {
    cue_score = prob(out.class_logit[i]);
    return;
  }
  cue_score = clamp01(out.quality[i]);
  if (!out.class_logit.empty()) extra.push_back(prob(out.class_logit[i]));
}

std::vector<std::size_t> order_and_suppress(const std::vector<Proposal>& props, double thr) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& p : props) {
    boxes.push_back(p.box);
    scores.push_back(p.score);
  }
  return nms(boxes, scores, thr);
}

// Pastes a mask-head logit grid onto the box (nearest cell) and binarizes
// at probability 0.5.
std::vector<std::uint8_t> paste_mask(std::span<const float> logits, int res, const Box& box, int w, int h) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(w) * h, 0);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int x1 = std::min(w, static_cast<int>(std::ceil(box.x2)));
  const int y1 = std::min(h, static_cast<int>(std::ceil(box.y2)));
  for (int y = y0; y < y1; ++y) {
    const double fy = (y + 0.5 - box.y1) / box.height() * res;
    if (fy < 0 || fy >= res) continue;
    for (int x = x0; x < x1; ++x) {
      const double fx = (x + 0.5 - box.x1) / box.width() * res;
      if (fx < 0 || fx >= res) continue;
      if (logits[static_cast<std::size_t>(fy) * res + static_cast<std::size_t>(fx)] > 0.0f) {
        m[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
  }
  return m;
}

}  // namespace

std::vector<Proposal> generate_proposals(const OlnModel& model, const StageOutputs& stage1, const AnchorGrid& grid,
                                         int image_width, int image_height, double nms_threshold, int top_n,
                                         double min_box_side) {
  const HeadConfig& head = model.head_config();
  const std::vector<Box> decoded = model.decode_stage1(stage1, grid);
  std::vector<Proposal> cand;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const Box b = clip(decoded[i], image_width, image_height);
    if (!(b.width() >= min_box_side && b.height() >= min_box_side) || !(b.width() > 0 && b.height() > 0)) continue;
    Proposal p;
    p.box = b;
    stage_scores(stage1, i, head.stage1_cue, p.stage1_score, p.class_scores);
    std::vector<double> f{p.stage1_score};
    f.insert(f.end(), p.class_scores.begin(), p.class_scores.end());
    p.score = fuse_scores(f);
    cand.push_back(std::move(p));
  }
  std::vector<Proposal> out;
  for (std::size_t k : order_and_suppress(cand, nms_threshold)) {
    if (static_cast<int>(out.size()) >= top_n) break;
    out.push_back(cand[k]);
  }
  return out;
}

std::vector<Proposal> detect(const OlnModel& model, const Tensor& image, const InferenceConfig& cfg) {
  cfg.validate();
  const HeadConfig& head = model.head_config();
  const FeaturePyramid f = model.features(image);
  const int h = image.dim(1);
  const int w = image.dim(2);
  const StageOutputs out1 = model.rpn_forward(f);
  const AnchorGrid grid = model.anchors(w, h);

  std::vector<Proposal> cand;
  if (!head.two_stage()) {
    cand = generate_proposals(model, out1, grid, w, h, cfg.stage1_nms, std::max(cfg.stage1_top_n, cfg.max_outputs),
                              cfg.min_box_side);
  } else {
    const std::vector<Proposal> props =
        generate_proposals(model, out1, grid, w, h, cfg.stage1_nms, cfg.stage1_top_n, cfg.min_box_side);
    std::vector<Box> rois;
    for (const auto& p : props) rois.push_back(p.box);
    const StageOutputs out2 = model.roi_forward(f, rois);
    for (std::size_t i = 0; i < props.size(); ++i) {
      const BoxDelta d{out2.regression[i * 4], out2.regression[i * 4 + 1], out2.regression[i * 4 + 2],
                       out2.regression[i * 4 + 3]};
      const Box b = clip(decode_delta(rois[i], d), w, h);
      if (!(b.width() >= cfg.min_box_side && b.height() >= cfg.min_box_side) || !(b.width() > 0 && b.height() > 0)) {
        continue;
      }
      Proposal p = props[i];
      p.box = b;
      std::vector<double> stage1_classes = std::move(p.class_scores);
      p.class_scores.clear();
      double s2 = 0.0;
      std::vector<double> stage2_classes;
      stage_scores(out2, i, head.stage2_cue, s2, stage2_classes);
      p.stage2_score = s2;
      std::vector<double> factors;
      if (head.use_stage1_score) {
        factors.push_back(p.stage1_score);
        factors.insert(factors.end(), stage1_classes.begin(), stage1_classes.end());
        p.class_scores = stage1_classes;
      }
      factors.push_back(s2);
      factors.insert(factors.end(), stage2_classes.begin(), stage2_classes.end());
      p.class_scores.insert(p.class_scores.end(), stage2_classes.begin(), stage2_classes.end());
      p.score = fuse_scores(factors);
      cand.push_back(std::move(p));
    }
  }

  MaskOutputs masks;
  if (head.mask_head && !cand.empty()) {
    std::vector<Box> boxes;
    for (const auto& p : cand) boxes.push_back(p.box);
    masks = model.mask_forward(f, boxes);
    if (head.mask_iou) {
      for (std::size_t i = 0; i < cand.size(); ++i) {
        Proposal& p = cand[i];
        p.mask_score = clamp01(masks.mask_iou[i]);
        std::vector<double> factors;
        if (head.use_stage1_score) factors.push_back(p.stage1_score);
        factors.push_back(*p.stage2_score);
        factors.push_back(*p.mask_score);
        factors.insert(factors.end(), p.class_scores.begin(), p.class_scores.end());
        p.score = fuse_scores(factors);
      }
    }
  }

  std::vector<Proposal> out;
  const int res = head.mask_head ? mask_resolution(model.model_config()) : 0;
  for (std::size_t k : order_and_suppress(cand, cfg.final_nms)) {
    if (static_cast<int>(out.size()) >= cfg.max_outputs) break;
    Proposal p = cand[k];
    if (head.mask_head) {
      const std::size_t cells = static_cast<std::size_t>(res) * res;
      const auto grid_logits = masks.logits.span().subspan(k * cells, cells);
      p.mask = rle_encode(paste_mask(grid_logits, res, p.box, w, h), w, h);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<float> stage1_heatmap(const OlnModel& model, const StageOutputs& stage1, const AnchorGrid& grid,
                                  int image_width, int image_height) {
  const std::vector<double> scores = model.stage1_scores(stage1);
  if (scores.size() != grid.size()) throw InputError("heatmap: outputs do not match the anchor grid");
  std::vector<float> map(static_cast<std::size_t>(image_width) * image_height, 0.0f);
  for (std::size_t l = 0; l < grid.levels.size(); ++l) {
    const AnchorLevel& lv = grid.levels[l];
    const std::size_t off = grid.level_offsets[l];
    for (int y = 0; y < image_height; ++y) {
      const int r = std::min(y / lv.stride, lv.rows - 1);
      for (int x = 0; x < image_width; ++x) {
        const int c = std::min(x / lv.stride, lv.cols - 1);
        float& v = map[static_cast<std::size_t>(y) * image_width + x];
        v = std::max(v, static_cast<float>(scores[off + static_cast<std::size_t>(r) * lv.cols + c]));
      }
    }
  }
  return map;
}

namespace {

// Piecewise-linear "jet" colour map on [0, 1].
std::array<std::uint8_t, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ch = [&](double centre) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0)));
  };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

}  // namespace

void export_heatmap(const std::vector<float>& heatmap, int width, int height, const std::string& png_path,
                    const std::string& npy_path) {
  if (heatmap.size() != static_cast<std::size_t>(width) * height) throw InputError("heatmap: size mismatch");
  RgbImage img(width, height);
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    const auto c = jet(heatmap[i]);
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  write_png(png_path, img);
  write_npy(npy_path, heatmap, {height, width});
}

json proposals_to_json(int image_id, const std::vector<Proposal>& proposals) {
  json arr = json::array();
  for (const auto& p : proposals) {
    json e = {{"image_id", image_id},
              {"bbox", {p.box.x1, p.box.y1, p.box.width(), p.box.height()}},
              {"score", p.score}};
    if (p.mask) e["segmentation"] = to_json(*p.mask);
    arr.push_back(std::move(e));
  }
  return arr;
}

std::vector<std::pair<int, std::vector<ScoredBox>>> proposals_from_json(const json& j) {
  ju::expect_array(j, "$");
  std::map<int, std::vector<ScoredBox>> by_image;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = ju::index("$", i);
    ju::reject_unknown(j[i], {"image_id", "bbox", "score", "segmentation", "category_id"}, p);
    const int id = ju::get<int>(j[i], "image_id", p);
    const json& bb = ju::require(j[i], "bbox", p);
    const std::string bp = ju::child(p, "bbox");
    ju::expect_array(bb, bp);
    if (bb.size() != 4) throw ParseError(bp, "expected [x, y, w, h]");
    double v[4];
    for (int k = 0; k < 4; ++k) v[k] = ju::as<double>(bb[k], ju::index(bp, k));
    if (!(v[2] > 0.0 && v[3] > 0.0)) throw ParseError(bp, "box width and height must be positive");
    const double s = ju::get<double>(j[i], "score", p);
    if (!std::isfinite(s)) throw ParseError(ju::child(p, "score"), "score must be finite");
    by_image[id].push_back({Box{v[0], v[1], v[0] + v[2], v[1] + v[3]}, s});
  }
  std::vector<std::pair<int, std::vector<ScoredBox>>> out;
  for (auto& [id, list] : by_image) {
    std::stable_sort(list.begin(), list.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    out.emplace_back(id, std::move(list));
  }
  return out;
}

}  // namespace oln
