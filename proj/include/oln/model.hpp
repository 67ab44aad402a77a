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

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oln/geometry.hpp"
#include "oln/nn.hpp"
#include "oln/targets.hpp"
#include "oln/tensor.hpp"

namespace oln {

/// Objectness cue predicted by a stage.
enum class Cue { kNone, kClass, kCenterness, kIou, kDice };

const char* to_string(Cue cue);
/// Throws ConfigError.
Cue cue_from_string(const std::string& s);

/// Declarative head layout. Every row of the cue and classifier ablations is
/// one value of this struct.
struct HeadConfig {
  Cue stage1_cue = Cue::kCenterness;
  bool stage1_extra_class = false;
  Cue stage2_cue = Cue::kIou;
  bool stage2_extra_class = false;
  bool mask_head = false;
  bool mask_iou = false;
  /// When false the first-stage score is ranked on but left out of the
  /// fused score (Faster R-CNN style).
  bool use_stage1_score = true;

  bool two_stage() const { return stage2_cue != Cue::kNone; }
  bool stage1_has_classifier() const { return stage1_cue == Cue::kClass || stage1_extra_class; }
  bool stage2_has_classifier() const { return stage2_cue == Cue::kClass || stage2_extra_class; }
  bool stage1_has_quality() const { return stage1_cue != Cue::kClass; }
  bool stage2_has_quality() const { return two_stage() && stage2_cue != Cue::kClass; }

  /// Throws ConfigError.
  void validate() const;
  std::string describe() const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct NamedHead {
  std::string name;
  HeadConfig config;
};

namespace head_presets {
HeadConfig oln_rpn();
HeadConfig oln_box();
HeadConfig oln_mask();
HeadConfig faster_rcnn();
/// Rows a-j of the objectness-cue ablation.
std::vector<NamedHead> table3();
/// The classifier ablation: the two OLN references plus six rows with
/// classifiers added.
std::vector<NamedHead> table4();
/// Throws ConfigError for unknown names. Accepts "a".."j", "oln_rpn",
/// "oln_box", "oln_mask", "faster_rcnn" and the table4 row names.
HeadConfig by_name(const std::string& name);
}  // namespace head_presets

/// Widths of the desk-scale network. Full-scale runs would swap the
/// backbone and widen the heads.
struct ModelConfig {
  std::vector<int> backbone_channels = {16, 24, 32, 48};
  int pyramid_channels = 32;
  double anchor_scale = 2.0;
  int rpn_channels = 32;
  int roi_pool = 7;
  int roi_sampling_ratio = 2;
  int fc_dim = 128;
  int mask_pool = 14;
  int mask_channels = 16;
  int mask_iou_fc = 64;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct FeaturePyramid {
  std::vector<Tensor> levels;  // CxHxW
  std::vector<int> strides;

  /// Throws InputError: at least one level, strictly increasing strides.
  void validate() const;
};

/// Opaque activations recorded by a backbone forward pass.
struct BackboneTrace {
  virtual ~BackboneTrace() = default;
};

/// Feature extractor interface; the desk-scale conv net below is one
/// implementation, a residual pyramid could be another.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::vector<int> strides() const = 0;
  virtual int out_channels() const = 0;
  virtual FeaturePyramid forward(const Tensor& image,
                                 std::unique_ptr<BackboneTrace>* trace = nullptr) const = 0;
  virtual void backward(const BackboneTrace& trace, const std::vector<Tensor>& level_grads) const = 0;
};

/// Four stride-2 stages with a two-level (stride 8 / 16) top-down pyramid.
class ConvPyramidBackbone : public Backbone {
 public:
  ConvPyramidBackbone(nn::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

  std::vector<int> strides() const override { return {8, 16}; }
  int out_channels() const override { return pyramid_channels_; }
  FeaturePyramid forward(const Tensor& image,
                         std::unique_ptr<BackboneTrace>* trace = nullptr) const override;
  void backward(const BackboneTrace& trace, const std::vector<Tensor>& level_grads) const override;

 private:
  int pyramid_channels_;
  nn::Conv2d stem_, stage2_, stage3a_, stage3b_, stage4a_, stage4b_, lateral3_, lateral4_;
};

/// Per-location (stage 1) or per-RoI (stage 2) predictions. Regression is
/// N x 4 flattened; quality / class_logit are empty when the head lacks
/// that branch. Quality is unbounded here and clamped only when scored.
struct StageOutputs {
  std::vector<float> regression;
  std::vector<float> quality;
  std::vector<float> class_logit;

  std::size_t size() const { return regression.size() / 4; }
};

struct MaskOutputs {
  Tensor logits;               // N x 1 x R x R
  std::vector<float> mask_iou; // N, empty without the IoU branch
};

/// Sampled targets for one stage. Each branch has its own sample set.
struct StageTargets {
  Cue quality_cue = Cue::kNone;
  TrainingTargets quality;
  TrainingTargets classifier;
  TrainingTargets regression;
};

struct StageGradients {
  std::vector<float> regression;
  std::vector<float> quality;
  std::vector<float> class_logit;
};

/// Named scalar losses; the total is the unweighted sum.
struct LossTerms {
  std::map<std::string, double> terms;
  double total() const;
  void add(const LossTerms& other, double scale = 1.0);
};

/// L1 for quality and regression, BCE for classifiers. `prefix` names the
/// stage ("rpn" / "roi"). Fills `grads` (sized like `out`) when non-null.
LossTerms compute_losses(const StageOutputs& out, const StageTargets& targets,
                         const std::string& prefix, StageGradients* grads = nullptr);

/// Per-pixel BCE over the mask grid and smooth-L1 mask-IoU regression.
struct MaskTargets {
  Tensor masks;                   // N x 1 x R x R in {0,1}
  std::vector<float> iou;         // N
};
LossTerms compute_mask_losses(const MaskOutputs& out, const MaskTargets& targets, bool with_iou,
                              Tensor* logit_grad, std::vector<float>* iou_grad);

/// A training image with its (seen-class) annotations. Masks, when present,
/// are full-image binary grids, one per box. Anchors or RoIs touching an
/// `ignore_boxes` entry are never sampled as background.
struct TrainingSample {
  Tensor image;  // 3 x H x W, normalized
  std::vector<Box> boxes;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<Box> ignore_boxes;
};

struct TrainSettings {
  SamplerConfig rpn_quality_sampler = sampler_presets::oln_rpn();
  SamplerConfig rpn_class_sampler = sampler_presets::faster_rcnn_rpn();
  SamplerConfig roi_quality_sampler = sampler_presets::oln_roi();
  SamplerConfig roi_class_sampler = sampler_presets::faster_rcnn_roi();
  int train_proposals = 96;
  double proposal_nms = 0.7;
  int mask_samples = 16;
  double mask_positive_iou = 0.5;
};

class OlnModel {
 public:
  OlnModel(const HeadConfig& head, const ModelConfig& model, std::uint64_t seed);

  const HeadConfig& head_config() const { return head_; }
  const ModelConfig& model_config() const { return model_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const Backbone& backbone() const { return *backbone_; }

  /// Names of every parameter that belongs to a classification branch.
  std::vector<std::string> classifier_parameters() const;

  AnchorGrid anchors(int width, int height) const;

  /// Throws InputError when the image is smaller than the coarsest stride.
  FeaturePyramid features(const Tensor& image) const;
  StageOutputs rpn_forward(const FeaturePyramid& features) const;
  /// `rois` must already be clipped to the image.
  StageOutputs roi_forward(const FeaturePyramid& features, std::span<const Box> rois) const;
  /// Throws ConfigError when the model has no mask head.
  MaskOutputs mask_forward(const FeaturePyramid& features, std::span<const Box> rois) const;

  /// Stage-1 objectness used to rank anchors: clamped quality, sigmoid of
  /// the class logit, or their geometric mean.
  std::vector<double> stage1_scores(const StageOutputs& out) const;
  std::vector<Box> decode_stage1(const StageOutputs& out, const AnchorGrid& grid) const;

  /// One image forward + backward; gradients accumulate into the store.
  LossTerms accumulate_gradients(const TrainingSample& sample, const TrainSettings& settings,
                                 std::uint64_t seed);

  void save(const std::string& path, const std::map<std::string, std::string>& metadata = {}) const;
  /// Throws ConfigError when `expected` is given and differs from the
  /// stored head config, ParseError/IoError for unreadable files.
  static OlnModel load(const std::string& path, const std::optional<HeadConfig>& expected = std::nullopt,
                       std::map<std::string, std::string>* metadata = nullptr);

 private:
  struct RpnTrace;
  struct RoiTrace;
  struct MaskTrace;

  StageOutputs rpn_forward_impl(const FeaturePyramid& f, RpnTrace* trace) const;
  std::vector<Tensor> rpn_backward(const RpnTrace& trace, const StageGradients& g) const;
  StageOutputs roi_forward_impl(const FeaturePyramid& f, std::span<const Box> rois, RoiTrace* trace) const;
  void roi_backward(const RoiTrace& trace, const StageGradients& g, std::vector<Tensor>& level_grads) const;
  Tensor pool_rois(const FeaturePyramid& f, std::span<const Box> rois, int pooled,
                   std::vector<int>* levels) const;
  void pool_rois_backward(const FeaturePyramid& f, std::span<const Box> rois,
                          const std::vector<int>& levels, int pooled, const Tensor& grad,
                          std::vector<Tensor>& level_grads) const;
  MaskOutputs mask_forward_impl(const FeaturePyramid& f, std::span<const Box> rois, MaskTrace* trace) const;
  void mask_backward(const MaskTrace& trace, const Tensor& logit_grad, const std::vector<float>& iou_grad,
                     std::vector<Tensor>& level_grads) const;
  int roi_level(const Box& roi) const;

  HeadConfig head_;
  ModelConfig model_;
  nn::ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;

  nn::Conv2d rpn_conv_, rpn_reg_, rpn_quality_, rpn_cls_;
  nn::Linear roi_fc1_, roi_fc2_, roi_reg_, roi_quality_, roi_cls_;
  std::vector<nn::Conv2d> mask_convs_;
  nn::Deconv2x2 mask_deconv_;
  nn::Conv2d mask_logits_, mask_iou_conv_;
  nn::Linear mask_iou_fc1_, mask_iou_fc2_, mask_iou_out_;
};

/// Resolution of the mask head output (twice the RoI pool size).
int mask_resolution(const ModelConfig& cfg);

/// Crops a full-image binary mask onto an RoI at `resolution` x
/// `resolution`, sampling at cell centers.
std::vector<std::uint8_t> crop_mask(std::span<const std::uint8_t> mask, int width, int height,
                                    const Box& roi, int resolution);

}  // namespace oln
