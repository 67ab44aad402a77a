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

#include "oln/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "oln/error.hpp"
#include "oln/kernels.hpp"
#include "oln/losses.hpp"

namespace oln {

namespace {

constexpr float kMaskIouBeta = 0.1f;

void init_head(nn::Conv2d& conv, double stddev, float bias, std::mt19937_64& rng) {
  nn::init_normal(conv.weight(), stddev, rng);
  conv.bias().value.fill(bias);
}

void init_head(nn::Linear& fc, double stddev, float bias, std::mt19937_64& rng) {
  nn::init_normal(fc.weight(), stddev, rng);
  fc.bias().value.fill(bias);
}

void init_relu(nn::Conv2d& conv, std::mt19937_64& rng) {
  nn::init_kaiming(conv.weight(), conv.in_channels() * conv.kernel() * conv.kernel(), rng);
}

void init_relu(nn::Linear& fc, std::mt19937_64& rng) {
  nn::init_kaiming(fc.weight(), fc.in_features(), rng);
}

double geometric_mean(const std::vector<double>& v) {
  double prod = 1.0;
  for (double x : v) prod *= x;
  return std::pow(prod, 1.0 / static_cast<double>(v.size()));
}

}  // namespace

// --------------------------------------------------------------- configs

const char* to_string(Cue cue) {
  switch (cue) {
    case Cue::kNone: return "none";
    case Cue::kClass: return "class";
    case Cue::kCenterness: return "centerness";
    case Cue::kIou: return "iou";
    case Cue::kDice: return "dice";
  }
  return "none";
}

Cue cue_from_string(const std::string& s) {
  if (s == "none") return Cue::kNone;
  if (s == "class") return Cue::kClass;
  if (s == "centerness" || s == "center") return Cue::kCenterness;
  if (s == "iou") return Cue::kIou;
  if (s == "dice") return Cue::kDice;
  throw ConfigError("unknown objectness cue '" + s + "'");
}

void HeadConfig::validate() const {
  if (stage1_cue != Cue::kClass && stage1_cue != Cue::kCenterness && stage1_cue != Cue::kIou) {
    throw ConfigError("head: stage1 cue must be class, centerness or iou");
  }
  if (stage1_extra_class && stage1_cue == Cue::kClass) {
    throw ConfigError("head: stage1 extra classifier needs a localization cue");
  }
  if (stage2_extra_class && (stage2_cue == Cue::kClass || stage2_cue == Cue::kNone)) {
    throw ConfigError("head: stage2 extra classifier needs a localization cue");
  }
  if (mask_iou && !mask_head) throw ConfigError("head: mask_iou requires mask_head");
  if (mask_head && !two_stage()) throw ConfigError("head: mask_head requires a second stage");
  if (!use_stage1_score && !two_stage()) {
    throw ConfigError("head: a single-stage model must use its stage-1 score");
  }
}

std::string HeadConfig::describe() const {
  std::string s = to_string(stage1_cue);
  if (stage1_extra_class) s += "+class";
  if (!use_stage1_score) s += "(unused)";
  s += " -> ";
  s += two_stage() ? to_string(stage2_cue) : "-";
  if (stage2_extra_class) s += "+class";
  if (mask_head) s += mask_iou ? " [mask+maskiou]" : " [mask]";
  return s;
}

namespace head_presets {

namespace {
HeadConfig make(Cue s1, bool s1c, Cue s2, bool s2c) {
  HeadConfig h;
  h.stage1_cue = s1;
  h.stage1_extra_class = s1c;
  h.stage2_cue = s2;
  h.stage2_extra_class = s2c;
  return h;
}
}  // namespace

HeadConfig oln_rpn() { return make(Cue::kCenterness, false, Cue::kNone, false); }
HeadConfig oln_box() { return make(Cue::kCenterness, false, Cue::kIou, false); }
HeadConfig oln_mask() {
  HeadConfig h = oln_box();
  h.mask_head = true;
  h.mask_iou = true;
  return h;
}
HeadConfig faster_rcnn() { return make(Cue::kClass, false, Cue::kClass, false); }

std::vector<NamedHead> table3() {
  HeadConfig d = make(Cue::kClass, false, Cue::kClass, false);
  d.use_stage1_score = false;
  return {
      {"a", make(Cue::kClass, false, Cue::kNone, false)},
      {"b", make(Cue::kIou, false, Cue::kNone, false)},
      {"c", make(Cue::kCenterness, false, Cue::kNone, false)},
      {"d", d},
      {"e", make(Cue::kClass, false, Cue::kClass, false)},
      {"f", make(Cue::kIou, false, Cue::kCenterness, false)},
      {"g", make(Cue::kIou, false, Cue::kIou, false)},
      {"h", make(Cue::kCenterness, false, Cue::kCenterness, false)},
      {"i", make(Cue::kCenterness, false, Cue::kIou, false)},
      {"j", make(Cue::kCenterness, false, Cue::kDice, false)},
  };
}

std::vector<NamedHead> table4() {
  return {
      {"center", make(Cue::kCenterness, false, Cue::kNone, false)},
      {"center+class", make(Cue::kCenterness, true, Cue::kNone, false)},
      {"center/iou", make(Cue::kCenterness, false, Cue::kIou, false)},
      {"center/iou+class", make(Cue::kCenterness, false, Cue::kIou, true)},
      {"center+class/iou", make(Cue::kCenterness, true, Cue::kIou, false)},
      {"center+class/iou+class", make(Cue::kCenterness, true, Cue::kIou, true)},
      {"center/class", make(Cue::kCenterness, false, Cue::kClass, false)},
      {"class/class", make(Cue::kClass, false, Cue::kClass, false)},
  };
}

HeadConfig by_name(const std::string& name) {
  if (name == "oln_rpn") return oln_rpn();
  if (name == "oln_box") return oln_box();
  if (name == "oln_mask") return oln_mask();
  if (name == "faster_rcnn") return faster_rcnn();
  for (const auto& row : table3()) {
    if (row.name == name) return row.config;
  }
  for (const auto& row : table4()) {
    if (row.name == name) return row.config;
  }
  throw ConfigError("unknown head preset '" + name + "'");
}

}  // namespace head_presets

void ModelConfig::validate() const {
  if (backbone_channels.size() != 4) throw ConfigError("model: backbone needs 4 stage widths");
  for (int c : backbone_channels) {
    if (c <= 0) throw ConfigError("model: backbone widths must be positive");
  }
  if (pyramid_channels <= 0 || rpn_channels <= 0 || fc_dim <= 0 || mask_channels <= 0 ||
      mask_iou_fc <= 0) {
    throw ConfigError("model: layer widths must be positive");
  }
  if (roi_pool <= 0 || mask_pool <= 0 || mask_pool % 2 != 0 || roi_sampling_ratio <= 0) {
    throw ConfigError("model: pool sizes must be positive (mask pool even)");
  }
  if (!(anchor_scale > 0.0)) throw ConfigError("model: anchor_scale must be positive");
}

int mask_resolution(const ModelConfig& cfg) { return 2 * cfg.mask_pool; }

void FeaturePyramid::validate() const {
  if (levels.empty()) throw InputError("feature pyramid: no levels");
  if (levels.size() != strides.size()) throw InputError("feature pyramid: stride count mismatch");
  for (std::size_t i = 1; i < strides.size(); ++i) {
    if (strides[i] <= strides[i - 1]) throw InputError("feature pyramid: strides must increase");
  }
  for (const Tensor& t : levels) {
    if (t.rank() != 3) throw InputError("feature pyramid: levels must be CxHxW");
  }
}

double LossTerms::total() const {
  double t = 0.0;
  for (const auto& [name, v] : terms) t += v;
  return t;
}

void LossTerms::add(const LossTerms& other, double scale) {
  for (const auto& [name, v] : other.terms) terms[name] += scale * v;
}

// -------------------------------------------------------------- backbone

namespace {
struct ConvPyramidTrace : BackboneTrace {
  Tensor input, stem, s2, s3a, s3b, s4a, s4b;
};
}  // namespace

ConvPyramidBackbone::ConvPyramidBackbone(nn::ParameterStore& store, const ModelConfig& cfg,
                                         std::mt19937_64& rng)
    : pyramid_channels_(cfg.pyramid_channels) {
  const auto& c = cfg.backbone_channels;
  using nn::ParamRole;
  stem_ = nn::Conv2d(store, "backbone.stem", ParamRole::kBackbone, 3, c[0], 3, 2);
  stage2_ = nn::Conv2d(store, "backbone.stage2", ParamRole::kBackbone, c[0], c[1], 3, 2);
  stage3a_ = nn::Conv2d(store, "backbone.stage3a", ParamRole::kBackbone, c[1], c[2], 3, 2);
  stage3b_ = nn::Conv2d(store, "backbone.stage3b", ParamRole::kBackbone, c[2], c[2], 3, 1);
  stage4a_ = nn::Conv2d(store, "backbone.stage4a", ParamRole::kBackbone, c[2], c[3], 3, 2);
  stage4b_ = nn::Conv2d(store, "backbone.stage4b", ParamRole::kBackbone, c[3], c[3], 3, 1);
  lateral3_ = nn::Conv2d(store, "neck.lateral3", ParamRole::kBackbone, c[2], pyramid_channels_, 1, 1);
  lateral4_ = nn::Conv2d(store, "neck.lateral4", ParamRole::kBackbone, c[3], pyramid_channels_, 1, 1);
  for (nn::Conv2d* conv : {&stem_, &stage2_, &stage3a_, &stage3b_, &stage4a_, &stage4b_}) {
    init_relu(*conv, rng);
  }
  nn::init_kaiming(lateral3_.weight(), c[2] / 2, rng);
  nn::init_kaiming(lateral4_.weight(), c[3] / 2, rng);
}

FeaturePyramid ConvPyramidBackbone::forward(const Tensor& image,
                                            std::unique_ptr<BackboneTrace>* trace) const {
  auto t = std::make_unique<ConvPyramidTrace>();
  t->stem = nn::relu(stem_.forward(image));
  t->s2 = nn::relu(stage2_.forward(t->stem));
  t->s3a = nn::relu(stage3a_.forward(t->s2));
  t->s3b = nn::relu(stage3b_.forward(t->s3a));
  t->s4a = nn::relu(stage4a_.forward(t->s3b));
  t->s4b = nn::relu(stage4b_.forward(t->s4a));
  FeaturePyramid f;
  f.strides = strides();
  Tensor p4 = lateral4_.forward(t->s4b);
  Tensor p3 = lateral3_.forward(t->s3b);
  nn::add_inplace(p3, nn::upsample2x(p4, p3.dim(1), p3.dim(2)));
  f.levels.push_back(std::move(p3));
  f.levels.push_back(std::move(p4));
  if (trace != nullptr) {
    t->input = image;
    *trace = std::move(t);
  }
  return f;
}

void ConvPyramidBackbone::backward(const BackboneTrace& base,
                                   const std::vector<Tensor>& level_grads) const {
  const auto& t = dynamic_cast<const ConvPyramidTrace&>(base);
  const Tensor& dp3 = level_grads.at(0);
  Tensor dp4 = level_grads.at(1);
  nn::add_inplace(dp4, nn::upsample2x_backward(dp3, dp4.dim(1), dp4.dim(2)));

  Tensor d_s3b = lateral3_.backward(t.s3b, dp3);
  Tensor d_s4b = lateral4_.backward(t.s4b, dp4);
  Tensor d = nn::relu_backward(t.s4b, d_s4b);
  d = nn::relu_backward(t.s4a, stage4b_.backward(t.s4a, d));
  nn::add_inplace(d_s3b, stage4a_.backward(t.s3b, d));
  d = nn::relu_backward(t.s3b, d_s3b);
  d = nn::relu_backward(t.s3a, stage3b_.backward(t.s3a, d));
  d = nn::relu_backward(t.s2, stage3a_.backward(t.s2, d));
  d = nn::relu_backward(t.stem, stage2_.backward(t.stem, d));
  stem_.backward(t.input, d, false);
}

// ----------------------------------------------------------------- model

struct OlnModel::RpnTrace {
  std::vector<const Tensor*> inputs;
  std::vector<Tensor> hidden;
};

struct OlnModel::RoiTrace {
  std::vector<Box> rois;
  std::vector<int> levels;
  Tensor pooled, h1, h2;
};

struct OlnModel::MaskTrace {
  std::vector<Box> rois;
  std::vector<int> levels;
  std::vector<Tensor> acts;  // pooled input, then the four conv outputs
  Tensor up;
  Tensor iou_conv;
  nn::MaxPoolResult iou_pool;
  Tensor f1, f2;
};

OlnModel::OlnModel(const HeadConfig& head, const ModelConfig& model, std::uint64_t seed)
    : head_(head), model_(model) {
  head_.validate();
  model_.validate();
  std::mt19937_64 rng(seed);
  using nn::ParamRole;
  backbone_ = std::make_unique<ConvPyramidBackbone>(store_, model_, rng);
  const int p = model_.pyramid_channels;
  const int r = model_.rpn_channels;

  rpn_conv_ = nn::Conv2d(store_, "rpn.conv", ParamRole::kHead, p, r, 3, 1);
  init_relu(rpn_conv_, rng);
  rpn_reg_ = nn::Conv2d(store_, "rpn.reg", ParamRole::kRegression, r, 4, 1, 1);
  init_head(rpn_reg_, 0.01, 0.5f, rng);
  if (head_.stage1_has_quality()) {
    rpn_quality_ = nn::Conv2d(store_, "rpn.quality", ParamRole::kQuality, r, 1, 1, 1);
    init_head(rpn_quality_, 0.01, 0.0f, rng);
  }
  if (head_.stage1_has_classifier()) {
    rpn_cls_ = nn::Conv2d(store_, "rpn.cls", ParamRole::kClassifier, r, 1, 1, 1);
    init_head(rpn_cls_, 0.01, 0.0f, rng);
  }

  if (head_.two_stage()) {
    const int in = p * model_.roi_pool * model_.roi_pool;
    roi_fc1_ = nn::Linear(store_, "roi.fc1", ParamRole::kHead, in, model_.fc_dim);
    roi_fc2_ = nn::Linear(store_, "roi.fc2", ParamRole::kHead, model_.fc_dim, model_.fc_dim);
    init_relu(roi_fc1_, rng);
    init_relu(roi_fc2_, rng);
    roi_reg_ = nn::Linear(store_, "roi.reg", ParamRole::kRegression, model_.fc_dim, 4);
    init_head(roi_reg_, 0.001, 0.0f, rng);
    if (head_.stage2_has_quality()) {
      roi_quality_ = nn::Linear(store_, "roi.quality", ParamRole::kQuality, model_.fc_dim, 1);
      init_head(roi_quality_, 0.01, 0.0f, rng);
    }
    if (head_.stage2_has_classifier()) {
      roi_cls_ = nn::Linear(store_, "roi.cls", ParamRole::kClassifier, model_.fc_dim, 1);
      init_head(roi_cls_, 0.01, 0.0f, rng);
    }
  }

  if (head_.mask_head) {
    const int mc = model_.mask_channels;
    for (int i = 0; i < 4; ++i) {
      mask_convs_.emplace_back(store_, "mask.conv" + std::to_string(i + 1), ParamRole::kMask,
                               i == 0 ? p : mc, mc, 3, 1);
      init_relu(mask_convs_.back(), rng);
    }
    mask_deconv_ = nn::Deconv2x2(store_, "mask.deconv", ParamRole::kMask, mc, mc);
    nn::init_kaiming(mask_deconv_.weight(), mc, rng);
    mask_logits_ = nn::Conv2d(store_, "mask.logits", ParamRole::kMask, mc, 1, 1, 1);
    init_head(mask_logits_, 0.01, 0.0f, rng);
    if (head_.mask_iou) {
      mask_iou_conv_ = nn::Conv2d(store_, "maskiou.conv", ParamRole::kMaskIou, mc, mc, 3, 1);
      init_relu(mask_iou_conv_, rng);
      const int pooled = mc * (model_.mask_pool / 2) * (model_.mask_pool / 2);
      mask_iou_fc1_ = nn::Linear(store_, "maskiou.fc1", ParamRole::kMaskIou, pooled, model_.mask_iou_fc);
      mask_iou_fc2_ = nn::Linear(store_, "maskiou.fc2", ParamRole::kMaskIou, model_.mask_iou_fc,
                                 model_.mask_iou_fc);
      mask_iou_out_ = nn::Linear(store_, "maskiou.out", ParamRole::kMaskIou, model_.mask_iou_fc, 1);
      init_relu(mask_iou_fc1_, rng);
      init_relu(mask_iou_fc2_, rng);
      init_head(mask_iou_out_, 0.01, 0.0f, rng);
    }
  }
}

std::vector<std::string> OlnModel::classifier_parameters() const {
  std::vector<std::string> out;
  for (const nn::Parameter* p : store_.all()) {
    if (p->role == nn::ParamRole::kClassifier) out.push_back(p->name);
  }
  return out;
}

AnchorGrid OlnModel::anchors(int width, int height) const {
  const std::vector<int> s = backbone_->strides();
  return build_anchor_grid(width, height, s, model_.anchor_scale);
}

FeaturePyramid OlnModel::features(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw InputError("model: expected a 3xHxW image, got " + image.shape_string());
  }
  const std::vector<int> s = backbone_->strides();
  const int coarsest = *std::max_element(s.begin(), s.end());
  if (image.dim(1) < coarsest || image.dim(2) < coarsest) {
    throw InputError("model: image " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(1)) + " is smaller than the coarsest stride " +
                     std::to_string(coarsest));
  }
  return backbone_->forward(image);
}

StageOutputs OlnModel::rpn_forward(const FeaturePyramid& f) const {
  return rpn_forward_impl(f, nullptr);
}

StageOutputs OlnModel::rpn_forward_impl(const FeaturePyramid& f, RpnTrace* trace) const {
  f.validate();
  if (f.strides != backbone_->strides()) {
    throw ConfigError("rpn: feature pyramid strides do not match the configured strides");
  }
  StageOutputs out;
  for (const Tensor& level : f.levels) {
    Tensor h = nn::relu(rpn_conv_.forward(level));
    const int hw = h.dim(1) * h.dim(2);
    const Tensor reg = rpn_reg_.forward(h);
    for (int i = 0; i < hw; ++i) {
      for (int k = 0; k < 4; ++k) out.regression.push_back(reg[static_cast<std::size_t>(k) * hw + i]);
    }
    if (head_.stage1_has_quality()) {
      const Tensor q = rpn_quality_.forward(h);
      out.quality.insert(out.quality.end(), q.values().begin(), q.values().end());
    }
    if (head_.stage1_has_classifier()) {
      const Tensor c = rpn_cls_.forward(h);
      out.class_logit.insert(out.class_logit.end(), c.values().begin(), c.values().end());
    }
    if (trace != nullptr) {
      trace->inputs.push_back(&level);
      trace->hidden.push_back(std::move(h));
    }
  }
  return out;
}

std::vector<Tensor> OlnModel::rpn_backward(const RpnTrace& trace, const StageGradients& g) const {
  std::vector<Tensor> grads;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < trace.hidden.size(); ++l) {
    const Tensor& h = trace.hidden[l];
    const int hw = h.dim(1) * h.dim(2);
    Tensor dreg({4, h.dim(1), h.dim(2)});
    for (int i = 0; i < hw; ++i) {
      for (int k = 0; k < 4; ++k) {
        dreg[static_cast<std::size_t>(k) * hw + i] = g.regression[(offset + i) * 4 + k];
      }
    }
    Tensor dh = rpn_reg_.backward(h, dreg);
    if (head_.stage1_has_quality()) {
      Tensor dq({1, h.dim(1), h.dim(2)});
      std::copy_n(g.quality.begin() + static_cast<std::ptrdiff_t>(offset), hw, dq.values().begin());
      nn::add_inplace(dh, rpn_quality_.backward(h, dq));
    }
    if (head_.stage1_has_classifier()) {
      Tensor dc({1, h.dim(1), h.dim(2)});
      std::copy_n(g.class_logit.begin() + static_cast<std::ptrdiff_t>(offset), hw, dc.values().begin());
      nn::add_inplace(dh, rpn_cls_.backward(h, dc));
    }
    dh = nn::relu_backward(h, dh);
    grads.push_back(rpn_conv_.backward(*trace.inputs[l], dh));
    offset += static_cast<std::size_t>(hw);
  }
  return grads;
}

int OlnModel::roi_level(const Box& roi) const {
  const std::vector<int> s = backbone_->strides();
  const double size = std::sqrt(std::max(roi.area(), 1e-6));
  int best = 0;
  double best_d = 1e300;
  for (std::size_t l = 0; l < s.size(); ++l) {
    const double d = std::abs(std::log(size / (model_.anchor_scale * s[l])));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(l);
    }
  }
  return best;
}

Tensor OlnModel::pool_rois(const FeaturePyramid& f, std::span<const Box> rois, int pooled,
                           std::vector<int>* levels) const {
  const int c = f.levels.front().dim(0);
  const std::size_t bins = static_cast<std::size_t>(pooled) * pooled;
  Tensor out({static_cast<int>(rois.size()), c, pooled, pooled});
  std::vector<int> lv(rois.size());
  for (std::size_t i = 0; i < rois.size(); ++i) lv[i] = roi_level(rois[i]);
  for (std::size_t l = 0; l < f.levels.size(); ++l) {
    std::vector<Box> group;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      if (lv[i] == static_cast<int>(l)) {
        group.push_back(rois[i]);
        where.push_back(i);
      }
    }
    if (group.empty()) continue;
    kernels::RoiAlignShape s;
    s.channels = c;
    s.height = f.levels[l].dim(1);
    s.width = f.levels[l].dim(2);
    s.pooled = pooled;
    s.sampling_ratio = model_.roi_sampling_ratio;
    s.spatial_scale = 1.0 / f.strides[l];
    std::vector<float> buf(group.size() * c * bins);
    kernels::parallel::roi_align(s, f.levels[l].span(), group, buf);
    for (std::size_t k = 0; k < where.size(); ++k) {
      std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(k * c * bins), c * bins,
                  out.values().begin() + static_cast<std::ptrdiff_t>(where[k] * c * bins));
    }
  }
  if (levels != nullptr) *levels = std::move(lv);
  return out;
}

void OlnModel::pool_rois_backward(const FeaturePyramid& f, std::span<const Box> rois,
                                  const std::vector<int>& levels, int pooled, const Tensor& grad,
                                  std::vector<Tensor>& level_grads) const {
  const int c = f.levels.front().dim(0);
  const std::size_t bins = static_cast<std::size_t>(pooled) * pooled;
  for (std::size_t l = 0; l < f.levels.size(); ++l) {
    std::vector<Box> group;
    std::vector<float> g;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      if (levels[i] != static_cast<int>(l)) continue;
      group.push_back(rois[i]);
      g.insert(g.end(), grad.values().begin() + static_cast<std::ptrdiff_t>(i * c * bins),
               grad.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * c * bins));
    }
    if (group.empty()) continue;
    kernels::RoiAlignShape s;
    s.channels = c;
    s.height = f.levels[l].dim(1);
    s.width = f.levels[l].dim(2);
    s.pooled = pooled;
    s.sampling_ratio = model_.roi_sampling_ratio;
    s.spatial_scale = 1.0 / f.strides[l];
    kernels::parallel::roi_align_backward(s, g, group, level_grads[l].span());
  }
}

StageOutputs OlnModel::roi_forward(const FeaturePyramid& f, std::span<const Box> rois) const {
  return roi_forward_impl(f, rois, nullptr);
}

StageOutputs OlnModel::roi_forward_impl(const FeaturePyramid& f, std::span<const Box> rois,
                                        RoiTrace* trace) const {
  if (!head_.two_stage()) throw ConfigError("roi_forward: model has no second stage");
  f.validate();
  StageOutputs out;
  if (rois.empty()) return out;
  std::vector<int> levels;
  Tensor pooled = pool_rois(f, rois, model_.roi_pool, &levels);
  Tensor h1 = nn::relu(roi_fc1_.forward(pooled));
  Tensor h2 = nn::relu(roi_fc2_.forward(h1));
  const Tensor reg = roi_reg_.forward(h2);
  out.regression = reg.values();
  if (head_.stage2_has_quality()) out.quality = roi_quality_.forward(h2).values();
  if (head_.stage2_has_classifier()) out.class_logit = roi_cls_.forward(h2).values();
  if (trace != nullptr) {
    trace->rois.assign(rois.begin(), rois.end());
    trace->levels = std::move(levels);
    trace->pooled = std::move(pooled);
    trace->h1 = std::move(h1);
    trace->h2 = std::move(h2);
  }
  return out;
}

void OlnModel::roi_backward(const RoiTrace& t, const StageGradients& g,
                            std::vector<Tensor>& level_grads) const {
  const int n = static_cast<int>(t.rois.size());
  if (n == 0) return;
  Tensor dreg({n, 4});
  std::copy(g.regression.begin(), g.regression.end(), dreg.values().begin());
  Tensor dh2 = roi_reg_.backward(t.h2, dreg);
  if (head_.stage2_has_quality()) {
    Tensor dq({n, 1});
    std::copy(g.quality.begin(), g.quality.end(), dq.values().begin());
    nn::add_inplace(dh2, roi_quality_.backward(t.h2, dq));
  }
  if (head_.stage2_has_classifier()) {
    Tensor dc({n, 1});
    std::copy(g.class_logit.begin(), g.class_logit.end(), dc.values().begin());
    nn::add_inplace(dh2, roi_cls_.backward(t.h2, dc));
  }
  dh2 = nn::relu_backward(t.h2, dh2);
  Tensor dh1 = nn::relu_backward(t.h1, roi_fc2_.backward(t.h1, dh2));
  Tensor dpooled = roi_fc1_.backward(t.pooled, dh1);
  // The trace does not keep the pyramid; shapes are enough for the scatter.
  FeaturePyramid shapes;
  for (const Tensor& lg : level_grads) shapes.levels.push_back(Tensor(lg.shape()));
  shapes.strides = backbone_->strides();
  pool_rois_backward(shapes, t.rois, t.levels, model_.roi_pool, dpooled, level_grads);
}

MaskOutputs OlnModel::mask_forward(const FeaturePyramid& f, std::span<const Box> rois) const {
  return mask_forward_impl(f, rois, nullptr);
}

MaskOutputs OlnModel::mask_forward_impl(const FeaturePyramid& f, std::span<const Box> rois,
                                        MaskTrace* trace) const {
  if (!head_.mask_head) throw ConfigError("mask_forward: model was built without a mask head");
  f.validate();
  MaskOutputs out;
  const int r = mask_resolution(model_);
  if (rois.empty()) {
    out.logits = Tensor({0, 1, r, r});
    return out;
  }
  std::vector<int> levels;
  std::vector<Tensor> acts;
  acts.push_back(pool_rois(f, rois, model_.mask_pool, &levels));
  for (const nn::Conv2d& conv : mask_convs_) acts.push_back(nn::relu(conv.forward(acts.back())));
  Tensor up = nn::relu(mask_deconv_.forward(acts.back()));
  out.logits = mask_logits_.forward(up);
  if (head_.mask_iou) {
    Tensor b = nn::relu(mask_iou_conv_.forward(acts.back()));
    nn::MaxPoolResult pooled = nn::max_pool2x2(b);
    Tensor f1 = nn::relu(mask_iou_fc1_.forward(pooled.output));
    Tensor f2 = nn::relu(mask_iou_fc2_.forward(f1));
    out.mask_iou = mask_iou_out_.forward(f2).values();
    if (trace != nullptr) {
      trace->iou_conv = std::move(b);
      trace->iou_pool = std::move(pooled);
      trace->f1 = std::move(f1);
      trace->f2 = std::move(f2);
    }
  }
  if (trace != nullptr) {
    trace->rois.assign(rois.begin(), rois.end());
    trace->levels = std::move(levels);
    trace->acts = std::move(acts);
    trace->up = std::move(up);
  }
  return out;
}

void OlnModel::mask_backward(const MaskTrace& t, const Tensor& logit_grad,
                             const std::vector<float>& iou_grad,
                             std::vector<Tensor>& level_grads) const {
  if (t.rois.empty()) return;
  Tensor d_a4(t.acts.back().shape());
  if (!logit_grad.empty()) {
    Tensor d_up = nn::relu_backward(t.up, mask_logits_.backward(t.up, logit_grad));
    d_a4 = mask_deconv_.backward(t.acts.back(), d_up);
  }
  if (head_.mask_iou && !iou_grad.empty()) {
    const int n = static_cast<int>(t.rois.size());
    Tensor dout({n, 1});
    std::copy(iou_grad.begin(), iou_grad.end(), dout.values().begin());
    Tensor d = nn::relu_backward(t.f2, mask_iou_out_.backward(t.f2, dout));
    d = nn::relu_backward(t.f1, mask_iou_fc2_.backward(t.f1, d));
    Tensor dpool = mask_iou_fc1_.backward(t.iou_pool.output, d);
    dpool.reshape(t.iou_pool.output.shape());
    d = nn::max_pool2x2_backward(t.iou_conv, t.iou_pool, dpool);
    d = nn::relu_backward(t.iou_conv, d);
    nn::add_inplace(d_a4, mask_iou_conv_.backward(t.acts.back(), d));
  }
  Tensor d = d_a4;
  for (int i = static_cast<int>(mask_convs_.size()) - 1; i >= 0; --i) {
    d = nn::relu_backward(t.acts[i + 1], d);
    d = mask_convs_[i].backward(t.acts[i], d);
  }
  FeaturePyramid shapes;
  for (const Tensor& lg : level_grads) shapes.levels.push_back(Tensor(lg.shape()));
  shapes.strides = backbone_->strides();
  pool_rois_backward(shapes, t.rois, t.levels, model_.mask_pool, d, level_grads);
}

std::vector<double> OlnModel::stage1_scores(const StageOutputs& out) const {
  std::vector<double> scores(out.size());
  std::vector<double> cues;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    cues.clear();
    if (!out.quality.empty()) cues.push_back(std::clamp(static_cast<double>(out.quality[i]), 0.0, 1.0));
    if (!out.class_logit.empty()) cues.push_back(loss::sigmoid(static_cast<double>(out.class_logit[i])));
    scores[i] = geometric_mean(cues);
  }
  return scores;
}

std::vector<Box> OlnModel::decode_stage1(const StageOutputs& out, const AnchorGrid& grid) const {
  if (out.size() != grid.size()) {
    throw InputError("decode: " + std::to_string(out.size()) + " predictions for " +
                     std::to_string(grid.size()) + " anchors");
  }
  std::vector<Box> boxes(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double size = grid.levels[grid.level_of(i)].anchor_size;
    const auto d = [&](int k) { return std::max(0.0, static_cast<double>(out.regression[i * 4 + k])) * size; };
    boxes[i] = decode_lrtb(grid.centers[i], LRTB{d(0), d(1), d(2), d(3)});
  }
  return boxes;
}

// ---------------------------------------------------------------- losses

LossTerms compute_losses(const StageOutputs& out, const StageTargets& targets,
                         const std::string& prefix, StageGradients* grads) {
  LossTerms terms;
  if (grads != nullptr) {
    grads->regression.assign(out.regression.size(), 0.0f);
    grads->quality.assign(out.quality.size(), 0.0f);
    grads->class_logit.assign(out.class_logit.size(), 0.0f);
  }
  auto gather = [](const std::vector<float>& src, const std::vector<int>& idx, int width) {
    std::vector<float> v;
    v.reserve(idx.size() * width);
    for (int i : idx) {
      for (int k = 0; k < width; ++k) v.push_back(src.at(static_cast<std::size_t>(i) * width + k));
    }
    return v;
  };
  auto scatter = [](const std::vector<float>& g, const std::vector<int>& idx, int width,
                    std::vector<float>& dst) {
    for (std::size_t s = 0; s < idx.size(); ++s) {
      for (int k = 0; k < width; ++k) {
        dst[static_cast<std::size_t>(idx[s]) * width + k] += g[s * width + k];
      }
    }
  };

  if (!out.quality.empty()) {
    const auto& t = targets.quality;
    const auto pred = gather(out.quality, t.indices, 1);
    const auto r = loss::l1<float>(pred, t.quality);
    terms.terms[prefix + "_quality"] = r.value;
    if (grads != nullptr) scatter(r.grad, t.indices, 1, grads->quality);
  }
  if (!out.class_logit.empty()) {
    const auto& t = targets.classifier;
    const auto pred = gather(out.class_logit, t.indices, 1);
    const auto r = loss::bce_with_logits<float>(pred, t.label);
    terms.terms[prefix + "_cls"] = r.value;
    if (grads != nullptr) scatter(r.grad, t.indices, 1, grads->class_logit);
  }
  {
    const auto& t = targets.regression;
    const auto pred = gather(out.regression, t.indices, 4);
    std::vector<float> flat;
    flat.reserve(t.size() * 4);
    for (const auto& r4 : t.regression) flat.insert(flat.end(), r4.begin(), r4.end());
    const auto r = loss::l1<float>(pred, flat, t.regression_valid, 4);
    terms.terms[prefix + "_reg"] = r.value;
    if (grads != nullptr) scatter(r.grad, t.indices, 4, grads->regression);
  }
  return terms;
}

LossTerms compute_mask_losses(const MaskOutputs& out, const MaskTargets& targets, bool with_iou,
                              Tensor* logit_grad, std::vector<float>* iou_grad) {
  LossTerms terms;
  const auto r = loss::bce_with_logits<float>(out.logits.span(), targets.masks.span());
  terms.terms["mask"] = r.value;
  if (logit_grad != nullptr) {
    *logit_grad = Tensor(out.logits.shape());
    std::copy(r.grad.begin(), r.grad.end(), logit_grad->values().begin());
  }
  if (with_iou) {
    const auto q = loss::smooth_l1<float>(out.mask_iou, targets.iou, kMaskIouBeta);
    terms.terms["mask_iou"] = q.value;
    if (iou_grad != nullptr) *iou_grad = q.grad;
  }
  return terms;
}

std::vector<std::uint8_t> crop_mask(std::span<const std::uint8_t> mask, int width, int height,
                                    const Box& roi, int resolution) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(resolution) * resolution, 0);
  const double cw = roi.width() / resolution;
  const double ch = roi.height() / resolution;
  for (int i = 0; i < resolution; ++i) {
    const int y = static_cast<int>(std::floor(roi.y1 + (i + 0.5) * ch));
    if (y < 0 || y >= height) continue;
    for (int j = 0; j < resolution; ++j) {
      const int x = static_cast<int>(std::floor(roi.x1 + (j + 0.5) * cw));
      if (x < 0 || x >= width) continue;
      out[static_cast<std::size_t>(i) * resolution + j] = mask[static_cast<std::size_t>(y) * width + x];
    }
  }
  return out;
}

// -------------------------------------------------------------- training

LossTerms OlnModel::accumulate_gradients(const TrainingSample& sample, const TrainSettings& settings,
                                         std::uint64_t seed) {
  const int height = sample.image.dim(1);
  const int width = sample.image.dim(2);
  const std::vector<Box>& gts = sample.boxes;

  std::unique_ptr<BackboneTrace> btrace;
  (void)features(sample.image);  // validates the input size
  const FeaturePyramid f = backbone_->forward(sample.image, &btrace);
  RpnTrace rtrace;
  const StageOutputs out1 = rpn_forward_impl(f, &rtrace);
  const AnchorGrid grid = anchors(width, height);
  const MatchResult match = match_anchors(grid.boxes, gts);
  const std::vector<std::uint8_t> blocked1 = overlaps_any(grid.boxes, sample.ignore_boxes);

  std::vector<double> anchor_sizes(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) anchor_sizes[i] = grid.levels[grid.level_of(i)].anchor_size;

  StageTargets t1;
  t1.quality_cue = head_.stage1_cue;
  if (head_.stage1_has_quality()) {
    t1.quality = sample_rpn_training(match, settings.rpn_quality_sampler, seed * 8 + 1, {}, {}, blocked1);
    if (head_.stage1_cue == Cue::kCenterness) {
      const auto c = centerness_targets(t1.quality.indices, grid.centers, match, gts);
      for (std::size_t s = 0; s < c.size(); ++s) t1.quality.quality[s] = t1.quality.positive[s] ? c[s] : 0.0f;
    } else {
      for (std::size_t s = 0; s < t1.quality.size(); ++s) {
        t1.quality.quality[s] =
            t1.quality.positive[s] ? static_cast<float>(match.max_iou[t1.quality.indices[s]]) : 0.0f;
      }
    }
    t1.regression = t1.quality;
  }
  if (head_.stage1_has_classifier()) {
    t1.classifier = sample_rpn_training(match, settings.rpn_class_sampler, seed * 8 + 2, grid.boxes, gts, blocked1);
    if (head_.stage1_cue == Cue::kClass) t1.regression = t1.classifier;
  }
  fill_lrtb_targets(t1.regression, grid.centers, anchor_sizes, match, gts);

  StageGradients g1;
  LossTerms terms = compute_losses(out1, t1, "rpn", &g1);
  std::vector<Tensor> level_grads = rpn_backward(rtrace, g1);

  if (head_.two_stage()) {
    // Proposals are treated as constants; ground truth joins the RoI set.
    std::vector<Box> decoded = decode_stage1(out1, grid);
    const std::vector<double> scores1 = stage1_scores(out1);
    std::vector<Box> cand;
    std::vector<double> cand_scores;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      const Box b = clip(decoded[i], width, height);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      cand.push_back(b);
      cand_scores.push_back(scores1[i]);
    }
    std::vector<Box> rois;
    for (std::size_t k : nms(cand, cand_scores, settings.proposal_nms)) {
      if (static_cast<int>(rois.size()) >= settings.train_proposals) break;
      rois.push_back(cand[k]);
    }
    rois.insert(rois.end(), gts.begin(), gts.end());
    const MatchResult m2 = match_anchors(rois, gts);
    const std::vector<std::uint8_t> blocked2 = overlaps_any(rois, sample.ignore_boxes);

    StageTargets t2all;
    t2all.quality_cue = head_.stage2_cue;
    if (head_.stage2_has_quality()) {
      t2all.quality = sample_training(m2, settings.roi_quality_sampler, seed * 8 + 3, {}, {}, blocked2);
      for (std::size_t s = 0; s < t2all.quality.size(); ++s) {
        if (!t2all.quality.positive[s]) continue;
        const int idx = t2all.quality.indices[s];
        const Box& roi = rois[idx];
        float q = 0.0f;
        switch (head_.stage2_cue) {
          case Cue::kIou: q = static_cast<float>(m2.max_iou[idx]); break;
          case Cue::kDice: q = roi_dice_targets(std::span<const Box>(&roi, 1), gts)[0]; break;
          case Cue::kCenterness:
            q = static_cast<float>(centerness(Point{roi.center_x(), roi.center_y()}, gts[m2.matched_gt[idx]]));
            break;
          default: break;
        }
        t2all.quality.quality[s] = q;
      }
      t2all.regression = t2all.quality;
    }
    if (head_.stage2_has_classifier()) {
      t2all.classifier = sample_training(m2, settings.roi_class_sampler, seed * 8 + 4, {}, {}, blocked2);
      if (head_.stage2_cue == Cue::kClass) t2all.regression = t2all.classifier;
    }
    fill_delta_targets(t2all.regression, rois, m2, gts);

    // Forward only the RoIs some branch sampled.
    std::set<int> used;
    for (const auto* t : {&t2all.quality, &t2all.classifier, &t2all.regression}) {
      used.insert(t->indices.begin(), t->indices.end());
    }
    std::vector<int> order(used.begin(), used.end());
    std::vector<int> slot(rois.size(), -1);
    std::vector<Box> batch;
    for (std::size_t k = 0; k < order.size(); ++k) {
      slot[order[k]] = static_cast<int>(k);
      batch.push_back(rois[order[k]]);
    }
    StageTargets t2 = t2all;
    for (auto* t : {&t2.quality, &t2.classifier, &t2.regression}) {
      for (int& idx : t->indices) idx = slot[idx];
    }
    if (!batch.empty()) {
      RoiTrace trace2;
      const StageOutputs out2 = roi_forward_impl(f, batch, &trace2);
      StageGradients g2;
      terms.add(compute_losses(out2, t2, "roi", &g2));
      roi_backward(trace2, g2, level_grads);
    }

    if (head_.mask_head && !sample.masks.empty()) {
      std::vector<int> mask_pool;
      for (int idx : order) {
        if (m2.matched_gt[idx] >= 0 && m2.max_iou[idx] >= settings.mask_positive_iou) mask_pool.push_back(idx);
      }
      std::mt19937_64 rng(seed * 8 + 5);
      std::shuffle(mask_pool.begin(), mask_pool.end(), rng);
      if (static_cast<int>(mask_pool.size()) > settings.mask_samples) mask_pool.resize(settings.mask_samples);
      std::sort(mask_pool.begin(), mask_pool.end());
      if (!mask_pool.empty()) {
        std::vector<Box> mrois;
        for (int idx : mask_pool) mrois.push_back(rois[idx]);
        MaskTrace mtrace;
        const MaskOutputs mout = mask_forward_impl(f, mrois, &mtrace);
        const int res = mask_resolution(model_);
        const std::size_t cells = static_cast<std::size_t>(res) * res;
        MaskTargets mt;
        mt.masks = Tensor({static_cast<int>(mrois.size()), 1, res, res});
        for (std::size_t k = 0; k < mrois.size(); ++k) {
          const auto crop = crop_mask(sample.masks[m2.matched_gt[mask_pool[k]]], width, height, mrois[k], res);
          std::vector<std::uint8_t> pred(cells);
          for (std::size_t c = 0; c < cells; ++c) {
            mt.masks[k * cells + c] = crop[c];
            pred[c] = mout.logits[k * cells + c] > 0.0f ? 1 : 0;
          }
          mt.iou.push_back(static_cast<float>(mask_iou_targets(pred, crop)));
        }
        Tensor dlogits;
        std::vector<float> diou;
        terms.add(compute_mask_losses(mout, mt, head_.mask_iou, &dlogits, &diou));
        mask_backward(mtrace, dlogits, diou, level_grads);
      }
    }
  }

  backbone_->backward(*btrace, level_grads);
  return terms;
}

}  // namespace oln
