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

#include "oln/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "oln/error.hpp"
#include "oln/image_io.hpp"
#include "oln/json_util.hpp"
#include "oln/serialization.hpp"

namespace oln {

namespace ju = json_util;
using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<std::string> loss_term_names(const HeadConfig& h) {
  std::vector<std::string> names;
  if (h.stage1_has_quality()) names.push_back("rpn_quality");
  if (h.stage1_has_classifier()) names.push_back("rpn_cls");
  names.push_back("rpn_reg");
  if (h.two_stage()) {
    if (h.stage2_has_quality()) names.push_back("roi_quality");
    if (h.stage2_has_classifier()) names.push_back("roi_cls");
    names.push_back("roi_reg");
  }
  if (h.mask_head) names.push_back("mask");
  if (h.mask_iou) names.push_back("mask_iou");
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

// ------------------------------------------------------------- optimizer

double OptimizerConfig::learning_rate_at(int step) const {
  double lr = learning_rate;
  for (int s : decay_steps) {
    if (step >= s) lr *= decay;
  }
  if (step < warmup_steps) {
    const double alpha = static_cast<double>(step) / warmup_steps;
    lr *= warmup_factor * (1.0 - alpha) + alpha;
  }
  return lr;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("optimizer: learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be non-negative");
  if (warmup_steps < 0) throw ConfigError("optimizer: warmup_steps must be non-negative");
  if (!(warmup_factor > 0.0) || warmup_factor > 1.0) throw ConfigError("optimizer: warmup_factor must be in (0, 1]");
  if (!(decay > 0.0)) throw ConfigError("optimizer: decay must be positive");
  if (!std::is_sorted(decay_steps.begin(), decay_steps.end())) {
    throw ConfigError("optimizer: decay_steps must be sorted");
  }
  if (max_grad_norm < 0.0) throw ConfigError("optimizer: max_grad_norm must be non-negative");
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be non-negative");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (log_every <= 0) throw ConfigError("train: log_every must be positive");
  if (settings.train_proposals < 0) throw ConfigError("train: train_proposals must be non-negative");
  if (settings.mask_samples < 0) throw ConfigError("train: mask_samples must be non-negative");
  settings.rpn_quality_sampler.validate();
  settings.rpn_class_sampler.validate();
  settings.roi_quality_sampler.validate();
  settings.roi_class_sampler.validate();
  optimizer.validate();
}

void ExperimentConfig::validate() const {
  head.validate();
  model.validate();
  train.validate();
  inference.validate();
  eval.validate();
}

// ------------------------------------------------------------------ json

json to_json(const OptimizerConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},   {"warmup_steps", c.warmup_steps},
          {"warmup_factor", c.warmup_factor}, {"decay_steps", c.decay_steps},
          {"decay", c.decay},                 {"max_grad_norm", c.max_grad_norm}};
}

json to_json(const TrainSettings& s) {
  return {{"rpn_quality_sampler", to_json(s.rpn_quality_sampler)},
          {"rpn_class_sampler", to_json(s.rpn_class_sampler)},
          {"roi_quality_sampler", to_json(s.roi_quality_sampler)},
          {"roi_class_sampler", to_json(s.roi_class_sampler)},
          {"train_proposals", s.train_proposals},
          {"proposal_nms", s.proposal_nms},
          {"mask_samples", s.mask_samples},
          {"mask_positive_iou", s.mask_positive_iou}};
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"seen_only", c.seen_only},
          {"filter_unseen_background", c.filter_unseen_background},
          {"horizontal_flip", c.horizontal_flip},
          {"log_every", c.log_every},
          {"settings", to_json(c.settings)},
          {"optimizer", to_json(c.optimizer)}};
}

json to_json(const ExperimentConfig& c) {
  return {{"head", to_json(c.head)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"inference", to_json(c.inference)},
          {"eval", to_json(c.eval)}};
}

OptimizerConfig optimizer_config_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j,
                     {"learning_rate", "momentum", "weight_decay", "warmup_steps", "warmup_factor",
                      "decay_steps", "decay", "max_grad_norm"},
                     path);
  OptimizerConfig c;
  ju::get_optional(j, "learning_rate", path, c.learning_rate);
  ju::get_optional(j, "momentum", path, c.momentum);
  ju::get_optional(j, "weight_decay", path, c.weight_decay);
  ju::get_optional(j, "warmup_steps", path, c.warmup_steps);
  ju::get_optional(j, "warmup_factor", path, c.warmup_factor);
  if (auto it = j.find("decay_steps"); it != j.end()) {
    const std::string p = ju::child(path, "decay_steps");
    ju::expect_array(*it, p);
    c.decay_steps.clear();
    for (std::size_t i = 0; i < it->size(); ++i) c.decay_steps.push_back(ju::as<int>((*it)[i], ju::index(p, i)));
  }
  ju::get_optional(j, "decay", path, c.decay);
  ju::get_optional(j, "max_grad_norm", path, c.max_grad_norm);
  return c;
}

TrainSettings train_settings_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j,
                     {"rpn_quality_sampler", "rpn_class_sampler", "roi_quality_sampler", "roi_class_sampler",
                      "train_proposals", "proposal_nms", "mask_samples", "mask_positive_iou"},
                     path);
  TrainSettings s;
  auto sampler = [&](const char* key, SamplerConfig& out) {
    if (auto it = j.find(key); it != j.end()) out = sampler_config_from_json(*it, ju::child(path, key));
  };
  sampler("rpn_quality_sampler", s.rpn_quality_sampler);
  sampler("rpn_class_sampler", s.rpn_class_sampler);
  sampler("roi_quality_sampler", s.roi_quality_sampler);
  sampler("roi_class_sampler", s.roi_class_sampler);
  ju::get_optional(j, "train_proposals", path, s.train_proposals);
  ju::get_optional(j, "proposal_nms", path, s.proposal_nms);
  ju::get_optional(j, "mask_samples", path, s.mask_samples);
  ju::get_optional(j, "mask_positive_iou", path, s.mask_positive_iou);
  return s;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j,
                     {"steps", "batch_size", "seed", "seen_only", "filter_unseen_background", "horizontal_flip",
                      "log_every", "settings", "optimizer"},
                     path);
  TrainConfig c;
  ju::get_optional(j, "steps", path, c.steps);
  ju::get_optional(j, "batch_size", path, c.batch_size);
  ju::get_optional(j, "seed", path, c.seed);
  ju::get_optional(j, "seen_only", path, c.seen_only);
  ju::get_optional(j, "filter_unseen_background", path, c.filter_unseen_background);
  ju::get_optional(j, "horizontal_flip", path, c.horizontal_flip);
  ju::get_optional(j, "log_every", path, c.log_every);
  if (auto it = j.find("settings"); it != j.end()) c.settings = train_settings_from_json(*it, ju::child(path, "settings"));
  if (auto it = j.find("optimizer"); it != j.end()) {
    c.optimizer = optimizer_config_from_json(*it, ju::child(path, "optimizer"));
  }
  return c;
}

ExperimentConfig experiment_config_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j, {"head", "model", "train", "inference", "eval"}, path);
  ExperimentConfig c;
  if (auto it = j.find("head"); it != j.end()) c.head = head_config_from_json(*it, ju::child(path, "head"));
  if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it, ju::child(path, "model"));
  if (auto it = j.find("train"); it != j.end()) c.train = train_config_from_json(*it, ju::child(path, "train"));
  if (auto it = j.find("inference"); it != j.end()) {
    c.inference = inference_config_from_json(*it, ju::child(path, "inference"));
  }
  if (auto it = j.find("eval"); it != j.end()) c.eval = eval_options_from_json(*it, ju::child(path, "eval"));
  c.validate();
  return c;
}

ExperimentConfig read_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path, e.what());
  }
  return experiment_config_from_json(j, "$");
}

// ------------------------------------------------------------------ data

std::vector<TrainingSample> make_training_set(const GroundTruthSet& gt, const std::string& image_root,
                                              bool seen_only, bool unseen_as_ignore) {
  std::vector<TrainingSample> out;
  out.reserve(gt.images.size());
  for (const auto& img : gt.images) {
    const std::filesystem::path file = std::filesystem::path(image_root) / img.file_name;
    const RgbImage rgb = read_png(file.string());
    if (rgb.width != img.width || rgb.height != img.height) {
      throw InputError(file.string() + ": image size differs from its annotation record");
    }
    TrainingSample s;
    s.image = to_network_input(rgb);
    bool all_masks = true;
    for (const auto& inst : img.instances) all_masks = all_masks && inst.mask.has_value();
    for (const auto& inst : img.instances) {
      if (!inst.seen && seen_only) {
        if (unseen_as_ignore) s.ignore_boxes.push_back(inst.box);
        continue;
      }
      if (inst.crowd) {
        s.ignore_boxes.push_back(inst.box);
        continue;
      }
      s.boxes.push_back(inst.box);
      if (all_masks) s.masks.push_back(rle_decode(*inst.mask));
    }
    if (!all_masks) s.masks.clear();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TrainingSample> load_training_set(const std::string& annotation_path, bool seen_only,
                                              bool unseen_as_ignore) {
  const GroundTruthSet gt = load_annotations(annotation_path);
  const std::string root = std::filesystem::path(annotation_path).parent_path().string();
  return make_training_set(gt, root.empty() ? "." : root, seen_only, unseen_as_ignore);
}

TrainingSample flip_horizontal(const TrainingSample& sample) {
  TrainingSample out;
  const int c = sample.image.dim(0);
  const int h = sample.image.dim(1);
  const int w = sample.image.dim(2);
  out.image = Tensor(sample.image.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const std::size_t row = (static_cast<std::size_t>(ch) * h + y) * w;
      for (int x = 0; x < w; ++x) out.image[row + x] = sample.image[row + (w - 1 - x)];
    }
  }
  auto flip_box = [w](const Box& b) { return Box{w - b.x2, b.y1, w - b.x1, b.y2}; };
  for (const Box& b : sample.boxes) out.boxes.push_back(flip_box(b));
  for (const Box& b : sample.ignore_boxes) out.ignore_boxes.push_back(flip_box(b));
  for (const auto& m : sample.masks) {
    std::vector<std::uint8_t> f(m.size());
    for (int y = 0; y < h; ++y) {
      const std::size_t row = static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) f[row + x] = m[row + (w - 1 - x)];
    }
    out.masks.push_back(std::move(f));
  }
  return out;
}

// ------------------------------------------------------------------- log

LossLog::LossLog(std::string path) : path_(std::move(path)) {}

void LossLog::append(const StepLog& entry) {
  if (columns_.empty()) {
    for (const auto& [name, v] : entry.losses.terms) columns_.push_back(name);
    std::string header = "step,lr,total";
    for (const auto& c : columns_) header += "," + c;

    std::string existing;
    if (std::ifstream in(path_); in) std::getline(in, existing);
    if (existing.empty()) {
      std::ofstream out(path_, std::ios::trunc);
      if (!out) throw IoError(path_, "cannot write loss log");
      out << header << "\n";
    } else if (existing != header) {
      throw IoError(path_, "existing loss log has a different header");
    }
  }
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError(path_, "cannot append to loss log");
  std::ostringstream line;
  line.precision(8);
  line << entry.step << "," << entry.learning_rate << "," << entry.losses.total();
  for (const auto& c : columns_) {
    auto it = entry.losses.terms.find(c);
    line << "," << (it == entry.losses.terms.end() ? 0.0 : it->second);
  }
  out << line.str() << "\n";
}

// --------------------------------------------------------------- trainer

Trainer::Trainer(OlnModel& model, TrainConfig config) : model_(model), config_(std::move(config)) {
  config_.validate();
}

StepLog Trainer::step(std::span<const TrainingSample> batch) {
  if (batch.empty()) throw InputError("trainer: empty batch");
  model_.parameters().zero_grad();
  StepLog log;
  log.step = step_;
  log.learning_rate = config_.optimizer.learning_rate_at(step_);
  for (const auto& name : loss_term_names(model_.head_config())) log.losses.terms[name] = 0.0;

  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::uint64_t seed = mix_seed(config_.seed, static_cast<std::uint64_t>(step_), b);
    LossTerms t;
    if (config_.horizontal_flip && (seed & 1u) != 0) {
      t = model_.accumulate_gradients(flip_horizontal(batch[b]), config_.settings, seed >> 1);
    } else {
      t = model_.accumulate_gradients(batch[b], config_.settings, seed >> 1);
    }
    log.losses.add(t, scale);
  }
  apply_update(log.learning_rate, scale);
  ++step_;
  return log;
}

void Trainer::apply_update(double lr, double grad_scale) {
  const auto& opt = config_.optimizer;
  auto params = model_.parameters().all();
  double norm2 = 0.0;
  for (const nn::Parameter* p : params) {
    for (float g : p->grad.span()) norm2 += static_cast<double>(g) * g;
  }
  double scale = grad_scale;
  const double norm = std::sqrt(norm2) * grad_scale;
  if (opt.max_grad_norm > 0.0 && norm > opt.max_grad_norm) scale *= opt.max_grad_norm / norm;

  for (nn::Parameter* p : params) {
    const bool decay = p->value.rank() > 1;
    auto w = p->value.span();
    auto g = p->grad.span();
    auto v = p->velocity.span();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double d = scale * g[i];
      if (decay) d += opt.weight_decay * w[i];
      v[i] = static_cast<float>(opt.momentum * v[i] + d);
      w[i] = static_cast<float>(w[i] - lr * v[i]);
    }
  }
}

void Trainer::run(std::span<const TrainingSample> data, const std::function<void(const StepLog&)>& on_log) {
  if (config_.steps == 0) return;
  if (data.empty()) throw InputError("trainer: empty training set");
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  std::vector<TrainingSample> batch;
  while (step_ < config_.steps) {
    batch.clear();
    while (static_cast<int>(batch.size()) < config_.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(mix_seed(config_.seed, epoch++, 0x5eed));
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    const StepLog log = step(batch);
    if (on_log && (log.step % config_.log_every == 0 || step_ == config_.steps)) on_log(log);
  }
}

// -------------------------------------------------------------- ablation

std::vector<AblationRow> ablation_matrix(const std::string& preset, const ExperimentConfig& base) {
  std::vector<AblationRow> rows;
  if (preset == "table3" || preset == "table4") {
    for (const auto& r : preset == "table3" ? head_presets::table3() : head_presets::table4()) {
      ExperimentConfig c = base;
      c.head = r.config;
      rows.push_back({r.name, c});
    }
    return rows;
  }
  if (preset != "table5") throw ConfigError("unknown ablation preset '" + preset + "'");

  namespace sp = sampler_presets;
  auto oln = [&](const std::string& name, const SamplerConfig& rpn) {
    ExperimentConfig c = base;
    c.head = head_presets::oln_box();
    c.train.settings.rpn_quality_sampler = rpn;
    c.train.settings.roi_quality_sampler = sp::oln_roi();
    c.train.filter_unseen_background = false;
    rows.push_back({name, c});
  };
  auto frcnn = [&](const std::string& name, const SamplerConfig& rpn, const SamplerConfig& roi, bool filtered) {
    ExperimentConfig c = base;
    c.head = head_presets::faster_rcnn();
    c.train.settings.rpn_class_sampler = rpn;
    c.train.settings.roi_class_sampler = roi;
    c.train.seen_only = true;
    c.train.filter_unseen_background = filtered;
    rows.push_back({name, c});
  };
  oln("oln_bg0", sp::oln_rpn());
  oln("oln_bg1", sp::oln_rpn_bg1());
  for (bool filtered : {false, true}) {
    const std::string p = filtered ? "frcnn_filtered" : "frcnn";
    frcnn(p + "_bg128_t07", sp::faster_rcnn_rpn(), sp::faster_rcnn_roi(), filtered);
    frcnn(p + "_bg128_t03", sp::faster_rcnn_rpn_low(), sp::faster_rcnn_roi_low(), filtered);
    frcnn(p + "_bg1_t07", sp::faster_rcnn_rpn_bg1(), sp::faster_rcnn_roi(), filtered);
    frcnn(p + "_bg1_t03", sp::faster_rcnn_rpn_bg1_low(), sp::faster_rcnn_roi_low(), filtered);
  }
  return rows;
}

}  // namespace oln
