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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oln/annotations.hpp"
#include "oln/evaluation.hpp"
#include "oln/inference.hpp"
#include "oln/model.hpp"

namespace oln {

/// SGD with momentum, linear warmup and step decay.
struct OptimizerConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // not applied to biases
  int warmup_steps = 50;
  double warmup_factor = 0.1;
  std::vector<int> decay_steps;  // step indices where lr is multiplied by decay
  double decay = 0.1;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 10.0;

  double learning_rate_at(int step) const;
  void validate() const;
};

struct TrainConfig {
  int steps = 600;
  int batch_size = 2;
  std::uint64_t seed = 0;
  /// Drop annotations of unseen categories before training.
  bool seen_only = true;
  /// Keep unseen objects out of background samples ("filtered" rows).
  bool filter_unseen_background = false;
  bool horizontal_flip = true;
  int log_every = 10;
  TrainSettings settings;
  OptimizerConfig optimizer;

  void validate() const;
};

struct ExperimentConfig {
  HeadConfig head = head_presets::oln_box();
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference = InferenceConfig::proposal_mode();
  EvalOptions eval;

  void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
nlohmann::json to_json(const TrainSettings& s);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, const std::string& path);
TrainSettings train_settings_from_json(const nlohmann::json& j, const std::string& path);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path);
/// Strict: unknown keys are ParseErrors; missing keys keep defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& path = "$");
/// Throws IoError / ParseError / ConfigError.
ExperimentConfig read_experiment_config(const std::string& path);

/// Builds training samples from ground truth and images under
/// `image_root`. With `seen_only`, unseen annotations are dropped; with
/// `unseen_as_ignore`, their boxes become background-exclusion regions.
std::vector<TrainingSample> make_training_set(const GroundTruthSet& gt, const std::string& image_root,
                                              bool seen_only, bool unseen_as_ignore);
/// Loads `<dir>/annotations.json` style files; images resolve relative to
/// the annotation file's directory.
std::vector<TrainingSample> load_training_set(const std::string& annotation_path, bool seen_only,
                                              bool unseen_as_ignore);

/// Mirrors image, boxes, masks and ignore regions left-right.
TrainingSample flip_horizontal(const TrainingSample& sample);

struct StepLog {
  int step = 0;
  double learning_rate = 0.0;
  LossTerms losses;  // batch means
};

/// Append-only CSV: step,lr,total,<terms sorted by name>. An existing file
/// with the same header is appended to; a different header is an IoError.
class LossLog {
 public:
  explicit LossLog(std::string path);
  void append(const StepLog& entry);

 private:
  std::string path_;
  std::vector<std::string> columns_;
};

class Trainer {
 public:
  Trainer(OlnModel& model, TrainConfig config);

  /// One optimizer step over `batch`; gradients are batch means.
  StepLog step(std::span<const TrainingSample> batch);
  /// Runs config.steps steps over `data`, cycling through shuffled epochs.
  /// `on_log` sees every log_every-th step and the last one.
  void run(std::span<const TrainingSample> data, const std::function<void(const StepLog&)>& on_log = {});

  int steps_done() const { return step_; }

 private:
  void apply_update(double lr, double grad_scale);

  OlnModel& model_;
  TrainConfig config_;
  int step_ = 0;
};

/// One named row of an ablation matrix.
struct AblationRow {
  std::string name;
  ExperimentConfig config;
};

/// "table3" (rows a-j), "table4" (classifier rows) or "table5" (sampling
/// rows). Rows override the head and samplers of `base`; everything else
/// is shared. Throws ConfigError for unknown presets.
std::vector<AblationRow> ablation_matrix(const std::string& preset, const ExperimentConfig& base);

}  // namespace oln
