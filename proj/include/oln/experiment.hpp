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

// End-to-end glue shared by the CLI and the acceptance runner.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "oln/annotations.hpp"
#include "oln/evaluation.hpp"
#include "oln/inference.hpp"
#include "oln/training.hpp"

namespace oln {

/// Ground truth plus the directory its file names resolve against.
struct EvalSet {
  GroundTruthSet gt;
  std::string image_root;
};

EvalSet load_eval_set(const std::string& annotation_path);

using ImageProposals = std::vector<std::pair<int, std::vector<Proposal>>>;

/// Runs `detect` over every image of the set, in parallel over images.
ImageProposals run_inference(const OlnModel& model, const EvalSet& set, const InferenceConfig& cfg);

/// COCO-results array over all images.
nlohmann::json to_results_json(const ImageProposals& proposals);
std::vector<std::pair<int, std::vector<ScoredBox>>> to_scored(const ImageProposals& proposals);

/// Builds a model from the config, trains it on `train_set` and returns it.
/// `loss_log` may be empty to skip the CSV.
OlnModel train_model(const ExperimentConfig& config, std::span<const TrainingSample> train_set,
                     const std::string& loss_log = "",
                     const std::function<void(const StepLog&)>& on_log = {});

/// Training set for a config: applies seen_only and background filtering.
std::vector<TrainingSample> training_set_for(const ExperimentConfig& config, const EvalSet& data);

}  // namespace oln
