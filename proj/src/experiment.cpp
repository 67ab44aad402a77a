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

#include "oln/experiment.hpp"

#include <exception>
#include <filesystem>

#include "oln/image_io.hpp"

namespace oln {

EvalSet load_eval_set(const std::string& annotation_path) {
  EvalSet s;
  s.gt = load_annotations(annotation_path);
  const std::string root = std::filesystem::path(annotation_path).parent_path().string();
  s.image_root = root.empty() ? "." : root;
  return s;
}

ImageProposals run_inference(const OlnModel& model, const EvalSet& set, const InferenceConfig& cfg) {
  const auto& images = set.gt.images;
  ImageProposals out(images.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      const auto path = std::filesystem::path(set.image_root) / images[i].file_name;
      const Tensor input = to_network_input(read_png(path.string()));
      out[i] = {images[i].image_id, detect(model, input, cfg)};
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

nlohmann::json to_results_json(const ImageProposals& proposals) {
  nlohmann::json all = nlohmann::json::array();
  for (const auto& [id, props] : proposals) {
    for (auto& e : proposals_to_json(id, props)) all.push_back(std::move(e));
  }
  return all;
}

std::vector<std::pair<int, std::vector<ScoredBox>>> to_scored(const ImageProposals& proposals) {
  std::vector<std::pair<int, std::vector<ScoredBox>>> out;
  out.reserve(proposals.size());
  for (const auto& [id, props] : proposals) {
    std::vector<ScoredBox> boxes;
    boxes.reserve(props.size());
    for (const auto& p : props) boxes.push_back({p.box, p.score});
    out.emplace_back(id, std::move(boxes));
  }
  return out;
}

OlnModel train_model(const ExperimentConfig& config, std::span<const TrainingSample> train_set,
                     const std::string& loss_log, const std::function<void(const StepLog&)>& on_log) {
  config.validate();
  OlnModel model(config.head, config.model, config.train.seed);
  Trainer trainer(model, config.train);
  std::optional<LossLog> log;
  if (!loss_log.empty()) log.emplace(loss_log);
  trainer.run(train_set, [&](const StepLog& s) {
    if (log) log->append(s);
    if (on_log) on_log(s);
  });
  return model;
}

std::vector<TrainingSample> training_set_for(const ExperimentConfig& config, const EvalSet& data) {
  return make_training_set(data.gt, data.image_root, config.train.seen_only,
                           config.train.filter_unseen_background);
}

}  // namespace oln
