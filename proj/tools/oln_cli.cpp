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

// oln: dataset generation, training, proposal/detection export, evaluation,
// ablation matrices and stage-1 heatmaps.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oln/error.hpp"
#include "oln/evaluation.hpp"
#include "oln/experiment.hpp"
#include "oln/image_io.hpp"
#include "oln/inference.hpp"
#include "oln/serialization.hpp"
#include "oln/synthetic.hpp"
#include "oln/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Relative output paths land under $OLN_OUTPUT_DIR when it is set.
std::string output_path(const std::string& p) {
  const char* root = std::getenv("OLN_OUTPUT_DIR");
  if (root == nullptr || *root == '\0' || fs::path(p).is_absolute()) return p;
  return (fs::path(root) / p).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_json(const std::string& path, const json& j) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw oln::IoError(path, "cannot write");
  out << j.dump(1) << "\n";
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw oln::IoError(path, "cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw oln::ParseError(path, e.what());
  }
}

oln::ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? oln::ExperimentConfig{} : oln::read_experiment_config(path);
}

std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> ks;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ks.push_back(k);
    } catch (const std::exception&) {
      throw oln::InputError("--ks: '" + item + "' is not an integer");
    }
  }
  return ks;
}

void progress(const std::string& tag, const oln::StepLog& s) {
  std::clog << tag << " step " << s.step << " lr " << s.learning_rate << " loss " << s.losses.total() << "\n";
}

int report_error(const std::string& type, const std::string& message, int code,
                 const std::optional<std::string>& where = std::nullopt) {
  json e = {{"error", {{"type", type}, {"message", message}}}};
  if (where) e["error"]["where"] = *where;
  std::cerr << e.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Localization-quality object proposals"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  std::string gen_out, gen_spec;
  int gen_n = 100;
  std::optional<std::uint64_t> gen_seed;
  std::optional<int> gen_size;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("-n,--num-images", gen_n, "Number of images")->check(CLI::NonNegativeNumber);
  gen->add_option("--spec", gen_spec, "SceneSpec JSON file")->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "Override the spec seed");
  gen->add_option("--size", gen_size, "Override width and height")->check(CLI::PositiveNumber);

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_cfg, train_data, train_out, train_log;
  std::optional<int> train_steps;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_cfg, "Experiment config JSON")->check(CLI::ExistingFile);
  train->add_option("--data", train_data, "Training annotation file")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--loss-log", train_log, "Append-only loss CSV");
  train->add_option("--steps", train_steps, "Override train.steps")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", train_seed, "Override train.seed");

  // propose / detect
  std::string inf_ckpt, inf_data, inf_out, inf_cfg;
  std::optional<int> inf_max;
  auto add_inference = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", inf_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", inf_data, "Annotation file listing the images")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", inf_out, "Results JSON")->required();
    sub->add_option("--config", inf_cfg, "Experiment config (inference section)")->check(CLI::ExistingFile);
    sub->add_option("--max", inf_max, "Override the output cap")->check(CLI::PositiveNumber);
  };
  auto* propose = app.add_subcommand("propose", "Class-agnostic proposals (NMS 0.7, top 1000)");
  add_inference(propose);
  auto* detect_cmd = app.add_subcommand("detect", "Detection mode (NMS 0.5, top 100, masks)");
  add_inference(detect_cmd);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate proposals against annotations");
  std::string eval_gt, eval_props, eval_out, eval_csv, eval_ks, eval_cfg;
  bool eval_coco = false, eval_no_ap = false;
  double eval_iou = -1.0;
  eval->add_option("--annotations", eval_gt, "Ground-truth annotation file")->required()->check(CLI::ExistingFile);
  eval->add_option("--proposals", eval_props, "Results JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "EvalReport JSON (stdout when omitted)");
  eval->add_option("--csv", eval_csv, "AR table as CSV");
  eval->add_option("--ks", eval_ks, "Comma-separated budgets, e.g. 10,100,1000");
  eval->add_option("--config", eval_cfg, "Experiment config (eval section)")->check(CLI::ExistingFile);
  eval->add_option("--iou", eval_iou, "Match threshold for AR (default 0.5)");
  eval->add_flag("--coco-recall", eval_coco, "Average recall over IoU 0.50:0.95");
  eval->add_flag("--no-ap", eval_no_ap, "Skip AP");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every row of a preset matrix");
  std::string abl_preset, abl_cfg, abl_train, abl_eval, abl_out;
  std::optional<int> abl_steps;
  std::vector<std::string> abl_rows;
  ablate->add_option("--preset", abl_preset, "table3 | table4 | table5")
      ->required()
      ->check(CLI::IsMember({"table3", "table4", "table5"}));
  ablate->add_option("--config", abl_cfg, "Base experiment config")->check(CLI::ExistingFile);
  ablate->add_option("--train-data", abl_train, "Training annotation file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--eval-data", abl_eval, "Evaluation annotation file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", abl_out, "Output directory")->required();
  ablate->add_option("--steps", abl_steps, "Override train.steps")->check(CLI::NonNegativeNumber);
  ablate->add_option("--rows", abl_rows, "Only these rows")->delimiter(',');

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "Stage-1 objectness heatmap of one image");
  std::string heat_ckpt, heat_img, heat_out, heat_npy;
  heat->add_option("--checkpoint", heat_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  heat->add_option("--image", heat_img, "PNG image")->required()->check(CLI::ExistingFile);
  heat->add_option("--out", heat_out, "Heatmap PNG")->required();
  heat->add_option("--npy", heat_npy, "Raw float32 .npy (default: next to the PNG)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    if (*gen) {
      oln::SceneSpec spec;
      if (!gen_spec.empty()) spec = oln::scene_spec_from_json(read_json(gen_spec), "$");
      if (gen_seed) spec.seed = *gen_seed;
      if (gen_size) spec.width = spec.height = *gen_size;
      spec.validate();
      const std::string out = output_path(gen_out);
      const auto file = oln::generate_dataset(spec, gen_n, out);
      std::cout << json{{"images", file.images.size()},
                        {"annotations", file.annotations.size()},
                        {"annotation_file", (fs::path(out) / "annotations.json").string()}}
                       .dump()
                << "\n";
    } else if (*train) {
      oln::ExperimentConfig cfg = load_config(train_cfg);
      if (train_steps) cfg.train.steps = *train_steps;
      if (train_seed) cfg.train.seed = *train_seed;
      cfg.validate();
      std::vector<oln::TrainingSample> data;
      if (cfg.train.steps > 0) {
        if (train_data.empty()) throw oln::InputError("train: --data is required when steps > 0");
        data = oln::training_set_for(cfg, oln::load_eval_set(train_data));
      }
      const std::string log = train_log.empty() ? std::string() : output_path(train_log);
      if (!log.empty()) ensure_parent(log);
      const auto t0 = std::chrono::steady_clock::now();
      const oln::OlnModel model =
          oln::train_model(cfg, data, log, [](const oln::StepLog& s) { progress("train", s); });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::string out = output_path(train_out);
      ensure_parent(out);
      model.save(out, {{"steps", std::to_string(cfg.train.steps)},
                       {"seed", std::to_string(cfg.train.seed)},
                       {"experiment", oln::to_json(cfg).dump()}});
      std::cout << json{{"checkpoint", out}, {"steps", cfg.train.steps}, {"seconds", secs}}.dump() << "\n";
    } else if (*propose || *detect_cmd) {
      const oln::ExperimentConfig cfg = load_config(inf_cfg);
      oln::InferenceConfig icfg = *detect_cmd ? oln::InferenceConfig::detection_mode()
                                              : (inf_cfg.empty() ? oln::InferenceConfig::proposal_mode() : cfg.inference);
      if (*detect_cmd && !inf_cfg.empty()) icfg.stage1_top_n = cfg.inference.stage1_top_n;
      if (inf_max) icfg.max_outputs = *inf_max;
      icfg.validate();
      const oln::OlnModel model = oln::OlnModel::load(inf_ckpt);
      const auto props = oln::run_inference(model, oln::load_eval_set(inf_data), icfg);
      const std::string out = output_path(inf_out);
      write_json(out, oln::to_results_json(props));
      std::size_t n = 0;
      for (const auto& [id, p] : props) n += p.size();
      std::cout << json{{"results", out}, {"images", props.size()}, {"boxes", n}}.dump() << "\n";
    } else if (*eval) {
      oln::EvalOptions opts = eval_cfg.empty() ? oln::EvalOptions{} : load_config(eval_cfg).eval;
      if (!eval_ks.empty()) opts.ks = parse_ks(eval_ks);
      if (eval_iou >= 0.0) opts.iou_threshold = eval_iou;
      if (eval_coco) opts.coco_style_recall = true;
      if (eval_no_ap) opts.compute_ap = false;
      opts.validate();
      const auto gt = oln::load_annotations(eval_gt);
      const auto props = oln::proposals_from_json(read_json(eval_props));
      const oln::EvalReport report = oln::evaluate(gt, props, opts);
      if (eval_out.empty()) {
        std::cout << report.to_json().dump(1) << "\n";
      } else {
        write_json(output_path(eval_out), report.to_json());
      }
      if (!eval_csv.empty()) {
        const std::string csv = output_path(eval_csv);
        ensure_parent(csv);
        std::ofstream(csv) << report.ar_csv();
      }
    } else if (*ablate) {
      oln::ExperimentConfig base = load_config(abl_cfg);
      if (abl_steps) base.train.steps = *abl_steps;
      const auto rows = oln::ablation_matrix(abl_preset, base);
      const oln::EvalSet train_set = oln::load_eval_set(abl_train);
      const oln::EvalSet eval_set = oln::load_eval_set(abl_eval);
      const std::string out = output_path(abl_out);
      fs::create_directories(out);
      json summary = json::array();
      for (const auto& row : rows) {
        if (!abl_rows.empty() && std::find(abl_rows.begin(), abl_rows.end(), row.name) == abl_rows.end()) continue;
        const fs::path dir = fs::path(out) / row.name;
        fs::create_directories(dir);
        write_json((dir / "config.json").string(), oln::to_json(row.config));
        const auto data = oln::training_set_for(row.config, train_set);
        const oln::OlnModel model = oln::train_model(row.config, data, (dir / "loss.csv").string(),
                                                     [&](const oln::StepLog& s) { progress(row.name, s); });
        model.save((dir / "model.ckpt").string(), {{"row", row.name}, {"preset", abl_preset}});
        const auto props = oln::run_inference(model, eval_set, row.config.inference);
        write_json((dir / "proposals.json").string(), oln::to_results_json(props));
        const oln::EvalReport report = oln::evaluate(eval_set.gt, oln::to_scored(props), row.config.eval);
        json rj = report.to_json();
        write_json((dir / "report.json").string(), rj);
        summary.push_back({{"row", row.name}, {"head", row.config.head.describe()}, {"report", rj}});
        std::cout << json{{"row", row.name}, {"ar", rj["ar"]}, {"auc", rj["auc"]}}.dump() << std::endl;
      }
      write_json((fs::path(out) / "summary.json").string(), summary);
    } else if (*heat) {
      const oln::OlnModel model = oln::OlnModel::load(heat_ckpt);
      const oln::RgbImage img = oln::read_png(heat_img);
      const oln::Tensor input = oln::to_network_input(img);
      const auto feats = model.features(input);
      const auto out1 = model.rpn_forward(feats);
      const auto grid = model.anchors(img.width, img.height);
      const auto map = oln::stage1_heatmap(model, out1, grid, img.width, img.height);
      const std::string png = output_path(heat_out);
      std::string npy = heat_npy.empty() ? fs::path(png).replace_extension(".npy").string() : output_path(heat_npy);
      ensure_parent(png);
      ensure_parent(npy);
      oln::export_heatmap(map, img.width, img.height, png, npy);
      std::cout << json{{"png", png}, {"npy", npy}}.dump() << "\n";
    }
  } catch (const oln::ParseError& e) {
    return report_error("parse", e.what(), 3, e.where());
  } catch (const oln::ConfigError& e) {
    return report_error("config", e.what(), 4);
  } catch (const oln::InputError& e) {
    return report_error("input", e.what(), 5);
  } catch (const oln::IoError& e) {
    return report_error("io", e.what(), 6, e.path());
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
  return 0;
}
