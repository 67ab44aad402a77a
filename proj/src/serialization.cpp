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

#include "oln/serialization.hpp"

#include <cstring>
#include <fstream>

#include "oln/error.hpp"
#include "oln/json_util.hpp"

namespace oln {

using nlohmann::json;
namespace ju = json_util;

json to_json(const HeadConfig& h) {
  return {{"stage1_cue", to_string(h.stage1_cue)},
          {"stage1_extra_class", h.stage1_extra_class},
          {"stage2_cue", to_string(h.stage2_cue)},
          {"stage2_extra_class", h.stage2_extra_class},
          {"mask_head", h.mask_head},
          {"mask_iou", h.mask_iou},
          {"use_stage1_score", h.use_stage1_score}};
}

json to_json(const ModelConfig& m) {
  return {{"backbone_channels", m.backbone_channels},
          {"pyramid_channels", m.pyramid_channels},
          {"anchor_scale", m.anchor_scale},
          {"rpn_channels", m.rpn_channels},
          {"roi_pool", m.roi_pool},
          {"roi_sampling_ratio", m.roi_sampling_ratio},
          {"fc_dim", m.fc_dim},
          {"mask_pool", m.mask_pool},
          {"mask_channels", m.mask_channels},
          {"mask_iou_fc", m.mask_iou_fc}};
}

json to_json(const SamplerConfig& s) {
  return {{"num_samples", s.num_samples},
          {"background_fraction", s.background_fraction},
          {"positive_floor", s.positive_floor},
          {"negative_ceiling", s.negative_ceiling},
          {"low_quality_matches", s.low_quality_matches}};
}

HeadConfig head_config_from_json(const json& j, const std::string& path) {
  if (j.is_string()) {
    try {
      return head_presets::by_name(j.get<std::string>());
    } catch (const ConfigError& e) {
      throw ParseError(path, e.what());
    }
  }
  ju::reject_unknown(j,
                     {"stage1_cue", "stage1_extra_class", "stage2_cue", "stage2_extra_class",
                      "mask_head", "mask_iou", "use_stage1_score"},
                     path);
  HeadConfig h;
  auto cue = [&](std::string_view key, Cue& out) {
    std::string s;
    ju::get_optional(j, key, path, s);
    if (s.empty()) return;
    try {
      out = cue_from_string(s);
    } catch (const ConfigError& e) {
      throw ParseError(ju::child(path, key), e.what());
    }
  };
  cue("stage1_cue", h.stage1_cue);
  cue("stage2_cue", h.stage2_cue);
  ju::get_optional(j, "stage1_extra_class", path, h.stage1_extra_class);
  ju::get_optional(j, "stage2_extra_class", path, h.stage2_extra_class);
  ju::get_optional(j, "mask_head", path, h.mask_head);
  ju::get_optional(j, "mask_iou", path, h.mask_iou);
  ju::get_optional(j, "use_stage1_score", path, h.use_stage1_score);
  return h;
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j,
                     {"backbone_channels", "pyramid_channels", "anchor_scale", "rpn_channels",
                      "roi_pool", "roi_sampling_ratio", "fc_dim", "mask_pool", "mask_channels",
                      "mask_iou_fc"},
                     path);
  ModelConfig m;
  if (j.contains("backbone_channels")) {
    const json& a = j.at("backbone_channels");
    const std::string p = ju::child(path, "backbone_channels");
    ju::expect_array(a, p);
    m.backbone_channels.clear();
    for (std::size_t i = 0; i < a.size(); ++i) m.backbone_channels.push_back(ju::as<int>(a[i], ju::index(p, i)));
  }
  ju::get_optional(j, "pyramid_channels", path, m.pyramid_channels);
  ju::get_optional(j, "anchor_scale", path, m.anchor_scale);
  ju::get_optional(j, "rpn_channels", path, m.rpn_channels);
  ju::get_optional(j, "roi_pool", path, m.roi_pool);
  ju::get_optional(j, "roi_sampling_ratio", path, m.roi_sampling_ratio);
  ju::get_optional(j, "fc_dim", path, m.fc_dim);
  ju::get_optional(j, "mask_pool", path, m.mask_pool);
  ju::get_optional(j, "mask_channels", path, m.mask_channels);
  ju::get_optional(j, "mask_iou_fc", path, m.mask_iou_fc);
  return m;
}

SamplerConfig sampler_config_from_json(const json& j, const std::string& path) {
  if (j.is_string()) {
    try {
      return sampler_presets::by_name(j.get<std::string>());
    } catch (const ConfigError& e) {
      throw ParseError(path, e.what());
    }
  }
  ju::reject_unknown(j,
                     {"num_samples", "background_fraction", "positive_floor", "negative_ceiling",
                      "low_quality_matches"},
                     path);
  SamplerConfig s;
  ju::get_optional(j, "num_samples", path, s.num_samples);
  ju::get_optional(j, "background_fraction", path, s.background_fraction);
  ju::get_optional(j, "positive_floor", path, s.positive_floor);
  ju::get_optional(j, "negative_ceiling", path, s.negative_ceiling);
  ju::get_optional(j, "low_quality_matches", path, s.low_quality_matches);
  return s;
}

// ------------------------------------------------------------ checkpoints
//
// Layout: 8-byte magic, little-endian u64 header length, JSON header,
// then every parameter as raw little-endian float32 in header order.

namespace {

constexpr char kMagic[8] = {'O', 'L', 'N', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void OlnModel::save(const std::string& path, const std::map<std::string, std::string>& metadata) const {
  json header;
  header["format"] = 1;
  header["head_config"] = to_json(head_);
  header["model_config"] = to_json(model_);
  header["metadata"] = metadata;
  json params = json::array();
  std::uint64_t offset = 0;
  for (const nn::Parameter* p : store_.all()) {
    params.push_back({{"name", p->name},
                      {"role", nn::to_string(p->role)},
                      {"shape", p->value.shape()},
                      {"offset", offset}});
    offset += p->value.numel();
  }
  header["parameters"] = params;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path, "cannot open for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const nn::Parameter* p : store_.all()) {
    for (float v : p->value.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      unsigned char b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!os) throw IoError(path, "write failed");
}

OlnModel OlnModel::load(const std::string& path, const std::optional<HeadConfig>& expected,
                        std::map<std::string, std::string>* metadata) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path, "cannot open checkpoint");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw ParseError(path, "not an OLN checkpoint");
  const std::uint64_t len = read_u64(is);
  if (!is || len > (1ull << 30)) throw ParseError(path, "bad header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw ParseError(path, "truncated header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path, std::string("header: ") + e.what());
  }
  const HeadConfig head = head_config_from_json(ju::require(header, "head_config", "$"), "$.head_config");
  const ModelConfig model = model_config_from_json(ju::require(header, "model_config", "$"), "$.model_config");
  if (expected && !(*expected == head)) {
    throw ConfigError("checkpoint head config [" + head.describe() + "] does not match requested [" +
                      expected->describe() + "]");
  }
  OlnModel m(head, model, 0);
  const json& params = ju::require(header, "parameters", "$");
  ju::expect_array(params, "$.parameters");
  if (params.size() != m.store_.size()) {
    throw ParseError(path, "parameter count mismatch: file has " + std::to_string(params.size()) +
                               ", model has " + std::to_string(m.store_.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string where = ju::index("$.parameters", i);
    const auto name = ju::get<std::string>(params[i], "name", where);
    nn::Parameter* p = m.store_.find(name);
    if (p == nullptr) throw ParseError(where, "unknown parameter '" + name + "'");
    const auto shape = ju::get<std::vector<int>>(params[i], "shape", where);
    if (shape != p->value.shape()) throw ParseError(where, "shape mismatch for '" + name + "'");
    for (float& v : p->value.values()) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(b[k]) << (8 * k);
      std::memcpy(&v, &bits, 4);
    }
    if (!is) throw ParseError(path, "truncated parameter data");
  }
  if (metadata != nullptr && header.contains("metadata")) {
    *metadata = header["metadata"].get<std::map<std::string, std::string>>();
  }
  return m;
}

}  // namespace oln
