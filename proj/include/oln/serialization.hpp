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

// JSON forms of the configuration structs. Readers are strict: unknown keys
// and wrong types raise ParseError with the offending path. Missing keys
// keep their defaults.

#include <string>

#include "json.hpp"
#include "oln/model.hpp"
#include "oln/targets.hpp"

namespace oln {

nlohmann::json to_json(const HeadConfig& h);
nlohmann::json to_json(const ModelConfig& m);
nlohmann::json to_json(const SamplerConfig& s);

HeadConfig head_config_from_json(const nlohmann::json& j, const std::string& path);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path);
/// Accepts an object or a preset name string.
SamplerConfig sampler_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace oln
