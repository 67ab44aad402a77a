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

// Strict JSON accessors: every failure is a ParseError naming the JSON path.

#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

#include "json.hpp"
#include "oln/error.hpp"

namespace oln::json_util {

using nlohmann::json;

inline std::string child(const std::string& path, std::string_view key) {
  return path + "." + std::string(key);
}

inline std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

inline const json& require(const json& j, std::string_view key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(child(path, key), "missing required field");
  return *it;
}

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
}

inline void expect_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path, "expected an array");
}

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed,
                           const std::string& path) {
  expect_object(j, path);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ParseError(child(path, it.key()), "unknown key");
  }
}

template <typename T>
T as(const json& j, const std::string& path) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ParseError(path, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ParseError(path, "expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ParseError(path, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw ParseError(path, "expected a string");
    }
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, e.what());
  }
}

template <typename T>
T get(const json& j, std::string_view key, const std::string& path) {
  return as<T>(require(j, key, path), child(path, key));
}

template <typename T>
void get_optional(const json& j, std::string_view key, const std::string& path, T& out) {
  expect_object(j, path);
  auto it = j.find(key);
  if (it != j.end()) out = as<T>(*it, child(path, key));
}

}  // namespace oln::json_util
