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

// Runs `oln eval` on the committed fixtures and compares the report with
// the expected values for exact equality.

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fixtures {

struct FixtureResult {
  std::string name;
  std::string field;
  std::string expected;
  std::string actual;
  bool equal = false;
};

inline std::string run_command(const std::string& cmd, int* status) {
  std::array<char, 4096> buf{};
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    *status = -1;
    return out;
  }
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  *status = pclose(pipe);
  return out;
}

inline std::string show(const nlohmann::json& v) { return v.dump(-1); }

// One result per expected field; a failed eval run yields a single
// result carrying the command output.
inline std::vector<FixtureResult> check_fixtures(const std::string& cli, const std::string& dir) {
  std::ifstream in(dir + "/expected.json");
  const nlohmann::json expected = nlohmann::json::parse(in);
  std::vector<FixtureResult> out;
  for (const auto& c : expected.at("cases")) {
    const std::string name = c.at("name");
    std::string cmd = "'" + cli + "' eval --annotations '" + dir + "/" + name + "_annotations.json' --proposals '" +
                      dir + "/" + name + "_proposals.json'";
    for (const auto& a : c.at("args")) cmd += " " + a.get<std::string>();
    int status = 0;
    const std::string text = run_command(cmd + " 2>&1", &status);
    nlohmann::json report;
    if (status == 0) report = nlohmann::json::parse(text, nullptr, false);
    if (status != 0 || report.is_discarded()) {
      out.push_back({name, "(run)", "exit 0", text, false});
      continue;
    }
    for (const auto& [ptr, value] : c.at("expect").items()) {
      FixtureResult r{name, ptr, show(value)};
      const nlohmann::json::json_pointer p(ptr);
      if (report.contains(p)) {
        const auto& got = report.at(p);
        r.actual = show(got);
        r.equal = got.is_number() && value.is_number() && got.get<double>() == value.get<double>();
      } else {
        r.actual = "(missing)";
      }
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace fixtures
