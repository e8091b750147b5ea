// Copyright 2026-present the eclip project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace eclip::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

// Version string baked in at configure time (git describe).
const char* version();

// Every configurable value with its default, in sections data, train, eval,
// geometry and rag.
nlohmann::json default_config();

// Merges the config file into base, then applies "a.b.c=value" overrides in
// order (values are read as JSON, falling back to a plain string), then sets
// every section's seed when seed is given. ConfigError on unknown keys, type
// mismatches or values the section parsers reject. The result is normalized
// through those parsers, so derived fields are current.
nlohmann::json resolve_config(const nlohmann::json& base, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed);

// Full command line without the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eclip::cli
