// Copyright 2026 The shnfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run configuration: a small TOML subset (sections, key = value, strings,
// numbers, booleans, flat arrays) mapped onto RunConfig.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "shnfed/federation.hpp"
#include "shnfed/hypernet.hpp"
#include "shnfed/relation_graph.hpp"

namespace shnfed {

/// Flat "section.key" -> raw value text (quotes stripped, arrays kept as
/// "[a, b]"). Duplicate keys are a ConfigError.
std::map<std::string, std::string> parse_kv_document(const std::string& text);

enum class SweepAxis { kNone, kLayers, kKnnK, kCosineTau, kStalkDim };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  // hn | ghn | shn | fedavg | fedavg-ft | local
  std::string variant = "shn";

  TaskConfig task;
  FederationConfig federation;
  ModelConfig model;

  GraphRecipe graph = GraphRecipe::knn(3);
  std::string graph_embeddings;  // stage-1 embedding CSV
  std::string graph_edges;       // stage-2 edge list

  // Stage 3 reuses the stage-1 embeddings as fixed node features unless
  // this is false, in which case psi_E is trained jointly.
  bool fixed_embeddings = true;

  SweepAxis sweep_axis = SweepAxis::kNone;
  std::vector<double> sweep_values;
  std::vector<std::string> sweep_variants = {"ghn", "shn"};
  Index repeats = 5;

  std::vector<Index> diagnose_depths = {0, 1, 2, 4, 8, 16, 32};

  /// Field-level checks; throws ConfigError naming the offending key.
  void validate() const;
  /// Canonical document that parses back to the same config.
  std::string to_toml() const;
  std::string to_json() const;
};

/// Applies `key = value` pairs onto `config`. Unknown keys are errors.
void apply_setting(RunConfig& config, const std::string& key,
                   const std::string& value);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// 16 hex digits identifying (config, seed).
std::string run_id(const RunConfig& config);

}  // namespace shnfed
