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

// Experiment harness behind the CLI: the three-stage pipeline (HN ->
// relation graph -> GHN/SHN), robustness sweeps, smoothing diagnostics and
// artifact export.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shnfed/config.hpp"
#include "shnfed/federation.hpp"
#include "shnfed/hypernet.hpp"
#include "shnfed/relation_graph.hpp"

namespace shnfed {

bool is_graph_variant(const std::string& variant);
bool is_baseline_variant(const std::string& variant);

FederationConfig federation_config(const RunConfig& config, std::uint64_t seed);
ModelConfig model_config(const RunConfig& config, Variant variant);

struct HnStage {
  Federation federation;
  TrainingLog log;
  Matrix embeddings;  // psi_E output after training, one row per client
};

/// Stage 1: plain hypernetwork training, which also learns the embeddings.
HnStage run_hn_stage(const RunConfig& config, const SyntheticTask& task,
                     std::uint64_t seed);

/// Stage 3 federation over `graph`. With config.fixed_embeddings the given
/// embeddings are node features; otherwise psi_E is trained jointly.
Federation make_graph_federation(const RunConfig& config,
                                 const SyntheticTask& task, Variant variant,
                                 const Matrix& embeddings, const Graph& graph,
                                 std::uint64_t seed);

BaselineKind parse_baseline(const std::string& variant);

// Row std and Dirichlet energies of node representations at one depth.
struct DepthStats {
  Index depth = 0;
  double row_std = 0.0;
  double graph_energy = 0.0;
  double sheaf_energy = 0.0;  // NaN where no sheaf is defined
};

/// Mean over feature columns of the population std across nodes.
double row_std(const Matrix& x);

/// Per-depth statistics of a trained encoder. SHN stalks are read back as
/// n x (d * channels) rows; sheaf energies use the maps of the layer that
/// produced each depth (depth 0 uses the first layer's maps).
std::vector<DepthStats> encoder_depth_stats(const HyperModel& model);

struct SweepEntry {
  double axis_value = 0.0;
  std::string variant;
  Index repeat = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  EvalSummary eval;
  std::optional<GraphDiagnostics> graph;
  std::vector<DepthStats> trace;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::kNone;
  std::vector<double> values;  // {0} for kNone
  std::vector<SweepEntry> entries;

  /// NaN when the entry is missing or failed.
  double mu(double value, const std::string& variant, Index repeat) const;
};

/// One entry per (axis value, variant, repeat). Repeat r uses seed + r and
/// shares its HN stage across all points. Failures are recorded, not thrown.
SweepResult run_sweep(const RunConfig& config,
                      const std::function<void(const SweepEntry&)>& on_entry = {});

void write_sweep_outputs(const std::filesystem::path& dir,
                         const RunConfig& config, const SweepResult& result);

struct DiagnoseRow {
  std::string stack;  // gcn | gcn_plain | sheaf | identity_sheaf
  DepthStats stats;
};

/// Untrained stacks on `graph` with random N(0,1) input features of width
/// stalk_dim * encoder_hidden. gcn: Glorot W plus tanh over the augmented
/// adjacency. gcn_plain: D^{-1/2} A D^{-1/2} X. sheaf: untrained SHN
/// diffusion layers. identity_sheaf: d = 1 heat steps X - Delta X.
std::vector<DiagnoseRow> diagnose_smoothing(const RunConfig& config,
                                            const Graph& graph,
                                            std::uint64_t seed);

void write_diagnose_csv(const std::filesystem::path& path,
                        const std::vector<DiagnoseRow>& rows);

/// Result of a `train` invocation.
struct TrainOutcome {
  std::string variant;
  EvalSummary eval;
  double seconds = 0.0;
};

/// Runs one variant and writes config.toml, metrics.csv, summary.json,
/// timing.json, embeddings.csv and (hypernetwork variants) checkpoint.json
/// into config.out_dir. Graph variants need graph.embeddings (stage 1
/// output) and optionally graph.edges; otherwise this is an InputError.
/// `resume` continues from a checkpoint up to federation.rounds.
TrainOutcome train_run(const RunConfig& config,
                       const std::optional<std::filesystem::path>& resume = {});

/// Re-evaluates a checkpoint and writes eval_metrics.csv and eval.json.
EvalSummary eval_run(const RunConfig& config,
                     const std::filesystem::path& checkpoint);

struct GraphCommand {
  std::filesystem::path embeddings;
  GraphRecipe recipe;
  std::optional<std::filesystem::path> labels;
};

/// Writes edges.txt, adjacency.csv and diagnostics.json into `out_dir`.
GraphDiagnostics graph_run(const GraphCommand& command,
                           const std::filesystem::path& out_dir);

extern const char* const kThreeStageHelp;

}  // namespace shnfed
