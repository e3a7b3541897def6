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

// shnfed: train / graph / sweep / diagnose / eval.
// Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "shnfed/config.hpp"
#include "shnfed/csv.hpp"
#include "shnfed/errors.hpp"
#include "shnfed/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run configuration (TOML subset)");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--variant", f.variant, "hn | ghn | shn | fedavg | fedavg-ft | local");
  cmd->add_option("--set", f.sets, "override, key=value (repeatable)");
}

shnfed::RunConfig resolve(const CommonFlags& f) {
  shnfed::RunConfig c = f.config.empty() ? shnfed::RunConfig{} : shnfed::load_run_config(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw shnfed::ConfigError("--set expects key=value, got '" + kv + "'");
    shnfed::apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.variant.empty()) shnfed::apply_setting(c, "variant", f.variant);
  c.validate();
  return c;
}

std::string fmt(double x) { return shnfed::format_double(x); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sheaf hypernetwork federated learning simulator"};
  app.require_subcommand(1);

  CommonFlags train_flags, sweep_flags, diag_flags, eval_flags;
  std::string resume;
  auto* train = app.add_subcommand("train", "train one variant");
  add_common(train, train_flags);
  train->add_option("--resume", resume, "continue from a checkpoint");

  std::string embeddings, method = "knn", labels, graph_out = "graph";
  shnfed::Index k = 3;
  double tau = 0.9;
  auto* graph = app.add_subcommand("graph", "build a client relation graph from embeddings");
  graph->add_option("--embeddings", embeddings, "embedding CSV (client_id,e0,...)")->required();
  graph->add_option("--method", method, "knn | cosine")->check(CLI::IsMember({"knn", "cosine"}));
  graph->add_option("--k", k, "neighbours per client");
  graph->add_option("--tau", tau, "cosine threshold");
  graph->add_option("--labels", labels, "optional client_id,label CSV for homophily");
  graph->add_option("--out", graph_out, "output directory");

  std::string axis, values;
  std::optional<shnfed::Index> repeats;
  auto* sweep = app.add_subcommand("sweep", "robustness sweep over layers, k, tau or d");
  add_common(sweep, sweep_flags);
  sweep->add_option("--axis", axis, "layers | knn_k | cosine_tau | stalk_dim");
  sweep->add_option("--values", values, "comma-separated axis values");
  sweep->add_option("--repeats", repeats, "repeats with seeds s, s+1, ...");

  std::string edges;
  auto* diagnose = app.add_subcommand("diagnose", "smoothing traces of untrained stacks");
  add_common(diagnose, diag_flags);
  diagnose->add_option("--edges", edges, "edge list; defaults to graph.edges");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      const shnfed::RunConfig c = resolve(train_flags);
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) from = resume;
      const auto out = shnfed::train_run(c, from);
      std::cout << "run " << shnfed::run_id(c) << " variant " << out.variant << " "
                << out.eval.metric << " mu=" << fmt(out.eval.mu) << " sigma=" << fmt(out.eval.sigma)
                << " -> " << c.out_dir << "\n";
    } else if (*graph) {
      shnfed::GraphCommand cmd;
      cmd.embeddings = embeddings;
      cmd.recipe = method == "knn" ? shnfed::GraphRecipe::knn(k) : shnfed::GraphRecipe::cosine(tau);
      if (!labels.empty()) cmd.labels = labels;
      const auto d = shnfed::graph_run(cmd, graph_out);
      std::cout << cmd.recipe.describe() << ": " << d.edges << " edges, " << d.components
                << " components -> " << graph_out << "\n";
    } else if (*sweep) {
      CommonFlags f = sweep_flags;
      if (!axis.empty()) f.sets.push_back("sweep.axis=" + axis);
      if (!values.empty()) f.sets.push_back("sweep.values=[" + values + "]");
      if (repeats) f.sets.push_back("sweep.repeats=" + std::to_string(*repeats));
      const shnfed::RunConfig c = resolve(f);
      const auto result = shnfed::run_sweep(c, [](const shnfed::SweepEntry& e) {
        std::cout << "value=" << fmt(e.axis_value) << " " << e.variant << " repeat=" << e.repeat
                  << (e.ok ? " mu=" + fmt(e.eval.mu) : " FAILED: " + e.error) << std::endl;
      });
      shnfed::write_sweep_outputs(c.out_dir, c, result);
    } else if (*diagnose) {
      const shnfed::RunConfig c = resolve(diag_flags);
      const std::string path = edges.empty() ? c.graph_edges : edges;
      if (path.empty()) throw shnfed::ConfigError("diagnose: pass --edges or set graph.edges");
      const shnfed::Graph g = shnfed::read_edge_list(path);
      const auto rows = shnfed::diagnose_smoothing(c, g, c.seed);
      std::filesystem::create_directories(c.out_dir);
      shnfed::write_diagnose_csv(std::filesystem::path(c.out_dir) / "diagnose.csv", rows);
      std::cout << rows.size() << " rows -> " << c.out_dir << "/diagnose.csv\n";
    } else if (*eval) {
      const shnfed::RunConfig c = resolve(eval_flags);
      const auto e = shnfed::eval_run(c, checkpoint);
      std::cout << e.metric << " mu=" << fmt(e.mu) << " sigma=" << fmt(e.sigma) << "\n";
    }
  } catch (const shnfed::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const shnfed::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
