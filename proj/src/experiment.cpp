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

#include "shnfed/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "shnfed/checkpoint.hpp"
#include "shnfed/csv.hpp"
#include "shnfed/errors.hpp"
#include "shnfed/sheaf.hpp"
#include "shnfed/sheaf_ops.hpp"

namespace shnfed {

namespace {

using nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Model initialization streams, offset from the run seed.
constexpr std::uint64_t kHnInitOffset = 100;
constexpr std::uint64_t kGraphInitOffset = 200;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

ordered_json number_or_null(double x) {
  return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr);
}

ordered_json eval_json(const EvalSummary& e) {
  ordered_json j;
  j["metric"] = e.metric;
  j["mu"] = number_or_null(e.mu);
  j["sigma"] = number_or_null(e.sigma);
  ordered_json per = ordered_json::array();
  for (double v : e.per_client) per.push_back(number_or_null(v));
  j["per_client"] = per;
  return j;
}

ordered_json diagnostics_json(const GraphDiagnostics& d) {
  return ordered_json::parse(d.to_json());
}

Variant hypernet_variant(const std::string& name) { return parse_variant(name); }

HyperModel make_model(const RunConfig& config, const SyntheticTask& task,
                      Variant variant, std::uint64_t init_seed) {
  Rng rng(init_seed);
  return HyperModel::create(model_config(config, variant), task.spec, rng);
}

Matrix stalks_as_rows(const Matrix& stalks, Index n) {
  ad::NoGradGuard guard;
  return ad::reshape(ad::constant(stalks), n, stalks.size() / n).value();
}

double sheaf_energy_of(const Matrix& maps, const Graph& graph, Index d,
                       const Matrix& stalks) {
  const CellularSheaf<double> sheaf = to_sheaf(maps, graph, d);
  const SheafLaplacian<double> lap = build_sheaf_laplacian(sheaf);
  return sheaf_dirichlet_energy(sheaf, lap, stalks);
}

void apply_axis(RunConfig& point, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kNone:
      break;
    case SweepAxis::kLayers:
      point.model.layers = static_cast<Index>(value);
      break;
    case SweepAxis::kKnnK:
      point.graph = GraphRecipe::knn(static_cast<Index>(value));
      break;
    case SweepAxis::kCosineTau:
      point.graph = GraphRecipe::cosine(value);
      break;
    case SweepAxis::kStalkDim:
      point.model.stalk_dim = static_cast<Index>(value);
      break;
  }
}

double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return kNaN;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

const char* const kThreeStageHelp =
    "graph variants need a client relation graph. Run the three stages in order:\n"
    "  1. shnfed train --variant hn --out RUN_HN        (learns client embeddings)\n"
    "  2. shnfed graph --embeddings RUN_HN/embeddings.csv --out GRAPH\n"
    "  3. shnfed train --variant shn --set graph.embeddings=RUN_HN/embeddings.csv\n"
    "                  --set graph.edges=GRAPH/edges.txt";

bool is_graph_variant(const std::string& v) { return v == "ghn" || v == "shn"; }

bool is_baseline_variant(const std::string& v) {
  return v == "fedavg" || v == "fedavg-ft" || v == "local";
}

BaselineKind parse_baseline(const std::string& v) {
  if (v == "fedavg") return BaselineKind::kFedAvg;
  if (v == "fedavg-ft") return BaselineKind::kFedAvgFinetune;
  if (v == "local") return BaselineKind::kLocal;
  throw InputError("not a baseline variant: " + v);
}

FederationConfig federation_config(const RunConfig& config, std::uint64_t seed) {
  FederationConfig fc = config.federation;
  fc.seed = seed;
  fc.threads = default_threads();
  return fc;
}

ModelConfig model_config(const RunConfig& config, Variant variant) {
  ModelConfig mc = config.model;
  mc.variant = variant;
  mc.num_clients = config.task.num_clients;
  return mc;
}

HnStage run_hn_stage(const RunConfig& config, const SyntheticTask& task,
                     std::uint64_t seed) {
  Federation fed(make_model(config, task, Variant::kHn, seed + kHnInitOffset),
                 make_clients(task), federation_config(config, seed));
  TrainingLog log = run_training(fed);
  Matrix x;
  {
    ad::NoGradGuard guard;
    x = fed.model().embeddings().value();
  }
  return HnStage{std::move(fed), std::move(log), std::move(x)};
}

Federation make_graph_federation(const RunConfig& config,
                                 const SyntheticTask& task, Variant variant,
                                 const Matrix& embeddings, const Graph& graph,
                                 std::uint64_t seed) {
  HyperModel model = make_model(config, task, variant, seed + kGraphInitOffset);
  if (config.fixed_embeddings) model.set_fixed_embeddings(embeddings);
  model.set_graph(graph);
  return Federation(std::move(model), make_clients(task),
                    federation_config(config, seed));
}

double row_std(const Matrix& x) {
  if (x.rows() == 0 || x.cols() == 0) return kNaN;
  double total = 0.0;
  for (Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    total += std::sqrt((x.col(c).array() - mean).square().mean());
  }
  return total / static_cast<double>(x.cols());
}

std::vector<DepthStats> encoder_depth_stats(const HyperModel& model) {
  EncoderTrace trace;
  {
    ad::NoGradGuard guard;
    model.encode(model.embeddings(), &trace);
  }
  const ModelConfig& mc = model.config();
  const Index n = mc.num_clients;
  const bool shn = mc.variant == Variant::kShn;
  std::vector<DepthStats> out;
  for (std::size_t i = 0; i < trace.features.size(); ++i) {
    const Matrix& f = trace.features[i];
    const Matrix rows = shn ? stalks_as_rows(f, n) : f;
    DepthStats s;
    s.depth = static_cast<Index>(i);
    s.row_std = row_std(rows);
    s.graph_energy = model.has_graph() ? graph_dirichlet_energy(model.graph(), rows) : kNaN;
    s.sheaf_energy = kNaN;
    if (shn && !trace.maps.empty()) {
      const std::size_t layer = std::min(i, trace.maps.size() - 1);
      s.sheaf_energy = sheaf_energy_of(trace.maps[layer], model.graph(), mc.stalk_dim, f);
    }
    out.push_back(s);
  }
  return out;
}

double SweepResult::mu(double value, const std::string& variant, Index repeat) const {
  for (const auto& e : entries) {
    if (e.axis_value == value && e.variant == variant && e.repeat == repeat) {
      return e.ok ? e.eval.mu : kNaN;
    }
  }
  return kNaN;
}

SweepResult run_sweep(const RunConfig& config,
                      const std::function<void(const SweepEntry&)>& on_entry) {
  config.validate();
  if (config.sweep_axis != SweepAxis::kNone && config.sweep_values.empty()) {
    throw ConfigError("sweep.values: must list at least one value for axis " +
                      sweep_axis_name(config.sweep_axis));
  }
  SweepResult result;
  result.axis = config.sweep_axis;
  result.values = config.sweep_axis == SweepAxis::kNone ? std::vector<double>{0.0}
                                                        : config.sweep_values;
  const bool needs_hn = std::any_of(
      config.sweep_variants.begin(), config.sweep_variants.end(),
      [](const std::string& v) { return v == "hn" || is_graph_variant(v); });

  for (Index r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(r);
    std::optional<SyntheticTask> task;
    std::optional<HnStage> hn;
    std::string setup_error;
    try {
      task = make_task(config.task, seed);
      if (needs_hn) hn = run_hn_stage(config, *task, seed);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    // Baselines do not depend on the axis; run them once per repeat.
    std::map<std::string, EvalSummary> cached;

    for (double value : result.values) {
      RunConfig point = config;
      apply_axis(point, config.sweep_axis, value);
      std::optional<ClientRelationGraph> graph;
      for (const auto& variant : config.sweep_variants) {
        SweepEntry entry;
        entry.axis_value = value;
        entry.variant = variant;
        entry.repeat = r;
        entry.seed = seed;
        try {
          if (!setup_error.empty()) throw RuntimeFailure(setup_error);
          if (variant == "hn") {
            entry.eval = hn->log.final_eval;
          } else if (is_graph_variant(variant)) {
            if (!graph) {
              graph = build_relation_graph(EmbeddingMatrix::from_matrix(hn->embeddings),
                                           point.graph);
            }
            entry.graph = graph_diagnostics(graph->graph, task->group);
            Federation fed = make_graph_federation(point, *task, hypernet_variant(variant),
                                                   hn->embeddings, graph->graph, seed);
            entry.eval = run_training(fed).final_eval;
            entry.trace = encoder_depth_stats(fed.model());
          } else {
            auto it = cached.find(variant);
            if (it == cached.end()) {
              const auto clients = make_clients(*task);
              BaselineResult b = run_baseline(parse_baseline(variant), task->spec, clients,
                                              federation_config(point, seed));
              it = cached.emplace(variant, b.log.final_eval).first;
            }
            entry.eval = it->second;
          }
          if (!std::isfinite(entry.eval.mu)) throw RuntimeFailure("non-finite metric");
        } catch (const std::exception& e) {
          entry.ok = false;
          entry.error = e.what();
          entry.eval.mu = kNaN;
          entry.eval.sigma = kNaN;
        }
        if (on_entry) on_entry(entry);
        result.entries.push_back(std::move(entry));
      }
    }
  }
  return result;
}

void write_sweep_outputs(const std::filesystem::path& dir, const RunConfig& config,
                         const SweepResult& result) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.toml", config.to_toml());

  std::string csv = "axis_value,variant,repeat,mu,sigma\n";
  std::string trace = "axis_value,variant,repeat,depth,row_std,graph_energy,sheaf_energy\n";
  for (const auto& e : result.entries) {
    const std::string head = format_double(e.axis_value) + ',' + e.variant + ',' +
                             std::to_string(e.repeat) + ',';
    csv += head + format_double(e.eval.mu) + ',' + format_double(e.eval.sigma) + '\n';
    for (const auto& s : e.trace) {
      trace += head + std::to_string(s.depth) + ',' + format_double(s.row_std) + ',' +
               format_double(s.graph_energy) + ',' + format_double(s.sheaf_energy) + '\n';
    }
  }
  write_text(dir / "sweep.csv", csv);
  write_text(dir / "energy_trace.csv", trace);

  ordered_json j;
  j["run_id"] = run_id(config);
  j["axis"] = sweep_axis_name(result.axis);
  j["values"] = result.values;
  j["variants"] = config.sweep_variants;
  j["repeats"] = config.repeats;
  ordered_json points = ordered_json::array();
  ordered_json failures = ordered_json::array();
  for (double value : result.values) {
    for (const auto& variant : config.sweep_variants) {
      std::vector<double> mus, sigmas, pooled;
      ordered_json graphs = ordered_json::array();
      for (const auto& e : result.entries) {
        if (e.axis_value != value || e.variant != variant) continue;
        if (!e.ok) {
          failures.push_back({{"axis_value", value}, {"variant", variant},
                              {"repeat", e.repeat}, {"error", e.error}});
          continue;
        }
        mus.push_back(e.eval.mu);
        sigmas.push_back(e.eval.sigma);
        pooled.insert(pooled.end(), e.eval.per_client.begin(), e.eval.per_client.end());
        if (e.graph) graphs.push_back(diagnostics_json(*e.graph));
      }
      auto mean = [](const std::vector<double>& xs) {
        if (xs.empty()) return kNaN;
        double s = 0.0;
        for (double x : xs) s += x;
        return s / static_cast<double>(xs.size());
      };
      ordered_json p;
      p["axis_value"] = value;
      p["variant"] = variant;
      p["completed"] = mus.size();
      p["mu"] = number_or_null(mean(mus));
      p["sigma_mean"] = number_or_null(mean(sigmas));
      p["sigma_pooled"] = number_or_null(population_std(pooled));
      ordered_json per = ordered_json::array();
      for (double m : mus) per.push_back(m);
      p["mu_per_repeat"] = per;
      if (!graphs.empty()) p["graphs"] = graphs;
      points.push_back(p);
    }
  }
  j["points"] = points;
  j["failures"] = failures;
  write_text(dir / "sweep.json", j.dump(2) + "\n");
}

std::vector<DiagnoseRow> diagnose_smoothing(const RunConfig& config,
                                            const Graph& graph,
                                            std::uint64_t seed) {
  if (config.diagnose_depths.empty()) return {};
  ad::NoGradGuard guard;
  const Index n = graph.n;
  const Index d = config.model.stalk_dim;
  const Index ch = config.model.encoder_hidden;
  const Index width = d * ch;
  const Index max_depth =
      *std::max_element(config.diagnose_depths.begin(), config.diagnose_depths.end());
  Rng rng(seed);
  Matrix x0(n, width);
  for (Index i = 0; i < x0.size(); ++i) x0.data()[i] = rng.normal();

  // gcn_plain: D^{-1/2} A D^{-1/2}, isolated nodes keep their features.
  const std::vector<Index> deg = graph.degrees();
  Matrix plain = Matrix::Zero(n, n);
  for (const auto& [u, v] : graph.edges) {
    const double w = 1.0 / std::sqrt(static_cast<double>(deg[u] * deg[v]));
    plain(u, v) = w;
    plain(v, u) = w;
  }
  for (Index i = 0; i < n; ++i) {
    if (deg[static_cast<std::size_t>(i)] == 0) plain(i, i) = 1.0;
  }
  const Matrix a_hat = normalized_adjacency(adjacency_with_self_loops(graph));
  const CellularSheaf<double> id_sheaf = identity_sheaf<double>(graph, 1);
  const SheafLaplacian<double> id_lap = build_sheaf_laplacian(id_sheaf);

  std::vector<Var> gcn_w;
  for (Index l = 0; l < max_depth; ++l) {
    gcn_w.push_back(ad::constant(glorot_uniform(width, width, rng)));
  }
  std::vector<SheafDiffusionLayer> sheaf_layers;
  const double w2_scale = max_depth > 0 ? 1.0 / std::sqrt(static_cast<double>(max_depth)) : 1.0;
  for (Index l = 0; l < max_depth; ++l) {
    sheaf_layers.push_back(SheafDiffusionLayer::create(
        d, ch, config.model.restriction, config.model.encoder_activation, rng, w2_scale));
  }

  // Traces for every depth up to max_depth, then pick the requested ones.
  std::map<std::string, std::vector<DepthStats>> traces;
  auto stats = [&](Index depth, const Matrix& rows, double sheaf_energy) {
    return DepthStats{depth, row_std(rows), graph_dirichlet_energy(graph, rows), sheaf_energy};
  };
  {
    Var h = ad::constant(x0);
    Matrix p = x0;
    Matrix id = x0;
    for (Index l = 0; l <= max_depth; ++l) {
      traces["gcn"].push_back(stats(l, h.value(), kNaN));
      traces["gcn_plain"].push_back(stats(l, p, kNaN));
      traces["identity_sheaf"].push_back(
          stats(l, id, sheaf_dirichlet_energy(id_sheaf, id_lap, id)));
      if (l == max_depth) break;
      h = gcn_layer(a_hat, h, gcn_w[static_cast<std::size_t>(l)], ad::Activation::kTanh);
      p = plain * p;
      id = id - id_lap.normalized * id;
    }
  }
  {
    Var stalks = ad::reshape(ad::constant(x0), n * d, ch);
    Matrix maps;
    for (Index l = 0; l <= max_depth; ++l) {
      Var next = stalks;
      if (l < max_depth) {
        SheafLayerOutput out =
            sheaf_diffusion_layer(sheaf_layers[static_cast<std::size_t>(l)], graph, stalks);
        maps = out.maps.value();
        next = out.features;
      }
      const double energy =
          max_depth > 0 ? sheaf_energy_of(maps, graph, d, stalks.value()) : kNaN;
      traces["sheaf"].push_back(stats(l, stalks_as_rows(stalks.value(), n), energy));
      stalks = next;
    }
  }

  std::vector<DiagnoseRow> rows;
  for (const char* stack : {"gcn", "gcn_plain", "sheaf", "identity_sheaf"}) {
    for (Index depth : config.diagnose_depths) {
      rows.push_back({stack, traces[stack][static_cast<std::size_t>(depth)]});
    }
  }
  return rows;
}

void write_diagnose_csv(const std::filesystem::path& path,
                        const std::vector<DiagnoseRow>& rows) {
  std::string csv = "stack,depth,row_std,graph_energy,sheaf_energy\n";
  for (const auto& r : rows) {
    csv += r.stack + ',' + std::to_string(r.stats.depth) + ',' + format_double(r.stats.row_std) +
           ',' + format_double(r.stats.graph_energy) + ',' +
           format_double(r.stats.sheaf_energy) + '\n';
  }
  write_text(path, csv);
}

TrainOutcome train_run(const RunConfig& config,
                       const std::optional<std::filesystem::path>& resume) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::string& variant = config.variant;
  const std::uint64_t seed = config.seed;
  const std::filesystem::path dir = config.out_dir;

  if (is_graph_variant(variant)) {
    const bool have_graph = !config.graph_edges.empty() || !config.graph_embeddings.empty();
    if (!have_graph || (config.fixed_embeddings && config.graph_embeddings.empty())) {
      throw InputError(std::string("variant ") + variant + ": " + kThreeStageHelp);
    }
  }
  if (resume && is_baseline_variant(variant)) {
    throw InputError("--resume applies to hypernetwork variants only");
  }

  const SyntheticTask task = make_task(config.task, seed);
  std::filesystem::create_directories(dir);
  write_text(dir / "config.toml", config.to_toml());

  ordered_json summary;
  summary["run_id"] = run_id(config);
  summary["variant"] = variant;
  summary["seed"] = seed;
  summary["config"] = ordered_json::parse(config.to_json());

  TrainingLog log;
  std::optional<Federation> fed;
  if (is_baseline_variant(variant)) {
    const auto clients = make_clients(task);
    BaselineResult b = run_baseline(parse_baseline(variant), task.spec, clients,
                                    federation_config(config, seed));
    log = std::move(b.log);
  } else {
    const Variant v = hypernet_variant(variant);
    if (v == Variant::kHn) {
      fed.emplace(make_model(config, task, v, seed + kHnInitOffset), make_clients(task),
                  federation_config(config, seed));
    } else {
      Matrix x;
      Graph graph;
      if (!config.graph_embeddings.empty()) {
        EmbeddingMatrix emb = read_embeddings_csv(config.graph_embeddings);
        if (emb.n() != config.task.num_clients) {
          throw InputError("graph.embeddings: " + std::to_string(emb.n()) + " rows for " +
                           std::to_string(config.task.num_clients) + " clients");
        }
        x = emb.x;
        graph = config.graph_edges.empty() ? build_relation_graph(emb, config.graph).graph
                                           : read_edge_list(config.graph_edges, emb.n());
      } else {
        graph = read_edge_list(config.graph_edges, config.task.num_clients);
      }
      fed.emplace(make_graph_federation(config, task, v, x, graph, seed));
      summary["graph"] = diagnostics_json(graph_diagnostics(graph, task.group));
    }
    if (resume) load_checkpoint(*resume, *fed);
    log = run_training(*fed);
    save_checkpoint(dir / "checkpoint.json", *fed);
    ad::NoGradGuard guard;
    write_embeddings_csv(dir / "embeddings.csv",
                         EmbeddingMatrix::from_matrix(fed->model().embeddings().value()));
  }
  if (!std::isfinite(log.final_eval.mu)) {
    throw RuntimeFailure("training produced a non-finite metric");
  }

  write_metrics_csv(dir / "metrics.csv", log.metrics);
  std::string groups = "client_id,label\n";
  for (std::size_t m = 0; m < task.group.size(); ++m) {
    groups += std::to_string(m) + ',' + std::to_string(task.group[m]) + '\n';
  }
  write_text(dir / "groups.csv", groups);
  if (!log.server_loss.empty()) {
    std::string loss = "round,server_loss\n";
    const Index first = (fed ? fed->round() : 0) - static_cast<Index>(log.server_loss.size());
    for (std::size_t i = 0; i < log.server_loss.size(); ++i) {
      loss += std::to_string(first + static_cast<Index>(i)) + ',' +
              format_double(log.server_loss[i]) + '\n';
    }
    write_text(dir / "server_loss.csv", loss);
  }
  summary["rounds"] = fed ? fed->round() : config.federation.rounds;
  summary["final"] = eval_json(log.final_eval);
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ordered_json timing;
  timing["seconds"] = seconds;
  timing["threads"] = default_threads();
  write_text(dir / "timing.json", timing.dump(2) + "\n");
  return TrainOutcome{variant, log.final_eval, seconds};
}

EvalSummary eval_run(const RunConfig& config, const std::filesystem::path& checkpoint) {
  config.validate();
  if (is_baseline_variant(config.variant)) {
    throw InputError("eval: checkpoints exist for hypernetwork variants only");
  }
  const SyntheticTask task = make_task(config.task, config.seed);
  const Variant v = hypernet_variant(config.variant);
  Federation fed(make_model(config, task, v, config.seed), make_clients(task),
                 federation_config(config, config.seed));
  load_checkpoint(checkpoint, fed);
  std::vector<MetricRow> rows;
  const EvalSummary eval = fed.evaluate(&rows);

  const std::filesystem::path dir = config.out_dir;
  std::filesystem::create_directories(dir);
  write_metrics_csv(dir / "eval_metrics.csv", rows);
  ordered_json j;
  j["checkpoint_round"] = fed.round();
  j["variant"] = config.variant;
  j["final"] = eval_json(eval);
  write_text(dir / "eval.json", j.dump(2) + "\n");
  return eval;
}

GraphDiagnostics graph_run(const GraphCommand& command,
                           const std::filesystem::path& out_dir) {
  const EmbeddingMatrix emb = read_embeddings_csv(command.embeddings);
  const ClientRelationGraph g = build_relation_graph(emb, command.recipe);
  std::vector<int> labels;
  if (command.labels) labels = read_labels_csv(*command.labels);
  const GraphDiagnostics diag = graph_diagnostics(g.graph, labels);
  std::filesystem::create_directories(out_dir);
  write_edge_list(out_dir / "edges.txt", g.graph, command.recipe);
  write_adjacency_csv(out_dir / "adjacency.csv", g.adjacency);
  write_text(out_dir / "diagnostics.json", diag.to_json());
  return diag;
}

}  // namespace shnfed
