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

// Single-process federation: synthetic tasks, clients, the hypernetwork
// server loop and the FedAvg/local baselines.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shnfed/hypernet.hpp"
#include "shnfed/optim.hpp"
#include "shnfed/rng.hpp"
#include "shnfed/tensor.hpp"

namespace shnfed {

enum class TaskKind {
  kClusterRegression,
  kClusterClassification,
  kDirichletClassification,
};

TaskKind parse_task_kind(const std::string& name);
std::string task_kind_name(TaskKind kind);

struct TaskConfig {
  TaskKind kind = TaskKind::kClusterRegression;
  Index num_clients = 20;
  Index num_clusters = 4;
  Index input_dim = 8;
  Index hidden_dim = 32;
  Index output_dim = 2;  // regression only; classification uses num_classes
  Index num_classes = 8;
  Index train_samples = 256;  // per client (cluster tasks)
  Index test_samples = 256;
  double noise = 0.5;
  double alpha = 0.1;        // Dirichlet concentration
  Index pool_samples = 2560; // Dirichlet base dataset size
  double test_fraction = 0.25;
  double class_separation = 2.0;

  bool classification() const { return kind != TaskKind::kClusterRegression; }
  Index model_outputs() const { return classification() ? num_classes : output_dim; }
  TargetSpec target_spec() const;
};

struct ClientDataset {
  Matrix x_train;
  Matrix y_train;  // regression targets; empty for classification
  std::vector<int> label_train;
  Matrix x_test;
  Matrix y_test;
  std::vector<int> label_test;

  Index num_train() const { return x_train.rows(); }
  Index num_test() const { return x_test.rows(); }
};

struct SyntheticTask {
  TaskConfig config;
  TargetSpec spec;
  std::vector<ClientDataset> clients;
  std::vector<int> group;  // cluster id (cluster tasks) or dominant label
};

/// Round-robin assignment of clients to clusters, each with its own
/// generator: a random linear map plus noise (regression) or a label subset
/// of shared Gaussian classes (classification).
SyntheticTask partition_clusters(const TaskConfig& config, Rng& rng);

/// Per-class Dirichlet(alpha) proportions over clients; returns the sample
/// indices each client receives. Proportions are drawn in log space.
std::vector<std::vector<Index>> dirichlet_allocation(std::span<const int> labels,
                                                     Index num_clients,
                                                     double alpha, Rng& rng);

/// Dirichlet label split of a shared Gaussian-class pool. A client left
/// without training data triggers one redraw, then an InputError.
SyntheticTask partition_dirichlet(const TaskConfig& config, Rng& rng);

SyntheticTask make_task(const TaskConfig& config, std::uint64_t seed);

struct LocalTrainConfig {
  Index local_steps = 50;
  double lr = 0.01;
  Index batch_size = 16;  // 0 or >= n means full batch
};

/// Mini-batch SGD on one client's data from `theta` (1 x P). Batches come
/// from reshuffled epochs drawn from `rng`.
Matrix client_update(const TargetSpec& spec, const Matrix& theta,
                     const Matrix& x, const Matrix& y,
                     std::span<const int> labels, bool classification,
                     const LocalTrainConfig& config, Rng& rng);

struct ClientMetric {
  std::string name;  // "mse" or "accuracy"
  double test = 0.0;
  double train = 0.0;
};

double evaluate_model(const TargetSpec& spec, const Matrix& theta,
                      const Matrix& x, const Matrix& y,
                      std::span<const int> labels, bool classification);

/// A participant as seen by the server: it accepts parameters and returns
/// parameters or an evaluation score. Local data never leaves the object.
class Client {
 public:
  Client(Index id, ClientDataset data, TargetSpec spec, bool classification);

  Index id() const { return id_; }
  Index num_train_samples() const { return data_.num_train(); }
  Matrix update(const Matrix& theta, const LocalTrainConfig& config,
                std::uint64_t stream_seed) const;
  ClientMetric evaluate(const Matrix& theta) const;

 private:
  Index id_;
  ClientDataset data_;
  TargetSpec spec_;
  bool classification_;
};

std::vector<Client> make_clients(const SyntheticTask& task);

enum class ServerOptimizer { kAdam, kSgd };

struct FederationConfig {
  Index rounds = 300;
  Index clients_per_round = 5;
  LocalTrainConfig local;
  ServerOptimizer server_optimizer = ServerOptimizer::kAdam;
  AdamOptions server;
  Index eval_interval = 50;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct RoundRecord {
  Index round = 0;
  std::vector<Index> sampled;
  std::vector<Matrix> theta_pred;
  std::vector<Matrix> theta_opt;
  double server_loss = 0.0;
  double wall_seconds = 0.0;
};

struct EvalSummary {
  std::string metric;
  std::vector<double> per_client;
  double mu = 0.0;
  double sigma = 0.0;  // population std over all clients
};

EvalSummary summarize(std::string metric, std::vector<double> per_client);

struct MetricRow {
  Index round = 0;
  Index client = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

/// Sorted ids of the clients sampled at `round`.
std::vector<Index> sample_clients(std::uint64_t seed, Index round,
                                  Index num_clients, Index per_round);

/// Runs `fn(i)` for i in [0, count) on up to `threads` threads.
void parallel_for(Index count, int threads, const std::function<void(Index)>& fn);

/// SHNFED_THREADS, defaulting to 1.
int default_threads();

/// Server state for hypernetwork training.
class Federation {
 public:
  Federation(HyperModel model, std::vector<Client> clients,
             FederationConfig config);

  RoundRecord run_round();
  EvalSummary evaluate(std::vector<MetricRow>* rows = nullptr) const;

  Index round() const { return round_; }
  void set_round(Index r) { round_ = r; }
  HyperModel& model() { return model_; }
  const HyperModel& model() const { return model_; }
  AdamState& optimizer_state() { return adam_; }
  const AdamState& optimizer_state() const { return adam_; }
  const FederationConfig& config() const { return config_; }
  Index num_clients() const { return static_cast<Index>(clients_.size()); }

 private:
  HyperModel model_;
  std::vector<Client> clients_;
  FederationConfig config_;
  AdamState adam_;
  Index round_ = 0;
};

struct TrainingLog {
  std::vector<MetricRow> metrics;
  std::vector<double> server_loss;
  EvalSummary final_eval;
};

/// Runs the remaining rounds, evaluating at round 0, every eval_interval
/// rounds and at the end. `on_round` fires after each completed round.
TrainingLog run_training(Federation& federation,
                         const std::function<void(const Federation&)>& on_round = {});

enum class BaselineKind { kFedAvg, kFedAvgFinetune, kLocal };

struct BaselineResult {
  Matrix global_theta;  // empty for kLocal
  TrainingLog log;
};

/// Weighted parameter mean with p_m = n_m / sum(n).
Matrix weighted_average(std::span<const Matrix> thetas,
                        std::span<const Index> counts);

BaselineResult run_baseline(BaselineKind kind, const TargetSpec& spec,
                            std::span<const Client> clients,
                            const FederationConfig& config);

EvalSummary evaluate_personalized(std::span<const Client> clients,
                                  std::span<const Matrix> thetas,
                                  Index round = 0,
                                  std::vector<MetricRow>* rows = nullptr);

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const MetricRow> rows);

}  // namespace shnfed
