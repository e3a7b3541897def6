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

#include "shnfed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "shnfed/csv.hpp"
#include "shnfed/errors.hpp"

namespace shnfed {

namespace {

// Salts keep the independent random streams of one seed apart.
constexpr std::uint64_t kSampleSalt = 0x53414d50;
constexpr std::uint64_t kInitSalt = 0x494e4954;
constexpr std::uint64_t kFinetuneSalt = 0x46494e45;

Matrix gaussian_rows(Index n, Index dim, Rng& rng) {
  return rng.normal_matrix(n, dim, 1.0);
}

Matrix take_rows(const Matrix& m, std::span<const Index> idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

Var batch_loss(const TargetSpec& spec, std::span<const Var> params,
               const Matrix& x, const Matrix& y, std::span<const int> labels,
               bool classification) {
  Var out = target_forward(spec, params, ad::constant(x));
  return classification ? ad::cross_entropy(out, labels) : ad::mse_loss(out, y);
}

}  // namespace

TaskKind parse_task_kind(const std::string& name) {
  if (name == "cluster_regression") return TaskKind::kClusterRegression;
  if (name == "cluster_classification") return TaskKind::kClusterClassification;
  if (name == "dirichlet_classification") return TaskKind::kDirichletClassification;
  throw InputError("unknown task kind '" + name + "'");
}

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClusterRegression: return "cluster_regression";
    case TaskKind::kClusterClassification: return "cluster_classification";
    case TaskKind::kDirichletClassification: return "dirichlet_classification";
  }
  return "?";
}

TargetSpec TaskConfig::target_spec() const {
  return TargetSpec::mlp({input_dim, hidden_dim, model_outputs()});
}

SyntheticTask partition_clusters(const TaskConfig& config, Rng& rng) {
  if (config.num_clusters < 1 || config.num_clusters > config.num_clients) {
    throw InputError("partition_clusters: need 1 <= clusters <= clients");
  }
  if (config.train_samples < 1 || config.test_samples < 1) {
    throw InputError("partition_clusters: every client needs train and test samples");
  }
  SyntheticTask task;
  task.config = config;
  task.spec = config.target_spec();
  const Index in = config.input_dim;
  const Index c = config.num_clusters;

  std::vector<Matrix> maps;
  Matrix class_means;
  std::vector<std::vector<int>> cluster_labels(static_cast<std::size_t>(c));
  if (config.classification()) {
    if (config.num_classes < c) {
      throw InputError("partition_clusters: need at least one class per cluster");
    }
    class_means = rng.normal_matrix(config.num_classes, in, config.class_separation);
    for (int k = 0; k < config.num_classes; ++k) {
      cluster_labels[static_cast<std::size_t>(k % c)].push_back(k);
    }
  } else {
    for (Index k = 0; k < c; ++k) {
      maps.push_back(rng.normal_matrix(in, config.output_dim,
                                       1.0 / std::sqrt(static_cast<double>(in))));
    }
  }

  auto draw = [&](Index cluster, Index n, Matrix& x, Matrix& y,
                  std::vector<int>& labels) {
    if (config.classification()) {
      const auto& allowed = cluster_labels[static_cast<std::size_t>(cluster)];
      x.resize(n, in);
      labels.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        const int label = allowed[rng.below(allowed.size())];
        labels[static_cast<std::size_t>(i)] = label;
        for (Index j = 0; j < in; ++j) x(i, j) = class_means(label, j) + rng.normal();
      }
    } else {
      x = gaussian_rows(n, in, rng);
      y = x * maps[static_cast<std::size_t>(cluster)] +
          rng.normal_matrix(n, config.output_dim, config.noise);
    }
  };

  for (Index m = 0; m < config.num_clients; ++m) {
    const Index cluster = m % c;
    ClientDataset d;
    draw(cluster, config.train_samples, d.x_train, d.y_train, d.label_train);
    draw(cluster, config.test_samples, d.x_test, d.y_test, d.label_test);
    task.clients.push_back(std::move(d));
    task.group.push_back(static_cast<int>(cluster));
  }
  return task;
}

std::vector<std::vector<Index>> dirichlet_allocation(std::span<const int> labels,
                                                     Index num_clients,
                                                     double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw InputError("dirichlet_allocation: alpha must be > 0");
  if (num_clients < 1) throw InputError("dirichlet_allocation: need >= 1 client");
  int num_classes = 0;
  for (int l : labels) {
    if (l < 0) throw InputError("dirichlet_allocation: negative label");
    num_classes = std::max(num_classes, l + 1);
  }
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(num_clients));
  for (int k = 0; k < num_classes; ++k) {
    std::vector<Index> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == k) members.push_back(static_cast<Index>(i));
    }
    rng.shuffle(std::span<Index>(members));
    const std::vector<double> p =
        rng.dirichlet(static_cast<std::size_t>(num_clients), alpha);
    const double total = static_cast<double>(members.size());
    double cum = 0.0;
    std::size_t start = 0;
    for (Index m = 0; m < num_clients; ++m) {
      cum += p[static_cast<std::size_t>(m)];
      std::size_t end = m + 1 == num_clients
                            ? members.size()
                            : std::min(members.size(),
                                       static_cast<std::size_t>(std::floor(cum * total + 0.5)));
      end = std::max(end, start);
      for (std::size_t i = start; i < end; ++i) out[static_cast<std::size_t>(m)].push_back(members[i]);
      start = end;
    }
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

SyntheticTask partition_dirichlet(const TaskConfig& config, Rng& rng) {
  if (config.kind != TaskKind::kDirichletClassification) {
    throw InputError("partition_dirichlet: task kind must be dirichlet_classification");
  }
  SyntheticTask task;
  task.config = config;
  task.spec = config.target_spec();
  const Index in = config.input_dim;
  const Matrix class_means =
      rng.normal_matrix(config.num_classes, in, config.class_separation);
  Matrix pool(config.pool_samples, in);
  std::vector<int> labels(static_cast<std::size_t>(config.pool_samples));
  for (Index i = 0; i < config.pool_samples; ++i) {
    const int label = static_cast<int>(i % config.num_classes);
    labels[static_cast<std::size_t>(i)] = label;
    for (Index j = 0; j < in; ++j) pool(i, j) = class_means(label, j) + rng.normal();
  }

  for (int attempt = 0; attempt < 2; ++attempt) {
    auto alloc = dirichlet_allocation(labels, config.num_clients, config.alpha, rng);
    bool ok = true;
    for (const auto& a : alloc) {
      if (a.size() < 2) ok = false;
    }
    if (!ok) continue;
    task.clients.clear();
    task.group.clear();
    for (auto& idx : alloc) {
      rng.shuffle(std::span<Index>(idx));
      Index n_test = static_cast<Index>(
          std::floor(config.test_fraction * static_cast<double>(idx.size())));
      n_test = std::clamp<Index>(n_test, 1, static_cast<Index>(idx.size()) - 1);
      std::span<const Index> test_idx(idx.data(), static_cast<std::size_t>(n_test));
      std::span<const Index> train_idx(idx.data() + n_test, idx.size() - static_cast<std::size_t>(n_test));
      ClientDataset d;
      d.x_train = take_rows(pool, train_idx);
      d.x_test = take_rows(pool, test_idx);
      std::vector<Index> counts(static_cast<std::size_t>(config.num_classes), 0);
      for (Index i : train_idx) {
        d.label_train.push_back(labels[static_cast<std::size_t>(i)]);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      }
      for (Index i : test_idx) d.label_test.push_back(labels[static_cast<std::size_t>(i)]);
      task.group.push_back(static_cast<int>(
          std::max_element(counts.begin(), counts.end()) - counts.begin()));
      task.clients.push_back(std::move(d));
    }
    return task;
  }
  throw InputError("partition_dirichlet: a client received fewer than 2 samples "
                   "after one redraw (alpha=" + format_double(config.alpha) +
                   ", clients=" + std::to_string(config.num_clients) + ")");
}

SyntheticTask make_task(const TaskConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  if (config.kind == TaskKind::kDirichletClassification) {
    return partition_dirichlet(config, rng);
  }
  return partition_clusters(config, rng);
}

Matrix client_update(const TargetSpec& spec, const Matrix& theta,
                     const Matrix& x, const Matrix& y,
                     std::span<const int> labels, bool classification,
                     const LocalTrainConfig& config, Rng& rng) {
  std::vector<Matrix> blocks = spec.unflatten(theta);
  if (config.lr == 0.0 || config.local_steps == 0) return theta;
  const Index n = x.rows();
  const Index batch =
      (config.batch_size <= 0 || config.batch_size >= n) ? n : config.batch_size;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();
  Matrix xb;
  Matrix yb;
  std::vector<int> lb;
  for (Index step = 0; step < config.local_steps; ++step) {
    if (batch == n) {
      xb = x;
      yb = y;
      lb.assign(labels.begin(), labels.end());
    } else {
      if (cursor + static_cast<std::size_t>(batch) > order.size()) {
        rng.shuffle(std::span<Index>(order));
        cursor = 0;
      }
      std::span<const Index> idx(order.data() + cursor, static_cast<std::size_t>(batch));
      cursor += static_cast<std::size_t>(batch);
      xb = take_rows(x, idx);
      if (classification) {
        lb.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) lb[i] = labels[static_cast<std::size_t>(idx[i])];
      } else {
        yb = take_rows(y, idx);
      }
    }
    std::vector<Var> params;
    params.reserve(blocks.size());
    for (auto& b : blocks) params.push_back(ad::parameter(b));
    Var loss = batch_loss(spec, params, xb, yb, lb, classification);
    if (!std::isfinite(loss.scalar())) {
      throw RuntimeFailure("client_update: non-finite loss at local step " +
                           std::to_string(step));
    }
    ad::backward(loss);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i] -= config.lr * params[i].grad();
    }
  }
  return spec.flatten(blocks);
}

double evaluate_model(const TargetSpec& spec, const Matrix& theta,
                      const Matrix& x, const Matrix& y,
                      std::span<const int> labels, bool classification) {
  ad::NoGradGuard guard;
  std::vector<Var> params;
  for (auto& b : spec.unflatten(theta)) params.push_back(ad::constant(std::move(b)));
  const Matrix out = target_forward(spec, params, ad::constant(x)).value();
  if (!classification) {
    require_same_shape(out, y, "evaluate_model");
    return (out - y).squaredNorm() / static_cast<double>(out.size());
  }
  Index correct = 0;
  for (Index i = 0; i < out.rows(); ++i) {
    Index best = 0;
    out.row(i).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(out.rows());
}

Client::Client(Index id, ClientDataset data, TargetSpec spec, bool classification)
    : id_(id), data_(std::move(data)), spec_(std::move(spec)),
      classification_(classification) {
  if (data_.num_train() < 1 || data_.num_test() < 1) {
    throw InputError("client " + std::to_string(id) + " needs train and test data");
  }
}

Matrix Client::update(const Matrix& theta, const LocalTrainConfig& config,
                      std::uint64_t stream_seed) const {
  Rng rng(stream_seed);
  return client_update(spec_, theta, data_.x_train, data_.y_train,
                       data_.label_train, classification_, config, rng);
}

ClientMetric Client::evaluate(const Matrix& theta) const {
  ClientMetric m;
  m.name = classification_ ? "accuracy" : "mse";
  m.test = evaluate_model(spec_, theta, data_.x_test, data_.y_test,
                          data_.label_test, classification_);
  m.train = evaluate_model(spec_, theta, data_.x_train, data_.y_train,
                           data_.label_train, classification_);
  return m;
}

std::vector<Client> make_clients(const SyntheticTask& task) {
  std::vector<Client> out;
  for (std::size_t i = 0; i < task.clients.size(); ++i) {
    out.emplace_back(static_cast<Index>(i), task.clients[i], task.spec,
                     task.config.classification());
  }
  return out;
}

EvalSummary summarize(std::string metric, std::vector<double> per_client) {
  EvalSummary s;
  s.metric = std::move(metric);
  s.per_client = std::move(per_client);
  if (s.per_client.empty()) return s;
  const double n = static_cast<double>(s.per_client.size());
  double sum = 0.0;
  for (double v : s.per_client) sum += v;
  s.mu = sum / n;
  double var = 0.0;
  for (double v : s.per_client) var += (v - s.mu) * (v - s.mu);
  s.sigma = std::sqrt(var / n);
  return s;
}

std::vector<Index> sample_clients(std::uint64_t seed, Index round,
                                  Index num_clients, Index per_round) {
  if (per_round < 1 || per_round > num_clients) {
    throw InputError("clients_per_round must lie in [1, " +
                     std::to_string(num_clients) + "]");
  }
  Rng rng(Rng::derive(seed ^ kSampleSalt, static_cast<std::uint64_t>(round), 0));
  auto picked = rng.sample_without_replacement(static_cast<std::size_t>(num_clients),
                                               static_cast<std::size_t>(per_round));
  std::vector<Index> out(picked.begin(), picked.end());
  std::sort(out.begin(), out.end());
  return out;
}

void parallel_for(Index count, int threads, const std::function<void(Index)>& fn) {
  const int t = static_cast<int>(std::min<Index>(std::max(threads, 1), count));
  if (t <= 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&] {
      for (Index i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

int default_threads() {
  if (const char* env = std::getenv("SHNFED_THREADS")) {
    long long v = 0;
    if (parse_long(env, v) && v >= 1) return static_cast<int>(v);
  }
  return 1;
}

Federation::Federation(HyperModel model, std::vector<Client> clients,
                       FederationConfig config)
    : model_(std::move(model)), clients_(std::move(clients)),
      config_(std::move(config)) {
  if (static_cast<Index>(clients_.size()) != model_.config().num_clients) {
    throw InputError("Federation: model expects " +
                     std::to_string(model_.config().num_clients) +
                     " clients, got " + std::to_string(clients_.size()));
  }
}

RoundRecord Federation::run_round() {
  const auto start = std::chrono::steady_clock::now();
  RoundRecord rec;
  rec.round = round_;
  rec.sampled = sample_clients(config_.seed, round_, num_clients(),
                               config_.clients_per_round);

  std::vector<Var> params = model_.parameters();
  zero_grad(params);
  Var pred = model_.generate_for(rec.sampled);
  const Index k = static_cast<Index>(rec.sampled.size());
  for (Index i = 0; i < k; ++i) rec.theta_pred.push_back(pred.value().row(i));

  rec.theta_opt.resize(static_cast<std::size_t>(k));
  parallel_for(k, config_.threads, [&](Index i) {
    const Index m = rec.sampled[static_cast<std::size_t>(i)];
    rec.theta_opt[static_cast<std::size_t>(i)] = clients_[static_cast<std::size_t>(m)].update(
        rec.theta_pred[static_cast<std::size_t>(i)], config_.local,
        Rng::derive(config_.seed, static_cast<std::uint64_t>(round_),
                    static_cast<std::uint64_t>(m)));
  });

  Matrix target(k, pred.cols());
  for (Index i = 0; i < k; ++i) target.row(i) = rec.theta_opt[static_cast<std::size_t>(i)];
  Var loss = ad::mse_loss(pred, target);
  rec.server_loss = loss.scalar();
  if (!std::isfinite(rec.server_loss)) {
    throw RuntimeFailure("round " + std::to_string(round_) + ": non-finite server loss");
  }
  ad::backward(loss);
  if (config_.server_optimizer == ServerOptimizer::kAdam) {
    adam_step(params, adam_, config_.server);
  } else {
    sgd_step(params, config_.server.lr);
  }
  ++round_;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

EvalSummary Federation::evaluate(std::vector<MetricRow>* rows) const {
  const Matrix all = model_.generate_all();
  std::vector<Matrix> thetas;
  for (Index i = 0; i < all.rows(); ++i) thetas.push_back(all.row(i));
  return evaluate_personalized(clients_, thetas, round_, rows);
}

TrainingLog run_training(Federation& federation,
                         const std::function<void(const Federation&)>& on_round) {
  TrainingLog log;
  const Index total = federation.config().rounds;
  const Index interval = std::max<Index>(federation.config().eval_interval, 1);
  // A resumed run that is already complete still reports its state.
  if (federation.round() == 0 || federation.round() >= total) {
    log.final_eval = federation.evaluate(&log.metrics);
  }
  while (federation.round() < total) {
    RoundRecord rec = federation.run_round();
    log.server_loss.push_back(rec.server_loss);
    if (on_round) on_round(federation);
    if (federation.round() % interval == 0 || federation.round() == total) {
      log.final_eval = federation.evaluate(&log.metrics);
    }
  }
  return log;
}

Matrix weighted_average(std::span<const Matrix> thetas,
                        std::span<const Index> counts) {
  if (thetas.empty() || thetas.size() != counts.size()) {
    throw InputError("weighted_average: need one count per parameter set");
  }
  double total = 0.0;
  for (Index c : counts) total += static_cast<double>(c);
  if (!(total > 0.0)) throw InputError("weighted_average: zero total weight");
  Matrix out = Matrix::Zero(thetas[0].rows(), thetas[0].cols());
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    require_same_shape(out, thetas[i], "weighted_average");
    out += (static_cast<double>(counts[i]) / total) * thetas[i];
  }
  return out;
}

EvalSummary evaluate_personalized(std::span<const Client> clients,
                                  std::span<const Matrix> thetas, Index round,
                                  std::vector<MetricRow>* rows) {
  if (clients.size() != thetas.size()) {
    throw InputError("evaluate_personalized: one parameter set per client required");
  }
  std::vector<double> per_client;
  std::string name = "mse";
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const ClientMetric m = clients[i].evaluate(thetas[i]);
    name = m.name;
    per_client.push_back(m.test);
    if (rows) {
      rows->push_back({round, clients[i].id(), "train", m.name, m.train});
      rows->push_back({round, clients[i].id(), "test", m.name, m.test});
    }
  }
  return summarize(name, std::move(per_client));
}

BaselineResult run_baseline(BaselineKind kind, const TargetSpec& spec,
                            std::span<const Client> clients,
                            const FederationConfig& config) {
  BaselineResult result;
  const Index n = static_cast<Index>(clients.size());
  Rng init(Rng::derive(config.seed ^ kInitSalt, 0, 0));
  const Matrix theta0 = spec.initialize(init);
  const Index interval = std::max<Index>(config.eval_interval, 1);

  if (kind == BaselineKind::kLocal) {
    // Same expected number of local steps as a federated client gets.
    const Index visits = (config.rounds * config.clients_per_round + n - 1) / n;
    LocalTrainConfig local = config.local;
    local.local_steps = config.local.local_steps * visits;
    std::vector<Matrix> thetas(static_cast<std::size_t>(n), theta0);
    result.log.final_eval = evaluate_personalized(clients, thetas, 0, &result.log.metrics);
    if (config.rounds == 0) return result;
    parallel_for(n, config.threads, [&](Index m) {
      thetas[static_cast<std::size_t>(m)] = clients[static_cast<std::size_t>(m)].update(
          theta0, local, Rng::derive(config.seed, 0, static_cast<std::uint64_t>(m)));
    });
    result.log.final_eval =
        evaluate_personalized(clients, thetas, config.rounds, &result.log.metrics);
    return result;
  }

  Matrix global = theta0;
  auto eval_global = [&](Index round) {
    std::vector<Matrix> thetas(static_cast<std::size_t>(n), global);
    result.log.final_eval =
        evaluate_personalized(clients, thetas, round, &result.log.metrics);
  };
  eval_global(0);
  for (Index t = 0; t < config.rounds; ++t) {
    const auto sampled = sample_clients(config.seed, t, n, config.clients_per_round);
    std::vector<Matrix> updates(sampled.size());
    std::vector<Index> counts;
    for (Index m : sampled) counts.push_back(clients[static_cast<std::size_t>(m)].num_train_samples());
    parallel_for(static_cast<Index>(sampled.size()), config.threads, [&](Index i) {
      const Index m = sampled[static_cast<std::size_t>(i)];
      updates[static_cast<std::size_t>(i)] = clients[static_cast<std::size_t>(m)].update(
          global, config.local,
          Rng::derive(config.seed, static_cast<std::uint64_t>(t),
                      static_cast<std::uint64_t>(m)));
    });
    global = weighted_average(updates, counts);
    if ((t + 1) % interval == 0 || t + 1 == config.rounds) {
      if (kind == BaselineKind::kFedAvg || t + 1 < config.rounds) eval_global(t + 1);
    }
  }
  result.global_theta = global;
  if (kind == BaselineKind::kFedAvgFinetune) {
    std::vector<Matrix> tuned(static_cast<std::size_t>(n));
    parallel_for(n, config.threads, [&](Index m) {
      tuned[static_cast<std::size_t>(m)] = clients[static_cast<std::size_t>(m)].update(
          global, config.local,
          Rng::derive(config.seed ^ kFinetuneSalt, 0, static_cast<std::uint64_t>(m)));
    });
    result.log.final_eval =
        evaluate_personalized(clients, tuned, config.rounds, &result.log.metrics);
  }
  return result;
}

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const MetricRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "round,client_id,split,metric_name,value\n";
  for (const auto& r : rows) {
    out << r.round << ',' << r.client << ',' << r.split << ',' << r.metric << ','
        << format_double(r.value) << '\n';
  }
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

}  // namespace shnfed
