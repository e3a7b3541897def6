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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "shnfed/checkpoint.hpp"
#include "shnfed/federation.hpp"
#include "support.hpp"

using namespace shnfed;

namespace {

TaskConfig tiny_task() {
  TaskConfig t;
  t.num_clients = 6;
  t.num_clusters = 2;
  t.input_dim = 3;
  t.hidden_dim = 4;
  t.output_dim = 1;
  t.train_samples = 20;
  t.test_samples = 10;
  return t;
}

FederationConfig tiny_fed(std::uint64_t seed) {
  FederationConfig f;
  f.rounds = 6;
  f.clients_per_round = 3;
  f.local.local_steps = 5;
  f.local.batch_size = 8;
  f.eval_interval = 3;
  f.seed = seed;
  return f;
}

ModelConfig tiny_model(Variant v, Index n) {
  ModelConfig c;
  c.variant = v;
  c.num_clients = n;
  c.embedding_dim = 4;
  c.embedding_hidden = 5;
  c.encoder_hidden = 3;
  c.head_hidden = 6;
  c.layers = 2;
  c.stalk_dim = 2;
  return c;
}

Federation tiny_federation(Variant v, std::uint64_t seed, int threads = 1) {
  const SyntheticTask task = make_task(tiny_task(), seed);
  Rng rng(seed + 1);
  HyperModel m = HyperModel::create(tiny_model(v, 6), task.spec, rng);
  if (v != Variant::kHn) m.set_graph(Graph::from_edges(6, {{0, 2}, {1, 3}, {2, 4}, {3, 5}}));
  FederationConfig f = tiny_fed(seed);
  f.threads = threads;
  return Federation(std::move(m), make_clients(task), f);
}

// Least-squares map of one client's noiseless regression data.
Matrix fitted_map(const ClientDataset& d) {
  return d.x_train.colPivHouseholderQr().solve(d.y_train);
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("dirichlet allocation limits") {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 1000; ++i) labels.push_back(c);
  }
  Rng rng(1);
  SUBCASE("huge alpha is uniform") {
    const auto parts = dirichlet_allocation(labels, 8, 1e15, rng);
    for (const auto& p : parts) {
      std::vector<int> hist(4, 0);
      for (Index i : p) ++hist[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      for (int h : hist) CHECK(std::abs(h - 125) <= 0.05 * 125);
    }
  }
  SUBCASE("tiny alpha concentrates each class") {
    const auto parts = dirichlet_allocation(labels, 8, 1e-15, rng);
    for (int c = 0; c < 4; ++c) {
      std::size_t best = 0;
      for (const auto& p : parts) {
        const auto n = static_cast<std::size_t>(std::count_if(
            p.begin(), p.end(), [&](Index i) { return labels[static_cast<std::size_t>(i)] == c; }));
        best = std::max(best, n);
      }
      CHECK(best >= 990);
    }
  }
  SUBCASE("every sample is assigned exactly once") {
    const auto parts = dirichlet_allocation(labels, 8, 0.5, rng);
    std::vector<Index> all;
    for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
    std::sort(all.begin(), all.end());
    CHECK(all.size() == labels.size());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  }
}

TEST_CASE("dirichlet task is deterministic") {
  TaskConfig t;
  t.kind = TaskKind::kDirichletClassification;
  t.num_clients = 8;
  t.num_classes = 8;
  t.alpha = 0.5;
  t.pool_samples = 800;
  const auto a = make_task(t, 11);
  const auto b = make_task(t, 11);
  for (std::size_t m = 0; m < a.clients.size(); ++m) {
    CHECK(a.clients[m].label_train == b.clients[m].label_train);
    CHECK(a.clients[m].x_train == b.clients[m].x_train);
    CHECK(a.clients[m].num_test() >= 1);
    CHECK(a.clients[m].num_train() >= 1);
  }

  // Nearly all mass on one client per class leaves others empty.
  t.num_clients = 20;
  t.num_classes = 2;
  t.alpha = 0.01;
  t.pool_samples = 40;
  CHECK_THROWS_AS(make_task(t, 11), InputError);
}

TEST_CASE("cluster partition") {
  TaskConfig t = tiny_task();
  t.noise = 0.0;
  SUBCASE("one cluster is iid") {
    t.num_clusters = 1;
    const auto task = make_task(t, 3);
    const Matrix w0 = fitted_map(task.clients[0]);
    for (const auto& c : task.clients) CHECK(shnfed::testing::rel_error(fitted_map(c), w0) < 1e-10);
  }
  SUBCASE("one cluster per client") {
    t.num_clusters = t.num_clients;
    const auto task = make_task(t, 3);
    for (std::size_t a = 0; a < task.clients.size(); ++a) {
      for (std::size_t b = a + 1; b < task.clients.size(); ++b) {
        CHECK(shnfed::testing::rel_error(fitted_map(task.clients[a]), fitted_map(task.clients[b])) >
              1e-3);
      }
    }
  }
  SUBCASE("round robin groups and disjoint splits") {
    const auto task = make_task(t, 3);
    for (std::size_t m = 0; m < task.group.size(); ++m) CHECK(task.group[m] == int(m % 2));
    const auto& c = task.clients[0];
    for (Index i = 0; i < c.num_test(); ++i) {
      for (Index j = 0; j < c.num_train(); ++j) CHECK(c.x_test.row(i) != c.x_train.row(j));
    }
  }
  SUBCASE("classification clusters use their own labels") {
    t.kind = TaskKind::kClusterClassification;
    t.num_classes = 4;
    const auto task = make_task(t, 3);
    for (std::size_t m = 0; m < task.clients.size(); ++m) {
      for (int l : task.clients[m].label_train) CHECK(l % 2 == int(m % 2));
    }
  }
  TaskConfig bad = tiny_task();
  bad.num_clusters = 7;
  Rng rng(0);
  CHECK_THROWS_AS(partition_clusters(bad, rng), InputError);
}

TEST_CASE("client update") {
  const auto task = make_task(tiny_task(), 4);
  const auto& d = task.clients[0];
  Rng init(5);
  const Matrix theta = task.spec.initialize(init);
  LocalTrainConfig cfg;
  cfg.local_steps = 200;
  cfg.lr = 0.05;
  cfg.batch_size = 0;

  LocalTrainConfig zero = cfg;
  zero.lr = 0.0;
  Rng r0(1);
  CHECK(client_update(task.spec, theta, d.x_train, d.y_train, {}, false, zero, r0) == theta);

  Rng r1(2), r2(2);
  const Matrix a = client_update(task.spec, theta, d.x_train, d.y_train, {}, false, cfg, r1);
  const Matrix b = client_update(task.spec, theta, d.x_train, d.y_train, {}, false, cfg, r2);
  CHECK(a == b);
  CHECK(evaluate_model(task.spec, a, d.x_train, d.y_train, {}, false) <
        evaluate_model(task.spec, theta, d.x_train, d.y_train, {}, false));

  Matrix nan_theta = theta;
  nan_theta(0, 0) = std::nan("");
  Rng r3(3);
  CHECK_THROWS_AS(client_update(task.spec, nan_theta, d.x_train, d.y_train, {}, false, cfg, r3),
                  RuntimeFailure);
}

TEST_CASE("client sampling") {
  const auto s = sample_clients(7, 3, 20, 5);
  CHECK(s.size() == 5);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::set<Index>(s.begin(), s.end()).size() == 5);
  CHECK(sample_clients(7, 3, 20, 5) == s);

  const auto everyone = sample_clients(7, 0, 6, 6);
  CHECK(everyone == std::vector<Index>{0, 1, 2, 3, 4, 5});
  CHECK_THROWS_AS(sample_clients(7, 0, 6, 7), InputError);

  // Frequencies over many rounds stay inside 3-sigma binomial bounds.
  const int rounds = 4000;
  std::vector<int> hits(20, 0);
  for (int r = 0; r < rounds; ++r) {
    for (Index m : sample_clients(9, r, 20, 5)) ++hits[static_cast<std::size_t>(m)];
  }
  const double p = 0.25;
  const double mean = rounds * p;
  const double sd = std::sqrt(rounds * p * (1 - p));
  for (int h : hits) CHECK(std::abs(h - mean) <= 3.0 * sd);
}

TEST_CASE("weighted average and summaries") {
  const std::vector<Matrix> same = {Matrix::Constant(1, 3, 2.5), Matrix::Constant(1, 3, 2.5)};
  const std::vector<Index> counts = {4, 9};
  CHECK(weighted_average(same, counts) == same[0]);

  const std::vector<Matrix> two = {Matrix::Constant(1, 1, 0.0), Matrix::Constant(1, 1, 4.0)};
  const std::vector<Index> n = {1, 3};
  CHECK(weighted_average(two, n)(0, 0) == 3.0);

  const auto s = summarize("mse", {1.0, 3.0});
  CHECK(s.mu == 2.0);
  CHECK(s.sigma == 1.0);
  CHECK(summarize("mse", {0.5, 0.5, 0.5}).sigma == 0.0);
}

TEST_CASE("identical clients give zero spread") {
  TaskConfig t = tiny_task();
  t.num_clusters = 1;
  const auto task = make_task(t, 5);
  std::vector<Client> clients;
  for (Index m = 0; m < 3; ++m) clients.emplace_back(m, task.clients[0], task.spec, false);
  Rng rng(1);
  const Matrix theta = task.spec.initialize(rng);
  const std::vector<Matrix> thetas(3, theta);
  std::vector<MetricRow> rows;
  const auto e = evaluate_personalized(clients, thetas, 7, &rows);
  CHECK(e.sigma == 0.0);
  CHECK(rows.size() == 6);
  CHECK(rows[0].round == 7);
}

TEST_CASE("parallel_for rethrows") {
  std::vector<int> out(10, 0);
  parallel_for(10, 3, [&](Index i) { out[static_cast<std::size_t>(i)] = static_cast<int>(i); });
  CHECK(out[9] == 9);
  CHECK_THROWS_AS(parallel_for(5, 2, [](Index i) {
                    if (i == 3) throw RuntimeFailure("boom");
                  }),
                  RuntimeFailure);
}

TEST_CASE("server round") {
  Federation fed = tiny_federation(Variant::kShn, 3);
  const RoundRecord rec = fed.run_round();
  CHECK(rec.sampled.size() == 3);
  CHECK(rec.theta_pred.size() == 3);
  CHECK(rec.theta_opt.size() == 3);
  double mse = 0.0;
  for (std::size_t i = 0; i < 3; ++i) mse += (rec.theta_pred[i] - rec.theta_opt[i]).squaredNorm();
  mse /= 3.0 * static_cast<double>(rec.theta_pred[0].size());
  CHECK(rec.server_loss == doctest::Approx(mse).epsilon(1e-12));
  CHECK(fed.round() == 1);
  CHECK(fed.optimizer_state().step == 1);
}

TEST_CASE("training is deterministic and thread-count independent") {
  for (Variant v : {Variant::kHn, Variant::kGhn, Variant::kShn}) {
    Federation a = tiny_federation(v, 8, 1);
    Federation b = tiny_federation(v, 8, 3);
    const auto la = run_training(a);
    const auto lb = run_training(b);
    REQUIRE(la.metrics.size() == lb.metrics.size());
    for (std::size_t i = 0; i < la.metrics.size(); ++i) CHECK(la.metrics[i].value == lb.metrics[i].value);
    CHECK(la.server_loss == lb.server_loss);
    // Rounds 0, 3 and 6, two splits per client.
    CHECK(la.metrics.size() == 3 * 2 * 6);
  }
}

TEST_CASE("checkpoint round trip is bit exact and resumes identically") {
  Federation full = tiny_federation(Variant::kShn, 9);
  run_training(full);

  Federation half = tiny_federation(Variant::kShn, 9);
  while (half.round() < 3) half.run_round();
  const std::string doc = checkpoint_json(half);

  Federation resumed = tiny_federation(Variant::kShn, 9);
  restore_checkpoint_json(doc, resumed);
  CHECK(checkpoint_json(resumed) == doc);
  run_training(resumed);
  CHECK(checkpoint_json(resumed) == checkpoint_json(full));

  Federation other = tiny_federation(Variant::kGhn, 9);
  CHECK_THROWS_AS(restore_checkpoint_json(doc, other), InputError);
  CHECK_THROWS_AS(restore_checkpoint_json("{not json", other), InputError);
}

TEST_CASE("baselines") {
  const auto task = make_task(tiny_task(), 10);
  const auto clients = make_clients(task);
  FederationConfig f = tiny_fed(10);
  const auto fedavg = run_baseline(BaselineKind::kFedAvg, task.spec, clients, f);
  CHECK(fedavg.global_theta.cols() == task.spec.total());
  CHECK(std::isfinite(fedavg.log.final_eval.mu));
  const auto again = run_baseline(BaselineKind::kFedAvg, task.spec, clients, f);
  CHECK(again.global_theta == fedavg.global_theta);

  const auto ft = run_baseline(BaselineKind::kFedAvgFinetune, task.spec, clients, f);
  CHECK(ft.global_theta == fedavg.global_theta);
  CHECK(ft.log.final_eval.mu <= fedavg.log.final_eval.mu);

  const auto local = run_baseline(BaselineKind::kLocal, task.spec, clients, f);
  CHECK(local.global_theta.size() == 0);
  CHECK(std::isfinite(local.log.final_eval.mu));
}

}  // TEST_SUITE
