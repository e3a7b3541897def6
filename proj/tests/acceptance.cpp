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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shnfed/config.hpp"
#include "shnfed/experiment.hpp"
#include "shnfed/federation.hpp"
#include "shnfed/hypernet.hpp"
#include "shnfed/relation_graph.hpp"
#include "shnfed/sheaf.hpp"
#include "shnfed/sheaf_ops.hpp"
#include "support.hpp"

using namespace shnfed;
using namespace shnfed::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// 1. d = 1 identity sheaf reduces to the graph Laplacians.
Outcome laplacian_reduction() {
  Rng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(11));
    const Graph g = random_graph(n, rng.uniform(0.2, 0.8), rng);
    const auto lap = build_sheaf_laplacian(identity_sheaf<double>(g, 1));
    const Matrix a = g.adjacency();
    const Eigen::VectorXd deg = a.rowwise().sum();
    const Matrix l = Matrix(deg.asDiagonal()) - a;
    Matrix norm = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      if (deg(i) > 0) norm(i, i) = 1.0;
      for (Index j = 0; j < n; ++j) {
        if (a(i, j) != 0.0) norm(i, j) = -1.0 / std::sqrt(deg(i) * deg(j));
      }
    }
    worst = std::max({worst, max_abs(lap.laplacian - l), max_abs(lap.normalized - norm)});
  }
  return {worst <= 1e-12, "max entry error " + fmt("%.2e", worst) + " (tol 1e-12)"};
}

// 2. L_F against the explicit coboundary product, plus PSD.
Outcome coboundary_oracle() {
  Rng rng(202);
  double worst = 0.0;
  double min_quad = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 20; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(7));
    const Index d = 1 + static_cast<Index>(rng.below(4));
    const Graph g = random_graph(n, rng.uniform(0.3, 0.9), rng);
    const auto s = random_sheaf(g, d, rng);
    const Matrix delta = coboundary_matrix(s);
    const auto lap = build_sheaf_laplacian(s);
    worst = std::max(worst, max_abs(lap.laplacian - delta.transpose() * delta));
    for (int k = 0; k < 100; ++k) {
      const Matrix x = rng.normal_matrix(n * d, 1);
      min_quad = std::min(min_quad, (x.transpose() * lap.laplacian * x)(0, 0));
    }
  }
  return {worst <= 1e-10 && min_quad >= -1e-8,
          "max |L - d^T d| " + fmt("%.2e", worst) + " (tol 1e-10), min x^T L x " +
              fmt("%.2e", min_quad) + " (tol -1e-8)"};
}

// 3. Full SHN gradient against central differences.
Outcome gradient_integrity() {
  Rng rng(303);
  const Index n = 6;
  const TargetSpec spec = TargetSpec::mlp({2, 3, 1});
  ModelConfig c;
  c.variant = Variant::kShn;
  c.num_clients = n;
  c.embedding_dim = 4;
  c.embedding_hidden = 5;
  c.encoder_hidden = 3;
  c.head_hidden = 5;
  c.layers = 2;
  c.stalk_dim = 2;
  HyperModel m = HyperModel::create(c, spec, rng);
  m.set_graph(random_connected_graph(n, 0.4, rng));
  const std::vector<Index> sampled = {1, 2, 4};
  const Matrix target = rng.normal_matrix(3, spec.total());
  auto loss = [&] { return ad::mse_loss(m.generate_for(sampled), target); };

  auto named = m.named_parameters();
  std::vector<Var> params;
  for (auto& [name, p] : named) params.push_back(p);
  for (auto& p : params) p.zero_grad();
  ad::backward(loss());
  double worst = 0.0;
  std::string worst_name;
  for (auto& [name, p] : named) {
    const Matrix analytic = p.grad();
    const Matrix numeric = numeric_gradient(
        [&] {
          ad::NoGradGuard guard;
          return loss().scalar();
        },
        p.mutable_value());
    const double err = rel_error(analytic, numeric);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  return {worst < 1e-3, std::to_string(named.size()) + " parameters, worst rel err " +
                            fmt("%.2e", worst) + " (" + worst_name + ", tol 1e-3)"};
}

// 4. Restriction maps stay orthogonal through 200 training rounds.
Outcome orthogonality() {
  TaskConfig t;
  t.num_clients = 8;
  t.num_clusters = 2;
  t.train_samples = 32;
  t.test_samples = 16;
  const SyntheticTask task = make_task(t, 4);
  ModelConfig c;
  c.variant = Variant::kShn;
  c.num_clients = 8;
  c.stalk_dim = 3;
  c.encoder_hidden = 8;
  c.layers = 2;
  Rng rng(404);
  HyperModel m = HyperModel::create(c, task.spec, rng);
  Rng grng(405);
  m.set_graph(random_connected_graph(8, 0.3, grng));
  FederationConfig f;
  f.rounds = 200;
  f.clients_per_round = 4;
  f.local.local_steps = 5;
  f.eval_interval = 200;
  f.seed = 4;
  f.server.lr = 1e-2;
  Federation fed(std::move(m), make_clients(task), f);
  double worst = 0.0;
  Index checked = 0;
  run_training(fed, [&](const Federation& state) {
    EncoderTrace trace;
    {
      ad::NoGradGuard guard;
      state.model().encode(state.model().embeddings(), &trace);
    }
    for (const Matrix& maps : trace.maps) {
      for (Index r = 0; r < maps.rows(); ++r) {
        const Matrix q = Eigen::Map<const Matrix>(maps.row(r).data(), 3, 3);
        worst = std::max(worst, max_abs(q.transpose() * q - Matrix::Identity(3, 3)));
        ++checked;
      }
    }
  });
  return {fed.round() == 200 && worst < 1e-6,
          std::to_string(checked) + " maps over 200 steps, max |Q^T Q - I| " + fmt("%.2e", worst) +
              " (tol 1e-6)"};
}

// 5. Heat steps below the stability bound decrease the sheaf energy.
Outcome energy_monotonicity() {
  Rng rng(505);
  int strict = 0;
  for (int t = 0; t < 10; ++t) {
    const Index n = 3 + static_cast<Index>(rng.below(6));
    const Index d = 1 + static_cast<Index>(rng.below(3));
    const Graph g = random_connected_graph(n, 0.4, rng);
    const auto s = random_sheaf(g, d, rng);
    const auto lap = build_sheaf_laplacian(s);
    const double lambda = power_iteration_lambda_max(lap.normalized, 2000);
    const double alpha = 1.5 / lambda;
    Matrix x = rng.normal_matrix(n * d, 2);
    double e = sheaf_dirichlet_energy(s, lap, x);
    bool ok = true;
    for (int k = 0; k < 50; ++k) {
      x = x - alpha * lap.normalized * x;
      const double next = sheaf_dirichlet_energy(s, lap, x);
      if (!(next < e)) ok = false;
      e = next;
    }
    strict += ok ? 1 : 0;
  }
  return {strict == 10, std::to_string(strict) + "/10 sheaves strictly decreasing over 50 steps"};
}

RunConfig base_config() {
  RunConfig c;
  c.seed = 0;
  c.repeats = 5;
  c.out_dir = (fs::temp_directory_path() / "shnfed_acceptance").string();
  return c;
}

// 6. Depth: GHN degrades at 32 layers, SHN does not.
Outcome oversmoothing() {
  RunConfig c = base_config();
  c.sweep_axis = SweepAxis::kLayers;
  c.sweep_values = {2, 32};
  c.sweep_variants = {"ghn", "shn"};
  const SweepResult r = run_sweep(c);
  int good = 0;
  std::string detail;
  for (Index rep = 0; rep < c.repeats; ++rep) {
    const double g2 = r.mu(2, "ghn", rep), g32 = r.mu(32, "ghn", rep);
    const double s2 = r.mu(2, "shn", rep), s32 = r.mu(32, "shn", rep);
    const bool ghn_ok = g32 >= 2.0 * g2;
    const bool shn_ok = std::abs(s32 - s2) <= 0.2 * s2;
    good += (ghn_ok && shn_ok) ? 1 : 0;
    detail += " r" + std::to_string(rep) + "[ghn x" + fmt("%.2f", g32 / g2) + " shn " +
              fmt("%+.0f%%", 100.0 * (s32 - s2) / s2) + "]";
  }
  return {good >= 4, std::to_string(good) + "/5 repeats;" + detail};
}

// Monotone degradation with a 10% allowance per step, and a net increase.
bool degrades(const std::vector<double>& mus) {
  for (std::size_t i = 1; i < mus.size(); ++i) {
    if (!(mus[i] >= 0.9 * mus[i - 1])) return false;
  }
  return mus.back() > mus.front();
}

double spread(const std::vector<double>& mus) {
  const auto [lo, hi] = std::minmax_element(mus.begin(), mus.end());
  return (*hi - *lo) / *lo;
}

// 7. Graph density: SHN stable, GHN worse on denser graphs.
Outcome density_robustness() {
  RunConfig c = base_config();
  c.model.layers = 3;
  c.sweep_variants = {"ghn", "shn"};
  RunConfig k = c;
  k.sweep_axis = SweepAxis::kKnnK;
  k.sweep_values = {0, 2, 4, 8, 16};
  RunConfig tau = c;
  tau.sweep_axis = SweepAxis::kCosineTau;
  tau.sweep_values = {1.0, 0.9, 0.8, 0.4};
  const SweepResult rk = run_sweep(k);
  const SweepResult rt = run_sweep(tau);
  auto series = [](const SweepResult& r, const RunConfig& cfg, const std::string& v, Index rep) {
    std::vector<double> out;
    for (double x : cfg.sweep_values) out.push_back(r.mu(x, v, rep));
    return out;
  };
  // SHN: spread of the repeat-averaged mu along each axis.
  auto mean_series = [&](const SweepResult& r, const RunConfig& cfg) {
    std::vector<double> out(cfg.sweep_values.size(), 0.0);
    for (Index rep = 0; rep < cfg.repeats; ++rep) {
      const auto s = series(r, cfg, "shn", rep);
      for (std::size_t i = 0; i < s.size(); ++i) out[i] += s[i] / static_cast<double>(cfg.repeats);
    }
    return out;
  };
  const double shn_k = spread(mean_series(rk, k));
  const double shn_t = spread(mean_series(rt, tau));
  int good = 0;
  std::string detail;
  for (Index rep = 0; rep < c.repeats; ++rep) {
    const bool gk = degrades(series(rk, k, "ghn", rep));
    const bool gt = degrades(series(rt, tau, "ghn", rep));
    good += (gk && gt) ? 1 : 0;
    detail += " r" + std::to_string(rep) + "[ghn " + (gk ? "k+" : "k-") + (gt ? "t+" : "t-") +
              " shn " + fmt("%.0f", 100 * spread(series(rk, k, "shn", rep))) + "/" +
              fmt("%.0f%%", 100 * spread(series(rt, tau, "shn", rep))) + "]";
  }
  return {good >= 4 && shn_k < 0.2 && shn_t < 0.2,
          "shn mean-mu spread k " + fmt("%.1f%%", 100 * shn_k) + ", tau " +
              fmt("%.1f%%", 100 * shn_t) + "; ghn degrades in " + std::to_string(good) +
              "/5 repeats;" + detail};
}

// 8. Personalization ordering against FedAvg and the plain hypernetwork.
Outcome pfl_ordering() {
  RunConfig c = base_config();
  c.sweep_axis = SweepAxis::kNone;
  c.sweep_variants = {"hn", "shn", "fedavg"};
  const SweepResult r = run_sweep(c);
  std::vector<double> hn, shn, fedavg;
  for (Index rep = 0; rep < c.repeats; ++rep) {
    hn.push_back(r.mu(0, "hn", rep));
    shn.push_back(r.mu(0, "shn", rep));
    fedavg.push_back(r.mu(0, "fedavg", rep));
  }
  const double mh = median(hn), ms = median(shn), mf = median(fedavg);
  return {ms < mf && ms <= mh, "median mse shn " + fmt("%.4f", ms) + ", hn " + fmt("%.4f", mh) +
                                   ", fedavg " + fmt("%.4f", mf)};
}

// 9a. Clients expose parameters, scalar metrics and a sample count only.
template <typename C>
concept ExposesData = requires(const C& c) { c.data(); } || requires(const C& c) { c.dataset(); } ||
                      requires(const C& c) { c.data_; } || requires(const C& c) { c.x_train; } ||
                      requires(const C& c) { c.inputs(); } || requires(const C& c) { c.labels(); };
static_assert(!ExposesData<Client>);
static_assert(std::same_as<decltype(std::declval<const Client&>().update(
                               std::declval<const Matrix&>(), std::declval<const LocalTrainConfig&>(),
                               std::uint64_t{})),
                           Matrix>);
static_assert(std::same_as<decltype(std::declval<const Client&>().evaluate(std::declval<const Matrix&>())),
                           ClientMetric>);
static_assert(!std::is_convertible_v<Client, ClientDataset>);

// Public member declarations of class Client, read from the header.
std::vector<std::string> client_public_api() {
  std::ifstream in(fs::path(SHNFED_INCLUDE_DIR) / "shnfed" / "federation.hpp");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto start = text.find("class Client {");
  const auto pub = text.find("public:", start);
  const auto priv = text.find("private:", pub);
  std::vector<std::string> decls;
  if (start == std::string::npos || pub == std::string::npos || priv == std::string::npos) return decls;
  std::istringstream body(text.substr(pub + 7, priv - pub - 7));
  std::string line, acc;
  while (std::getline(body, line)) {
    if (line.find("//") != std::string::npos) line = line.substr(0, line.find("//"));
    acc += line;
    if (acc.find(';') != std::string::npos || acc.find('}') != std::string::npos) {
      if (acc.find_first_not_of(" \t") != std::string::npos) decls.push_back(acc);
      acc.clear();
    }
  }
  return decls;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// 9. Determinism across processes-worth of state and thread counts.
Outcome determinism_and_privacy() {
  const fs::path root = fs::temp_directory_path() / "shnfed_acceptance_det";
  fs::remove_all(root);
  RunConfig c;
  c.seed = 17;
  c.federation.rounds = 40;
  c.federation.eval_interval = 10;
  c.variant = "hn";
  c.out_dir = (root / "hn").string();
  train_run(c);

  RunConfig s = c;
  s.variant = "shn";
  s.graph_embeddings = (root / "hn" / "embeddings.csv").string();
  bool same = true;
  for (const char* threads : {"1", "3"}) {
    setenv("SHNFED_THREADS", threads, 1);
    s.out_dir = (root / (std::string("shn") + threads)).string();
    const std::vector<std::string> files = {"metrics.csv", "summary.json", "checkpoint.json",
                                            "embeddings.csv", "server_loss.csv"};
    train_run(s);
    std::vector<std::string> first;
    for (const auto& f : files) first.push_back(slurp(fs::path(s.out_dir) / f));
    train_run(s);
    for (std::size_t i = 0; i < files.size(); ++i) {
      same = same && !first[i].empty() && slurp(fs::path(s.out_dir) / files[i]) == first[i];
    }
  }
  unsetenv("SHNFED_THREADS");
  same = same && slurp(root / "shn1" / "metrics.csv") == slurp(root / "shn3" / "metrics.csv");

  // Every public member returns parameters, a metric record or a scalar.
  const auto api = client_public_api();
  const std::regex allowed(
      R"(^\s*(Client\(.*\);|Index id\(\) const \{.*\}|Index num_train_samples\(\) const \{.*\}|Matrix update\(.*\) const;|ClientMetric evaluate\(.*\) const;)\s*$)");
  bool audit = api.size() == 5;
  std::string offending;
  for (const auto& d : api) {
    std::string flat = std::regex_replace(d, std::regex(R"(\s+)"), " ");
    if (!std::regex_match(flat, allowed)) {
      audit = false;
      offending = flat;
    }
  }
  return {same && audit, std::string("metrics byte-identical across reruns and thread counts: ") +
                             (same ? "yes" : "no") + "; client interface audit (" +
                             std::to_string(api.size()) + " public members): " +
                             (audit ? "only parameter sets and metrics cross" : "unexpected " + offending)};
}

// 10. Randomized construction properties.
Outcome graph_properties() {
  Rng rng(1010);
  int failures = 0;
  std::string first;
  auto fail = [&](const std::string& what, int t) {
    if (failures++ == 0) first = what + " in case " + std::to_string(t);
  };
  auto subset = [](const Graph& a, const Graph& b) {
    return std::includes(b.edges.begin(), b.edges.end(), a.edges.begin(), a.edges.end());
  };
  for (int t = 0; t < 1000; ++t) {
    const Index n = 3 + static_cast<Index>(rng.below(28));
    const Index f = 2 + static_cast<Index>(rng.below(7));
    const auto emb = EmbeddingMatrix::from_matrix(rng.normal_matrix(n, f));
    const Index k1 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const Index k2 = k1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - k1)));
    double t1 = rng.uniform(-1, 1), t2 = rng.uniform(-1, 1);
    if (t1 > t2) std::swap(t1, t2);
    const auto gk1 = build_knn_graph(emb, k1), gk2 = build_knn_graph(emb, k2);
    const auto gt1 = build_threshold_graph(emb, t1), gt2 = build_threshold_graph(emb, t2);
    for (const auto* g : {&gk1, &gk2, &gt1, &gt2}) {
      if (g->adjacency != g->adjacency.transpose()) fail("asymmetric adjacency", t);
    }
    if (!subset(gk1.graph, gk2.graph)) fail("knn nesting", t);
    if (!subset(gt2.graph, gt1.graph)) fail("threshold nesting", t);

    Matrix scaled = emb.x;
    for (Index i = 0; i < n; ++i) scaled.row(i) *= std::exp(rng.uniform(-5, 5));
    const auto s = EmbeddingMatrix::from_matrix(scaled);
    if (!(build_knn_graph(s, k1).graph == gk1.graph)) fail("knn scale invariance", t);
    if (!(build_threshold_graph(s, t1).graph == gt1.graph)) fail("threshold scale invariance", t);

    // Separated clusters: directions pairwise more than 60 degrees apart.
    const Index clusters = 2 + static_cast<Index>(rng.below(3));
    const Index dim = clusters + 1 + static_cast<Index>(rng.below(4));
    Matrix centers(clusters, dim);
    for (Index c = 0; c < clusters;) {
      centers.row(c) = rng.normal_matrix(1, dim).normalized();
      bool apart = true;
      for (Index o = 0; o < c; ++o) apart = apart && centers.row(c).dot(centers.row(o)) < 0.5;
      if (apart) ++c;
    }
    const Index m = clusters * (2 + static_cast<Index>(rng.below(6)));
    Matrix x(m, dim);
    std::vector<int> labels(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) {
      const Index c = static_cast<Index>(rng.below(static_cast<std::uint64_t>(clusters)));
      labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
      x.row(i) = std::exp(rng.uniform(-2, 2)) *
                 (centers.row(c) + 0.05 / std::sqrt(double(dim)) * rng.normal_matrix(1, dim));
    }
    const auto g = build_threshold_graph(EmbeddingMatrix::from_matrix(x), 0.95);
    const auto d = graph_diagnostics(g.graph, labels);
    if (d.homophily && *d.homophily < 0.95) fail("homophily below 0.95", t);
  }
  return {failures == 0, "1000 cases, " + std::to_string(failures) + " violations" +
                             (failures ? " (first: " + first + ")" : "")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "laplacian reduction", laplacian_reduction},
      {2, "coboundary oracle", coboundary_oracle},
      {3, "gradient integrity", gradient_integrity},
      {4, "orthogonality", orthogonality},
      {5, "energy monotonicity", energy_monotonicity},
      {6, "over-smoothing", oversmoothing},
      {7, "graph-density robustness", density_robustness},
      {8, "personalization ordering", pfl_ordering},
      {9, "determinism and privacy shape", determinism_and_privacy},
      {10, "graph construction properties", graph_properties},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
