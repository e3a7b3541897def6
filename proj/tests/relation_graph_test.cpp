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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

#include "shnfed/relation_graph.hpp"
#include "support.hpp"

using namespace shnfed;

namespace {

EmbeddingMatrix angles(std::initializer_list<double> degrees) {
  Matrix x(static_cast<Index>(degrees.size()), 2);
  Index i = 0;
  for (double deg : degrees) {
    const double r = deg * std::numbers::pi / 180.0;
    x(i, 0) = std::cos(r);
    x(i, 1) = std::sin(r);
    ++i;
  }
  return EmbeddingMatrix::from_matrix(x);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("shnfed_rg_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

bool is_subset(const Graph& a, const Graph& b) {
  for (const auto& e : a.edges) {
    if (std::find(b.edges.begin(), b.edges.end(), e) == b.edges.end()) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("relation_graph") {

TEST_CASE("cosine similarity") {
  Eigen::RowVector3d v(1.0, -2.0, 0.5);
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  CHECK(cosine_similarity(v, Eigen::RowVector3d(-v)) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(Eigen::RowVector2d(1, 0), Eigen::RowVector2d(0, 1)) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(v, Eigen::RowVector3d::Zero()), InputError);
}

TEST_CASE("embedding validation") {
  Matrix x = Matrix::Ones(3, 2);
  x.row(1).setZero();
  CHECK_THROWS_AS(EmbeddingMatrix::from_matrix(x).validate(), InputError);
  x(1, 0) = std::nan("");
  CHECK_THROWS_AS(EmbeddingMatrix::from_matrix(x).validate(), InputError);
}

TEST_CASE("knn graph") {
  Rng rng(1);
  const auto emb = EmbeddingMatrix::from_matrix(rng.normal_matrix(6, 3));

  const auto k0 = build_knn_graph(emb, 0);
  CHECK(k0.adjacency == Matrix::Identity(6, 6));
  CHECK(k0.graph.num_edges() == 0);

  const auto three = build_knn_graph(angles({0.0, 10.0, 90.0}), 1);
  CHECK(three.graph.edges == std::vector<std::pair<Index, Index>>{{0, 1}, {1, 2}});

  const auto full = build_knn_graph(emb, 5);
  CHECK(full.graph.num_edges() == 15);
  CHECK_THROWS_AS(build_knn_graph(emb, 6), InputError);
  CHECK_THROWS_AS(build_knn_graph(emb, -1), InputError);
}

TEST_CASE("knn ties break toward the lower client id") {
  // Clients 1 and 2 are equally similar to client 0; each has a closer partner.
  const auto g = build_knn_graph(angles({0.0, 30.0, -30.0, 31.0, -31.0}), 1);
  CHECK(g.graph.edges == std::vector<std::pair<Index, Index>>{{0, 1}, {1, 3}, {2, 4}});
  CHECK(g.adjacency(0, 2) == 0.0);
}

TEST_CASE("threshold graph") {
  Rng rng(2);
  const auto emb = EmbeddingMatrix::from_matrix(rng.normal_matrix(7, 4));
  CHECK(build_threshold_graph(emb, -1.0).graph.num_edges() == 21);

  Matrix x(4, 2);
  x << 1, 0, 2, 0, 0, 1, 1, 1;
  const auto g = build_threshold_graph(EmbeddingMatrix::from_matrix(x), 1.0);
  CHECK(g.graph.edges == std::vector<std::pair<Index, Index>>{{0, 1}});
  CHECK(g.adjacency.diagonal() == Eigen::VectorXd::Ones(4));
  CHECK_THROWS_AS(build_threshold_graph(emb, 1.5), InputError);
}

TEST_CASE("adjacency invariants") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto emb = EmbeddingMatrix::from_matrix(rng.normal_matrix(8, 3));
    for (const auto& g : {build_knn_graph(emb, t % 7), build_threshold_graph(emb, rng.uniform(-1, 1))}) {
      CHECK(g.adjacency == g.adjacency.transpose());
      CHECK(g.adjacency.diagonal() == Eigen::VectorXd::Ones(8));
      CHECK(((g.adjacency.array() == 0.0) || (g.adjacency.array() == 1.0)).all());
      CHECK(Graph::from_adjacency(g.adjacency) == g.graph);
    }
  }
}

TEST_CASE("nesting and scale invariance") {
  Rng rng(4);
  const auto emb = EmbeddingMatrix::from_matrix(rng.normal_matrix(10, 3));
  CHECK(is_subset(build_knn_graph(emb, 2).graph, build_knn_graph(emb, 4).graph));
  CHECK(is_subset(build_threshold_graph(emb, 0.5).graph, build_threshold_graph(emb, 0.1).graph));

  Matrix scaled = emb.x;
  for (Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= rng.uniform(0.01, 100.0);
  const auto emb2 = EmbeddingMatrix::from_matrix(scaled);
  CHECK(build_knn_graph(emb, 3).graph == build_knn_graph(emb2, 3).graph);
  CHECK(build_threshold_graph(emb, 0.3).graph == build_threshold_graph(emb2, 0.3).graph);
}

TEST_CASE("separated clusters are homophilous at tau 0.95") {
  Rng rng(5);
  // Four cluster directions at least 45 degrees apart in 3-D.
  Matrix centers(4, 3);
  centers << 1, 0, 0, 0, 1, 0, 0, 0, 1, -1, 0, 0;
  Matrix x(20, 3);
  std::vector<int> labels(20);
  for (Index i = 0; i < 20; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(i % 4);
    x.row(i) = centers.row(i % 4) + 0.05 * rng.normal_matrix(1, 3);
  }
  const auto g = build_threshold_graph(EmbeddingMatrix::from_matrix(x), 0.95);
  const auto d = graph_diagnostics(g.graph, labels);
  REQUIRE(d.homophily.has_value());
  CHECK(*d.homophily >= 0.95);
}

TEST_CASE("diagnostics") {
  const auto empty = graph_diagnostics(Graph::from_edges(5, {}));
  CHECK(empty.edges == 0);
  CHECK(empty.components == 5);
  CHECK_FALSE(empty.homophily.has_value());

  const auto complete = graph_diagnostics(Graph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}));
  CHECK(complete.density == 1.0);
  CHECK(complete.components == 1);
  CHECK(complete.mean_degree == 3.0);

  const Graph cliques = Graph::from_edges(
      6, {{0, 1}, {0, 2}, {1, 2}, {3, 4}, {3, 5}, {4, 5}, {2, 3}});
  const std::vector<int> labels = {0, 0, 0, 1, 1, 1};
  CHECK(*graph_diagnostics(cliques, labels).homophily == doctest::Approx(6.0 / 7.0));
  const std::vector<int> wrong = {0, 1};
  CHECK_THROWS_AS(graph_diagnostics(cliques, wrong), InputError);
}

TEST_CASE("csv and edge list round trips") {
  const auto dir = temp_dir("io");
  Rng rng(6);
  const auto emb = EmbeddingMatrix::from_matrix(rng.normal_matrix(5, 3));
  write_embeddings_csv(dir / "emb.csv", emb);
  const auto back = read_embeddings_csv(dir / "emb.csv");
  CHECK(back.x == emb.x);
  CHECK(back.client_ids == emb.client_ids);
  {
    std::ifstream in(dir / "emb.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "client_id,e0,e1,e2");
  }

  const auto g = build_knn_graph(emb, 2);
  write_edge_list(dir / "edges.txt", g.graph, g.recipe);
  CHECK(read_edge_list(dir / "edges.txt", 5) == g.graph);
  write_adjacency_csv(dir / "adj.csv", g.adjacency);
  CHECK(std::filesystem::file_size(dir / "adj.csv") > 0);

  {
    std::ofstream out(dir / "bad.csv");
    out << "client_id,e0,e1\n0,1.0,2.0\n1,oops,3.0\n";
  }
  try {
    read_embeddings_csv(dir / "bad.csv");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("recipe text") {
  CHECK(GraphRecipe::knn(3).describe() == "knn k=3");
  CHECK(GraphRecipe::parse("cosine tau=0.9").tau == 0.9);
  CHECK(GraphRecipe::parse(GraphRecipe::knn(7).describe()).k == 7);
  CHECK_THROWS_AS(GraphRecipe::parse("spectral"), InputError);
}

}  // TEST_SUITE
