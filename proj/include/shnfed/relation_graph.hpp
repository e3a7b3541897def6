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

// Client relation graphs built from learned client embeddings.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shnfed/sheaf.hpp"
#include "shnfed/tensor.hpp"

namespace shnfed {

/// One embedding row per client, in client-id order.
struct EmbeddingMatrix {
  Matrix x;
  std::vector<std::string> client_ids;

  static EmbeddingMatrix from_matrix(Matrix x);
  Index n() const { return x.rows(); }
  Index f() const { return x.cols(); }
  // Finite rows with non-zero norm, one id per row.
  void validate() const;
};

/// Cosine similarity clamped to [-1, 1]. Zero-norm inputs are an InputError.
template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& a,
                         const Eigen::MatrixBase<B>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw InputError("cosine_similarity: zero-norm vector");
  }
  const double s = a.dot(b) / (na * nb);
  return s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s);
}

Matrix cosine_similarity_matrix(const EmbeddingMatrix& embeddings);

enum class GraphMethod { kKnn, kCosine };

struct GraphRecipe {
  GraphMethod method = GraphMethod::kKnn;
  Index k = 3;
  double tau = 0.9;

  static GraphRecipe knn(Index k) { return {GraphMethod::kKnn, k, 0.0}; }
  static GraphRecipe cosine(double tau) { return {GraphMethod::kCosine, 0, tau}; }
  // "knn k=3" / "cosine tau=0.9"
  std::string describe() const;
  static GraphRecipe parse(const std::string& text);
};

/// Graph over clients plus the binary symmetric adjacency with unit
/// diagonal. Self-loops exist only in `adjacency`.
struct ClientRelationGraph {
  Graph graph;
  Matrix adjacency;
  EmbeddingMatrix embeddings;
  GraphRecipe recipe;
};

// Threshold comparisons accept S >= tau - this slack so exactly parallel
// embeddings still meet tau = 1 after rounding.
inline constexpr double kCosineSlack = 1e-12;

/// Each client links to its k most similar other clients (ties broken by
/// lower id); the edge set is the union over both endpoints.
ClientRelationGraph build_knn_graph(const EmbeddingMatrix& embeddings, Index k);

/// Edge (u, v) iff S_C(x_u, x_v) >= tau, u != v.
ClientRelationGraph build_threshold_graph(const EmbeddingMatrix& embeddings,
                                          double tau);

ClientRelationGraph build_relation_graph(const EmbeddingMatrix& embeddings,
                                         const GraphRecipe& recipe);

/// Graph with unit self-loops on the diagonal of its adjacency.
Matrix adjacency_with_self_loops(const Graph& graph);

struct GraphDiagnostics {
  Index nodes = 0;
  Index edges = 0;
  double density = 0.0;
  Index components = 0;
  double mean_degree = 0.0;
  // intra-label edges / off-diagonal edges; empty without labels or edges.
  std::optional<double> homophily;

  std::string to_json() const;
};

GraphDiagnostics graph_diagnostics(const Graph& graph,
                                   std::span<const int> labels = {});

// client_id,e0,...,e{f-1}
EmbeddingMatrix read_embeddings_csv(const std::filesystem::path& path);
void write_embeddings_csv(const std::filesystem::path& path,
                          const EmbeddingMatrix& embeddings);

// "# recipe" line then "u v" per edge. The node count is recorded in the
// comment so isolated trailing nodes survive a round trip.
void write_edge_list(const std::filesystem::path& path, const Graph& graph,
                     const GraphRecipe& recipe);
Graph read_edge_list(const std::filesystem::path& path,
                     std::optional<Index> n = std::nullopt);
void write_adjacency_csv(const std::filesystem::path& path,
                         const Matrix& adjacency);

// client_id,label
std::vector<int> read_labels_csv(const std::filesystem::path& path);

}  // namespace shnfed
