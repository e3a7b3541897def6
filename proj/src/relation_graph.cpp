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

#include "shnfed/relation_graph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "shnfed/csv.hpp"

namespace shnfed {

EmbeddingMatrix EmbeddingMatrix::from_matrix(Matrix x) {
  EmbeddingMatrix e;
  e.client_ids.reserve(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) e.client_ids.push_back(std::to_string(i));
  e.x = std::move(x);
  return e;
}

void EmbeddingMatrix::validate() const {
  if (static_cast<Index>(client_ids.size()) != x.rows()) {
    throw InputError("embeddings: " + std::to_string(client_ids.size()) +
                     " ids for " + std::to_string(x.rows()) + " rows");
  }
  for (Index i = 0; i < x.rows(); ++i) {
    if (!x.row(i).allFinite()) {
      throw InputError("embeddings: non-finite row for client " +
                       client_ids[static_cast<std::size_t>(i)]);
    }
    if (!(x.row(i).norm() > 0.0)) {
      throw InputError("embeddings: zero-norm row for client " +
                       client_ids[static_cast<std::size_t>(i)]);
    }
  }
}

Matrix cosine_similarity_matrix(const EmbeddingMatrix& embeddings) {
  embeddings.validate();
  const Index n = embeddings.n();
  Matrix s(n, n);
  for (Index u = 0; u < n; ++u) {
    s(u, u) = 1.0;
    for (Index v = u + 1; v < n; ++v) {
      s(u, v) = cosine_similarity(embeddings.x.row(u), embeddings.x.row(v));
      s(v, u) = s(u, v);
    }
  }
  return s;
}

std::string GraphRecipe::describe() const {
  if (method == GraphMethod::kKnn) return "knn k=" + std::to_string(k);
  return "cosine tau=" + format_double(tau);
}

GraphRecipe GraphRecipe::parse(const std::string& text) {
  std::istringstream is(text);
  std::string method, param;
  is >> method >> param;
  const auto eq = param.find('=');
  if (eq == std::string::npos) throw InputError("graph recipe: '" + text + "'");
  const std::string value = param.substr(eq + 1);
  if (method == "knn") {
    long long k = 0;
    if (!parse_long(value, k)) throw InputError("graph recipe: '" + text + "'");
    return knn(k);
  }
  if (method == "cosine") {
    double tau = 0.0;
    if (!parse_double(value, tau)) throw InputError("graph recipe: '" + text + "'");
    return cosine(tau);
  }
  throw InputError("graph recipe: unknown method in '" + text + "'");
}

Matrix adjacency_with_self_loops(const Graph& graph) {
  Matrix a = graph.adjacency();
  a.diagonal().setOnes();
  return a;
}

namespace {

ClientRelationGraph finish(const EmbeddingMatrix& embeddings, Graph graph,
                           GraphRecipe recipe) {
  ClientRelationGraph out;
  out.adjacency = adjacency_with_self_loops(graph);
  out.graph = std::move(graph);
  out.embeddings = embeddings;
  out.recipe = recipe;
  return out;
}

}  // namespace

ClientRelationGraph build_knn_graph(const EmbeddingMatrix& embeddings, Index k) {
  const Index n = embeddings.n();
  if (k < 0 || (n > 0 && k >= n) || (n == 0 && k > 0)) {
    throw InputError("build_knn_graph: k=" + std::to_string(k) +
                     " must satisfy 0 <= k < n=" + std::to_string(n));
  }
  const Matrix s = cosine_similarity_matrix(embeddings);
  std::vector<std::pair<Index, Index>> edges;
  std::vector<Index> candidates;
  for (Index u = 0; u < n; ++u) {
    candidates.clear();
    for (Index v = 0; v < n; ++v) {
      if (v != u) candidates.push_back(v);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + k,
                      candidates.end(), [&](Index a, Index b) {
                        if (s(u, a) != s(u, b)) return s(u, a) > s(u, b);
                        return a < b;
                      });
    for (Index i = 0; i < k; ++i) {
      edges.emplace_back(u, candidates[static_cast<std::size_t>(i)]);
    }
  }
  return finish(embeddings, Graph::from_edges(n, std::move(edges)),
                GraphRecipe::knn(k));
}

ClientRelationGraph build_threshold_graph(const EmbeddingMatrix& embeddings,
                                          double tau) {
  if (!(tau >= -1.0 && tau <= 1.0)) {
    throw InputError("build_threshold_graph: tau=" + format_double(tau) +
                     " outside [-1, 1]");
  }
  const Matrix s = cosine_similarity_matrix(embeddings);
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < s.rows(); ++u) {
    for (Index v = u + 1; v < s.cols(); ++v) {
      if (s(u, v) >= tau - kCosineSlack) edges.emplace_back(u, v);
    }
  }
  return finish(embeddings, Graph::from_edges(s.rows(), std::move(edges)),
                GraphRecipe::cosine(tau));
}

ClientRelationGraph build_relation_graph(const EmbeddingMatrix& embeddings,
                                         const GraphRecipe& recipe) {
  if (recipe.method == GraphMethod::kKnn) {
    return build_knn_graph(embeddings, recipe.k);
  }
  return build_threshold_graph(embeddings, recipe.tau);
}

std::string GraphDiagnostics::to_json() const {
  nlohmann::ordered_json j;
  j["nodes"] = nodes;
  j["edges"] = edges;
  j["density"] = density;
  j["components"] = components;
  j["mean_degree"] = mean_degree;
  if (homophily) {
    j["homophily"] = *homophily;
  } else {
    j["homophily"] = nullptr;
  }
  return j.dump(2) + "\n";
}

GraphDiagnostics graph_diagnostics(const Graph& graph,
                                   std::span<const int> labels) {
  if (!labels.empty() && static_cast<Index>(labels.size()) != graph.n) {
    throw InputError("graph_diagnostics: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(graph.n) + " nodes");
  }
  GraphDiagnostics d;
  d.nodes = graph.n;
  d.edges = graph.num_edges();
  const double pairs = 0.5 * static_cast<double>(graph.n) *
                       static_cast<double>(graph.n - 1);
  d.density = pairs > 0.0 ? static_cast<double>(d.edges) / pairs : 0.0;
  d.components = graph.connected_components();
  d.mean_degree = graph.n > 0 ? 2.0 * static_cast<double>(d.edges) /
                                    static_cast<double>(graph.n)
                              : 0.0;
  if (!labels.empty() && d.edges > 0) {
    Index intra = 0;
    for (const auto& [u, v] : graph.edges) {
      if (labels[static_cast<std::size_t>(u)] ==
          labels[static_cast<std::size_t>(v)]) {
        ++intra;
      }
    }
    d.homophily = static_cast<double>(intra) / static_cast<double>(d.edges);
  }
  return d;
}

EmbeddingMatrix read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embeddings file " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw InputError(path.string() + ": empty embeddings file");
  }
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "client_id") {
    throw InputError(path.string() +
                     ":1: header must be client_id,e0,...,e{f-1}");
  }
  const std::size_t f = header.size() - 1;
  std::vector<std::vector<double>> rows;
  EmbeddingMatrix e;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != f + 1) {
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": expected " + std::to_string(f + 1) + " fields, got " +
                       std::to_string(cells.size()));
    }
    std::vector<double> row(f);
    for (std::size_t i = 0; i < f; ++i) {
      if (!parse_double(cells[i + 1], row[i])) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": bad number '" + cells[i + 1] + "'");
      }
    }
    e.client_ids.push_back(cells[0]);
    rows.push_back(std::move(row));
  }
  e.x.resize(static_cast<Index>(rows.size()), static_cast<Index>(f));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      e.x(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
  }
  e.validate();
  return e;
}

void write_embeddings_csv(const std::filesystem::path& path,
                          const EmbeddingMatrix& embeddings) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "client_id";
  for (Index j = 0; j < embeddings.f(); ++j) out << ",e" << j;
  out << "\n";
  for (Index i = 0; i < embeddings.n(); ++i) {
    out << embeddings.client_ids[static_cast<std::size_t>(i)];
    for (Index j = 0; j < embeddings.f(); ++j) {
      out << ',' << format_double(embeddings.x(i, j));
    }
    out << "\n";
  }
}

void write_edge_list(const std::filesystem::path& path, const Graph& graph,
                     const GraphRecipe& recipe) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "# " << recipe.describe() << " n=" << graph.n << "\n";
  for (const auto& [u, v] : graph.edges) out << u << ' ' << v << "\n";
}

Graph read_edge_list(const std::filesystem::path& path, std::optional<Index> n) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open edge list " + path.string());
  std::string line;
  std::vector<std::pair<Index, Index>> edges;
  Index max_node = -1;
  std::optional<Index> declared;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find(" n=");
      long long value = 0;
      if (pos != std::string::npos && parse_long(line.substr(pos + 3), value)) {
        declared = value;
      }
      continue;
    }
    std::istringstream is(line);
    long long u = 0, v = 0;
    std::string extra;
    if (!(is >> u >> v) || (is >> extra)) {
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 'u v'");
    }
    edges.emplace_back(u, v);
    max_node = std::max<Index>(max_node, std::max<Index>(u, v));
  }
  const Index nodes = n ? *n : (declared ? *declared : max_node + 1);
  return Graph::from_edges(nodes, std::move(edges));
}

void write_adjacency_csv(const std::filesystem::path& path,
                         const Matrix& adjacency) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (Index i = 0; i < adjacency.rows(); ++i) {
    for (Index j = 0; j < adjacency.cols(); ++j) {
      if (j) out << ',';
      out << static_cast<int>(adjacency(i, j));
    }
    out << "\n";
  }
}

std::vector<int> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open labels file " + path.string());
  std::string line;
  std::vector<int> labels;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (line_no == 1 && cells[0] == "client_id") continue;
    long long label = 0;
    if (cells.size() != 2 || !parse_long(cells[1], label)) {
      throw InputError(path.string() + ":" + std::to_string(line_no) +
                       ": expected client_id,label");
    }
    labels.push_back(static_cast<int>(label));
  }
  return labels;
}

}  // namespace shnfed
