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

// Cellular sheaves on undirected graphs: coboundary, sheaf Laplacian and its
// block-normalized form, and Dirichlet energies. Everything here is plain
// numerics templated on the scalar type; the differentiable versions used
// during training live in sheaf_ops.hpp.

#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "shnfed/tensor.hpp"

namespace shnfed {

/// Simple undirected graph. Edges are stored once as (u, v) with u < v,
/// sorted and unique. Self-loops are not edges.
struct Graph {
  Index n = 0;
  std::vector<std::pair<Index, Index>> edges;

  static Graph from_edges(Index n, std::vector<std::pair<Index, Index>> edges);
  // Off-diagonal support of a square 0/1 matrix; the diagonal is ignored.
  static Graph from_adjacency(const Matrix& adjacency);

  Index num_edges() const { return static_cast<Index>(edges.size()); }
  std::vector<Index> degrees() const;
  // n x n, zero diagonal.
  Matrix adjacency() const;
  std::vector<std::vector<Index>> neighbors() const;
  Index connected_components() const;
  bool operator==(const Graph&) const = default;
};

/// Default eigenvalue floor for D_v before the inverse square root.
inline constexpr double kDegreeFloor = 1e-6;

/// A sheaf with every node and edge stalk equal to R^d.
/// For edge e = (u, v), u < v: maps[2e] is F_{u<e}, maps[2e+1] is F_{v<e}.
template <typename Scalar>
struct CellularSheaf {
  Graph graph;
  Index d = 1;
  std::vector<DenseMatrix<Scalar>> maps;

  const DenseMatrix<Scalar>& tail_map(Index e) const { return maps[2 * e]; }
  const DenseMatrix<Scalar>& head_map(Index e) const { return maps[2 * e + 1]; }

  void validate() const {
    if (d < 1) throw ShapeError("sheaf: stalk dimension must be >= 1");
    if (static_cast<Index>(maps.size()) != 2 * graph.num_edges()) {
      throw ShapeError("sheaf: expected " +
                       std::to_string(2 * graph.num_edges()) +
                       " restriction maps, got " + std::to_string(maps.size()));
    }
    for (const auto& f : maps) {
      if (f.rows() != d || f.cols() != d) {
        throw ShapeError("sheaf: restriction map " +
                         shape_string(f.rows(), f.cols()) + " for d=" +
                         std::to_string(d));
      }
    }
  }
};

template <typename Scalar = double>
CellularSheaf<Scalar> identity_sheaf(const Graph& graph, Index d) {
  CellularSheaf<Scalar> s{graph, d, {}};
  s.maps.assign(2 * graph.edges.size(), DenseMatrix<Scalar>::Identity(d, d));
  return s;
}

/// Explicit (|E| d) x (n d) coboundary with orientation u -> v for u < v.
template <typename Scalar>
DenseMatrix<Scalar> coboundary_matrix(const CellularSheaf<Scalar>& sheaf) {
  sheaf.validate();
  const Index d = sheaf.d;
  DenseMatrix<Scalar> delta =
      DenseMatrix<Scalar>::Zero(sheaf.graph.num_edges() * d, sheaf.graph.n * d);
  for (Index e = 0; e < sheaf.graph.num_edges(); ++e) {
    const auto [u, v] = sheaf.graph.edges[static_cast<std::size_t>(e)];
    delta.block(e * d, v * d, d, d) = sheaf.head_map(e);
    delta.block(e * d, u * d, d, d) = -sheaf.tail_map(e);
  }
  return delta;
}

/// (delta x)_e = F_{v<e} x_v - F_{u<e} x_u, computed edge by edge.
/// `x` is a 0-cochain: (n d) x f, node-major blocks of d rows.
template <typename Scalar, typename Derived>
DenseMatrix<Scalar> coboundary_apply(const CellularSheaf<Scalar>& sheaf,
                                     const Eigen::MatrixBase<Derived>& x) {
  sheaf.validate();
  const Index d = sheaf.d;
  if (x.rows() != sheaf.graph.n * d) {
    throw ShapeError("coboundary_apply: cochain " +
                     shape_string(x.rows(), x.cols()) + " for n=" +
                     std::to_string(sheaf.graph.n) + ", d=" + std::to_string(d));
  }
  DenseMatrix<Scalar> out(sheaf.graph.num_edges() * d, x.cols());
  for (Index e = 0; e < sheaf.graph.num_edges(); ++e) {
    const auto [u, v] = sheaf.graph.edges[static_cast<std::size_t>(e)];
    out.middleRows(e * d, d) = sheaf.head_map(e) * x.middleRows(v * d, d) -
                               sheaf.tail_map(e) * x.middleRows(u * d, d);
  }
  return out;
}

/// f(D) = max(lambda, floor)^(-1/2) applied through a symmetric
/// eigendecomposition. A zero block (isolated node) becomes floor^(-1/2) I.
template <typename Scalar, typename Derived>
DenseMatrix<Scalar> block_inverse_sqrt(const Eigen::MatrixBase<Derived>& block,
                                       Scalar floor = Scalar(kDegreeFloor)) {
  using std::max;
  using std::sqrt;
  const DenseMatrix<Scalar> dense = block;
  Eigen::SelfAdjointEigenSolver<DenseMatrix<Scalar>> eig(dense);
  auto lambda = eig.eigenvalues();
  for (Index i = 0; i < lambda.size(); ++i) {
    lambda(i) = Scalar(1) / sqrt(max(lambda(i), floor));
  }
  return eig.eigenvectors() * lambda.asDiagonal() *
         eig.eigenvectors().transpose();
}

template <typename Scalar>
struct SheafLaplacian {
  Index n = 0;
  Index d = 1;
  DenseMatrix<Scalar> laplacian;           // L_F = delta^T delta
  std::vector<DenseMatrix<Scalar>> degree;  // diagonal blocks D_v of L_F
  std::vector<DenseMatrix<Scalar>> degree_inv_sqrt;
  DenseMatrix<Scalar> normalized;           // D^{-1/2} L_F D^{-1/2}
};

/// Block assembly of L_F plus its normalization. Diagonal blocks are
/// sum F^T F over incident edges, off-diagonal blocks -F_v^T F_u.
template <typename Scalar>
SheafLaplacian<Scalar> build_sheaf_laplacian(
    const CellularSheaf<Scalar>& sheaf, Scalar floor = Scalar(kDegreeFloor)) {
  sheaf.validate();
  const Index d = sheaf.d;
  const Index n = sheaf.graph.n;
  SheafLaplacian<Scalar> out;
  out.n = n;
  out.d = d;
  out.laplacian = DenseMatrix<Scalar>::Zero(n * d, n * d);
  auto& L = out.laplacian;
  for (Index e = 0; e < sheaf.graph.num_edges(); ++e) {
    const auto [u, v] = sheaf.graph.edges[static_cast<std::size_t>(e)];
    const auto& fu = sheaf.tail_map(e);
    const auto& fv = sheaf.head_map(e);
    L.block(u * d, u * d, d, d) += fu.transpose() * fu;
    L.block(v * d, v * d, d, d) += fv.transpose() * fv;
    L.block(u * d, v * d, d, d) -= fu.transpose() * fv;
    L.block(v * d, u * d, d, d) -= fv.transpose() * fu;
  }
  DenseMatrix<Scalar> dis = DenseMatrix<Scalar>::Zero(n * d, n * d);
  for (Index v = 0; v < n; ++v) {
    out.degree.push_back(L.block(v * d, v * d, d, d));
    out.degree_inv_sqrt.push_back(block_inverse_sqrt(out.degree.back(), floor));
    dis.block(v * d, v * d, d, d) = out.degree_inv_sqrt.back();
  }
  out.normalized = dis * L * dis;
  return out;
}

/// Augmented-degree graph Dirichlet energy
///   1/2 sum_{(u,v) ordered} w_uv || x_u / sqrt(1 + d_u) - x_v / sqrt(1 + d_v) ||^2
/// which equals tr(X^T (I - D~^{-1/2} (A + I) D~^{-1/2}) X). Degrees are
/// weighted degrees. `weights` is per edge; empty means all ones.
template <typename Derived>
typename Derived::Scalar graph_dirichlet_energy(
    const Graph& graph, const Eigen::MatrixBase<Derived>& x,
    const std::vector<double>& weights = {}) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != graph.n) {
    throw ShapeError("graph_dirichlet_energy: signal " +
                     shape_string(x.rows(), x.cols()) + " for n=" +
                     std::to_string(graph.n));
  }
  if (!weights.empty() && weights.size() != graph.edges.size()) {
    throw ShapeError("graph_dirichlet_energy: weight count mismatch");
  }
  std::vector<double> deg(static_cast<std::size_t>(graph.n), 0.0);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const double w = weights.empty() ? 1.0 : weights[e];
    if (w < 0.0) throw std::invalid_argument("negative edge weight");
    deg[static_cast<std::size_t>(graph.edges[e].first)] += w;
    deg[static_cast<std::size_t>(graph.edges[e].second)] += w;
  }
  Scalar energy(0);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto [u, v] = graph.edges[e];
    const double w = weights.empty() ? 1.0 : weights[e];
    const auto diff =
        (x.row(u) / std::sqrt(1.0 + deg[static_cast<std::size_t>(u)]) -
         x.row(v) / std::sqrt(1.0 + deg[static_cast<std::size_t>(v)]))
            .eval();
    // Both orientations of the edge, times 1/2.
    energy += Scalar(w) * diff.squaredNorm();
  }
  return energy;
}

/// Sheaf Dirichlet energy
///   1/2 sum_{(u,v) ordered} || F_{u<e} D_u^{-1/2} x_u - F_{v<e} D_v^{-1/2} x_v ||^2
/// which equals tr(x^T Delta_F x).
template <typename Scalar, typename Derived>
Scalar sheaf_dirichlet_energy(const CellularSheaf<Scalar>& sheaf,
                              const SheafLaplacian<Scalar>& lap,
                              const Eigen::MatrixBase<Derived>& x) {
  const Index d = sheaf.d;
  if (x.rows() != sheaf.graph.n * d) {
    throw ShapeError("sheaf_dirichlet_energy: cochain " +
                     shape_string(x.rows(), x.cols()) + " for n=" +
                     std::to_string(sheaf.graph.n) + ", d=" + std::to_string(d));
  }
  Scalar energy(0);
  for (Index e = 0; e < sheaf.graph.num_edges(); ++e) {
    const auto [u, v] = sheaf.graph.edges[static_cast<std::size_t>(e)];
    const DenseMatrix<Scalar> diff =
        sheaf.tail_map(e) * lap.degree_inv_sqrt[u] * x.middleRows(u * d, d) -
        sheaf.head_map(e) * lap.degree_inv_sqrt[v] * x.middleRows(v * d, d);
    energy += diff.squaredNorm();
  }
  return energy;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
template <typename Scalar>
Scalar power_iteration_lambda_max(const DenseMatrix<Scalar>& m,
                                  int iterations = 500) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Ones(m.rows());
  // Deterministic, non-symmetric start so we are unlikely to sit in a null
  // space.
  for (Index i = 0; i < v.size(); ++i) v(i) += Scalar(0.01) * Scalar(i % 7);
  Scalar lambda(0);
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w = m * v;
    const Scalar norm = w.norm();
    if (norm == Scalar(0)) return Scalar(0);
    lambda = v.dot(w) / v.squaredNorm();
    v = w / norm;
  }
  return lambda;
}

}  // namespace shnfed
