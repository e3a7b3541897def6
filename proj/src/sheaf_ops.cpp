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

#include "shnfed/sheaf_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace shnfed {

// ---------------------------------------------------------------------------
// Graph

Graph Graph::from_edges(Index n, std::vector<std::pair<Index, Index>> edges) {
  if (n < 0) throw std::invalid_argument("graph: negative node count");
  for (auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw std::invalid_argument("graph: edge (" + std::to_string(u) + ", " +
                                  std::to_string(v) + ") outside " +
                                  std::to_string(n) + " nodes");
    }
    if (u == v) {
      throw std::invalid_argument("graph: self-loop on node " +
                                  std::to_string(u));
    }
    if (u > v) std::swap(u, v);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return Graph{n, std::move(edges)};
}

Graph Graph::from_adjacency(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw ShapeError("graph: adjacency must be square, got " +
                     shape_string(adjacency));
  }
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < adjacency.rows(); ++u) {
    for (Index v = u + 1; v < adjacency.cols(); ++v) {
      if (adjacency(u, v) != 0.0 || adjacency(v, u) != 0.0) {
        edges.emplace_back(u, v);
      }
    }
  }
  return Graph{adjacency.rows(), std::move(edges)};
}

std::vector<Index> Graph::degrees() const {
  std::vector<Index> deg(static_cast<std::size_t>(n), 0);
  for (const auto& [u, v] : edges) {
    ++deg[static_cast<std::size_t>(u)];
    ++deg[static_cast<std::size_t>(v)];
  }
  return deg;
}

Matrix Graph::adjacency() const {
  Matrix a = Matrix::Zero(n, n);
  for (const auto& [u, v] : edges) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  return a;
}

std::vector<std::vector<Index>> Graph::neighbors() const {
  std::vector<std::vector<Index>> nb(static_cast<std::size_t>(n));
  for (const auto& [u, v] : edges) {
    nb[static_cast<std::size_t>(u)].push_back(v);
    nb[static_cast<std::size_t>(v)].push_back(u);
  }
  return nb;
}

Index Graph::connected_components() const {
  std::vector<Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Index{0});
  auto find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  Index components = n;
  for (const auto& [u, v] : edges) {
    const Index a = find(u);
    const Index b = find(v);
    if (a != b) {
      parent[static_cast<std::size_t>(a)] = b;
      --components;
    }
  }
  return components;
}

// ---------------------------------------------------------------------------
// Restriction maps

RestrictionClass parse_restriction_class(const std::string& name) {
  if (name == "diagonal") return RestrictionClass::kDiagonal;
  if (name == "orthogonal") return RestrictionClass::kOrthogonal;
  if (name == "general") return RestrictionClass::kGeneral;
  throw std::invalid_argument("unknown restriction class '" + name + "'");
}

std::string restriction_class_name(RestrictionClass c) {
  switch (c) {
    case RestrictionClass::kDiagonal: return "diagonal";
    case RestrictionClass::kOrthogonal: return "orthogonal";
    case RestrictionClass::kGeneral: return "general";
  }
  return "orthogonal";
}

namespace {

constexpr double kMinHouseholderNorm = 1e-12;

// Householder vectors of one parameter block; degenerate rows become e_1.
Matrix householder_vectors(const Matrix& params, std::vector<bool>& degenerate) {
  const Index d = params.rows();
  Matrix vs = params;
  degenerate.assign(static_cast<std::size_t>(d), false);
  for (Index i = 0; i < d; ++i) {
    if (vs.row(i).norm() < kMinHouseholderNorm) {
      vs.row(i).setZero();
      vs(i, 0) = 1.0;
      degenerate[static_cast<std::size_t>(i)] = true;
    }
  }
  return vs;
}

Matrix reflection(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const Index d = v.size();
  return Matrix::Identity(d, d) -
         (2.0 / v.squaredNorm()) * (v.transpose() * v);
}

Matrix householder_forward(const Matrix& params) {
  std::vector<bool> degenerate;
  const Matrix vs = householder_vectors(params, degenerate);
  const Index d = params.rows();
  Matrix q = Matrix::Identity(d, d);
  for (Index i = 0; i < d; ++i) q = q * reflection(vs.row(i));
  return q;
}

// Gradient with respect to the d x d parameter block given dL/dQ.
Matrix householder_backward(const Matrix& params, const Matrix& grad_q) {
  std::vector<bool> degenerate;
  const Matrix vs = householder_vectors(params, degenerate);
  const Index d = params.rows();
  std::vector<Matrix> h(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) h[static_cast<std::size_t>(i)] = reflection(vs.row(i));
  // prefix[i] = H_0 ... H_{i-1}, suffix[i] = H_{i+1} ... H_{d-1}
  std::vector<Matrix> prefix(static_cast<std::size_t>(d) + 1);
  std::vector<Matrix> suffix(static_cast<std::size_t>(d) + 1);
  prefix[0] = Matrix::Identity(d, d);
  for (Index i = 0; i < d; ++i) {
    prefix[static_cast<std::size_t>(i) + 1] =
        prefix[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
  }
  suffix[static_cast<std::size_t>(d)] = Matrix::Identity(d, d);
  for (Index i = d - 1; i >= 0; --i) {
    suffix[static_cast<std::size_t>(i)] =
        h[static_cast<std::size_t>(i)] * suffix[static_cast<std::size_t>(i) + 1];
  }
  Matrix grad = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    if (degenerate[static_cast<std::size_t>(i)]) continue;
    const Matrix gh = prefix[static_cast<std::size_t>(i)].transpose() * grad_q *
                      suffix[static_cast<std::size_t>(i) + 1].transpose();
    const Eigen::VectorXd v = vs.row(i).transpose();
    const double s = v.squaredNorm();
    const Eigen::VectorXd gv = -2.0 * (gh + gh.transpose()) * v / s +
                               4.0 * v.dot(gh * v) * v / (s * s);
    grad.row(i) = gv.transpose();
  }
  return grad;
}

}  // namespace

Var householder_orthogonal(const Var& params) {
  if (params.rows() != params.cols() || params.rows() < 1) {
    throw ShapeError("householder_orthogonal: expected square params, got " +
                     shape_string(params.value()));
  }
  return ad::make_op(householder_forward(params.value()), {params}, [](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    p.accumulate(householder_backward(p.value, self.grad));
  });
}

Var householder_rows(const Var& rows, Index d) {
  if (rows.cols() != d * d) {
    throw ShapeError("householder_rows: rows " + shape_string(rows.value()) +
                     " do not hold " + std::to_string(d) + "x" +
                     std::to_string(d) + " blocks");
  }
  Matrix out(rows.rows(), d * d);
  for (Index r = 0; r < rows.rows(); ++r) {
    const Matrix p = Eigen::Map<const Matrix>(rows.value().row(r).data(), d, d);
    const Matrix q = householder_forward(p);
    out.row(r) = Eigen::Map<const Eigen::RowVectorXd>(q.data(), d * d);
  }
  return ad::make_op(std::move(out), {rows}, [d](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    Matrix g(p.value.rows(), p.value.cols());
    for (Index r = 0; r < p.value.rows(); ++r) {
      const Matrix params = Eigen::Map<const Matrix>(p.value.row(r).data(), d, d);
      const Matrix gq = Eigen::Map<const Matrix>(self.grad.row(r).data(), d, d);
      const Matrix gp = householder_backward(params, gq);
      g.row(r) = Eigen::Map<const Eigen::RowVectorXd>(gp.data(), d * d);
    }
    p.accumulate(g);
  });
}

Var diagonal_rows(const Var& rows, Index d) {
  if (rows.cols() != d) {
    throw ShapeError("diagonal_rows: expected " + std::to_string(d) +
                     " columns, got " + shape_string(rows.value()));
  }
  Matrix out = Matrix::Zero(rows.rows(), d * d);
  for (Index r = 0; r < rows.rows(); ++r) {
    for (Index i = 0; i < d; ++i) out(r, i * d + i) = rows.value()(r, i);
  }
  return ad::make_op(std::move(out), {rows}, [d](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    Matrix g(p.value.rows(), d);
    for (Index r = 0; r < g.rows(); ++r) {
      for (Index i = 0; i < d; ++i) g(r, i) = self.grad(r, i * d + i);
    }
    p.accumulate(g);
  });
}

RestrictionLearner RestrictionLearner::create(Index d, Index channels,
                                              RestrictionClass restriction,
                                              Rng& rng) {
  RestrictionLearner phi;
  phi.d = d;
  phi.channels = channels;
  phi.restriction = restriction;
  phi.weight = ad::parameter(glorot_uniform(2 * d * channels, phi.output_width(), rng));
  phi.bias = ad::parameter(Matrix::Zero(1, phi.output_width()));
  return phi;
}

namespace {

Var maps_from_raw(const RestrictionLearner& phi, const Var& input) {
  Var raw = ad::tanh(ad::add_row(ad::matmul(input, phi.weight), phi.bias));
  switch (phi.restriction) {
    case RestrictionClass::kDiagonal: return diagonal_rows(raw, phi.d);
    case RestrictionClass::kOrthogonal: return householder_rows(raw, phi.d);
    case RestrictionClass::kGeneral: return raw;
  }
  return raw;
}

}  // namespace

Var learn_restrictions(const RestrictionLearner& phi, const Var& x_target,
                       const Var& x_source) {
  const Index width = phi.d * phi.channels;
  if (x_target.size() != width || x_source.size() != width) {
    throw ShapeError("learn_restrictions: stalk features " +
                     shape_string(x_target.value()) + " and " +
                     shape_string(x_source.value()) + " for d=" +
                     std::to_string(phi.d) + ", channels=" +
                     std::to_string(phi.channels));
  }
  const Var parts[] = {ad::reshape(x_target, 1, width),
                       ad::reshape(x_source, 1, width)};
  Var maps = maps_from_raw(phi, ad::concat_cols(parts));
  return ad::reshape(maps, phi.d, phi.d);
}

Var restriction_maps(const RestrictionLearner& phi, const Graph& graph,
                     const Var& stalks) {
  const Index d = phi.d;
  if (stalks.rows() != graph.n * d || stalks.cols() != phi.channels) {
    throw ShapeError("restriction_maps: stalks " + shape_string(stalks.value()) +
                     " for n=" + std::to_string(graph.n) + ", d=" +
                     std::to_string(d) + ", channels=" +
                     std::to_string(phi.channels));
  }
  std::vector<Index> targets;
  std::vector<Index> sources;
  targets.reserve(2 * graph.edges.size());
  sources.reserve(2 * graph.edges.size());
  for (const auto& [u, v] : graph.edges) {
    targets.push_back(u);
    sources.push_back(v);
    targets.push_back(v);
    sources.push_back(u);
  }
  Var per_node = ad::reshape(stalks, graph.n, d * phi.channels);
  const Var parts[] = {ad::gather_rows(per_node, targets),
                       ad::gather_rows(per_node, sources)};
  return maps_from_raw(phi, ad::concat_cols(parts));
}

// ---------------------------------------------------------------------------
// Laplacian

Var sheaf_laplacian(const Var& maps, const Graph& graph, Index d) {
  if (maps.rows() != 2 * graph.num_edges() || maps.cols() != d * d) {
    throw ShapeError("sheaf_laplacian: maps " + shape_string(maps.value()) +
                     " for " + std::to_string(graph.num_edges()) +
                     " edges, d=" + std::to_string(d));
  }
  const Matrix& m = maps.value();
  Matrix lap = Matrix::Zero(graph.n * d, graph.n * d);
  for (Index e = 0; e < graph.num_edges(); ++e) {
    const auto [u, v] = graph.edges[static_cast<std::size_t>(e)];
    const Eigen::Map<const Matrix> fu(m.row(2 * e).data(), d, d);
    const Eigen::Map<const Matrix> fv(m.row(2 * e + 1).data(), d, d);
    lap.block(u * d, u * d, d, d).noalias() += fu.transpose() * fu;
    lap.block(v * d, v * d, d, d).noalias() += fv.transpose() * fv;
    lap.block(u * d, v * d, d, d).noalias() -= fu.transpose() * fv;
    lap.block(v * d, u * d, d, d).noalias() -= fv.transpose() * fu;
  }
  return ad::make_op(std::move(lap), {maps}, [graph, d](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    const Matrix& m = p.value;
    const Matrix& g = self.grad;
    Matrix gm(m.rows(), m.cols());
    for (Index e = 0; e < graph.num_edges(); ++e) {
      const auto [u, v] = graph.edges[static_cast<std::size_t>(e)];
      const Eigen::Map<const Matrix> fu(m.row(2 * e).data(), d, d);
      const Eigen::Map<const Matrix> fv(m.row(2 * e + 1).data(), d, d);
      const auto guu = g.block(u * d, u * d, d, d);
      const auto gvv = g.block(v * d, v * d, d, d);
      const auto guv = g.block(u * d, v * d, d, d);
      const auto gvu = g.block(v * d, u * d, d, d);
      const Matrix dfu = fu * (guu + guu.transpose()) - fv * guv.transpose() -
                         fv * gvu;
      const Matrix dfv = fv * (gvv + gvv.transpose()) - fu * guv -
                         fu * gvu.transpose();
      gm.row(2 * e) = Eigen::Map<const Eigen::RowVectorXd>(dfu.data(), d * d);
      gm.row(2 * e + 1) = Eigen::Map<const Eigen::RowVectorXd>(dfv.data(), d * d);
    }
    p.accumulate(gm);
  });
}

Var block_diag_inverse_sqrt(const Var& laplacian, Index d, double floor) {
  const Index nd = laplacian.rows();
  if (laplacian.cols() != nd || nd % d != 0) {
    throw ShapeError("block_diag_inverse_sqrt: " +
                     shape_string(laplacian.value()) + " is not (n d)x(n d) for d=" +
                     std::to_string(d));
  }
  const Index n = nd / d;
  struct BlockEig {
    Matrix vectors;
    Eigen::VectorXd values;
  };
  std::vector<BlockEig> eigs(static_cast<std::size_t>(n));
  Matrix out = Matrix::Zero(nd, nd);
  for (Index v = 0; v < n; ++v) {
    const Matrix block = laplacian.value().block(v * d, v * d, d, d);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (block + block.transpose()));
    auto& be = eigs[static_cast<std::size_t>(v)];
    be.vectors = eig.eigenvectors();
    be.values = eig.eigenvalues();
    Eigen::VectorXd f(d);
    for (Index i = 0; i < d; ++i) f(i) = 1.0 / std::sqrt(std::max(be.values(i), floor));
    out.block(v * d, v * d, d, d) =
        be.vectors * f.asDiagonal() * be.vectors.transpose();
  }
  return ad::make_op(std::move(out), {laplacian},
                 [eigs = std::move(eigs), d, n, floor](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    auto fn = [floor](double x) { return 1.0 / std::sqrt(std::max(x, floor)); };
    auto dfn = [floor](double x) {
      return x > floor ? -0.5 / (x * std::sqrt(x)) : 0.0;
    };
    for (Index v = 0; v < n; ++v) {
      const auto& be = eigs[static_cast<std::size_t>(v)];
      const Matrix gb = self.grad.block(v * d, v * d, d, d);
      const Matrix gs = 0.5 * (gb + gb.transpose());
      Matrix inner = be.vectors.transpose() * gs * be.vectors;
      // Divided differences of f on the spectrum.
      for (Index i = 0; i < d; ++i) {
        for (Index j = 0; j < d; ++j) {
          const double li = be.values(i);
          const double lj = be.values(j);
          const double scale_ij = std::max({std::abs(li), std::abs(lj), 1.0});
          const double k = std::abs(li - lj) > 1e-10 * scale_ij
                               ? (fn(li) - fn(lj)) / (li - lj)
                               : dfn(0.5 * (li + lj));
          inner(i, j) *= k;
        }
      }
      g.block(v * d, v * d, d, d) =
          be.vectors * inner * be.vectors.transpose();
    }
    p.accumulate(g);
  });
}

Var normalized_sheaf_laplacian(const Var& maps, const Graph& graph, Index d) {
  Var lap = sheaf_laplacian(maps, graph, d);
  Var dis = block_diag_inverse_sqrt(lap, d);
  return ad::matmul(ad::matmul(dis, lap), dis);
}

Var block_left_multiply(const Var& w, const Var& x, Index d) {
  if (w.rows() != d || w.cols() != d || x.rows() % d != 0) {
    throw ShapeError("block_left_multiply: W " + shape_string(w.value()) +
                     " with X " + shape_string(x.value()) + " for d=" +
                     std::to_string(d));
  }
  const Index n = x.rows() / d;
  Matrix out(x.rows(), x.cols());
  for (Index v = 0; v < n; ++v) {
    out.middleRows(v * d, d).noalias() = w.value() * x.value().middleRows(v * d, d);
  }
  return ad::make_op(std::move(out), {w, x}, [n, d](ad::Node& self) {
    ad::Node& pw = *self.parents[0];
    ad::Node& px = *self.parents[1];
    if (pw.requires_grad) {
      Matrix gw = Matrix::Zero(d, d);
      for (Index v = 0; v < n; ++v) {
        gw.noalias() += self.grad.middleRows(v * d, d) *
                        px.value.middleRows(v * d, d).transpose();
      }
      pw.accumulate(gw);
    }
    if (px.requires_grad) {
      Matrix gx(px.value.rows(), px.value.cols());
      for (Index v = 0; v < n; ++v) {
        gx.middleRows(v * d, d).noalias() =
            pw.value.transpose() * self.grad.middleRows(v * d, d);
      }
      px.accumulate(gx);
    }
  });
}

CellularSheaf<double> to_sheaf(const Matrix& maps, const Graph& graph, Index d) {
  if (maps.rows() != 2 * graph.num_edges() || maps.cols() != d * d) {
    throw ShapeError("to_sheaf: maps " + shape_string(maps) + " for " +
                     std::to_string(graph.num_edges()) + " edges, d=" +
                     std::to_string(d));
  }
  CellularSheaf<double> s{graph, d, {}};
  s.maps.reserve(static_cast<std::size_t>(maps.rows()));
  for (Index r = 0; r < maps.rows(); ++r) {
    s.maps.emplace_back(Eigen::Map<const Matrix>(maps.row(r).data(), d, d));
  }
  return s;
}

Var sheaf_diffusion_step(const Var& delta, const Var& x, const Var& w1,
                         const Var& w2, ad::Activation sigma) {
  if (w2.rows() != w2.cols() || w2.rows() != x.cols()) {
    throw ShapeError("sheaf_diffusion_step: channel mismatch, W2 " +
                     shape_string(w2.value()) + " on features " +
                     shape_string(x.value()) + " (f_in must equal f_out)");
  }
  Var mixed = block_left_multiply(w1, x, w1.rows());
  Var update = ad::matmul(ad::matmul(delta, mixed), w2);
  return ad::sub(x, ad::activate(update, sigma));
}

SheafDiffusionLayer SheafDiffusionLayer::create(Index d, Index channels,
                                                RestrictionClass restriction,
                                                ad::Activation sigma, Rng& rng,
                                                double w2_scale) {
  SheafDiffusionLayer layer;
  layer.phi = RestrictionLearner::create(d, channels, restriction, rng);
  layer.w1 = ad::parameter(glorot_uniform(d, d, rng));
  layer.w2 = ad::parameter(w2_scale * glorot_uniform(channels, channels, rng));
  layer.sigma = sigma;
  return layer;
}

std::vector<Var> SheafDiffusionLayer::parameters() const {
  return {phi.weight, phi.bias, w1, w2};
}

SheafLayerOutput sheaf_diffusion_layer(const SheafDiffusionLayer& layer,
                                       const Graph& graph, const Var& x) {
  const Index d = layer.phi.d;
  Var maps = restriction_maps(layer.phi, graph, x);
  Var delta = normalized_sheaf_laplacian(maps, graph, d);
  Var next = sheaf_diffusion_step(delta, x, layer.w1, layer.w2, layer.sigma);
  return {next, maps, delta};
}

}  // namespace shnfed
