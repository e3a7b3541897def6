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

// Oracles shared by the unit and acceptance tests: central finite
// differences, random graphs and sheaves.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "shnfed/rng.hpp"
#include "shnfed/sheaf.hpp"
#include "shnfed/tensor.hpp"

namespace shnfed::testing {

inline double rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Central differences of `f` with respect to every entry of `x`.
inline Matrix numeric_gradient(const std::function<double()>& f, Matrix& x,
                               double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest per-parameter relative error between backward() and central
/// differences. `loss` must rebuild the graph from the current values.
inline double gradient_check(std::vector<Var> params,
                             const std::function<Var()>& loss,
                             double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  ad::backward(loss());
  double worst = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p.grad();
    const Matrix numeric = numeric_gradient(
        [&] {
          ad::NoGradGuard guard;
          return loss().scalar();
        },
        p.mutable_value(), h);
    worst = std::max(worst, rel_error(analytic, numeric));
  }
  return worst;
}

inline Graph random_graph(Index n, double p, Rng& rng) {
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n; ++u) {
    for (Index v = u + 1; v < n; ++v) {
      if (rng.uniform() < p) edges.emplace_back(u, v);
    }
  }
  return Graph::from_edges(n, edges);
}

// Random path plus extra edges, so the graph is connected.
inline Graph random_connected_graph(Index n, double p, Rng& rng) {
  std::vector<std::pair<Index, Index>> edges;
  for (Index v = 1; v < n; ++v) edges.emplace_back(static_cast<Index>(rng.below(v)), v);
  for (Index u = 0; u < n; ++u) {
    for (Index v = u + 1; v < n; ++v) {
      if (rng.uniform() < p) edges.emplace_back(u, v);
    }
  }
  return Graph::from_edges(n, edges);
}

inline CellularSheaf<double> random_sheaf(const Graph& g, Index d, Rng& rng) {
  CellularSheaf<double> s{g, d, {}};
  for (Index i = 0; i < 2 * g.num_edges(); ++i) s.maps.push_back(rng.normal_matrix(d, d));
  return s;
}

inline CellularSheaf<double> random_orthogonal_sheaf(const Graph& g, Index d, Rng& rng) {
  CellularSheaf<double> s{g, d, {}};
  for (Index i = 0; i < 2 * g.num_edges(); ++i) {
    Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(d, d));
    s.maps.push_back(qr.householderQ() * Matrix::Identity(d, d));
  }
  return s;
}

}  // namespace shnfed::testing
