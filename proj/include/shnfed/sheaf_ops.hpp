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

// Differentiable sheaf building blocks for the sheaf-diffusion encoder.

#pragma once

#include <string>
#include <vector>

#include "shnfed/rng.hpp"
#include "shnfed/sheaf.hpp"
#include "shnfed/tensor.hpp"

namespace shnfed {

enum class RestrictionClass { kDiagonal, kOrthogonal, kGeneral };

RestrictionClass parse_restriction_class(const std::string& name);
std::string restriction_class_name(RestrictionClass c);

/// Product of Householder reflections I - 2 v v^T / |v|^2, one per row of
/// `params` (d x d). Rows with norm below 1e-12 are replaced by e_1.
Var householder_orthogonal(const Var& params);

/// Batched form: every row of `rows` (k x d*d) is one row-major parameter
/// matrix; the output row holds the row-major Q.
Var householder_rows(const Var& rows, Index d);

// k x d -> k x d*d with each row's entries on the diagonal.
Var diagonal_rows(const Var& rows, Index d);

/// Phi: a single affine layer plus tanh mapping the concatenated stalk
/// features of an incident pair to a restriction map.
struct RestrictionLearner {
  Index d = 1;
  Index channels = 1;
  RestrictionClass restriction = RestrictionClass::kOrthogonal;
  Var weight;  // (2 d channels) x output_width()
  Var bias;    // 1 x output_width()

  static RestrictionLearner create(Index d, Index channels,
                                   RestrictionClass restriction, Rng& rng);
  Index output_width() const {
    return restriction == RestrictionClass::kDiagonal ? d : d * d;
  }
  std::vector<Var> parameters() const { return {weight, bias}; }
};

/// F for the node owning `x_target` on the edge shared with `x_source`.
/// Both inputs are d x channels; the target's features come first.
Var learn_restrictions(const RestrictionLearner& phi, const Var& x_target,
                       const Var& x_source);

/// All 2|E| restriction maps for `stalks` ((n d) x channels), in the
/// CellularSheaf ordering. Output is (2|E|) x (d d), row-major maps.
Var restriction_maps(const RestrictionLearner& phi, const Graph& graph,
                     const Var& stalks);

/// Dense L_F from stacked maps (2|E| x d*d).
Var sheaf_laplacian(const Var& maps, const Graph& graph, Index d);

/// Block-diagonal D^{-1/2} built from the diagonal blocks of `laplacian`.
Var block_diag_inverse_sqrt(const Var& laplacian, Index d,
                            double floor = kDegreeFloor);

/// D^{-1/2} L_F D^{-1/2}.
Var normalized_sheaf_laplacian(const Var& maps, const Graph& graph, Index d);

/// (I_n kron W) X for X of shape (n d) x f and W of shape d x d.
Var block_left_multiply(const Var& w, const Var& x, Index d);

CellularSheaf<double> to_sheaf(const Matrix& maps, const Graph& graph, Index d);

/// One step X - sigma(Delta (I kron W1) X W2). Requires W2 square.
Var sheaf_diffusion_step(const Var& delta, const Var& x, const Var& w1,
                         const Var& w2, ad::Activation sigma);

struct SheafDiffusionLayer {
  RestrictionLearner phi;
  Var w1;  // d x d
  Var w2;  // channels x channels
  ad::Activation sigma = ad::Activation::kTanh;

  /// W2 is Glorot-initialized and multiplied by `w2_scale`.
  static SheafDiffusionLayer create(Index d, Index channels,
                                    RestrictionClass restriction,
                                    ad::Activation sigma, Rng& rng,
                                    double w2_scale = 1.0);
  std::vector<Var> parameters() const;
};

struct SheafLayerOutput {
  Var features;
  Var maps;   // restriction maps used by this layer
  Var delta;  // normalized sheaf Laplacian used by this layer
};

/// Rebuilds the sheaf from the current features, then diffuses once.
SheafLayerOutput sheaf_diffusion_layer(const SheafDiffusionLayer& layer,
                                       const Graph& graph, const Var& x);

}  // namespace shnfed
