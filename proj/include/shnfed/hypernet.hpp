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

// Hypernetwork variants: HN (no encoder), GHN (graph-convolution encoder) and
// SHN (sheaf-diffusion encoder). All share a client embedding net and a
// head that emits one client's target-model parameters from one row of the
// encoder output.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shnfed/rng.hpp"
#include "shnfed/sheaf_ops.hpp"
#include "shnfed/tensor.hpp"

namespace shnfed {

struct LayerShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

/// Parameter layout of the client model. Flattened parameters are the
/// row-major layers concatenated in order.
struct TargetSpec {
  std::vector<LayerShape> layers;
  std::vector<Index> widths;  // MLP widths, input first

  /// Fully connected tanh MLP; weights are (in x out), biases (1 x out).
  /// widths {8, 32, 2} gives 354 parameters.
  static TargetSpec mlp(std::vector<Index> widths);

  Index total() const;
  Index input_dim() const { return widths.front(); }
  Index output_dim() const { return widths.back(); }

  Matrix initialize(Rng& rng) const;  // 1 x total, Glorot weights, zero bias
  std::vector<Matrix> unflatten(const Matrix& flat) const;
  Matrix flatten(std::span<const Matrix> layers) const;
};

/// Client model forward pass with parameters held as graph leaves (or any
/// vars) in TargetSpec order.
Var target_forward(const TargetSpec& spec, std::span<const Var> params,
                   const Var& inputs);

struct Dense {
  Var weight;  // in x out
  Var bias;    // 1 x out

  static Dense create(Index in, Index out, Rng& rng);
  Var operator()(const Var& x) const;
};

struct Mlp {
  std::vector<Dense> layers;
  ad::Activation hidden_activation = ad::Activation::kRelu;

  static Mlp create(std::span<const Index> widths, ad::Activation hidden,
                    Rng& rng);
  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;
};

/// psi_E: one-hot client id -> hidden (tanh) -> embedding.
struct EmbeddingNet {
  Index num_clients = 0;
  Mlp mlp;

  static EmbeddingNet create(Index num_clients, Index hidden, Index dim,
                             Rng& rng);
  Index dim() const { return mlp.layers.back().weight.cols(); }
  Var embed_all() const;  // |M| x dim
  Var embed(std::span<const Index> clients) const;
};

/// psi_H: one MLP per target layer, each mapping a representation row to
/// that layer's flattened parameters.
struct HyperHead {
  TargetSpec spec;
  std::vector<Mlp> per_layer;

  static HyperHead create(Index input_dim, Index hidden, const TargetSpec& spec,
                          ad::Activation hidden_activation, Rng& rng);
  Index input_dim() const { return per_layer.front().layers.front().weight.rows(); }
  /// k x input_dim -> k x spec.total()
  Var operator()(const Var& z) const;
  std::vector<Var> parameters() const;
};

enum class Variant { kHn, kGhn, kShn };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

/// H' = sigma(A_hat H W), A_hat = D^{-1/2} A D^{-1/2} with A including its
/// unit diagonal.
Matrix normalized_adjacency(const Matrix& adjacency_with_loops);
Var gcn_layer(const Matrix& normalized_adjacency, const Var& h, const Var& w,
              ad::Activation sigma);

struct ModelConfig {
  Variant variant = Variant::kShn;
  Index num_clients = 20;
  Index embedding_dim = 16;
  Index embedding_hidden = 32;
  Index encoder_hidden = 32;
  Index head_hidden = 64;
  Index layers = 2;
  Index stalk_dim = 2;
  RestrictionClass restriction = RestrictionClass::kOrthogonal;
  ad::Activation encoder_activation = ad::Activation::kTanh;
  ad::Activation head_activation = ad::Activation::kRelu;
};

/// Per-depth encoder states, for over-smoothing diagnostics.
struct EncoderTrace {
  std::vector<Matrix> features;  // depth 0 (after projection) .. L
  std::vector<Matrix> maps;      // SHN only, per layer
};

class HyperModel {
 public:
  static HyperModel create(const ModelConfig& config, const TargetSpec& spec,
                           Rng& rng);

  const ModelConfig& config() const { return config_; }
  const TargetSpec& spec() const { return head_.spec; }

  /// Stage-3 mode: X is given and psi_E is not used or trained.
  void set_fixed_embeddings(Matrix x);
  bool has_fixed_embeddings() const { return fixed_embeddings_.has_value(); }
  void set_graph(const Graph& graph);
  const Graph& graph() const { return graph_; }
  bool has_graph() const { return has_graph_; }

  Var embeddings() const;
  /// Encoder output, one row per client.
  Var encode(const Var& x, EncoderTrace* trace = nullptr) const;
  /// theta for `clients`, one row each.
  Var generate(const Var& z, std::span<const Index> clients) const;
  Var generate_for(std::span<const Index> clients) const;
  Matrix generate_all() const;

  Index head_input_dim() const;
  std::vector<Var> parameters() const;
  std::vector<std::pair<std::string, Var>> named_parameters() const;

  // Components, exposed for tests and diagnostics.
  EmbeddingNet& embedding_net() { return embedding_; }
  HyperHead& head() { return head_; }
  const HyperHead& head() const { return head_; }
  std::vector<Var>& gcn_weights() { return gcn_weights_; }
  Dense& projection() { return projection_; }
  std::vector<SheafDiffusionLayer>& sheaf_layers() { return sheaf_layers_; }

 private:
  ModelConfig config_;
  EmbeddingNet embedding_;
  HyperHead head_;
  std::optional<Matrix> fixed_embeddings_;
  Graph graph_;
  bool has_graph_ = false;
  Matrix normalized_adjacency_;
  std::vector<Var> gcn_weights_;
  Dense projection_;
  std::vector<SheafDiffusionLayer> sheaf_layers_;
};

}  // namespace shnfed
