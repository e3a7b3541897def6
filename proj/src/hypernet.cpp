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

#include "shnfed/hypernet.hpp"

#include <cmath>

#include "shnfed/errors.hpp"

namespace shnfed {

TargetSpec TargetSpec::mlp(std::vector<Index> widths) {
  if (widths.size() < 2) throw InputError("TargetSpec::mlp: need >= 2 widths");
  TargetSpec spec;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] < 1 || widths[i + 1] < 1) {
      throw InputError("TargetSpec::mlp: widths must be positive");
    }
    spec.layers.push_back({"fc" + std::to_string(i) + ".weight", widths[i],
                           widths[i + 1]});
    spec.layers.push_back({"fc" + std::to_string(i) + ".bias", 1, widths[i + 1]});
  }
  spec.widths = std::move(widths);
  return spec;
}

Index TargetSpec::total() const {
  Index n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

Matrix TargetSpec::initialize(Rng& rng) const {
  std::vector<Matrix> parts;
  for (const auto& l : layers) {
    if (l.rows == 1) {
      parts.push_back(Matrix::Zero(1, l.cols));
    } else {
      parts.push_back(glorot_uniform(l.rows, l.cols, rng));
    }
  }
  return flatten(parts);
}

std::vector<Matrix> TargetSpec::unflatten(const Matrix& flat) const {
  if (flat.size() != total()) {
    throw ShapeError("TargetSpec::unflatten: got " + shape_string(flat) +
                     ", expected " + std::to_string(total()) + " entries");
  }
  std::vector<Matrix> out;
  Index offset = 0;
  for (const auto& l : layers) {
    Matrix m(l.rows, l.cols);
    std::copy(flat.data() + offset, flat.data() + offset + l.size(), m.data());
    offset += l.size();
    out.push_back(std::move(m));
  }
  return out;
}

Matrix TargetSpec::flatten(std::span<const Matrix> parts) const {
  if (parts.size() != layers.size()) {
    throw ShapeError("TargetSpec::flatten: layer count mismatch");
  }
  Matrix flat(1, total());
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].rows() != layers[i].rows || parts[i].cols() != layers[i].cols) {
      throw ShapeError("TargetSpec::flatten: layer " + layers[i].name + " is " +
                       shape_string(parts[i]) + ", expected " +
                       shape_string(layers[i].rows, layers[i].cols));
    }
    std::copy(parts[i].data(), parts[i].data() + parts[i].size(),
              flat.data() + offset);
    offset += parts[i].size();
  }
  return flat;
}

Var target_forward(const TargetSpec& spec, std::span<const Var> params,
                   const Var& inputs) {
  if (params.size() != spec.layers.size()) {
    throw ShapeError("target_forward: expected " +
                     std::to_string(spec.layers.size()) + " parameter blocks");
  }
  Var h = inputs;
  const std::size_t n_layers = params.size() / 2;
  for (std::size_t i = 0; i < n_layers; ++i) {
    h = ad::add_row(ad::matmul(h, params[2 * i]), params[2 * i + 1]);
    if (i + 1 < n_layers) h = ad::tanh(h);
  }
  return h;
}

Dense Dense::create(Index in, Index out, Rng& rng) {
  return {ad::parameter(glorot_uniform(in, out, rng)),
          ad::parameter(Matrix::Zero(1, out))};
}

Var Dense::operator()(const Var& x) const {
  return ad::add_row(ad::matmul(x, weight), bias);
}

Mlp Mlp::create(std::span<const Index> widths, ad::Activation hidden,
                Rng& rng) {
  Mlp m;
  m.hidden_activation = hidden;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    m.layers.push_back(Dense::create(widths[i], widths[i + 1], rng));
  }
  return m;
}

Var Mlp::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ad::activate(h, hidden_activation);
  }
  return h;
}

std::vector<Var> Mlp::parameters() const {
  std::vector<Var> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

EmbeddingNet EmbeddingNet::create(Index num_clients, Index hidden, Index dim,
                                  Rng& rng) {
  if (num_clients < 1) throw InputError("EmbeddingNet: need >= 1 client");
  EmbeddingNet net;
  net.num_clients = num_clients;
  const Index widths[] = {num_clients, hidden, dim};
  net.mlp = Mlp::create(widths, ad::Activation::kTanh, rng);
  return net;
}

Var EmbeddingNet::embed_all() const {
  return mlp(ad::constant(Matrix::Identity(num_clients, num_clients)));
}

Var EmbeddingNet::embed(std::span<const Index> clients) const {
  Matrix onehot = Matrix::Zero(static_cast<Index>(clients.size()), num_clients);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i] < 0 || clients[i] >= num_clients) {
      throw InputError("EmbeddingNet::embed: client id " +
                       std::to_string(clients[i]) + " out of range");
    }
    onehot(static_cast<Index>(i), clients[i]) = 1.0;
  }
  return mlp(ad::constant(std::move(onehot)));
}

HyperHead HyperHead::create(Index input_dim, Index hidden,
                            const TargetSpec& spec,
                            ad::Activation hidden_activation, Rng& rng) {
  HyperHead head;
  head.spec = spec;
  for (const auto& l : spec.layers) {
    const Index widths[] = {input_dim, hidden, l.size()};
    head.per_layer.push_back(Mlp::create(widths, hidden_activation, rng));
  }
  return head;
}

Var HyperHead::operator()(const Var& z) const {
  if (z.cols() != input_dim()) {
    throw ShapeError("HyperHead: input " + shape_string(z.value()) +
                     ", expected width " + std::to_string(input_dim()));
  }
  std::vector<Var> parts;
  parts.reserve(per_layer.size());
  for (const auto& m : per_layer) parts.push_back(m(z));
  return ad::concat_cols(parts);
}

std::vector<Var> HyperHead::parameters() const {
  std::vector<Var> out;
  for (const auto& m : per_layer) {
    auto p = m.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Variant parse_variant(const std::string& name) {
  if (name == "hn") return Variant::kHn;
  if (name == "ghn") return Variant::kGhn;
  if (name == "shn") return Variant::kShn;
  throw InputError("unknown variant '" + name + "' (expected hn|ghn|shn)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kHn: return "hn";
    case Variant::kGhn: return "ghn";
    case Variant::kShn: return "shn";
  }
  return "?";
}

Matrix normalized_adjacency(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw ShapeError("normalized_adjacency: " + shape_string(a) + " not square");
  }
  Eigen::VectorXd deg = a.rowwise().sum();
  for (Index i = 0; i < deg.size(); ++i) {
    if (!(deg(i) > 0.0)) {
      throw InputError("normalized_adjacency: row " + std::to_string(i) +
                       " has zero degree");
    }
    deg(i) = 1.0 / std::sqrt(deg(i));
  }
  return deg.asDiagonal() * a * deg.asDiagonal();
}

Var gcn_layer(const Matrix& a_hat, const Var& h, const Var& w,
              ad::Activation sigma) {
  if (a_hat.cols() != h.rows()) {
    throw ShapeError("gcn_layer: adjacency " + shape_string(a_hat) +
                     " vs features " + shape_string(h.value()));
  }
  return ad::activate(ad::matmul(ad::constant(a_hat), ad::matmul(h, w)), sigma);
}

HyperModel HyperModel::create(const ModelConfig& config, const TargetSpec& spec,
                              Rng& rng) {
  if (config.layers < 0 || config.stalk_dim < 1 || config.encoder_hidden < 1) {
    throw InputError("HyperModel: invalid encoder dimensions");
  }
  HyperModel m;
  m.config_ = config;
  m.embedding_ = EmbeddingNet::create(config.num_clients, config.embedding_hidden,
                                      config.embedding_dim, rng);
  const Index f = config.embedding_dim;
  const Index h = config.encoder_hidden;
  const Index d = config.stalk_dim;
  switch (config.variant) {
    case Variant::kHn:
      break;
    case Variant::kGhn:
      for (Index l = 0; l < config.layers; ++l) {
        m.gcn_weights_.push_back(
            ad::parameter(glorot_uniform(l == 0 ? f : h, h, rng)));
      }
      break;
    case Variant::kShn:
      m.projection_ = Dense::create(f, d * h, rng);
      // Residual updates add up over depth; 1/sqrt(L) keeps the untrained
      // stack's total perturbation independent of L.
      for (Index l = 0; l < config.layers; ++l) {
        m.sheaf_layers_.push_back(SheafDiffusionLayer::create(
            d, h, config.restriction, config.encoder_activation, rng,
            1.0 / std::sqrt(static_cast<double>(config.layers))));
      }
      break;
  }
  m.head_ = HyperHead::create(m.head_input_dim(), config.head_hidden, spec,
                              config.head_activation, rng);
  return m;
}

Index HyperModel::head_input_dim() const {
  switch (config_.variant) {
    case Variant::kHn: return config_.embedding_dim;
    case Variant::kGhn:
      return config_.layers == 0 ? config_.embedding_dim : config_.encoder_hidden;
    case Variant::kShn: return config_.stalk_dim * config_.encoder_hidden;
  }
  return 0;
}

void HyperModel::set_fixed_embeddings(Matrix x) {
  if (x.rows() != config_.num_clients || x.cols() != config_.embedding_dim) {
    throw ShapeError("set_fixed_embeddings: got " + shape_string(x) +
                     ", expected " +
                     shape_string(config_.num_clients, config_.embedding_dim));
  }
  fixed_embeddings_ = std::move(x);
}

void HyperModel::set_graph(const Graph& graph) {
  if (graph.n != config_.num_clients) {
    throw InputError("set_graph: graph has " + std::to_string(graph.n) +
                     " nodes, model has " + std::to_string(config_.num_clients) +
                     " clients");
  }
  graph_ = graph;
  has_graph_ = true;
  Matrix a = graph.adjacency();
  a.diagonal().setOnes();
  normalized_adjacency_ = normalized_adjacency(a);
}

Var HyperModel::embeddings() const {
  if (fixed_embeddings_) return ad::constant(*fixed_embeddings_);
  return embedding_.embed_all();
}

Var HyperModel::encode(const Var& x, EncoderTrace* trace) const {
  if (config_.variant != Variant::kHn && !has_graph_) {
    throw InputError("encode: variant " + variant_name(config_.variant) +
                     " needs a client graph");
  }
  if (x.rows() != config_.num_clients) {
    throw ShapeError("encode: embeddings " + shape_string(x.value()) +
                     " do not match " + std::to_string(config_.num_clients) +
                     " clients");
  }
  switch (config_.variant) {
    case Variant::kHn:
      if (trace) trace->features.push_back(x.value());
      return x;
    case Variant::kGhn: {
      Var h = x;
      if (trace) trace->features.push_back(h.value());
      for (const auto& w : gcn_weights_) {
        h = gcn_layer(normalized_adjacency_, h, w, config_.encoder_activation);
        if (trace) trace->features.push_back(h.value());
      }
      return h;
    }
    case Variant::kShn: {
      const Index n = config_.num_clients;
      const Index d = config_.stalk_dim;
      const Index ch = config_.encoder_hidden;
      Var stalks = ad::reshape(projection_(x), n * d, ch);
      if (trace) trace->features.push_back(stalks.value());
      for (const auto& layer : sheaf_layers_) {
        SheafLayerOutput out = sheaf_diffusion_layer(layer, graph_, stalks);
        stalks = out.features;
        if (trace) {
          trace->features.push_back(stalks.value());
          trace->maps.push_back(out.maps.value());
        }
      }
      return ad::reshape(stalks, n, d * ch);
    }
  }
  return x;
}

Var HyperModel::generate(const Var& z, std::span<const Index> clients) const {
  return head_(ad::gather_rows(z, clients));
}

Var HyperModel::generate_for(std::span<const Index> clients) const {
  return generate(encode(embeddings()), clients);
}

Matrix HyperModel::generate_all() const {
  ad::NoGradGuard guard;
  std::vector<Index> all(static_cast<std::size_t>(config_.num_clients));
  for (Index i = 0; i < config_.num_clients; ++i) all[static_cast<std::size_t>(i)] = i;
  return generate_for(all).value();
}

std::vector<std::pair<std::string, Var>> HyperModel::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  auto add_mlp = [&](const std::string& prefix, const Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
      out.emplace_back(prefix + std::to_string(i) + ".weight", mlp.layers[i].weight);
      out.emplace_back(prefix + std::to_string(i) + ".bias", mlp.layers[i].bias);
    }
  };
  if (!fixed_embeddings_) add_mlp("embed.", embedding_.mlp);
  for (std::size_t i = 0; i < gcn_weights_.size(); ++i) {
    out.emplace_back("gcn." + std::to_string(i) + ".weight", gcn_weights_[i]);
  }
  if (config_.variant == Variant::kShn) {
    out.emplace_back("proj.weight", projection_.weight);
    out.emplace_back("proj.bias", projection_.bias);
    for (std::size_t i = 0; i < sheaf_layers_.size(); ++i) {
      const std::string p = "sheaf." + std::to_string(i) + ".";
      out.emplace_back(p + "phi.weight", sheaf_layers_[i].phi.weight);
      out.emplace_back(p + "phi.bias", sheaf_layers_[i].phi.bias);
      out.emplace_back(p + "w1", sheaf_layers_[i].w1);
      out.emplace_back(p + "w2", sheaf_layers_[i].w2);
    }
  }
  for (std::size_t l = 0; l < head_.per_layer.size(); ++l) {
    add_mlp("head." + head_.spec.layers[l].name + ".", head_.per_layer[l]);
  }
  return out;
}

std::vector<Var> HyperModel::parameters() const {
  std::vector<Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

}  // namespace shnfed
