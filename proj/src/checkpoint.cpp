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

#include "shnfed/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "shnfed/errors.hpp"

namespace shnfed {

namespace {

using nlohmann::ordered_json;

constexpr const char* kFormat = "shnfed-checkpoint";
constexpr int kVersion = 1;

ordered_json matrix_json(const Matrix& m) {
  ordered_json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Matrix matrix_from(const ordered_json& j, const std::string& what) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw InputError("checkpoint: " + what + " has inconsistent shape");
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace

std::string checkpoint_json(const Federation& f) {
  const HyperModel& model = f.model();
  const ModelConfig& mc = model.config();
  ordered_json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["variant"] = variant_name(mc.variant);
  j["round"] = f.round();
  // Every random stream is derived from (seed, round, client), so these two
  // fields are the complete generator state.
  j["rng"] = {{"seed", f.config().seed}, {"round", f.round()}};
  j["model"] = {{"num_clients", mc.num_clients},
                {"embedding_dim", mc.embedding_dim},
                {"encoder_hidden", mc.encoder_hidden},
                {"head_hidden", mc.head_hidden},
                {"layers", mc.layers},
                {"stalk_dim", mc.stalk_dim},
                {"restriction", restriction_class_name(mc.restriction)}};
  ordered_json params = ordered_json::object();
  for (const auto& [name, v] : model.named_parameters()) params[name] = matrix_json(v.value());
  j["parameters"] = params;
  const AdamState& adam = f.optimizer_state();
  ordered_json opt;
  opt["step"] = adam.step;
  opt["m"] = ordered_json::array();
  opt["v"] = ordered_json::array();
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    opt["m"].push_back(matrix_json(adam.m[i]));
    opt["v"].push_back(matrix_json(adam.v[i]));
  }
  j["optimizer"] = opt;
  if (model.has_fixed_embeddings()) {
    ad::NoGradGuard guard;
    j["fixed_embeddings"] = matrix_json(model.embeddings().value());
  }
  if (model.has_graph()) {
    ordered_json edges = ordered_json::array();
    for (const auto& [u, v] : model.graph().edges) edges.push_back({u, v});
    j["graph"] = {{"n", model.graph().n}, {"edges", edges}};
  }
  return j.dump();
}

void restore_checkpoint_json(const std::string& text, Federation& f) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw InputError(std::string("checkpoint: not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat || j.at("version").get<int>() != kVersion) {
      throw InputError("checkpoint: unsupported format or version");
    }
    HyperModel& model = f.model();
    const std::string variant = j.at("variant").get<std::string>();
    if (variant != variant_name(model.config().variant)) {
      throw InputError("checkpoint: variant " + variant + " does not match model variant " +
                       variant_name(model.config().variant));
    }
    if (j.contains("fixed_embeddings")) {
      model.set_fixed_embeddings(matrix_from(j["fixed_embeddings"], "fixed_embeddings"));
    }
    if (j.contains("graph")) {
      std::vector<std::pair<Index, Index>> edges;
      for (const auto& e : j["graph"].at("edges")) edges.emplace_back(e.at(0).get<Index>(), e.at(1).get<Index>());
      model.set_graph(Graph::from_edges(j["graph"].at("n").get<Index>(), edges));
    }
    const auto& params = j.at("parameters");
    auto named = model.named_parameters();
    if (params.size() != named.size()) {
      throw InputError("checkpoint: holds " + std::to_string(params.size()) +
                       " parameters, model has " + std::to_string(named.size()));
    }
    for (auto& [name, v] : named) {
      if (!params.contains(name)) throw InputError("checkpoint: missing parameter " + name);
      Matrix m = matrix_from(params[name], name);
      if (m.rows() != v.rows() || m.cols() != v.cols()) {
        throw InputError("checkpoint: parameter " + name + " is " + shape_string(m) +
                         ", model expects " + shape_string(v.value()));
      }
      v.mutable_value() = std::move(m);
    }
    AdamState adam;
    adam.step = j.at("optimizer").at("step").get<std::int64_t>();
    for (const auto& m : j["optimizer"].at("m")) adam.m.push_back(matrix_from(m, "optimizer.m"));
    for (const auto& v : j["optimizer"].at("v")) adam.v.push_back(matrix_from(v, "optimizer.v"));
    f.optimizer_state() = std::move(adam);
    f.set_round(j.at("round").get<Index>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Federation& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  out << checkpoint_json(f) << '\n';
  if (!out) throw RuntimeFailure("checkpoint write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, Federation& f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  restore_checkpoint_json(ss.str(), f);
}

}  // namespace shnfed
