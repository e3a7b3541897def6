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

#include "shnfed/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "shnfed/csv.hpp"
#include "shnfed/errors.hpp"

namespace shnfed {

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return std::string(s);
}

// Drops a trailing "# ..." that is outside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::vector<std::string> split_array(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ConfigError(key + ": expected an array like [1, 2], got '" + v + "'");
  }
  std::vector<std::string> out;
  const std::string body = trim(std::string_view(v).substr(1, v.size() - 2));
  if (body.empty()) return out;
  for (auto& cell : split_csv_line(body)) out.push_back(unquote(trim(cell)));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  if (!parse_double(v, x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  long long x = 0;
  if (!parse_long(v, x)) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename Fn>
auto wrap(const std::string& key, Fn fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <typename T, typename F>
std::string array_text(const std::vector<T>& v, F fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fmt(v[i]);
  }
  return out + "]";
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

std::map<std::string, std::string> parse_kv_document(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    const std::string value = unquote(trim(std::string_view(line).substr(eq + 1)));
    if (!out.emplace(key, value).second) {
      throw ConfigError(key + ": duplicate key (line " + std::to_string(line_no) + ")");
    }
  }
  return out;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "none" || name.empty()) return SweepAxis::kNone;
  if (name == "layers") return SweepAxis::kLayers;
  if (name == "knn_k") return SweepAxis::kKnnK;
  if (name == "cosine_tau") return SweepAxis::kCosineTau;
  if (name == "stalk_dim") return SweepAxis::kStalkDim;
  throw InputError("unknown sweep axis '" + name +
                   "' (expected layers|knn_k|cosine_tau|stalk_dim)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kNone: return "none";
    case SweepAxis::kLayers: return "layers";
    case SweepAxis::kKnnK: return "knn_k";
    case SweepAxis::kCosineTau: return "cosine_tau";
    case SweepAxis::kStalkDim: return "stalk_dim";
  }
  return "none";
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  using Setter = std::function<void(const std::string&)>;
  auto idx = [&](Index& field) { return Setter([&field, key](const std::string& s) { field = to_int(key, s); }); };
  auto dbl = [&](double& field) { return Setter([&field, key](const std::string& s) { field = to_double(key, s); }); };
  const std::map<std::string, Setter> setters = {
      {"seed", [&](const std::string& s) {
         const long long x = to_int(key, s);
         require(x >= 0, key, "must be >= 0");
         c.seed = static_cast<std::uint64_t>(x);
       }},
      {"out_dir", [&](const std::string& s) { c.out_dir = s; }},
      {"variant", [&](const std::string& s) { c.variant = s; }},
      {"task.kind", [&](const std::string& s) { c.task.kind = wrap(key, [&] { return parse_task_kind(s); }); }},
      {"task.num_clients", idx(c.task.num_clients)},
      {"task.num_clusters", idx(c.task.num_clusters)},
      {"task.input_dim", idx(c.task.input_dim)},
      {"task.hidden_dim", idx(c.task.hidden_dim)},
      {"task.output_dim", idx(c.task.output_dim)},
      {"task.num_classes", idx(c.task.num_classes)},
      {"task.train_samples", idx(c.task.train_samples)},
      {"task.test_samples", idx(c.task.test_samples)},
      {"task.noise", dbl(c.task.noise)},
      {"task.alpha", dbl(c.task.alpha)},
      {"task.pool_samples", idx(c.task.pool_samples)},
      {"task.test_fraction", dbl(c.task.test_fraction)},
      {"task.class_separation", dbl(c.task.class_separation)},
      {"federation.rounds", idx(c.federation.rounds)},
      {"federation.clients_per_round", idx(c.federation.clients_per_round)},
      {"federation.local_steps", idx(c.federation.local.local_steps)},
      {"federation.local_lr", dbl(c.federation.local.lr)},
      {"federation.batch_size", idx(c.federation.local.batch_size)},
      {"federation.eval_interval", idx(c.federation.eval_interval)},
      {"federation.server_optimizer", [&](const std::string& s) {
         if (s == "adam") c.federation.server_optimizer = ServerOptimizer::kAdam;
         else if (s == "sgd") c.federation.server_optimizer = ServerOptimizer::kSgd;
         else throw ConfigError(key + ": expected adam or sgd, got '" + s + "'");
       }},
      {"federation.server_lr", dbl(c.federation.server.lr)},
      {"federation.adam_beta1", dbl(c.federation.server.beta1)},
      {"federation.adam_beta2", dbl(c.federation.server.beta2)},
      {"federation.adam_eps", dbl(c.federation.server.eps)},
      {"federation.weight_decay", dbl(c.federation.server.weight_decay)},
      {"model.embedding_dim", idx(c.model.embedding_dim)},
      {"model.embedding_hidden", idx(c.model.embedding_hidden)},
      {"model.encoder_hidden", idx(c.model.encoder_hidden)},
      {"model.head_hidden", idx(c.model.head_hidden)},
      {"model.layers", idx(c.model.layers)},
      {"model.stalk_dim", idx(c.model.stalk_dim)},
      {"model.restriction", [&](const std::string& s) {
         c.model.restriction = wrap(key, [&] { return parse_restriction_class(s); });
       }},
      {"model.encoder_activation", [&](const std::string& s) {
         c.model.encoder_activation = wrap(key, [&] { return ad::parse_activation(s); });
       }},
      {"model.head_activation", [&](const std::string& s) {
         c.model.head_activation = wrap(key, [&] { return ad::parse_activation(s); });
       }},
      {"model.fixed_embeddings", [&](const std::string& s) { c.fixed_embeddings = to_bool(key, s); }},
      {"graph.method", [&](const std::string& s) {
         if (s == "knn") c.graph.method = GraphMethod::kKnn;
         else if (s == "cosine") c.graph.method = GraphMethod::kCosine;
         else throw ConfigError(key + ": expected knn or cosine, got '" + s + "'");
       }},
      {"graph.k", idx(c.graph.k)},
      {"graph.tau", dbl(c.graph.tau)},
      {"graph.embeddings", [&](const std::string& s) { c.graph_embeddings = s; }},
      {"graph.edges", [&](const std::string& s) { c.graph_edges = s; }},
      {"sweep.axis", [&](const std::string& s) { c.sweep_axis = wrap(key, [&] { return parse_sweep_axis(s); }); }},
      {"sweep.values", [&](const std::string& s) {
         c.sweep_values.clear();
         for (auto& cell : split_array(key, s)) c.sweep_values.push_back(to_double(key, cell));
       }},
      {"sweep.variants", [&](const std::string& s) { c.sweep_variants = split_array(key, s); }},
      {"sweep.repeats", idx(c.repeats)},
      {"diagnose.depths", [&](const std::string& s) {
         c.diagnose_depths.clear();
         for (auto& cell : split_array(key, s)) c.diagnose_depths.push_back(to_int(key, cell));
       }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError(key + ": unknown key");
  it->second(v);
}

void RunConfig::validate() const {
  static const std::vector<std::string> kVariants = {"hn", "ghn", "shn", "fedavg",
                                                     "fedavg-ft", "local"};
  auto known_variant = [&](const std::string& v) {
    return std::find(kVariants.begin(), kVariants.end(), v) != kVariants.end();
  };
  require(known_variant(variant), "variant",
          "expected hn|ghn|shn|fedavg|fedavg-ft|local, got '" + variant + "'");
  require(task.num_clients >= 2, "task.num_clients", "must be >= 2");
  require(task.num_clusters >= 1 && task.num_clusters <= task.num_clients,
          "task.num_clusters", "must lie in [1, task.num_clients]");
  require(task.input_dim >= 1, "task.input_dim", "must be >= 1");
  require(task.hidden_dim >= 1, "task.hidden_dim", "must be >= 1");
  require(task.output_dim >= 1, "task.output_dim", "must be >= 1");
  require(task.num_classes >= 2, "task.num_classes", "must be >= 2");
  require(task.train_samples >= 1, "task.train_samples", "must be >= 1");
  require(task.test_samples >= 1, "task.test_samples", "must be >= 1");
  require(task.noise >= 0.0, "task.noise", "must be >= 0");
  require(task.alpha > 0.0, "task.alpha", "must be > 0");
  require(task.pool_samples >= 2 * task.num_clients, "task.pool_samples",
          "must be >= 2 * task.num_clients");
  require(task.test_fraction > 0.0 && task.test_fraction < 1.0, "task.test_fraction",
          "must lie in (0, 1)");
  require(federation.rounds >= 0, "federation.rounds", "must be >= 0");
  require(federation.clients_per_round >= 1 &&
              federation.clients_per_round <= task.num_clients,
          "federation.clients_per_round", "must lie in [1, task.num_clients] (got " +
              std::to_string(federation.clients_per_round) + ")");
  require(federation.local.local_steps >= 0, "federation.local_steps", "must be >= 0");
  require(federation.local.lr >= 0.0, "federation.local_lr", "must be >= 0");
  require(federation.local.batch_size >= 0, "federation.batch_size", "must be >= 0");
  require(federation.eval_interval >= 1, "federation.eval_interval", "must be >= 1");
  require(federation.server.lr >= 0.0, "federation.server_lr", "must be >= 0");
  require(federation.server.beta1 >= 0.0 && federation.server.beta1 < 1.0,
          "federation.adam_beta1", "must lie in [0, 1)");
  require(federation.server.beta2 >= 0.0 && federation.server.beta2 < 1.0,
          "federation.adam_beta2", "must lie in [0, 1)");
  require(federation.server.eps > 0.0, "federation.adam_eps", "must be > 0");
  require(federation.server.weight_decay >= 0.0, "federation.weight_decay", "must be >= 0");
  require(model.embedding_dim >= 1, "model.embedding_dim", "must be >= 1");
  require(model.embedding_hidden >= 1, "model.embedding_hidden", "must be >= 1");
  require(model.encoder_hidden >= 1, "model.encoder_hidden", "must be >= 1");
  require(model.head_hidden >= 1, "model.head_hidden", "must be >= 1");
  require(model.layers >= 0, "model.layers", "must be >= 0");
  require(model.stalk_dim >= 1 && model.stalk_dim <= 5, "model.stalk_dim",
          "must lie in [1, 5]");
  if (graph.method == GraphMethod::kKnn) {
    require(graph.k >= 0 && graph.k < task.num_clients, "graph.k",
            "must lie in [0, task.num_clients)");
  } else {
    require(graph.tau >= -1.0 && graph.tau <= 1.0, "graph.tau", "must lie in [-1, 1]");
  }
  require(repeats >= 1, "sweep.repeats", "must be >= 1");
  for (const auto& v : sweep_variants) {
    require(known_variant(v), "sweep.variants", "unknown variant '" + v + "'");
  }
  for (double v : sweep_values) {
    switch (sweep_axis) {
      case SweepAxis::kLayers:
        require(v >= 1 && v == std::floor(v), "sweep.values",
                "layers must be integers >= 1 (got " + format_double(v) + ")");
        break;
      case SweepAxis::kKnnK:
        require(v >= 0 && v < static_cast<double>(task.num_clients) && v == std::floor(v),
                "sweep.values", "knn_k must be integers in [0, task.num_clients) (got " +
                    format_double(v) + ")");
        break;
      case SweepAxis::kCosineTau:
        require(v >= -1.0 && v <= 1.0, "sweep.values",
                "cosine_tau must lie in [-1, 1] (got " + format_double(v) + ")");
        break;
      case SweepAxis::kStalkDim:
        require(v >= 1 && v <= 5 && v == std::floor(v), "sweep.values",
                "stalk_dim must be an integer in [1, 5] (got " + format_double(v) + ")");
        break;
      case SweepAxis::kNone:
        break;
    }
  }
  for (Index d : diagnose_depths) require(d >= 0, "diagnose.depths", "must be >= 0");
}

std::string RunConfig::to_toml() const {
  std::ostringstream o;
  auto num = [](double x) { return format_double(x); };
  o << "seed = " << seed << "\n"
    << "out_dir = " << quote(out_dir) << "\n"
    << "variant = " << quote(variant) << "\n\n"
    << "[task]\n"
    << "kind = " << quote(task_kind_name(task.kind)) << "\n"
    << "num_clients = " << task.num_clients << "\n"
    << "num_clusters = " << task.num_clusters << "\n"
    << "input_dim = " << task.input_dim << "\n"
    << "hidden_dim = " << task.hidden_dim << "\n"
    << "output_dim = " << task.output_dim << "\n"
    << "num_classes = " << task.num_classes << "\n"
    << "train_samples = " << task.train_samples << "\n"
    << "test_samples = " << task.test_samples << "\n"
    << "noise = " << num(task.noise) << "\n"
    << "alpha = " << num(task.alpha) << "\n"
    << "pool_samples = " << task.pool_samples << "\n"
    << "test_fraction = " << num(task.test_fraction) << "\n"
    << "class_separation = " << num(task.class_separation) << "\n\n"
    << "[federation]\n"
    << "rounds = " << federation.rounds << "\n"
    << "clients_per_round = " << federation.clients_per_round << "\n"
    << "local_steps = " << federation.local.local_steps << "\n"
    << "local_lr = " << num(federation.local.lr) << "\n"
    << "batch_size = " << federation.local.batch_size << "\n"
    << "eval_interval = " << federation.eval_interval << "\n"
    << "server_optimizer = "
    << quote(federation.server_optimizer == ServerOptimizer::kAdam ? "adam" : "sgd") << "\n"
    << "server_lr = " << num(federation.server.lr) << "\n"
    << "adam_beta1 = " << num(federation.server.beta1) << "\n"
    << "adam_beta2 = " << num(federation.server.beta2) << "\n"
    << "adam_eps = " << num(federation.server.eps) << "\n"
    << "weight_decay = " << num(federation.server.weight_decay) << "\n\n"
    << "[model]\n"
    << "embedding_dim = " << model.embedding_dim << "\n"
    << "embedding_hidden = " << model.embedding_hidden << "\n"
    << "encoder_hidden = " << model.encoder_hidden << "\n"
    << "head_hidden = " << model.head_hidden << "\n"
    << "layers = " << model.layers << "\n"
    << "stalk_dim = " << model.stalk_dim << "\n"
    << "restriction = " << quote(restriction_class_name(model.restriction)) << "\n"
    << "encoder_activation = " << quote(ad::activation_name(model.encoder_activation)) << "\n"
    << "head_activation = " << quote(ad::activation_name(model.head_activation)) << "\n"
    << "fixed_embeddings = " << (fixed_embeddings ? "true" : "false") << "\n\n"
    << "[graph]\n"
    << "method = " << quote(graph.method == GraphMethod::kKnn ? "knn" : "cosine") << "\n"
    << "k = " << graph.k << "\n"
    << "tau = " << num(graph.tau) << "\n"
    << "embeddings = " << quote(graph_embeddings) << "\n"
    << "edges = " << quote(graph_edges) << "\n\n"
    << "[sweep]\n"
    << "axis = " << quote(sweep_axis_name(sweep_axis)) << "\n"
    << "values = " << array_text(sweep_values, num) << "\n"
    << "variants = " << array_text(sweep_variants, quote) << "\n"
    << "repeats = " << repeats << "\n\n"
    << "[diagnose]\n"
    << "depths = " << array_text(diagnose_depths, [](Index d) { return std::to_string(d); })
    << "\n";
  return o.str();
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j;
  // Numbers, booleans and arrays are already valid JSON; the rest are strings.
  for (const auto& [k, v] : parse_kv_document(to_toml())) {
    auto parsed = nlohmann::ordered_json::parse(v, nullptr, false);
    const bool typed = !parsed.is_discarded() && !parsed.is_string();
    j[k] = typed ? parsed : nlohmann::ordered_json(v);
  }
  return j.dump(2);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  for (const auto& [k, v] : parse_kv_document(text)) apply_setting(c, k, v);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_id(const RunConfig& config) {
  // FNV-1a over the canonical document; the output location is not part of
  // a run's identity.
  RunConfig c = config;
  c.out_dir.clear();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : c.to_toml()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static const char* kHex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace shnfed
