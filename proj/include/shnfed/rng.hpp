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

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "shnfed/tensor.hpp"

namespace shnfed {

/// Deterministic random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard library's distributions are implementation-defined,
/// so every distribution here is written out explicitly on top of raw 64-bit
/// draws; a given seed yields the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  /// Seed for an independent substream, e.g. derive(seed, round, client).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // log of a Gamma(shape, 1) draw; stays finite for shape down to ~1e-300.
  double log_gamma_variate(double shape);
  double gamma(double shape);
  // Symmetric Dirichlet(alpha * 1_k), normalized in log space so tiny alpha
  // does not underflow to an all-zero vector.
  std::vector<double> dirichlet(std::size_t k, double alpha);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  // k distinct values from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k);

  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi);
  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
Matrix glorot_uniform(Index fan_in, Index fan_out, Rng& rng);

}  // namespace shnfed
