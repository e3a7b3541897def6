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
#include <span>
#include <vector>

#include "shnfed/tensor.hpp"

namespace shnfed {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Added to the gradient as weight_decay * p before the moment updates.
  double weight_decay = 5e-5;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One Adam update using each parameter's accumulated gradient.
void adam_step(std::span<Var> params, AdamState& state,
               const AdamOptions& options);

// Explicit-gradient overload; grads[i] must match params[i].
void adam_step(std::span<Matrix> params, std::span<const Matrix> grads,
               AdamState& state, const AdamOptions& options);

void sgd_step(std::span<Var> params, double lr);
void sgd_step(std::span<Matrix> params, std::span<const Matrix> grads,
              double lr);

void zero_grad(std::span<Var> params);

}  // namespace shnfed
