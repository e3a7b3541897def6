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

#include "shnfed/optim.hpp"

#include <cmath>

namespace shnfed {
namespace {

void init_state(std::span<Matrix> params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                     " moments for " + std::to_string(params.size()) +
                     " parameters");
  }
}

}  // namespace

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads,
               AdamState& state, const AdamOptions& o) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: parameter/gradient count mismatch");
  }
  init_state(params, state);
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i];
    require_same_shape(p, grads[i], "adam_step");
    require_same_shape(p, state.m[i], "adam_step");
    const Matrix g = grads[i] + o.weight_decay * p;
    state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
    state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g.cwiseProduct(g);
    p.array() -= o.lr * (state.m[i].array() / bc1) /
                 ((state.v[i].array() / bc2).sqrt() + o.eps);
  }
}

void adam_step(std::span<Var> params, AdamState& state,
               const AdamOptions& options) {
  std::vector<Matrix> values;
  std::vector<Matrix> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto& p : params) {
    grads.push_back(p.grad());
    values.push_back(std::move(p.mutable_value()));
  }
  adam_step(values, grads, state, options);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].mutable_value() = std::move(values[i]);
  }
}

void sgd_step(std::span<Matrix> params, std::span<const Matrix> grads,
              double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_step: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "sgd_step");
    params[i] -= lr * grads[i];
  }
}

void sgd_step(std::span<Var> params, double lr) {
  for (auto& p : params) {
    if (p.node()->has_grad()) p.mutable_value() -= lr * p.node()->grad;
  }
}

void zero_grad(std::span<Var> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace shnfed
