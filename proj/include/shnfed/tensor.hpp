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

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shnfed/errors.hpp"

namespace shnfed {

/// Dense row-major matrix of doubles. Every numeric array in the library
/// (embeddings, adjacency, weights, generated parameters) is one of these.
template <typename Scalar>
using DenseMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = DenseMatrix<double>;
using Index = Eigen::Index;

std::string shape_string(const Matrix& m);
std::string shape_string(Index rows, Index cols);

// Throws ShapeError naming both operand shapes.
void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

bool all_finite(const Matrix& m);

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of a define-by-run computation graph. `grad` stays empty until
// something flows into it.
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const {
    return grad.rows() == value.rows() && grad.cols() == value.cols();
  }
  void accumulate(const Matrix& g);
  template <typename Derived>
  void accumulate_expr(const Eigen::MatrixBase<Derived>& g) {
    if (!has_grad()) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Handle to a node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Only meaningful on leaves; used by optimizers.
  Matrix& mutable_value() { return node_->value; }
  /// Gradient after backward(); zeros if nothing reached this node.
  Matrix grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  double scalar() const;

  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);

/// While alive, ops on this thread record no backward edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Building block for custom differentiable ops. `backward` receives the
// output node and must push gradients into the parents that require them.
Var make_op(Matrix value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

enum class Activation { kIdentity, kTanh, kElu, kRelu };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var tanh(const Var& a);
Var elu(const Var& a);
Var relu(const Var& a);
Var activate(const Var& a, Activation fn);

// a (r x c) + bias (1 x c) added to every row.
Var add_row(const Var& a, const Var& bias);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
// Row-major reinterpretation; element count must match.
Var reshape(const Var& a, Index rows, Index cols);
Var transpose(const Var& a);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var slice_rows(const Var& a, Index start, Index count);
Var sum(const Var& a);

Var mse_loss(const Var& pred, const Matrix& target);
// Mean softmax cross-entropy; `labels[i]` indexes a column of row i.
Var cross_entropy(const Var& logits, std::span<const int> labels);

/// Reverse sweep from a 1x1 loss. Leaf gradients accumulate; interior
/// gradients are reset first so the same graph can be swept again.
void backward(const Var& loss);

}  // namespace ad

using ad::Var;

}  // namespace shnfed
