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

#include "shnfed/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace shnfed {

std::string shape_string(Index rows, Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

std::string shape_string(const Matrix& m) {
  return shape_string(m.rows(), m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) +
                     " vs " + shape_string(b));
  }
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace ad {

void Node::accumulate(const Matrix& g) {
  if (!has_grad()) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Matrix::Zero(node_->value.rows(), node_->value.cols());
}

double Var::scalar() const {
  if (size() != 1) {
    throw ShapeError("scalar(): expected 1x1, got " + shape_string(value()));
  }
  return value()(0, 0);
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) { return Var(std::move(value), false); }
Var parameter(Matrix value) { return Var(std::move(value), true); }

Var make_op(Matrix value, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(node));
  for (const auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Var(std::move(node));
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "elu") return Activation::kElu;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity" || name == "none") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kElu: return "elu";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " +
                     shape_string(a.value()) + " * " + shape_string(b.value()));
  }
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate_expr(pa.value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      self.parents[1]->accumulate_expr(-self.grad);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate_expr(self.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double c) {
  return make_op(a.value() * c, {a}, [c](Node& self) {
    self.parents[0]->accumulate_expr(self.grad * c);
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_op(std::move(out), {a}, [](Node& self) {
    self.parents[0]->accumulate_expr(
        (self.grad.array() * (1.0 - self.value.array().square())).matrix());
  });
}

Var elu(const Var& a) {
  Matrix out = a.value().unaryExpr(
      [](double x) { return x >= 0.0 ? x : std::expm1(x); });
  return make_op(std::move(out), {a}, [](Node& self) {
    // d/dx elu = 1 for x >= 0, exp(x) = elu(x) + 1 otherwise.
    const Matrix& x = self.parents[0]->value;
    Matrix local = Matrix(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
      local.data()[i] = x.data()[i] >= 0.0 ? 1.0 : self.value.data()[i] + 1.0;
    }
    self.parents[0]->accumulate_expr(self.grad.cwiseProduct(local));
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_op(std::move(out), {a}, [](Node& self) {
    const Matrix& x = self.parents[0]->value;
    self.parents[0]->accumulate_expr(
        (x.array() > 0.0).select(self.grad, 0.0).matrix());
  });
}

Var activate(const Var& a, Activation fn) {
  switch (fn) {
    case Activation::kTanh: return tanh(a);
    case Activation::kElu: return elu(a);
    case Activation::kRelu: return relu(a);
    case Activation::kIdentity: return a;
  }
  return a;
}

Var add_row(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: bias " + shape_string(bias.value()) +
                     " does not broadcast over " + shape_string(a.value()));
  }
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return make_op(std::move(out), {a, bias}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      self.parents[1]->accumulate_expr(self.grad.colwise().sum());
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " +
                       shape_string(parts.front().value()) + " vs " +
                       shape_string(p.value()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make_op(std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->accumulate_expr(self.grad.middleRows(off, r));
      off += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " +
                       shape_string(parts.front().value()) + " vs " +
                       shape_string(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make_op(std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->accumulate_expr(self.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.value()) +
                     " as " + shape_string(rows, cols));
  }
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    p.accumulate_expr(Eigen::Map<const Matrix>(self.grad.data(),
                                               p.value.rows(), p.value.cols()));
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make_op(std::move(out), {a}, [](Node& self) {
    self.parents[0]->accumulate_expr(self.grad.transpose());
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) +
                       " out of range for " + shape_string(a.value()));
    }
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    }
    p.accumulate(g);
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " +
                     shape_string(a.value()));
  }
  Matrix out = a.value().middleRows(start, count);
  return make_op(std::move(out), {a}, [start, count](Node& self) {
    Node& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = self.grad;
    p.accumulate(g);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    p.accumulate_expr(
        Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

Var mse_loss(const Var& pred, const Matrix& target) {
  require_same_shape(pred.value(), target, "mse_loss");
  if (pred.size() == 0) throw ShapeError("mse_loss: empty input");
  Matrix diff = pred.value() - target;
  const double count = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  return make_op(std::move(out), {pred},
                 [diff = std::move(diff), count](Node& self) {
                   self.parents[0]->accumulate_expr(diff *
                                                    (2.0 * self.grad(0, 0) / count));
                 });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows() || labels.empty()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_string(logits.value()));
  }
  const Matrix& z = logits.value();
  Matrix prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= z.cols()) {
      throw ShapeError("cross_entropy: label " + std::to_string(y) +
                       " outside " + std::to_string(z.cols()) + " classes");
    }
    const double m = z.row(i).maxCoeff();
    prob.row(i) = (z.row(i).array() - m).exp().matrix();
    const double s = prob.row(i).sum();
    prob.row(i) /= s;
    loss -= z(i, y) - m - std::log(s);
  }
  const double n = static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  std::vector<int> ys(labels.begin(), labels.end());
  return make_op(std::move(out), {logits},
                 [prob = std::move(prob), ys = std::move(ys), n](Node& self) {
                   Matrix g = prob;
                   for (std::size_t i = 0; i < ys.size(); ++i) {
                     g(static_cast<Index>(i), ys[i]) -= 1.0;
                   }
                   self.parents[0]->accumulate_expr(g * (self.grad(0, 0) / n));
                 });
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " +
                     shape_string(loss.value()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->parents.empty()) node->grad.resize(0, 0);
  }
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

}  // namespace ad
}  // namespace shnfed
