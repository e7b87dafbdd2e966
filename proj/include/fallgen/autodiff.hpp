// Copyright 2026 The fallgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fallgen/kinematics.hpp"

namespace fallgen::ad {

/// Tensors are two-dimensional; a vector is a 1 x n row and a scalar is 1 x 1.
struct Shape {
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

struct Node;

/// Backward rule of a node: given dL/d(node), add the contributions to each
/// parent's gradient buffer. Entries of `parent_grads` are null for parents
/// that do not need a gradient.
using BackwardFn = std::function<void(const Node& self, const double* grad, std::span<double* const> parent_grads)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";
  bool requires_grad = false;
  bool consumed = false;  // set once backward has run from this node
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor constant(Shape shape, double fill = 0.0);
  /// Leaf whose gradient `backward` reports.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rows() const { return node_->shape.rows; }
  int cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  /// Writable storage; meant for leaves (optimizer updates, test probes).
  std::span<double> mutable_data() { return node_->value; }
  double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  double item() const;

  const Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
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

/// Builds a node from `parents`; records them only when one needs a gradient
/// and recording is enabled.
Tensor make_op(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn backward);

/// Leaf gradients produced by one backward pass. Leaves themselves are never
/// written, so independent graphs sharing parameters may run backward
/// concurrently.
class Gradients {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.node()) != 0; }
  /// Throws DisconnectedGraph if `t` is not reachable from the loss.
  std::span<const double> operator[](const Tensor& t) const;
  const std::vector<double>* find(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

/// Reverse pass from a 1 x 1 loss. Each node is visited once, in reverse
/// topological order. A loss may be differentiated only once
/// (BackwardTwice); a loss that depends on no parameter raises
/// DisconnectedGraph.
Gradients backward(const Tensor& loss);

// Elementwise binary ops. `b` may match `a`, be a 1 x cols row (broadcast
// over rows) or a 1 x 1 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int start, int count);
Tensor slice_cols(const Tensor& a, int start, int count);

Tensor softmax_rows(const Tensor& a);
/// Per-row normalization followed by gamma * x + beta; gamma and beta are 1 x cols.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

enum class Axis { Rows, Cols };
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Axis::Rows collapses the rows (result 1 x cols); Axis::Cols collapses the
/// columns (result rows x 1).
Tensor sum(const Tensor& a, Axis axis);
Tensor mean(const Tensor& a, Axis axis);

/// Rows of `table` selected by `indices`.
Tensor embedding_lookup(const Tensor& table, std::span<const int> indices);
/// Mean softmax cross-entropy of logits rows against class targets.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Frames x 153 pose rows -> frames x (144 * 3) witness coordinates, with the
/// analytic reverse pass through forward kinematics.
Tensor witness_points(const Tensor& poses, const Skeleton& skeleton, const WitnessCloud& cloud);

/// Mixes joints with a fixed J x J matrix. Columns are joint-major blocks of
/// `channels`: y[t, j*C + c] = sum_k mix[j, k] x[t, k*C + c].
Tensor graph_mix(const Tensor& x, const std::vector<double>& mix, int joints, int channels);
/// Temporal im2col for per-joint convolutions over T x (J*C) input with zero
/// padding. Output rows are (t_out, joint) pairs, columns kernel*C.
Tensor temporal_unfold(const Tensor& x, int joints, int channels, int kernel, int stride);

}  // namespace fallgen::ad
