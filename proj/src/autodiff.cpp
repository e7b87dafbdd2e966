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

#include "fallgen/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fallgen/error.hpp"
#include "fallgen/kernels.hpp"

namespace fallgen::ad {
namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(Errc::ShapeMismatch, std::string(op) + ": " + a.str() + " vs " + b.str());
}

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::Same;
  if (b.rows == 1 && b.cols == 1) return Broadcast::Scalar;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::Row;
  shape_error(op, a, b);
}

// Index into the broadcast operand for flat element i of the full shape.
inline std::size_t bindex(Broadcast kind, std::size_t i, int cols) {
  switch (kind) {
    case Broadcast::Same:
      return i;
    case Broadcast::Row:
      return i % static_cast<std::size_t>(cols);
    case Broadcast::Scalar:
      return 0;
  }
  return 0;
}

template <class F>
Tensor unary(const char* op, const Tensor& a, F f, BackwardFn backward) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_op(op, a.shape(), std::move(out), {a}, std::move(backward));
}

const std::vector<double>& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

}  // namespace

std::string Shape::str() const { return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]"; }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size())
    throw Error(Errc::ShapeMismatch, "constant: " + shape.str() + " vs " + std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::constant(Shape shape, double fill) { return constant(shape, std::vector<double>(shape.size(), fill)); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw Error(Errc::NotScalarLoss, "item() on tensor of shape " + shape().str());
  return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_op(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
    }
  }
  return Tensor(std::move(node));
}

std::span<const double> Gradients::operator[](const Tensor& t) const {
  const auto it = grads_.find(t.node());
  if (it == grads_.end()) throw Error(Errc::DisconnectedGraph, "tensor is not reachable from the loss");
  return it->second;
}

const std::vector<double>* Gradients::find(const Tensor& t) const {
  const auto it = grads_.find(t.node());
  return it == grads_.end() ? nullptr : &it->second;
}

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw Error(Errc::NotScalarLoss, "loss has shape " + (loss.defined() ? loss.shape().str() : std::string("[]")));
  Node* root = loss.node_ptr().get();
  if (!root->requires_grad) throw Error(Errc::DisconnectedGraph, "loss does not depend on any parameter");
  if (root->consumed) throw Error(Errc::BackwardTwice, "backward already ran on this loss");
  root->consumed = true;

  // Iterative post-order DFS gives a topological order (parents first).
  std::unordered_map<const Node*, std::size_t> slot;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  slot.emplace(root, SIZE_MAX);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && slot.emplace(p, SIZE_MAX).second) stack.emplace_back(p, 0);
      continue;
    }
    slot[node] = order.size();
    order.push_back(node);
    stack.pop_back();
  }

  std::vector<std::vector<double>> grads(order.size());
  grads.back().assign(1, 1.0);
  std::vector<double*> parent_grads;
  for (std::size_t i = order.size(); i-- > 0;) {
    Node* node = order[i];
    if (!node->backward) continue;
    if (grads[i].empty()) grads[i].assign(node->value.size(), 0.0);
    parent_grads.assign(node->parents.size(), nullptr);
    for (std::size_t k = 0; k < node->parents.size(); ++k) {
      Node* p = node->parents[k].get();
      if (!p->requires_grad) continue;
      auto& g = grads[slot.at(p)];
      if (g.empty()) g.assign(p->value.size(), 0.0);
      parent_grads[k] = g.data();
    }
    node->backward(*node, grads[i].data(), parent_grads);
    std::vector<double>().swap(grads[i]);
  }

  Gradients out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i]->backward) continue;
    auto& g = grads[i];
    if (g.empty()) g.assign(order[i]->value.size(), 0.0);
    out.grads_.emplace(order[i], std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind("add", a.shape(), b.shape());
  const int cols = a.cols();
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[bindex(kind, i, cols)];
  return make_op("add", a.shape(), std::move(out), {a, b},
                 [kind, cols](const Node& self, const double* g, std::span<double* const> pg) {
                   const std::size_t n = self.value.size();
                   if (pg[0])
                     for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i];
                   if (pg[1])
                     for (std::size_t i = 0; i < n; ++i) pg[1][bindex(kind, i, cols)] += g[i];
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind("sub", a.shape(), b.shape());
  const int cols = a.cols();
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[bindex(kind, i, cols)];
  return make_op("sub", a.shape(), std::move(out), {a, b},
                 [kind, cols](const Node& self, const double* g, std::span<double* const> pg) {
                   const std::size_t n = self.value.size();
                   if (pg[0])
                     for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i];
                   if (pg[1])
                     for (std::size_t i = 0; i < n; ++i) pg[1][bindex(kind, i, cols)] -= g[i];
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind("mul", a.shape(), b.shape());
  const int cols = a.cols();
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[bindex(kind, i, cols)];
  return make_op("mul", a.shape(), std::move(out), {a, b},
                 [kind, cols](const Node& self, const double* g, std::span<double* const> pg) {
                   const auto& x = pval(self, 0);
                   const auto& y = pval(self, 1);
                   const std::size_t n = self.value.size();
                   if (pg[0])
                     for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i] * y[bindex(kind, i, cols)];
                   if (pg[1])
                     for (std::size_t i = 0; i < n; ++i) pg[1][bindex(kind, i, cols)] += g[i] * x[i];
                 });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double v) { return v * s; },
               [s](const Node& self, const double* g, std::span<double* const> pg) {
                 for (std::size_t i = 0; i < self.value.size(); ++i) pg[0][i] += s * g[i];
               });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double v) { return v + s; },
               [](const Node& self, const double* g, std::span<double* const> pg) {
                 for (std::size_t i = 0; i < self.value.size(); ++i) pg[0][i] += g[i];
               });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double v) { return std::exp(v); },
               [](const Node& self, const double* g, std::span<double* const> pg) {
                 for (std::size_t i = 0; i < self.value.size(); ++i) pg[0][i] += g[i] * self.value[i];
               });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double v) { return std::log(v); },
               [](const Node& self, const double* g, std::span<double* const> pg) {
                 const auto& x = pval(self, 0);
                 for (std::size_t i = 0; i < self.value.size(); ++i) pg[0][i] += g[i] / x[i];
               });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double v) { return v * v; },
               [](const Node& self, const double* g, std::span<double* const> pg) {
                 const auto& x = pval(self, 0);
                 for (std::size_t i = 0; i < self.value.size(); ++i) pg[0][i] += 2.0 * g[i] * x[i];
               });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](const Node& self, const double* g, std::span<double* const> pg) {
                 const auto& x = pval(self, 0);
                 for (std::size_t i = 0; i < self.value.size(); ++i)
                   if (x[i] > 0.0) pg[0][i] += g[i];
               });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary("gelu", a, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
               [](const Node& self, const double* g, std::span<double* const> pg) {
                 const auto& x = pval(self, 0);
                 for (std::size_t i = 0; i < self.value.size(); ++i) {
                   const double v = x[i];
                   const double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
                   pg[0][i] += g[i] * d;
                 }
               });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [m, k, n](const Node& self, const double* g, std::span<double* const> pg) {
                   if (pg[0]) kernels::matmul_nt(g, pval(self, 1).data(), pg[0], m, n, k, true);
                   if (pg[1]) kernels::matmul_tn(pval(self, 0).data(), g, pg[1], k, m, n, true);
                 });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a.shape(), b.shape());
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_op("matmul_nt", {m, n}, std::move(out), {a, b},
                 [m, k, n](const Node& self, const double* g, std::span<double* const> pg) {
                   if (pg[0]) kernels::matmul(g, pval(self, 1).data(), pg[0], m, n, k, true);
                   if (pg[1]) kernels::matmul_tn(g, pval(self, 0).data(), pg[1], n, m, k, true);
                 });
}

Tensor transpose(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = x[static_cast<std::size_t>(i) * c + j];
  return make_op("transpose", {c, r}, std::move(out), {a},
                 [r, c](const Node&, const double* g, std::span<double* const> pg) {
                   for (int i = 0; i < r; ++i)
                     for (int j = 0; j < c; ++j)
                       pg[0][static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.size() != a.size()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", shape, std::move(out), {a},
                 [](const Node& self, const double* g, std::span<double* const> pg) {
                   for (std::size_t i = 0; i < self.value.size(); ++i) pg[0][i] += g[i];
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(Errc::ShapeMismatch, "concat_rows: no inputs");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op("concat_rows", {rows, cols}, std::move(out), parts,
                 [](const Node& self, const double* g, std::span<double* const> pg) {
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     const std::size_t n = self.parents[k]->value.size();
                     if (pg[k])
                       for (std::size_t i = 0; i < n; ++i) pg[k][i] += g[offset + i];
                     offset += n;
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(Errc::ShapeMismatch, "concat_cols: no inputs");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  int offset = 0;
  for (const auto& p : parts) {
    const auto x = p.data();
    for (int r = 0; r < rows; ++r)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r) * p.cols(), p.cols(),
                  out.begin() + static_cast<std::ptrdiff_t>(r) * cols + offset);
    offset += p.cols();
  }
  return make_op("concat_cols", {rows, cols}, std::move(out), parts,
                 [rows, cols](const Node& self, const double* g, std::span<double* const> pg) {
                   int offset = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     const int pc = self.parents[k]->shape.cols;
                     if (pg[k])
                       for (int r = 0; r < rows; ++r)
                         for (int c = 0; c < pc; ++c)
                           pg[k][static_cast<std::size_t>(r) * pc + c] += g[static_cast<std::size_t>(r) * cols + offset + c];
                     offset += pc;
                   }
                 });
}

Tensor slice_rows(const Tensor& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.rows()) shape_error("slice_rows", a.shape(), {start, count});
  const int cols = a.cols();
  const auto x = a.data();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(start) * cols,
                          x.begin() + static_cast<std::ptrdiff_t>(start + count) * cols);
  return make_op("slice_rows", {count, cols}, std::move(out), {a},
                 [start, cols](const Node& self, const double* g, std::span<double* const> pg) {
                   double* dst = pg[0] + static_cast<std::ptrdiff_t>(start) * cols;
                   for (std::size_t i = 0; i < self.value.size(); ++i) dst[i] += g[i];
                 });
}

Tensor slice_cols(const Tensor& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.cols()) shape_error("slice_cols", a.shape(), {start, count});
  const int rows = a.rows(), cols = a.cols();
  const auto x = a.data();
  std::vector<double> out(static_cast<std::size_t>(rows) * count);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < count; ++c)
      out[static_cast<std::size_t>(r) * count + c] = x[static_cast<std::size_t>(r) * cols + start + c];
  return make_op("slice_cols", {rows, count}, std::move(out), {a},
                 [rows, cols, start, count](const Node&, const double* g, std::span<double* const> pg) {
                   for (int r = 0; r < rows; ++r)
                     for (int c = 0; c < count; ++c)
                       pg[0][static_cast<std::size_t>(r) * cols + start + c] += g[static_cast<std::size_t>(r) * count + c];
                 });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax_rows(const Tensor& a) {
  const int rows = a.rows(), cols = a.cols();
  const auto x = a.data();
  std::vector<double> out(a.size());
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<std::ptrdiff_t>(r) * cols;
    double* yr = out.data() + static_cast<std::ptrdiff_t>(r) * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (int c = 0; c < cols; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (int c = 0; c < cols; ++c) yr[c] /= total;
  }
  return make_op("softmax_rows", a.shape(), std::move(out), {a},
                 [rows, cols](const Node& self, const double* g, std::span<double* const> pg) {
                   for (int r = 0; r < rows; ++r) {
                     const double* y = self.value.data() + static_cast<std::ptrdiff_t>(r) * cols;
                     const double* gr = g + static_cast<std::ptrdiff_t>(r) * cols;
                     double dot = 0.0;
                     for (int c = 0; c < cols; ++c) dot += gr[c] * y[c];
                     for (int c = 0; c < cols; ++c) pg[0][static_cast<std::size_t>(r) * cols + c] += y[c] * (gr[c] - dot);
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape row{1, x.cols()};
  if (gamma.shape() != row) shape_error("layer_norm gamma", x.shape(), gamma.shape());
  if (beta.shape() != row) shape_error("layer_norm beta", x.shape(), beta.shape());
  const int rows = x.rows(), cols = x.cols();
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(x.size()), inv(static_cast<std::size_t>(rows)), out(x.size());
  for (int r = 0; r < rows; ++r) {
    const double* xr = xv.data() + static_cast<std::ptrdiff_t>(r) * cols;
    double m = 0.0;
    for (int c = 0; c < cols; ++c) m += xr[c];
    m /= cols;
    double v = 0.0;
    for (int c = 0; c < cols; ++c) v += (xr[c] - m) * (xr[c] - m);
    v /= cols;
    inv[r] = 1.0 / std::sqrt(v + eps);
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      xhat[i] = (xr[c] - m) * inv[r];
      out[i] = xhat[i] * gv[c] + bv[c];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                 [rows, cols, xhat = std::move(xhat), inv = std::move(inv)](const Node& self, const double* g,
                                                                            std::span<double* const> pg) {
                   const auto& gam = pval(self, 1);
                   for (int r = 0; r < rows; ++r) {
                     const std::size_t base = static_cast<std::size_t>(r) * cols;
                     double mean_g = 0.0, mean_gx = 0.0;
                     for (int c = 0; c < cols; ++c) {
                       const double gh = g[base + c] * gam[c];
                       mean_g += gh;
                       mean_gx += gh * xhat[base + c];
                       if (pg[1]) pg[1][c] += g[base + c] * xhat[base + c];
                       if (pg[2]) pg[2][c] += g[base + c];
                     }
                     if (!pg[0]) continue;
                     mean_g /= cols;
                     mean_gx /= cols;
                     for (int c = 0; c < cols; ++c) {
                       const double gh = g[base + c] * gam[c];
                       pg[0][base + c] += inv[r] * (gh - mean_g - xhat[base + c] * mean_gx);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op("sum", {1, 1}, {total}, {a}, [](const Node& self, const double* g, std::span<double* const> pg) {
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw Error(Errc::ShapeMismatch, "mean of empty tensor " + a.shape().str());
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum(const Tensor& a, Axis axis) {
  const int rows = a.rows(), cols = a.cols();
  const auto x = a.data();
  if (axis == Axis::Rows) {
    std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[c] += x[static_cast<std::size_t>(r) * cols + c];
    return make_op("sum_rows", {1, cols}, std::move(out), {a},
                   [rows, cols](const Node&, const double* g, std::span<double* const> pg) {
                     for (int r = 0; r < rows; ++r)
                       for (int c = 0; c < cols; ++c) pg[0][static_cast<std::size_t>(r) * cols + c] += g[c];
                   });
  }
  std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[r] += x[static_cast<std::size_t>(r) * cols + c];
  return make_op("sum_cols", {rows, 1}, std::move(out), {a},
                 [rows, cols](const Node&, const double* g, std::span<double* const> pg) {
                   for (int r = 0; r < rows; ++r)
                     for (int c = 0; c < cols; ++c) pg[0][static_cast<std::size_t>(r) * cols + c] += g[r];
                 });
}

Tensor mean(const Tensor& a, Axis axis) {
  const int n = axis == Axis::Rows ? a.rows() : a.cols();
  if (n == 0) throw Error(Errc::ShapeMismatch, "mean over empty axis of " + a.shape().str());
  return scale(sum(a, axis), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Lookup and losses

Tensor embedding_lookup(const Tensor& table, std::span<const int> indices) {
  const int cols = table.cols();
  const auto x = table.data();
  std::vector<int> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * static_cast<std::size_t>(cols));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= table.rows())
      throw Error(Errc::ShapeMismatch, "embedding_lookup: index " + std::to_string(idx[r]) + " outside table " +
                                           table.shape().str());
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[r]) * cols, cols,
                out.begin() + static_cast<std::ptrdiff_t>(r) * cols);
  }
  const int rows = static_cast<int>(idx.size());
  return make_op("embedding_lookup", {rows, cols}, std::move(out), {table},
                 [cols, idx = std::move(idx)](const Node&, const double* g, std::span<double* const> pg) {
                   for (std::size_t r = 0; r < idx.size(); ++r)
                     for (int c = 0; c < cols; ++c)
                       pg[0][static_cast<std::size_t>(idx[r]) * cols + c] += g[r * cols + c];
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const int rows = logits.rows(), cols = logits.cols();
  if (static_cast<int>(targets.size()) != rows || rows == 0)
    shape_error("cross_entropy", logits.shape(), {static_cast<int>(targets.size()), 1});
  std::vector<int> tgt(targets.begin(), targets.end());
  const auto x = logits.data();
  std::vector<double> prob(logits.size());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || tgt[r] >= cols)
      throw Error(Errc::ShapeMismatch, "cross_entropy: target " + std::to_string(tgt[r]) + " outside " +
                                           std::to_string(cols) + " classes");
    const double* xr = x.data() + static_cast<std::ptrdiff_t>(r) * cols;
    double* pr = prob.data() + static_cast<std::ptrdiff_t>(r) * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (int c = 0; c < cols; ++c) total += (pr[c] = std::exp(xr[c] - mx));
    for (int c = 0; c < cols; ++c) pr[c] /= total;
    loss -= xr[tgt[r]] - mx - std::log(total);
  }
  loss /= rows;
  return make_op("cross_entropy", {1, 1}, {loss}, {logits},
                 [rows, cols, tgt = std::move(tgt), prob = std::move(prob)](const Node&, const double* g,
                                                                            std::span<double* const> pg) {
                   const double s = g[0] / rows;
                   for (int r = 0; r < rows; ++r)
                     for (int c = 0; c < cols; ++c) {
                       const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                       pg[0][i] += s * (prob[i] - (c == tgt[r] ? 1.0 : 0.0));
                     }
                 });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
  if (a.size() == 0) throw Error(Errc::ShapeMismatch, "mse of empty tensors");
  const auto x = a.data();
  const auto y = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  const double n = static_cast<double>(x.size());
  return make_op("mse", {1, 1}, {total / n}, {a, b}, [n](const Node& self, const double* g, std::span<double* const> pg) {
    const auto& x = pval(self, 0);
    const auto& y = pval(self, 1);
    const double s = 2.0 * g[0] / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = s * (x[i] - y[i]);
      if (pg[0]) pg[0][i] += d;
      if (pg[1]) pg[1][i] -= d;
    }
  });
}

// ---------------------------------------------------------------------------
// Domain ops

Tensor witness_points(const Tensor& poses, const Skeleton& skeleton, const WitnessCloud& cloud) {
  if (poses.cols() != kPoseDim) shape_error("witness_points", poses.shape(), {poses.rows(), kPoseDim});
  const int frames = poses.rows();
  const int width = static_cast<int>(cloud.local_offsets.size()) * 3;
  std::vector<double> out(static_cast<std::size_t>(frames) * width);
  const auto x = poses.data();
  for (int f = 0; f < frames; ++f)
    witness_points_flat(skeleton, cloud, x.subspan(static_cast<std::size_t>(f) * kPoseDim, kPoseDim),
                        std::span(out).subspan(static_cast<std::size_t>(f) * width, width));
  auto ctx = std::make_shared<const std::pair<Skeleton, WitnessCloud>>(skeleton, cloud);
  return make_op("witness_points", {frames, width}, std::move(out), {poses},
                 [ctx, frames, width](const Node& self, const double* g, std::span<double* const> pg) {
                   const auto& x = pval(self, 0);
                   for (int f = 0; f < frames; ++f)
                     witness_points_vjp(ctx->first, ctx->second,
                                        std::span(x).subspan(static_cast<std::size_t>(f) * kPoseDim, kPoseDim),
                                        std::span(g + static_cast<std::ptrdiff_t>(f) * width, width),
                                        std::span(pg[0] + static_cast<std::ptrdiff_t>(f) * kPoseDim, kPoseDim));
                 });
}

Tensor graph_mix(const Tensor& x, const std::vector<double>& mix, int joints, int channels) {
  if (x.cols() != joints * channels || mix.size() != static_cast<std::size_t>(joints) * joints)
    shape_error("graph_mix", x.shape(), {joints, channels});
  const int rows = x.rows(), width = x.cols();
  const auto xv = x.data();
  std::vector<double> out(x.size(), 0.0);
  for (int t = 0; t < rows; ++t) {
    const double* xr = xv.data() + static_cast<std::ptrdiff_t>(t) * width;
    double* yr = out.data() + static_cast<std::ptrdiff_t>(t) * width;
    for (int j = 0; j < joints; ++j)
      for (int k = 0; k < joints; ++k) {
        const double m = mix[static_cast<std::size_t>(j) * joints + k];
        if (m == 0.0) continue;
        for (int c = 0; c < channels; ++c) yr[j * channels + c] += m * xr[k * channels + c];
      }
  }
  return make_op("graph_mix", x.shape(), std::move(out), {x},
                 [mix, joints, channels, rows, width](const Node&, const double* g, std::span<double* const> pg) {
                   for (int t = 0; t < rows; ++t) {
                     const double* gr = g + static_cast<std::ptrdiff_t>(t) * width;
                     double* dr = pg[0] + static_cast<std::ptrdiff_t>(t) * width;
                     for (int j = 0; j < joints; ++j)
                       for (int k = 0; k < joints; ++k) {
                         const double m = mix[static_cast<std::size_t>(j) * joints + k];
                         if (m == 0.0) continue;
                         for (int c = 0; c < channels; ++c) dr[k * channels + c] += m * gr[j * channels + c];
                       }
                   }
                 });
}

Tensor temporal_unfold(const Tensor& x, int joints, int channels, int kernel, int stride) {
  if (x.cols() != joints * channels || kernel < 1 || stride < 1)
    shape_error("temporal_unfold", x.shape(), {joints, channels});
  const int frames = x.rows(), width = x.cols(), pad = kernel / 2;
  const int out_frames = (frames + 2 * pad - kernel) / stride + 1;
  if (out_frames < 1) shape_error("temporal_unfold", x.shape(), {kernel, stride});
  const int out_cols = kernel * channels;
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(out_frames) * joints * out_cols, 0.0);
  for (int to = 0; to < out_frames; ++to)
    for (int j = 0; j < joints; ++j) {
      double* row = out.data() + (static_cast<std::ptrdiff_t>(to) * joints + j) * out_cols;
      for (int q = 0; q < kernel; ++q) {
        const int t = to * stride + q - pad;
        if (t < 0 || t >= frames) continue;
        std::copy_n(xv.data() + static_cast<std::ptrdiff_t>(t) * width + j * channels, channels, row + q * channels);
      }
    }
  return make_op("temporal_unfold", {out_frames * joints, out_cols}, std::move(out), {x},
                 [=](const Node&, const double* g, std::span<double* const> pg) {
                   for (int to = 0; to < out_frames; ++to)
                     for (int j = 0; j < joints; ++j) {
                       const double* row = g + (static_cast<std::ptrdiff_t>(to) * joints + j) * out_cols;
                       for (int q = 0; q < kernel; ++q) {
                         const int t = to * stride + q - pad;
                         if (t < 0 || t >= frames) continue;
                         double* dst = pg[0] + static_cast<std::ptrdiff_t>(t) * width + j * channels;
                         for (int c = 0; c < channels; ++c) dst[c] += row[q * channels + c];
                       }
                     }
                 });
}

}  // namespace fallgen::ad
